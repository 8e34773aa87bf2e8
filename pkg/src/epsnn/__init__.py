"""Expectation-propagation training of feedforward spiking neural networks.

Weights get Gaussian or {-1,+1} posteriors, hidden spikes are marginalised
by message passing, and prediction is a single sampling-free forward pass.
"""
from ._kernels import BACKEND
from .model import NetworkSpec, Posterior, WeightPrior, load_posterior, save_posterior
from .predict import classify, forward_predict, mse, pebce
from .trainer import TrainConfig, sep_train

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "NetworkSpec",
    "Posterior",
    "TrainConfig",
    "WeightPrior",
    "classify",
    "forward_predict",
    "load_posterior",
    "mse",
    "pebce",
    "save_posterior",
    "sep_train",
]
