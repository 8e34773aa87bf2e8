"""Sampling-free predictive inference and evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import log_expit

from .activation import spike_probability
from .dist import GaussianFactor
from .mixing import SignalMoments, row_sums
from .model import Batch, Posterior

PROB_CLAMP = 1e-12
GH_ORDER = 32


@dataclass
class PredictiveOutput:
    u_mean: np.ndarray
    u_var: np.ndarray
    spike_prob: Optional[np.ndarray] = None  # spiking output layers
    pred_mean: Optional[np.ndarray] = None  # gaussian output layer
    pred_var: Optional[np.ndarray] = None


def forward_predict(posterior: Posterior, inputs, input_mode="rate",
                    exact_sigmoid=False) -> PredictiveOutput:
    """One forward sweep with every non-weight factor uninformative."""
    spec = posterior.spec
    batch = Batch(np.atleast_2d(inputs), None, input_mode=input_mode)
    if batch.inputs.shape[1] != spec.layer_sizes[0]:
        raise ValueError(f"expected {spec.layer_sizes[0]} inputs, "
                         f"got {batch.inputs.shape[1]}")
    sig = SignalMoments(*batch.input_moments(spec.has_bias))
    L = spec.n_layers
    for ell in range(L):
        mw, sw = posterior.weight_moments(ell)
        vw = np.maximum(sw - mw ** 2, 0.0)
        s_m, s_v = row_sums(sig, mw, vw)
        kind = spec.activations[ell]
        if ell == L - 1:
            if kind == "gaussian":
                return PredictiveOutput(s_m, s_v, pred_mean=s_m, pred_var=s_v + spec.noise_var)
            p = spike_probability(s_m, s_v, kind, exact=exact_sigmoid)
            return PredictiveOutput(s_m, s_v, spike_prob=p)
        p = spike_probability(s_m, s_v, kind, exact=exact_sigmoid)
        m = p
        if spec.has_bias:
            m = np.hstack([p, np.ones((len(p), 1))])
        sig = SignalMoments(m, m.copy())
    raise AssertionError("unreachable")


def bce(y, p):
    """Binary cross-entropy as a non-negative loss."""
    p = np.clip(np.asarray(p, dtype=float), PROB_CLAMP, 1 - PROB_CLAMP)
    y = np.asarray(y, dtype=float)
    return -(y * np.log(p) + (1 - y) * np.log1p(-p))


def _log_sigmoid_clamped(u):
    lo, hi = np.log(PROB_CLAMP), np.log1p(-PROB_CLAMP)
    return np.clip(log_expit(u), lo, hi)


_GH_X, _GH_W = np.polynomial.hermite_e.hermegauss(GH_ORDER)
_GH_W = _GH_W / np.sqrt(2 * np.pi)


def pebce(y, u_mean, u_var=None, order=GH_ORDER):
    """Posterior-expected BCE of ``sigmoid(u)`` under ``u ~ N(u_mean, u_var)``.

    ``u_mean`` may also be a proper ``GaussianFactor``.
    """
    if isinstance(u_mean, GaussianFactor):
        u_mean, u_var = u_mean.moments()
    if order == GH_ORDER:
        x, w = _GH_X, _GH_W
    else:
        x, w = np.polynomial.hermite_e.hermegauss(order)
        w = w / np.sqrt(2 * np.pi)
    y = np.asarray(y, dtype=float)[..., None]
    u = np.asarray(u_mean, float)[..., None] + np.sqrt(np.asarray(u_var, float))[..., None] * x
    loss = -(y * _log_sigmoid_clamped(u) + (1 - y) * _log_sigmoid_clamped(-u))
    return (loss * w).sum(-1)


def classify(outputs, n_classes=None):
    """Class index per sample: lowest PeBCE for the hypothesis ``y_i = 1``.

    ``outputs`` is a ``PredictiveOutput`` or an array of per-class spike
    probabilities.  Ties go to the lowest index.
    """
    if isinstance(outputs, PredictiveOutput):
        scores = pebce(1.0, outputs.u_mean, outputs.u_var)
    else:
        scores = bce(1.0, outputs)
    scores = np.atleast_2d(scores)
    if n_classes is not None and scores.shape[1] != n_classes:
        raise ValueError("score width does not match n_classes")
    return np.argmin(scores, axis=1)


def mse(targets, preds):
    targets = np.asarray(targets, dtype=float).ravel()
    preds = np.asarray(preds, dtype=float).ravel()
    if targets.shape != preds.shape:
        raise ValueError("targets and predictions differ in length")
    return float(np.mean((targets - preds) ** 2))


def classification_metrics(posterior: Posterior, inputs, onehot, input_mode="rate"):
    out = forward_predict(posterior, inputs, input_mode)
    labels = np.argmax(onehot, axis=1)
    acc = float(np.mean(classify(out) == labels))
    loss = float(np.mean(pebce(onehot, out.u_mean, out.u_var)))
    return {"acc": acc, "loss": loss}


def regression_metrics(posterior: Posterior, inputs, targets, input_mode="rate"):
    out = forward_predict(posterior, inputs, input_mode)
    return {"loss": mse(targets, out.pred_mean)}


def make_evaluator(kind, train, test=None, input_mode="rate", test_input_mode=None):
    """Per-epoch metric callback for ``sep_train``.

    ``train`` and ``test`` are ``(inputs, targets)`` pairs.
    """
    test_mode = test_input_mode or input_mode

    def run(posterior):
        row = {}
        for name, data, mode in (("train", train, input_mode), ("test", test, test_mode)):
            if data is None:
                continue
            if kind == "classification":
                m = classification_metrics(posterior, data[0], data[1], mode)
                row[f"{name}_acc"] = round(m["acc"], 6)
            else:
                m = regression_metrics(posterior, data[0], data[1], mode)
            row[f"{name}_loss"] = round(m["loss"], 6)
        return row

    return run
