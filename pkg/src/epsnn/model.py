"""Network description, per-batch factor-graph state and posterior files."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .dist import (
    DiscreteFactor,
    GaussianFactor,
    SpikeSlabPrior,
    bernoulli,
)

ACTIVATIONS = ("heaviside", "sigmoid", "gaussian")
DOMAINS = ("continuous", "binary")
PRIOR_KINDS = ("gaussian", "spike_slab", "bernoulli_pm1")
PM1 = (-1.0, 1.0)
SPIKE = (0.0, 1.0)

POSTERIOR_FORMAT = "epsnn-posterior"
POSTERIOR_VERSION = 1


class PosteriorFormatError(ValueError):
    pass


@dataclass(frozen=True)
class WeightPrior:
    kind: str = "gaussian"
    mean: float = 0.0
    var: float = 1.0
    p: float = 0.5  # slab probability (spike_slab) or P(w=+1) (bernoulli_pm1)

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.var <= 0:
            raise ValueError("prior variance must be positive")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("prior probability must be in [0, 1]")

    def spike_slab(self) -> SpikeSlabPrior:
        return SpikeSlabPrior(GaussianFactor.from_moments(self.mean, self.var), self.p)


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: Sequence[int]
    activations: Sequence[str]
    weight_domains: Optional[Sequence[str]] = None
    priors: Optional[Sequence[WeightPrior]] = None
    noise_var: float = 1e-4
    has_bias: bool = False

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        L = len(sizes) - 1
        if L < 1:
            raise ValueError("need at least one layer (two sizes)")
        if any(s < 1 for s in sizes):
            raise ValueError("layer sizes must be >= 1")
        acts = tuple(self.activations)
        if len(acts) != L:
            raise ValueError(f"need {L} activations, got {len(acts)}")
        for k, a in enumerate(acts):
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
            if a == "gaussian" and k != L - 1:
                raise ValueError("gaussian activation is only allowed on the output layer")
        object.__setattr__(self, "activations", acts)
        doms = tuple(self.weight_domains or ("continuous",) * L)
        if len(doms) != L or any(d not in DOMAINS for d in doms):
            raise ValueError("bad weight_domains")
        object.__setattr__(self, "weight_domains", doms)
        priors = self.priors
        if priors is None:
            priors = tuple(WeightPrior("bernoulli_pm1") if d == "binary" else WeightPrior()
                           for d in doms)
        priors = tuple(p if isinstance(p, WeightPrior) else WeightPrior(**p) for p in priors)
        if len(priors) != L:
            raise ValueError("need one prior per layer")
        for d, p in zip(doms, priors):
            if (d == "binary") != (p.kind == "bernoulli_pm1"):
                raise ValueError("binary weights require a bernoulli_pm1 prior and vice versa")
        object.__setattr__(self, "priors", priors)
        if self.noise_var <= 0:
            raise ValueError("noise_var must be positive")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def fan_in(self, layer: int) -> int:
        """Input width of ``layer`` (0-based), bias column included."""
        return self.layer_sizes[layer] + int(self.has_bias)

    def weight_shape(self, layer: int):
        return (self.layer_sizes[layer + 1], self.fan_in(layer))

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "activations": list(self.activations),
            "weight_domains": list(self.weight_domains),
            "priors": [asdict(p) for p in self.priors],
            "noise_var": self.noise_var,
            "has_bias": self.has_bias,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        d["priors"] = [WeightPrior(**p) for p in d.get("priors") or []] or None
        return cls(**d)


@dataclass
class Batch:
    """Inputs are spikes in {0,1} or rates in [0,1]; ``input_mode`` says
    whether a rate is a fixed value (``"rate"``) or a spike probability
    (``"bernoulli"``)."""

    inputs: np.ndarray
    targets: Optional[np.ndarray] = None
    input_mode: str = "rate"

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        if self.targets is not None:
            t = np.asarray(self.targets, dtype=float)
            self.targets = t.reshape(len(self.inputs), -1) if t.ndim < 2 else t
            if len(self.targets) != len(self.inputs):
                raise ValueError("inputs and targets disagree on sample count")
        if self.input_mode not in ("rate", "bernoulli"):
            raise ValueError("input_mode must be 'rate' or 'bernoulli'")
        if np.any((self.inputs < 0) | (self.inputs > 1)):
            raise ValueError("inputs must lie in [0, 1]")

    def __len__(self):
        return len(self.inputs)

    def input_moments(self, has_bias: bool):
        """``(E[v], E[v^2])`` of the layer-0 signal, bias column appended."""
        m = self.inputs
        s = m if self.input_mode == "bernoulli" else m ** 2
        if has_bias:
            one = np.ones((len(m), 1))
            m = np.hstack([m, one])
            s = np.hstack([s, one])
        return m, s


def prior_factor(prior: WeightPrior, shape):
    """``q0(W)`` initial value: the prior itself or its Gaussian projection."""
    if prior.kind == "bernoulli_pm1":
        return bernoulli(np.full(shape, prior.p), support=PM1)
    if prior.kind == "spike_slab":
        proj = prior.spike_slab().projection()
        return GaussianFactor(np.full(shape, float(proj.lam)), np.full(shape, float(proj.h)))
    g = GaussianFactor.from_moments(prior.mean, prior.var)
    return GaussianFactor(np.full(shape, float(g.lam)), np.full(shape, float(g.h)))


def uninformative_weights(domain: str, shape):
    if domain == "binary":
        return DiscreteFactor(PM1, np.zeros(tuple(shape) + (2,)))
    return GaussianFactor.uninformative(shape)


@dataclass
class LayerFactorState:
    """Factors of one layer for a batch of ``M`` samples.

    ``q*_U`` are (M, V_l) Gaussians; ``q*_V`` are (M, V_l) Bernoulli factors
    (``None`` on the output layer, whose spikes are observed); ``q*_W`` are
    (V_l, V_{l-1} [+1]) Gaussian or {-1,+1} factors.
    """

    q0_U: GaussianFactor
    q1_U: GaussianFactor
    q0_V: Optional[DiscreteFactor]
    q1_V: Optional[DiscreteFactor]
    q0_W: object
    q1_W: object


def init_state(spec: NetworkSpec, batch: Batch) -> List[LayerFactorState]:
    if batch.inputs.shape[1] != spec.layer_sizes[0]:
        raise ValueError(f"batch has {batch.inputs.shape[1]} inputs, "
                         f"network expects {spec.layer_sizes[0]}")
    if batch.targets is not None and batch.targets.shape[1] != spec.layer_sizes[-1]:
        raise ValueError("target width does not match the output layer")
    M = len(batch)
    states = []
    for ell in range(spec.n_layers):
        I = spec.layer_sizes[ell + 1]
        wshape = spec.weight_shape(ell)
        hidden = ell < spec.n_layers - 1
        states.append(LayerFactorState(
            q0_U=GaussianFactor.uninformative((M, I)),
            q1_U=GaussianFactor.uninformative((M, I)),
            q0_V=DiscreteFactor(SPIKE, np.zeros((M, I, 2))) if hidden else None,
            q1_V=DiscreteFactor(SPIKE, np.zeros((M, I, 2))) if hidden else None,
            q0_W=prior_factor(spec.priors[ell], wshape),
            q1_W=uninformative_weights(spec.weight_domains[ell], wshape),
        ))
    return states


# --------------------------------------------------------------------------
# posterior


@dataclass
class Posterior:
    """Trained marginal weight beliefs.

    ``weights[l]`` is ``{"mean": ..., "var": ...}`` for continuous layers and
    ``{"p_plus": ...}`` for binary layers.
    """

    spec: NetworkSpec
    weights: List[dict]
    activation_probs: Optional[List[Optional[np.ndarray]]] = None
    metadata: dict = field(default_factory=dict)

    def weight_moments(self, layer: int):
        """``(E[w], E[w^2])`` arrays for ``layer``."""
        w = self.weights[layer]
        if "p_plus" in w:
            p = np.asarray(w["p_plus"])
            return 2 * p - 1, np.ones_like(p)
        m = np.asarray(w["mean"])
        return m, np.asarray(w["var"]) + m ** 2

    def validate(self):
        for w in self.weights:
            if "var" in w and np.any(np.asarray(w["var"]) <= 0):
                raise ValueError("posterior variances must be positive")
            if "p_plus" in w:
                p = np.asarray(w["p_plus"])
                if np.any((p < 0) | (p > 1)):
                    raise ValueError("posterior probabilities must be in [0, 1]")


def _arr_to_json(a):
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _arr_from_json(d):
    try:
        return np.asarray(d["data"], dtype=float).reshape(d["shape"])
    except (KeyError, TypeError, ValueError) as e:
        raise PosteriorFormatError(f"malformed array entry: {e}") from e


def posterior_to_dict(p: Posterior) -> dict:
    return {
        "format": POSTERIOR_FORMAT,
        "version": POSTERIOR_VERSION,
        "spec": p.spec.to_dict(),
        "weights": [{k: _arr_to_json(v) for k, v in w.items()} for w in p.weights],
        "activation_probs": (None if p.activation_probs is None else
                             [None if a is None else _arr_to_json(a)
                              for a in p.activation_probs]),
        "metadata": p.metadata,
    }


def posterior_from_dict(d: dict) -> Posterior:
    if not isinstance(d, dict) or d.get("format") != POSTERIOR_FORMAT:
        raise PosteriorFormatError("not an epsnn posterior file")
    if d.get("version") != POSTERIOR_VERSION:
        raise PosteriorFormatError(f"unsupported posterior version {d.get('version')!r}")
    try:
        spec = NetworkSpec.from_dict(d["spec"])
        weights = [{k: _arr_from_json(v) for k, v in w.items()} for w in d["weights"]]
    except (KeyError, TypeError) as e:
        raise PosteriorFormatError(f"malformed posterior: {e}") from e
    ap = d.get("activation_probs")
    if ap is not None:
        ap = [None if a is None else _arr_from_json(a) for a in ap]
    post = Posterior(spec, weights, ap, d.get("metadata") or {})
    post.validate()
    return post


def save_posterior(p: Posterior, path):
    Path(path).write_text(json.dumps(posterior_to_dict(p)))


def load_posterior(path) -> Posterior:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise PosteriorFormatError(f"malformed posterior file: {e}") from e
    return posterior_from_dict(d)
