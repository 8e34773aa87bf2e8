"""Exponential-family factor algebra.

Gaussian factors are stored in natural parameters ``(lam, h)`` with
``lam = 1/var`` and ``h = mean/var``.  Discrete factors carry one log-weight
per support point along the last axis.  Every operation is elementwise and
broadcasts, so the same functions serve scalars and whole factor arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

ArrayLike = Union[float, np.ndarray]

LOG_WEIGHT_MIN = -700.0
LOG_WEIGHT_MAX = 700.0


@dataclass(frozen=True)
class NaturalBounds:
    lam_min: float = 1e-8
    lam_max: float = 1e8
    h_max: float = 1e8

    def __post_init__(self):
        if not (0 < self.lam_min < self.lam_max):
            raise ValueError("need 0 < lam_min < lam_max")
        if self.h_max <= 0:
            raise ValueError("h_max must be positive")


DEFAULT_BOUNDS = NaturalBounds()


@dataclass(frozen=True)
class GaussianFactor:
    """One-dimensional Gaussian (or array of them) in natural parameters."""

    lam: ArrayLike
    h: ArrayLike

    @classmethod
    def from_moments(cls, mean: ArrayLike, var: ArrayLike) -> "GaussianFactor":
        var = np.asarray(var, dtype=float)
        lam = 1.0 / var
        return cls(lam, lam * np.asarray(mean, dtype=float))

    @classmethod
    def uninformative(cls, shape=()) -> "GaussianFactor":
        return cls(np.zeros(shape), np.zeros(shape))

    @property
    def is_proper(self):
        return np.asarray(self.lam) > 0

    @property
    def mean(self):
        return np.asarray(self.h) / np.asarray(self.lam)

    @property
    def var(self):
        return 1.0 / np.asarray(self.lam)

    def moments(self) -> Tuple[np.ndarray, np.ndarray]:
        """Return ``(mean, var)``; only meaningful where ``lam > 0``."""
        lam = np.asarray(self.lam, dtype=float)
        if np.any(lam <= 0):
            raise ValueError("moments undefined for non-positive precision")
        return np.asarray(self.h) / lam, 1.0 / lam

    def __getitem__(self, idx) -> "GaussianFactor":
        return GaussianFactor(np.asarray(self.lam)[idx], np.asarray(self.h)[idx])

    @property
    def shape(self):
        return np.shape(self.lam)


def moments_from_natural(f: GaussianFactor):
    return f.moments()


def natural_from_moments(mean, var) -> GaussianFactor:
    return GaussianFactor.from_moments(mean, var)


def gaussian_multiply(a: GaussianFactor, b: GaussianFactor) -> GaussianFactor:
    return GaussianFactor(np.add(a.lam, b.lam), np.add(a.h, b.h))


def gaussian_divide(a: GaussianFactor, b: GaussianFactor) -> GaussianFactor:
    """Quotient ``a / b``.  Check ``.is_proper`` on the result before using it
    as a belief."""
    return GaussianFactor(np.subtract(a.lam, b.lam), np.subtract(a.h, b.h))


def gaussian_power(a: GaussianFactor, alpha: float) -> GaussianFactor:
    if np.any(np.asarray(alpha) < 0):
        raise ValueError("exponent must be non-negative")
    return GaussianFactor(np.multiply(alpha, a.lam), np.multiply(alpha, a.h))


def gaussian_damp(new: GaussianFactor, old: GaussianFactor, gamma) -> GaussianFactor:
    """Convex combination ``gamma * new + (1 - gamma) * old`` in natural
    parameters; ``gamma`` may be an array broadcasting against the factors."""
    gamma_arr = np.asarray(gamma, dtype=float)
    if np.any((gamma_arr < 0.0) | (gamma_arr > 1.0)):
        raise ValueError("damping must lie in [0, 1]")
    if gamma_arr.ndim == 0:
        if gamma == 1.0:
            return new
        if gamma == 0.0:
            return old
    return GaussianFactor(
        gamma * np.asarray(new.lam) + (1.0 - gamma) * np.asarray(old.lam),
        gamma * np.asarray(new.h) + (1.0 - gamma) * np.asarray(old.h),
    )


def gaussian_damp_fresh(new: GaussianFactor, old: GaussianFactor, gamma: float) -> GaussianFactor:
    """``gaussian_damp``, except that sites where ``old`` is exactly
    uninformative (never updated) take ``new`` outright."""
    d = gaussian_damp(new, old, gamma)
    fresh = (np.asarray(old.lam) == 0) & (np.asarray(old.h) == 0)
    if not np.any(fresh):
        return d
    lam = np.broadcast_to(new.lam, fresh.shape)
    h = np.broadcast_to(new.h, fresh.shape)
    return GaussianFactor(np.where(fresh, lam, d.lam), np.where(fresh, h, d.h))


def gaussian_clip(a: GaussianFactor, bounds: NaturalBounds = DEFAULT_BOUNDS) -> GaussianFactor:
    lam = np.clip(a.lam, bounds.lam_min, bounds.lam_max)
    h = np.clip(a.h, -bounds.h_max, bounds.h_max)
    if np.ndim(lam) == 0:
        lam, h = float(lam), float(h)
    return GaussianFactor(lam, h)


def clip_count(a: GaussianFactor, bounds: NaturalBounds = DEFAULT_BOUNDS) -> int:
    lam = np.asarray(a.lam)
    h = np.asarray(a.h)
    return int(np.count_nonzero((lam < bounds.lam_min) | (lam > bounds.lam_max)
                                | (np.abs(h) > bounds.h_max)))


# --------------------------------------------------------------------------
# discrete factors


@dataclass(frozen=True)
class DiscreteFactor:
    """Factor over an ordered finite support; ``log_weights[..., k]`` is the
    unnormalized log-probability of ``support[k]``."""

    support: Tuple[float, ...]
    log_weights: np.ndarray

    def __post_init__(self):
        lw = np.asarray(self.log_weights, dtype=float)
        if lw.shape[-1] != len(self.support):
            raise ValueError("last axis of log_weights must match the support size")
        object.__setattr__(self, "support", tuple(float(s) for s in self.support))
        object.__setattr__(self, "log_weights", lw)

    @classmethod
    def uniform(cls, support, shape=()) -> "DiscreteFactor":
        return cls(tuple(support), np.zeros(tuple(np.atleast_1d(shape)) + (len(support),))
                   if shape != () else np.zeros(len(support)))

    @property
    def probs(self) -> np.ndarray:
        lw = self.log_weights - self.log_weights.max(axis=-1, keepdims=True)
        w = np.exp(lw)
        return w / w.sum(axis=-1, keepdims=True)

    @property
    def mean(self) -> np.ndarray:
        return self.probs @ np.asarray(self.support)

    @property
    def second_moment(self) -> np.ndarray:
        return self.probs @ np.asarray(self.support) ** 2

    @property
    def log_odds(self) -> np.ndarray:
        """``log w[1] - log w[0]`` for two-point supports."""
        if len(self.support) != 2:
            raise ValueError("log-odds only defined for two-point supports")
        return self.log_weights[..., 1] - self.log_weights[..., 0]

    def __getitem__(self, idx) -> "DiscreteFactor":
        if not isinstance(idx, tuple):
            idx = (idx,)
        return DiscreteFactor(self.support, self.log_weights[idx + (Ellipsis,)][..., :])

    @property
    def shape(self):
        return self.log_weights.shape[:-1]


def _recenter(lw: np.ndarray) -> np.ndarray:
    lw = lw - lw.max(axis=-1, keepdims=True)
    return np.maximum(lw, LOG_WEIGHT_MIN)


def _check_support(a: DiscreteFactor, b: DiscreteFactor):
    if a.support != b.support:
        raise ValueError(f"support mismatch: {a.support} vs {b.support}")


def bernoulli(p, support=(0.0, 1.0)) -> DiscreteFactor:
    """Two-point factor with probability ``p`` on ``support[1]``."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        lw = np.stack([np.log1p(-p), np.log(p)], axis=-1)
    return DiscreteFactor(support, _recenter(lw))


def from_log_odds(log_odds, support=(0.0, 1.0)) -> DiscreteFactor:
    lo = np.clip(np.asarray(log_odds, dtype=float), LOG_WEIGHT_MIN, LOG_WEIGHT_MAX)
    return DiscreteFactor(support, _recenter(np.stack([np.zeros_like(lo), lo], axis=-1)))


def discrete_multiply(a: DiscreteFactor, b: DiscreteFactor) -> DiscreteFactor:
    _check_support(a, b)
    return DiscreteFactor(a.support, _recenter(a.log_weights + b.log_weights))


def discrete_divide(a: DiscreteFactor, b: DiscreteFactor) -> DiscreteFactor:
    _check_support(a, b)
    return DiscreteFactor(a.support, _recenter(a.log_weights - b.log_weights))


def discrete_power(a: DiscreteFactor, alpha: float) -> DiscreteFactor:
    if np.any(np.asarray(alpha) < 0):
        raise ValueError("exponent must be non-negative")
    return DiscreteFactor(a.support, _recenter(np.multiply(alpha, a.log_weights)))


def discrete_damp(new: DiscreteFactor, old: DiscreteFactor, gamma: float) -> DiscreteFactor:
    _check_support(new, old)
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("damping must lie in [0, 1]")
    return DiscreteFactor(new.support,
                          _recenter(gamma * new.log_weights + (1.0 - gamma) * old.log_weights))


def discrete_clip(a: DiscreteFactor) -> DiscreteFactor:
    return DiscreteFactor(a.support, _recenter(np.clip(a.log_weights, LOG_WEIGHT_MIN,
                                                       LOG_WEIGHT_MAX)))


# --------------------------------------------------------------------------
# spike-and-slab prior


@dataclass(frozen=True)
class SpikeSlabPrior:
    """Point mass at zero with probability ``1 - spike_prob``, Gaussian slab
    otherwise."""

    slab: GaussianFactor
    spike_prob: float

    def __post_init__(self):
        if not 0.0 <= self.spike_prob <= 1.0:
            raise ValueError("spike_prob must be in [0, 1]")
        if np.any(np.asarray(self.slab.lam) <= 0):
            raise ValueError("slab must be a proper Gaussian")

    def projection(self) -> GaussianFactor:
        """Moment-matched Gaussian of the prior itself."""
        mu0, v0 = self.slab.moments()
        p = self.spike_prob
        mean = p * mu0
        var = p * (v0 + mu0 ** 2) - mean ** 2
        return GaussianFactor.from_moments(mean, var)


def spike_slab_tilted(prior: SpikeSlabPrior, cavity: GaussianFactor):
    """Moments of ``prior(w) * cavity(w)``: returns (mean, var, slab_weight)."""
    mu0, v0 = prior.slab.moments()
    p = prior.spike_prob
    lam_c = np.asarray(cavity.lam, dtype=float)
    h_c = np.asarray(cavity.h, dtype=float)
    # slab posterior
    lam_s = 1.0 / v0 + lam_c
    m_s = (mu0 / v0 + h_c) / lam_s
    v_s = 1.0 / lam_s
    # log marginal evidence of each component, up to a shared constant:
    #   spike: N(0; m_c, v_c)   slab: N(mu0; m_c, v_c + v0)
    # written in natural form so lam_c -> 0 stays finite
    with np.errstate(divide="ignore"):
        log_spike = np.log1p(-p) if p < 1 else -np.inf
        log_slab = np.log(p) if p > 0 else -np.inf
    # log N(0; m_c, v_c) = 0.5 log lam_c - 0.5 h_c^2 / lam_c  (+const)
    # log N(mu0; m_c, v_c+v0) = 0.5 log(lam_c/(1+lam_c v0)) - 0.5 (mu0 lam_c - h_c)^2 / (lam_c (1 + lam_c v0))
    # subtract the spike's -0.5 h^2/lam and 0.5 log lam from both
    a = 1.0 + lam_c * v0
    log_ratio = (-0.5 * np.log(a)
                 - 0.5 * (mu0 ** 2 * lam_c - 2 * mu0 * h_c - h_c ** 2 * v0) / a)
    logit = log_slab - log_spike + log_ratio
    slab_w = 1.0 / (1.0 + np.exp(-np.clip(logit, -700, 700)))
    if p == 1.0:
        slab_w = np.ones_like(slab_w)
    elif p == 0.0:
        slab_w = np.zeros_like(slab_w)
    mean = slab_w * m_s
    second = slab_w * (v_s + m_s ** 2)
    var = second - mean ** 2
    return mean, var, slab_w


def spike_slab_q0_update(prior: SpikeSlabPrior, cavity: GaussianFactor,
                         old: GaussianFactor | None = None):
    """Refresh the Gaussian site standing in for a spike-and-slab prior.

    Returns ``(q0_new, activation_prob)``.  Where the division by the cavity is
    improper the old site is kept (or the prior projection if none is given).
    """
    if prior.spike_prob == 1.0:
        shape = np.shape(cavity.lam)
        q0 = GaussianFactor(np.broadcast_to(prior.slab.lam, shape) * 1.0,
                            np.broadcast_to(prior.slab.h, shape) * 1.0)
        return q0, np.ones(shape)
    mean, var, slab_w = spike_slab_tilted(prior, cavity)
    with np.errstate(divide="ignore", invalid="ignore"):
        tilted = GaussianFactor.from_moments(mean, var)
    q0 = gaussian_divide(tilted, cavity)
    ok = np.asarray(q0.is_proper) & np.isfinite(q0.lam) & np.isfinite(q0.h)
    if old is None:
        old = prior.projection()
    lam = np.where(ok, q0.lam, np.broadcast_to(old.lam, np.shape(ok)))
    h = np.where(ok, q0.h, np.broadcast_to(old.h, np.shape(ok)))
    if np.ndim(lam) == 0:
        lam, h, slab_w = float(lam), float(h), float(slab_w)
    return GaussianFactor(lam, h), slab_w
