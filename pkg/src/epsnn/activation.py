"""Activation-block updates: moment matching of ``f(v|u) q(u) q(v)`` per neuron.

All functions are vectorized over arbitrarily shaped arrays of neurons.
Sigmoid likelihoods use the probit surrogate ``sigmoid(u) ~ Phi(beta u)`` with
``beta = sqrt(pi/8)`` unless ``exact=True``, which switches to Gauss-Hermite
quadrature against the true sigmoid.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import erfcx, expit, log_ndtr, logsumexp

from .dist import (
    DiscreteFactor,
    GaussianFactor,
    NaturalBounds,
    DEFAULT_BOUNDS,
    from_log_odds,
    gaussian_clip,
    gaussian_damp,
    gaussian_damp_fresh,
    gaussian_divide,
)

PROBIT_SCALE = np.sqrt(np.pi / 8.0)
_SQRT2 = np.sqrt(2.0)
_GH_ORDER_EXACT = 96


@dataclass
class TiltedMoments:
    u_mean: np.ndarray
    u_var: np.ndarray
    v_prob1: Optional[np.ndarray]
    log_evidence: np.ndarray


def mills_ratio(z):
    """phi(z) / Phi(z), stable for every real z."""
    return np.sqrt(2.0 / np.pi) / erfcx(-np.asarray(z, dtype=float) / _SQRT2)


def _probit_branch(m, v, slope):
    """Moments of ``N(u; m, v) Phi(slope * u)``.

    ``slope = +inf`` / ``-inf`` gives the Heaviside step 1{u>=0} / 1{u<0}.
    Returns (log Z, mean, var).
    """
    if np.isinf(slope):
        s = np.sqrt(v)
        sign = 1.0 if slope > 0 else -1.0
        z = sign * m / s
        t = sign * s
    else:
        denom = np.sqrt(1.0 + slope ** 2 * v)
        z = slope * m / denom
        t = slope * v / denom
    r = mills_ratio(z)
    mean = m + t * r
    var = v - t ** 2 * r * (z + r)
    # rounding can leave a tiny negative value deep in the tail
    var = np.maximum(var, v * 1e-300 + 1e-300)
    return log_ndtr(z), mean, var


def _mixture(logw1, br1, logw0, br0):
    lz1, m1, v1 = br1
    lz0, m0, v0 = br0
    a1 = logw1 + lz1
    a0 = logw0 + lz0
    log_ev = np.logaddexp(a1, a0)
    p1 = np.exp(a1 - log_ev)
    p0 = 1.0 - p1
    mean = p1 * m1 + p0 * m0
    var = p1 * (v1 + m1 ** 2) + p0 * (v0 + m0 ** 2) - mean ** 2
    # the two-component form loses precision when one weight is ~1
    var = np.where(p1 > 1 - 1e-12, v1, np.where(p0 > 1 - 1e-12, v0, var))
    var = np.maximum(var, 1e-300)
    return TiltedMoments(mean, var, p1, log_ev)


def _spike_log_weights(cav_v: DiscreteFactor):
    lw = cav_v.log_weights
    lw = lw - logsumexp(lw, axis=-1, keepdims=True)
    return lw[..., 1], lw[..., 0]


def _cav_u_moments(cav_u: GaussianFactor):
    lam = np.asarray(cav_u.lam, dtype=float)
    return np.asarray(cav_u.h, dtype=float) / lam, 1.0 / lam


def heaviside_hidden(cav_u: GaussianFactor, cav_v: DiscreteFactor) -> TiltedMoments:
    m, v = _cav_u_moments(cav_u)
    lw1, lw0 = _spike_log_weights(cav_v)
    return _mixture(lw1, _probit_branch(m, v, np.inf), lw0, _probit_branch(m, v, -np.inf))


def heaviside_output(cav_u: GaussianFactor, y) -> TiltedMoments:
    m, v = _cav_u_moments(cav_u)
    y = np.broadcast_to(np.asarray(y), np.shape(m))
    lz1, m1, v1 = _probit_branch(m, v, np.inf)
    lz0, m0, v0 = _probit_branch(m, v, -np.inf)
    on = y > 0.5
    return TiltedMoments(np.where(on, m1, m0), np.where(on, v1, v0), None,
                         np.where(on, lz1, lz0))


# -- sigmoid ---------------------------------------------------------------


def _gh_sigmoid_branch(m, v, sign, order=_GH_ORDER_EXACT):
    """Moments of ``N(u; m, v) sigmoid(sign*u)`` by Gauss-Hermite quadrature."""
    x, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / np.sqrt(2 * np.pi)
    m = np.asarray(m, dtype=float)[..., None]
    s = np.sqrt(np.asarray(v, dtype=float))[..., None]
    u = m + s * x
    f = expit(sign * u)
    z = (w * f).sum(-1)
    mean = (w * f * u).sum(-1) / z
    second = (w * f * u ** 2).sum(-1) / z
    return np.log(z), mean, np.maximum(second - mean ** 2, 1e-300)


def _sigmoid_branches(m, v, exact):
    if exact:
        return _gh_sigmoid_branch(m, v, 1.0), _gh_sigmoid_branch(m, v, -1.0)
    return _probit_branch(m, v, PROBIT_SCALE), _probit_branch(m, v, -PROBIT_SCALE)


def sigmoid_hidden(cav_u: GaussianFactor, cav_v: DiscreteFactor, exact=False) -> TiltedMoments:
    m, v = _cav_u_moments(cav_u)
    lw1, lw0 = _spike_log_weights(cav_v)
    b1, b0 = _sigmoid_branches(m, v, exact)
    return _mixture(lw1, b1, lw0, b0)


def sigmoid_output(cav_u: GaussianFactor, y, exact=False) -> TiltedMoments:
    m, v = _cav_u_moments(cav_u)
    y = np.broadcast_to(np.asarray(y), np.shape(m))
    (lz1, m1, v1), (lz0, m0, v0) = _sigmoid_branches(m, v, exact)
    on = y > 0.5
    return TiltedMoments(np.where(on, m1, m0), np.where(on, v1, v0), None,
                         np.where(on, lz1, lz0))


def gaussian_output(cav_u: GaussianFactor, y, noise_var) -> TiltedMoments:
    lam_c = np.asarray(cav_u.lam, dtype=float)
    h_c = np.asarray(cav_u.h, dtype=float)
    y = np.asarray(y, dtype=float)
    lam = lam_c + 1.0 / noise_var
    h = h_c + y / noise_var
    # evidence N(y; m_c, v_c + noise_var) in natural form; flat cavity -> 0
    a = 1.0 + lam_c * noise_var
    with np.errstate(divide="ignore"):
        log_ev = np.where(lam_c > 0,
                          0.5 * np.log(lam_c / (2 * np.pi * a))
                          - 0.5 * (lam_c * y - h_c) ** 2 / np.where(lam_c > 0, lam_c * a, 1.0),
                          0.0)
    return TiltedMoments(h / lam, 1.0 / lam, None, log_ev)


def spike_probability(u_mean, u_var, kind: str, exact=False):
    """Forward spike probability for a neuron with Gaussian membrane potential
    and an uninformative spike message."""
    u_mean = np.asarray(u_mean, dtype=float)
    u_var = np.asarray(u_var, dtype=float)
    if kind == "heaviside":
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(u_var > 0, u_mean / np.sqrt(u_var), np.sign(u_mean) * np.inf)
        z = np.where(np.isnan(z), np.inf, z)  # u == 0 exactly spikes
        return np.exp(log_ndtr(z))
    if kind == "sigmoid":
        if exact:
            return np.exp(_gh_sigmoid_branch(u_mean, u_var, 1.0)[0])
        return np.exp(log_ndtr(PROBIT_SCALE * u_mean / np.sqrt(1 + PROBIT_SCALE ** 2 * u_var)))
    raise ValueError(f"no spike probability for activation {kind!r}")


# -- block updates ---------------------------------------------------------


def tilted_moments(kind: str, cav_u: GaussianFactor, cav_v=None, y=None,
                   noise_var=None, exact=False) -> TiltedMoments:
    if kind == "heaviside":
        return heaviside_hidden(cav_u, cav_v) if y is None else heaviside_output(cav_u, y)
    if kind == "sigmoid":
        if y is None:
            return sigmoid_hidden(cav_u, cav_v, exact=exact)
        return sigmoid_output(cav_u, y, exact=exact)
    if kind == "gaussian":
        if y is None:
            raise ValueError("gaussian activation is only valid for an observed output layer")
        return gaussian_output(cav_u, y, noise_var)
    raise ValueError(f"unknown activation {kind!r}")


def update_spikes_forward(kind, q1_u: GaussianFactor, q1_v: DiscreteFactor,
                          q0_v_old: DiscreteFactor, gamma=1.0, exact=False):
    """New ``q0(V)``: tilted spike marginal divided by the cavity ``q1(V)``."""
    tm = tilted_moments(kind, q1_u, cav_v=q1_v, exact=exact)
    p = np.clip(tm.v_prob1, 1e-300, 1.0)
    with np.errstate(divide="ignore"):
        belief_lo = np.log(p) - np.log1p(-np.minimum(p, 1 - 1e-16))
    new_lo = belief_lo - q1_v.log_odds
    lo = gamma * new_lo + (1.0 - gamma) * q0_v_old.log_odds
    return from_log_odds(lo)


def update_potentials_backward(kind, q1_u: GaussianFactor, q0_u_old: GaussianFactor,
                               q1_v: Optional[DiscreteFactor] = None, y=None,
                               noise_var=None, gamma=1.0,
                               bounds: NaturalBounds = DEFAULT_BOUNDS, exact=False):
    """New ``q0(U)`` = tilted / ``q1(U)``, damped and clipped.

    Sites whose quotient is improper keep their previous value.  Returns
    ``(q0_u, n_skipped)``.
    """
    if kind == "gaussian":
        # exact: the likelihood itself is the Gaussian message
        shape = np.shape(q1_u.lam)
        new = GaussianFactor(np.full(shape, 1.0 / noise_var),
                             np.broadcast_to(np.asarray(y, dtype=float) / noise_var, shape))
        skipped = np.zeros(shape, dtype=bool)
    else:
        tm = tilted_moments(kind, q1_u, cav_v=q1_v, y=y, noise_var=noise_var, exact=exact)
        belief = GaussianFactor.from_moments(tm.u_mean, tm.u_var)
        new = gaussian_divide(belief, q1_u)
        skipped = ~(np.asarray(new.is_proper) & np.isfinite(new.lam) & np.isfinite(new.h))
    damped = gaussian_damp_fresh(new, q0_u_old, gamma)
    lam = np.where(skipped, q0_u_old.lam, damped.lam)
    h = np.where(skipped, q0_u_old.h, damped.h)
    # an untouched uninformative site stays exactly uninformative
    out = gaussian_clip(GaussianFactor(lam, h), bounds)
    flat = skipped & (np.asarray(q0_u_old.lam) == 0)
    out = GaussianFactor(np.where(flat, 0.0, out.lam), np.where(flat, 0.0, out.h))
    return out, int(np.count_nonzero(skipped))
