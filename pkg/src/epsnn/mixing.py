"""Mixing-block updates by average EP.

The block ties ``u[n, i] = sum_j w[i, j] v[n, j]``.  Each delta factor is
handled locally: the remaining sum is projected onto a Gaussian, the variable
being updated is isolated (dividing by the *mean* of its multiplier), and the
resulting local messages are multiplied together and damped.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from . import _kernels
from .dist import (
    DEFAULT_BOUNDS,
    DiscreteFactor,
    GaussianFactor,
    NaturalBounds,
    discrete_damp,
    discrete_divide,
    discrete_clip,
    discrete_multiply,
    discrete_power,
    from_log_odds,
    gaussian_clip,
    gaussian_damp,
    gaussian_damp_fresh,
    gaussian_divide,
    gaussian_multiply,
    gaussian_power,
)
from .model import PM1, SPIKE

EPS_V = 1e-3
GAMMA_AEP = 0.7


@dataclass(frozen=True)
class EtaGaussian:
    mean: float
    var: float


def factor_moments(f):
    """``(E[x], E[x^2])`` of a Gaussian or discrete factor (elementwise)."""
    if isinstance(f, GaussianFactor):
        m, v = f.moments()
        return m, v + m ** 2
    return f.mean, f.second_moment


# -- single-site operations --------------------------------------------------


def eta_u_moments(w_mean, w_second, v_mean, v_second) -> EtaGaussian:
    """Gaussian projection of ``sum_j w_j v_j`` for independent ``w`` and ``v``."""
    w_mean, w_second = np.asarray(w_mean, float), np.asarray(w_second, float)
    v_mean, v_second = np.asarray(v_mean, float), np.asarray(v_second, float)
    mean = np.sum(w_mean * v_mean, axis=-1)
    var = np.sum(w_second * v_second - (w_mean * v_mean) ** 2, axis=-1)
    return EtaGaussian(mean, np.maximum(var, 0.0))


def _local_gaussian(eta: EtaGaussian, cav: GaussianFactor):
    """Moment-match ``N(x; eta) cav(x)`` and divide the cavity back out."""
    with np.errstate(divide="ignore"):
        lam_eta = 1.0 / np.asarray(eta.var, float)
    if np.isinf(lam_eta):
        return None
    tilted = gaussian_multiply(GaussianFactor(lam_eta, lam_eta * eta.mean), cav)
    if not np.all(tilted.is_proper):
        return None
    return gaussian_divide(tilted, cav)


def update_u_local(eta: EtaGaussian, cav_u: GaussianFactor, old: Optional[GaussianFactor] = None,
                   gamma=1.0, bounds: NaturalBounds = DEFAULT_BOUNDS) -> Optional[GaussianFactor]:
    """New ``q1(u)``; ``None`` when the site cannot be updated."""
    new = _local_gaussian(eta, cav_u)
    if new is None:
        return None
    if old is not None:
        new = gaussian_damp(new, old, gamma)
    return gaussian_clip(new, bounds)


def eta_w_star_moments(cav_u: GaussianFactor, w_rest_mean, w_rest_second, v_rest_mean,
                       v_rest_second, e_vj, eps=EPS_V) -> Optional[EtaGaussian]:
    """Projection of ``(u - sum_{k!=j} w_k v_k) / E[v_j]``; ``None`` to skip."""
    if abs(e_vj) <= eps:
        return None
    rest = eta_u_moments(w_rest_mean, w_rest_second, v_rest_mean, v_rest_second)
    u_mean, u_var = cav_u.moments()
    return EtaGaussian((u_mean - rest.mean) / e_vj, (u_var + rest.var) / e_vj ** 2)


def update_w_local_gaussian(eta: EtaGaussian, cav_w: GaussianFactor):
    return _local_gaussian(eta, cav_w)


def _two_point_local(eta: EtaGaussian, cav: DiscreteFactor):
    s = np.asarray(cav.support)
    log_lik = -0.5 * (s - eta.mean) ** 2 / eta.var
    tilted = DiscreteFactor(cav.support, cav.log_weights + log_lik)
    return discrete_divide(tilted, cav)


def update_w_local_binary(eta: EtaGaussian, cav_w: DiscreteFactor) -> DiscreteFactor:
    if eta.var <= 0:
        raise ValueError("eta variance must be positive")
    return _two_point_local(eta, cav_w)


def update_v_local(eta: Optional[EtaGaussian], cav_v: DiscreteFactor) -> Optional[DiscreteFactor]:
    if eta is None:
        return None
    return _two_point_local(eta, cav_v)


def recombine(local_factors, old=None, gamma=GAMMA_AEP, bounds: NaturalBounds = DEFAULT_BOUNDS):
    """Multiply local messages; damp against ``old`` and clip."""
    local_factors = [f for f in local_factors if f is not None]
    first = local_factors[0]
    if isinstance(first, GaussianFactor):
        new = GaussianFactor(sum(np.asarray(f.lam, float) for f in local_factors),
                             sum(np.asarray(f.h, float) for f in local_factors))
        if old is not None:
            new = gaussian_damp(new, old, gamma)
        return clip_message(new, bounds)
    new = DiscreteFactor(first.support, sum(f.log_weights for f in local_factors))
    if old is not None:
        new = discrete_damp(new, old, gamma)
    return discrete_clip(new)


def clip_message(f: GaussianFactor, bounds: NaturalBounds = DEFAULT_BOUNDS) -> GaussianFactor:
    """Clip a message; exactly uninformative entries stay uninformative."""
    lam = np.asarray(f.lam, float)
    h = np.asarray(f.h, float)
    flat = (lam == 0) & (h == 0)
    c = gaussian_clip(GaussianFactor(lam, h), bounds)
    out = GaussianFactor(np.where(flat, 0.0, c.lam), np.where(flat, 0.0, c.h))
    if np.ndim(lam) == 0:
        out = GaussianFactor(float(out.lam), float(out.h))
    return out


# -- whole-layer operations --------------------------------------------------


def _weight_cavity(q0_w, q1_w, n_samples):
    alpha = (n_samples - 1) / n_samples
    if isinstance(q0_w, GaussianFactor):
        return gaussian_multiply(q0_w, gaussian_power(q1_w, alpha))
    return discrete_multiply(q0_w, discrete_power(q1_w, alpha))


def weight_moments(f):
    """``(mean, var)`` of a weight factor array."""
    if isinstance(f, GaussianFactor):
        return f.moments()
    m = f.mean
    return m, np.maximum(1.0 - m ** 2, 0.0)


@dataclass
class SignalMoments:
    """Moments of a layer's input signal under its cavity (bias included)."""

    mean: np.ndarray
    second: np.ndarray

    @property
    def var(self):
        return np.maximum(self.second - self.mean ** 2, 0.0)


def spike_cavity(q0_v: DiscreteFactor, q1_v: DiscreteFactor, fan_out: int) -> DiscreteFactor:
    return discrete_multiply(q0_v, discrete_power(q1_v, (fan_out - 1) / fan_out))


def spike_signal(q0_v, q1_v, fan_out, has_bias) -> SignalMoments:
    lo = spike_cavity(q0_v, q1_v, fan_out).log_odds
    m = expit(lo)
    return _with_bias(m, m.copy(), has_bias)


def _with_bias(m, s, has_bias):
    if has_bias:
        one = np.ones((len(m), 1))
        m, s = np.hstack([m, one]), np.hstack([s, one])
    return SignalMoments(m, s)


def row_sums(sig: SignalMoments, mw, vw):
    """Means and variances of ``eta_u`` for every (n, i)."""
    s_m = sig.mean @ mw.T
    s_v = sig.second @ vw.T + sig.var @ (mw ** 2).T
    return s_m, np.maximum(s_v, 0.0)


def forward_update(q0_w, q1_w, q1_u_old: GaussianFactor, sig: SignalMoments, gamma=1.0,
                   bounds: NaturalBounds = DEFAULT_BOUNDS, cavity=True) -> GaussianFactor:
    """Single-sweep update of ``q1(U)`` with weights and spikes held fixed."""
    n = len(sig.mean)
    cav_w = _weight_cavity(q0_w, q1_w, n) if cavity else (
        gaussian_multiply(q0_w, q1_w) if isinstance(q0_w, GaussianFactor)
        else discrete_multiply(q0_w, q1_w))
    mw, vw = weight_moments(cav_w)
    s_m, s_v = row_sums(sig, mw, vw)
    lam = 1.0 / np.maximum(s_v, 1.0 / bounds.lam_max)
    new = GaussianFactor(lam, lam * s_m)
    new = gaussian_damp_fresh(new, q1_u_old, gamma)
    return gaussian_clip(new, bounds)


@dataclass
class MixingDiagnostics:
    sweeps: int = 0
    w_skips: int = 0
    v_skips: int = 0
    u_skips: int = 0
    clips: int = 0
    rejected: int = 0


@dataclass
class StepControl:
    """AEP damping that adapts to oscillation of the fixed-point iteration.

    The residual is the difference between the undamped target messages and
    the current ones.  When two successive residuals point in opposite
    directions the sweep overshot: ``gamma`` is halved, and the sweep is
    undone if the residual also grew.  Consistent directions let ``gamma``
    recover towards ``gamma_max``.  The value persists across calls.
    """

    gamma: float = GAMMA_AEP
    gamma_min: float = 1e-4
    gamma_max: Optional[float] = None
    adaptive: bool = True
    grow: float = 1.1

    def __post_init__(self):
        if self.gamma_max is None:
            self.gamma_max = self.gamma


def _residual(target_w, cur_w, target_v=None, cur_v=None):
    """Flattened difference between target and current messages."""
    if isinstance(cur_w, GaussianFactor):
        parts = [np.ravel(target_w.lam - cur_w.lam), np.ravel(target_w.h - cur_w.h)]
    else:
        parts = [np.ravel(target_w.log_odds - cur_w.log_odds)]
    if target_v is not None:
        parts.append(np.ravel(target_v.log_odds - cur_v.log_odds))
    return np.concatenate(parts)


def backward_update(q0_w, q1_w, q0_u: GaussianFactor, sig_fn, q1_v_in=None, *,
                    has_bias=False, max_iters=3, gamma=GAMMA_AEP, eps=EPS_V,
                    tol=1e-4, bounds: NaturalBounds = DEFAULT_BOUNDS, diag=None,
                    step: Optional[StepControl] = None):
    """AEP sweeps updating ``q1(W)`` and (for hidden inputs) ``q1(V)``.

    ``sig_fn(q1_v)`` returns the input-signal cavity moments given the current
    spike message (it ignores its argument for observed inputs).  Sweeps stop
    once the residual falls below ``tol``.  With ``step`` given, its
    ``gamma`` replaces ``gamma`` and is reduced on divergence.  Returns
    ``(q1_w, q1_v_in)``.
    """
    diag = diag if diag is not None else MixingDiagnostics()
    step = step if step is not None else StepControl(gamma, adaptive=False)
    binary = not isinstance(q1_w, GaussianFactor)
    lam_u = np.asarray(q0_u.lam, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(lam_u > 0, np.asarray(q0_u.h) / np.where(lam_u > 0, lam_u, 1), 0.0)
    want_v = q1_v_in is not None
    accepted = None  # (q1_w, q1_v, target_w, target_v, residual, |residual|)
    for _ in range(max_iters):
        sig = sig_fn(q1_v_in)
        n = len(sig.mean)
        cav_w = _weight_cavity(q0_w, q1_w, n)
        mw, vw = weight_moments(cav_w)
        s_m, s_v = row_sums(sig, mw, vw)
        lam_w, h_w, sk_w, lo_v, sk_v = _kernels.mixing_backward(
            sig.mean, sig.second, sig.var, mw, vw, mu, lam_u, s_m, s_v, eps, want_v)
        diag.sweeps += 1
        n_clip = 0
        if binary:
            tgt_w = from_log_odds(2.0 * h_w, support=PM1)
        else:
            raw = GaussianFactor(lam_w, h_w)
            n_clip = _count_out_of_bounds(raw, bounds)
            tgt_w = clip_message(raw, bounds)
        tgt_v = None
        if want_v:
            if has_bias:
                lo_v = lo_v[:, :-1]
            tgt_v = from_log_odds(lo_v, support=SPIKE)
        res = _residual(tgt_w, q1_w, tgt_v, q1_v_in)
        norm = float(np.sqrt(res @ res))
        if accepted is not None and step.adaptive and accepted[5] > 0 and norm > 0:
            prev, prev_norm = accepted[4], accepted[5]
            cos = float(res @ prev) / (norm * prev_norm)
            if cos < 0 and norm > prev_norm and step.gamma > step.gamma_min:
                # growing oscillation: undo the sweep and shrink the step
                diag.rejected += 1
                step.gamma = max(step.gamma_min, 0.5 * step.gamma)
                q1_w, q1_v_in, tgt_w, tgt_v, res, norm = accepted
                sk_w = sk_v = n_clip = 0
            elif cos < -0.5:
                step.gamma = max(step.gamma_min, 0.5 * step.gamma)
            elif cos > 0.5:
                step.gamma = min(step.gamma_max, step.grow * step.gamma)
        diag.w_skips += sk_w
        diag.v_skips += sk_v
        diag.clips += n_clip
        accepted = (q1_w, q1_v_in, tgt_w, tgt_v, res, norm)
        if norm / np.sqrt(res.size) < tol:
            break
        g = step.gamma
        if binary:
            q1_w = discrete_damp(tgt_w, q1_w, g)
        else:
            q1_w = clip_message(gaussian_damp(tgt_w, q1_w, g), bounds)
        if want_v:
            q1_v_in = discrete_damp(tgt_v, q1_v_in, g)
    return q1_w, q1_v_in


def _count_out_of_bounds(f: GaussianFactor, bounds):
    lam = np.asarray(f.lam)
    pos = lam != 0
    return int(np.count_nonzero(pos & ((lam < bounds.lam_min) | (lam > bounds.lam_max)))
               + np.count_nonzero(np.abs(f.h) > bounds.h_max))


def aep_mixing_update(state, sig_fn, direction, *, max_iters=3, gamma=GAMMA_AEP,
                      has_bias=False, q1_v_in=None, bounds=DEFAULT_BOUNDS, diag=None,
                      step=None):
    """Update one layer's mixing block in place; returns the new input-spike
    message for the backward direction (``None`` otherwise)."""
    if max_iters <= 0:
        return q1_v_in
    if direction == "forward":
        state.q1_U = forward_update(state.q0_W, state.q1_W, state.q1_U, sig_fn(q1_v_in),
                                    gamma=gamma, bounds=bounds)
        return q1_v_in
    if direction != "backward":
        raise ValueError("direction must be 'forward' or 'backward'")
    state.q1_W, q1_v_in = backward_update(
        state.q0_W, state.q1_W, state.q0_U, sig_fn, q1_v_in, has_bias=has_bias,
        max_iters=max_iters, gamma=gamma, bounds=bounds, diag=diag, step=step)
    return q1_v_in
