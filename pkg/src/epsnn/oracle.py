"""Brute-force reference computations used to check the EP machinery.

Nothing here imports the moment code of the main modules; everything is
recomputed from the model definition with scipy quadrature, direct linear
algebra, exhaustive enumeration or sampling.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import expit, log_expit, logsumexp

MAX_CONFIGS = 2 ** 24


@dataclass
class QuadratureResult:
    Z: float
    mean: float
    var: float
    converged: bool


def quadrature_moments(log_density, loc=0.0, scale=1.0, points=(), rtol=1e-10):
    """``(Z, mean, var)`` of ``exp(log_density(x))`` on the real line.

    The bulk of the mass is expected within ``loc +- 12 scale`` or within the
    same distance of one of ``points``, the known kinks or discontinuities.
    """
    pts = [float(p) for p in points]
    # a deep-tail truncation puts the mass at a kink outside the bulk window
    a = min([loc - 12.0 * scale] + [p - 12.0 * scale for p in pts])
    b = max([loc + 12.0 * scale] + [p + 12.0 * scale for p in pts])
    grid = np.concatenate([np.linspace(a, b, 2001), pts,
                           np.nextafter(pts, np.inf), np.nextafter(pts, -np.inf)])
    with np.errstate(all="ignore"):
        ref = float(np.max([log_density(x) for x in grid]))
    if not np.isfinite(ref):
        ref = 0.0
    inner = sorted(p for p in points if a < p < b)

    def piece(fn, lo, hi):
        # accuracy is reported through the ``converged`` flag instead
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            if np.isinf(lo) or np.isinf(hi):
                return integrate.quad(fn, lo, hi, epsabs=0.0, epsrel=rtol, limit=500)
            return integrate.quad(fn, lo, hi, epsabs=0.0, epsrel=rtol, limit=500,
                                  points=inner or None)

    def total(g):
        def fn(x):
            with np.errstate(all="ignore"):
                return g(x) * np.exp(log_density(x) - ref)
        parts = [piece(fn, -np.inf, a), piece(fn, a, b), piece(fn, b, np.inf)]
        return sum(p[0] for p in parts), sum(p[1] for p in parts)

    z, ez = total(lambda x: 1.0)
    m1, em = total(lambda x: x)
    mean = m1 / z
    m2, ev = total(lambda x: (x - mean) ** 2)
    var = m2 / z
    # errors are judged against the natural scale of each moment
    ok = (np.isfinite(z) and np.isfinite(m1) and np.isfinite(m2) and z > 0
          and ez <= 1e-8 * z
          and em <= 1e-8 * z * (abs(mean) + np.sqrt(max(var, 0.0)))
          and ev <= 1e-8 * z * var)
    return QuadratureResult(float(z * np.exp(ref)), float(mean), float(var), bool(ok))


def conjugate_linear_posterior(X, y, prior_mean, prior_var, noise_var):
    """Exact Gaussian posterior ``(mean, cov)`` of ``w`` in ``y = X w + noise``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    d = X.shape[1]
    m0 = np.broadcast_to(np.asarray(prior_mean, dtype=float), (d,))
    v0 = np.broadcast_to(np.asarray(prior_var, dtype=float), (d,))
    if len(y) == 0 or np.isinf(noise_var):
        return m0.copy(), np.diag(v0)
    prec = np.diag(1.0 / v0) + X.T @ X / noise_var
    rhs = m0 / v0 + X.T @ y / noise_var
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    return np.linalg.solve(prec, rhs), cov


def _log_lik_spike(u, y, kind):
    """log p(v = y | u) for Heaviside (spike iff u >= 0) or sigmoid."""
    if kind == "heaviside":
        hit = (u >= 0) == (y > 0.5)
        return np.where(hit, 0.0, -np.inf)
    if kind == "sigmoid":
        return np.where(y > 0.5, log_expit(u), log_expit(-u))
    raise ValueError(f"enumeration supports heaviside/sigmoid, not {kind!r}")


def enumerate_posterior(layer_sizes, activations, X, Y, prior_p=0.5, has_bias=False,
                        chunk=1 << 14):
    """Exact ``p(w = +1 | data)`` for a small network of {-1,+1} weights.

    Sums over every weight configuration and every hidden spike pattern.
    Returns one array of shape ``(V_out, V_in [+1])`` per layer.
    """
    sizes = [int(s) for s in layer_sizes]
    L = len(sizes) - 1
    if len(activations) != L:
        raise ValueError("one activation per layer")
    shapes = [(sizes[l + 1], sizes[l] + int(has_bias)) for l in range(L)]
    counts = [r * c for r, c in shapes]
    n_w = sum(counts)
    n_hidden = sum(sizes[1:-1])
    if 2.0 ** (n_w + n_hidden) > MAX_CONFIGS:
        raise ValueError(f"2^{n_w + n_hidden} configurations exceed the enumeration limit")
    X = np.atleast_2d(np.asarray(X, dtype=float)).reshape(-1, sizes[0])
    Y = np.asarray(Y, dtype=float).reshape(len(X), sizes[-1])
    if len(X) > 12:
        raise ValueError("enumeration is limited to 12 samples")
    prior_p = np.clip(prior_p, 1e-300, 1.0)
    lp_plus, lp_minus = np.log(prior_p), np.log1p(-min(prior_p, 1 - 1e-16))
    hidden_pats = [np.array(list(itertools.product((0.0, 1.0), repeat=s)))
                   for s in sizes[1:-1]]

    def add_bias(v):
        return np.concatenate([v, np.ones(v.shape[:-1] + (1,))], -1) if has_bias else v

    log_z = -np.inf
    weighted = np.zeros(n_w)  # sum of exp(logp - shift) * bits
    shift = None
    for start in range(0, 2 ** n_w, chunk):
        ids = np.arange(start, min(start + chunk, 2 ** n_w))
        bits = ((ids[:, None] >> np.arange(n_w)) & 1).astype(float)
        w_all = 2 * bits - 1
        logp = (bits * lp_plus + (1 - bits) * lp_minus).sum(1)
        Ws, off = [], 0
        for (r, c), k in zip(shapes, counts):
            Ws.append(w_all[:, off:off + k].reshape(-1, r, c))
            off += k
        for x, y in zip(X, Y):
            logp = logp + _sample_loglik(Ws, activations, add_bias(x), y, hidden_pats, add_bias)
        if not np.isfinite(logp).any():
            continue
        m = float(np.max(logp))
        if shift is None or m > shift:
            if shift is not None:
                weighted *= np.exp(shift - m)
            shift = m
        weighted += np.exp(logp - shift) @ bits
        log_z = np.logaddexp(log_z, logsumexp(logp))
    if shift is None:
        raise ValueError("data have zero likelihood under every configuration")
    marg = weighted / np.exp(log_z - shift)
    out, off = [], 0
    for (r, c), k in zip(shapes, counts):
        out.append(marg[off:off + k].reshape(r, c))
        off += k
    return out


def _sample_loglik(Ws, activations, x, y, hidden_pats, add_bias):
    """log p(y | x, W) for each weight configuration in the chunk."""
    L = len(Ws)
    if L == 1:
        u = Ws[0] @ x
        return _log_lik_spike(u, y, activations[0]).sum(-1)
    # Hidden layers are marginalised pattern by pattern, layer by layer.
    # state: log-prob of each pattern of the current layer, per config
    u = Ws[0] @ x  # (C, H1)
    pats = hidden_pats[0]  # (P, H1)
    logq = _log_lik_spike(u[:, None, :], pats[None], activations[0]).sum(-1)  # (C, P)
    for ell in range(1, L):
        inp = add_bias(pats)  # (P, D)
        u = np.einsum("crd,pd->cpr", Ws[ell], inp)
        if ell == L - 1:
            ll = _log_lik_spike(u, y, activations[ell]).sum(-1)  # (C, P)
            return logsumexp(logq + ll, axis=1)
        nxt = hidden_pats[ell]
        trans = _log_lik_spike(u[:, :, None, :], nxt[None, None], activations[ell]).sum(-1)
        logq = logsumexp(logq[:, :, None] + trans, axis=1)
        pats = nxt
    raise AssertionError("unreachable")


def mc_predictive(posterior, inputs, n_draws, rng, input_mode="rate"):
    """Monte-Carlo predictive: joint draws of weights, input and hidden spikes.

    Returns ``{"spike_freq": (N, V_L)}`` for spiking outputs or
    ``{"mean", "std"}`` for a Gaussian output layer.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    spec = posterior.spec
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    L = len(spec.layer_sizes) - 1
    results = []
    for x in X:
        if input_mode == "bernoulli":
            v = (rng.random((n_draws, len(x))) < x).astype(float)
        else:
            v = np.broadcast_to(x, (n_draws, len(x)))
        for ell in range(L):
            if spec.has_bias:
                v = np.concatenate([v, np.ones((n_draws, 1))], 1)
            W = _draw_weights(posterior.weights[ell], n_draws, rng)
            u = np.einsum("nij,nj->ni", W, v)
            kind = spec.activations[ell]
            if kind == "gaussian":
                y = u + rng.normal(0.0, np.sqrt(spec.noise_var), size=u.shape)
                results.append((y.mean(0), y.std(0)))
                break
            if kind == "heaviside":
                v = (u >= 0).astype(float)
            else:
                v = (rng.random(u.shape) < expit(u)).astype(float)
        else:
            results.append(v.mean(0))
    if spec.activations[-1] == "gaussian":
        return {"mean": np.array([r[0] for r in results]),
                "std": np.array([r[1] for r in results])}
    return {"spike_freq": np.array(results)}


def _draw_weights(w, n, rng):
    if "p_plus" in w:
        p = np.asarray(w["p_plus"], dtype=float)
        return np.where(rng.random((n,) + p.shape) < p, 1.0, -1.0)
    m = np.asarray(w["mean"], dtype=float)
    s = np.sqrt(np.asarray(w["var"], dtype=float))
    return m + s * rng.standard_normal((n,) + m.shape)
