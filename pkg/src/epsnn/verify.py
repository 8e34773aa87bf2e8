"""Quick oracle checks exposed through ``epsnn verify``.

Each suite returns a list of ``Check`` results; the full-size versions live
in the acceptance tests.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import oracle
from .activation import gaussian_output, heaviside_hidden, heaviside_output
from .dist import (
    DEFAULT_BOUNDS,
    GaussianFactor,
    bernoulli,
    gaussian_clip,
    gaussian_damp,
    gaussian_divide,
    gaussian_multiply,
    gaussian_power,
)
from .model import NetworkSpec, Posterior, WeightPrior
from .predict import forward_predict
from .trainer import TrainConfig, sep_train


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


def _rel(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-12)))


def suite_dist(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    m = rng.normal(0, 10, n)
    v = np.exp(rng.uniform(-5, 5, n))
    a = GaussianFactor.from_moments(m, v)
    m2, v2 = a.moments()
    b = GaussianFactor.from_moments(rng.normal(0, 10, n), np.exp(rng.uniform(-5, 5, n)))
    back = gaussian_divide(gaussian_multiply(a, b), b)
    s, t = rng.uniform(0, 3, n), rng.uniform(0, 3, n)
    p_sum = gaussian_multiply(gaussian_power(a, s), gaussian_power(a, t))
    p_one = gaussian_power(a, s + t)
    g = rng.uniform(0, 1, n)
    d = gaussian_damp(a, b, g)
    lo = np.minimum(a.lam, b.lam)
    hi = np.maximum(a.lam, b.lam)
    big = GaussianFactor(rng.normal(0, 1e9, n), rng.normal(0, 1e9, n))
    c = gaussian_clip(big)
    return [
        Check("moments round-trip", _rel(m2, m) < 1e-9 and _rel(v2, v) < 1e-9),
        Check("multiply/divide inverse", _rel(back.h, a.h) < 1e-6 and _rel(back.lam, a.lam) < 1e-6),
        Check("power additivity", _rel(p_sum.lam, p_one.lam) < 1e-12),
        Check("damping stays on segment",
              bool(np.all((d.lam >= lo - 1e-9 * hi) & (d.lam <= hi + 1e-9 * hi)))),
        Check("clipping bounds",
              bool(np.all((c.lam >= DEFAULT_BOUNDS.lam_min) & (c.lam <= DEFAULT_BOUNDS.lam_max)
                          & (np.abs(c.h) <= DEFAULT_BOUNDS.h_max)))),
    ]


def _truncation_oracle(mu, var, p1):
    sd = np.sqrt(var)

    def logf(x):
        w = p1 if x >= 0 else 1 - p1
        return np.log(w) - 0.5 * (x - mu) ** 2 / var

    return oracle.quadrature_moments(logf, loc=mu, scale=sd, points=(0.0,))


def suite_tilted(grid=((-3.0, 0.5), (0.0, 1.0), (2.0, 4.0)), probs=(0.1, 0.5, 0.9)):
    worst = 0.0
    for mu, var in grid:
        cav = GaussianFactor.from_moments(mu, var)
        for p in probs:
            q = _truncation_oracle(mu, var, p)
            tm = heaviside_hidden(cav, bernoulli(p))
            worst = max(worst, _rel(tm.u_mean, q.mean) if abs(q.mean) > 1e-6 else 0.0,
                        _rel(tm.u_var, q.var))
        q = _truncation_oracle(mu, var, 1.0)
        tm = heaviside_output(cav, 1.0)
        worst = max(worst, _rel(tm.u_var, q.var))
    gauss = gaussian_output(GaussianFactor.from_moments(1.0, 1.0), 3.0, 1.0)
    return [
        Check("heaviside tilted moments vs quadrature", worst < 1e-6, f"max rel err {worst:.2e}"),
        Check("gaussian output product", abs(gauss.u_mean - 2.0) < 1e-12
              and abs(gauss.u_var - 0.5) < 1e-12),
    ]


def suite_conjugate(seed=0):
    rng = np.random.default_rng(seed)
    n, d = 50, 20
    X = np.zeros((n, d))
    X[np.arange(n), np.arange(n) % d] = 1.0
    y = X @ rng.normal(size=d) + rng.normal(0, 0.1, n)
    spec = NetworkSpec([d, 1], ["gaussian"], noise_var=0.01)
    post, _ = sep_train(X, y, spec, TrainConfig(batch_size=n, aep_max_iters=20, shuffle=False))
    m, C = oracle.conjugate_linear_posterior(X, y, 0.0, 1.0, 0.01)
    em = _rel(post.weights[0]["mean"].ravel(), m)
    ev = _rel(post.weights[0]["var"].ravel(), np.diag(C))
    return [Check("1-layer gaussian output matches conjugate posterior",
                  em < 1e-3 and ev < 1e-3, f"mean {em:.1e}, var {ev:.1e}")]


def tiny_binary_problem(teacher=(1.0, -1.0, 1.0)):
    """All eight {0,1}^3 input patterns labelled by a {-1,+1} Heaviside teacher."""
    X = np.array(list(itertools.product((0.0, 1.0), repeat=3)))
    Y = (X @ np.asarray(teacher) >= 0).astype(float)[:, None]
    return X, Y


def suite_enumeration():
    X, Y = tiny_binary_problem()
    exact = oracle.enumerate_posterior([3, 1], ["heaviside"], X, Y)[0].ravel()
    spec = NetworkSpec([3, 1], ["heaviside"], weight_domains=["binary"])
    post, _ = sep_train(X, Y, spec, TrainConfig(batch_size=8, epochs=10, aep_max_iters=20,
                                                 shuffle=False))
    ep = post.weights[0]["p_plus"].ravel()
    side = np.all((exact - 0.5) * (ep - 0.5) >= 0)
    far = (exact < 0.35) | (exact > 0.65)
    close = np.all(np.abs(ep - exact)[far] <= 0.15)
    return [Check("tiny binary network vs enumeration", bool(side and close),
                  f"exact {np.round(exact, 3)}, ep {np.round(ep, 3)}")]


def random_posterior(sizes, rng, activations=None, domains=None):
    """Random trained-looking posterior for predictive checks."""
    L = len(sizes) - 1
    activations = activations or ["sigmoid"] * L
    domains = domains or ["continuous"] * L
    spec = NetworkSpec(sizes, activations, weight_domains=domains)
    weights = []
    for ell, dom in enumerate(domains):
        shape = spec.weight_shape(ell)
        if dom == "binary":
            weights.append({"p_plus": rng.uniform(0, 1, shape)})
        else:
            weights.append({"mean": rng.normal(0, 1, shape),
                            "var": rng.uniform(0.01, 0.5, shape)})
    return Posterior(spec, weights)


def suite_predictive(seed=0, n_draws=20000):
    rng = np.random.default_rng(seed)
    post = random_posterior([10, 8, 2], rng)
    x = rng.uniform(0, 1, (3, 10))
    ep = forward_predict(post, x).spike_prob
    mc = oracle.mc_predictive(post, x, n_draws, rng)["spike_freq"]
    err = float(np.max(np.abs(ep - mc)))
    return [Check("forward pass vs Monte Carlo (10-8-2)", err < 0.05, f"max abs err {err:.3f}")]


SUITES = {
    "dist": suite_dist,
    "tilted": suite_tilted,
    "conjugate": suite_conjugate,
    "enumeration": suite_enumeration,
    "predictive": suite_predictive,
}


def run(names=None):
    names = list(names or SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s): {', '.join(unknown)}")
    return {n: SUITES[n]() for n in names}
