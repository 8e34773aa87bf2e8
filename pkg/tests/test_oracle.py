"""Tests of the brute-force reference computations themselves."""
import ast
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

import epsnn.oracle as oracle
from epsnn.model import NetworkSpec, Posterior
from epsnn.verify import SUITES, run


class TestQuadrature:
    def test_standard_normal(self):
        r = oracle.quadrature_moments(lambda x: -0.5 * x * x - 0.5 * np.log(2 * np.pi))
        assert_allclose((r.Z, r.mean, r.var), (1.0, 0.0, 1.0), atol=1e-10)
        assert r.converged

    def test_truncated_normal(self):
        r = oracle.quadrature_moments(lambda x: -0.5 * x * x if x >= 0 else -np.inf,
                                      points=(0.0,))
        assert r.mean == pytest.approx(np.sqrt(2 / np.pi), rel=1e-10)
        assert r.var == pytest.approx(1 - 2 / np.pi, rel=1e-10)

    def test_laplace(self):
        r = oracle.quadrature_moments(lambda x: -abs(x) - np.log(2), scale=3.0, points=(0.0,))
        assert_allclose((r.Z, r.var), (1.0, 2.0), rtol=1e-9)


class TestConjugate:
    def test_no_data_and_infinite_noise(self):
        m, C = oracle.conjugate_linear_posterior(np.zeros((0, 2)), [], 0.5, 2.0, 1.0)
        assert_allclose(m, 0.5) and assert_allclose(C, 2 * np.eye(2))
        m, C = oracle.conjugate_linear_posterior(np.ones((3, 2)), [1, 2, 3], 0.0, 1.0, np.inf)
        assert_allclose(m, 0.0) and assert_allclose(C, np.eye(2))

    def test_textbook(self):
        m, C = oracle.conjugate_linear_posterior([[1.0]], [1.0], 0.0, 1.0, 1.0)
        assert_allclose((m[0], C[0, 0]), (0.5, 0.5))


class TestEnumeration:
    def test_no_data_is_prior(self):
        (p,) = oracle.enumerate_posterior([2, 1], ["heaviside"], np.zeros((0, 2)),
                                          np.zeros((0, 1)), prior_p=0.3)
        assert_allclose(p, 0.3)

    def test_single_sample_shifts(self):
        (p,) = oracle.enumerate_posterior([2, 1], ["heaviside"], [[1.0, 0.0]], [[0.0]])
        # u = w0 must be negative: w0 = -1 with certainty, w1 untouched
        assert_allclose(p, [[0.0, 0.5]])

    def test_symmetric_dataset(self):
        X = np.array([[1.0, 0.5], [-1.0, -0.5]])
        Y = np.array([[1.0], [0.0]])
        (p,) = oracle.enumerate_posterior([2, 1], ["sigmoid"], X, Y)
        assert np.all(p > 0.5)
        X2 = np.array([[1.0, -1.0], [-1.0, 1.0]])
        (q,) = oracle.enumerate_posterior([2, 1], ["sigmoid"], X2, np.array([[1.0], [1.0]]))
        assert_allclose(q, 0.5, atol=1e-12)

    def test_hidden_layer_marginalised(self):
        X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        Y = np.array([[1.0], [0.0], [1.0]])
        p1, p2 = oracle.enumerate_posterior([2, 2, 1], ["sigmoid", "sigmoid"], X, Y)
        assert p1.shape == (2, 2) and p2.shape == (1, 2)
        assert np.all((p1 >= 0) & (p1 <= 1))

    def test_guards(self):
        with pytest.raises(ValueError):
            oracle.enumerate_posterior([5, 5], ["heaviside"], np.zeros((1, 5)), np.zeros((1, 5)))
        with pytest.raises(ValueError):
            oracle.enumerate_posterior([2, 1], ["heaviside"], np.zeros((13, 2)), np.zeros((13, 1)))
        with pytest.raises(ValueError):
            oracle.enumerate_posterior([1, 1], ["heaviside"], [[1.0], [1.0]], [[1.0], [0.0]])


class TestMonteCarlo:
    def test_point_posterior_identical_draws(self):
        spec = NetworkSpec([2, 1], ["gaussian"], noise_var=1e-300)
        post = Posterior(spec, [{"mean": np.array([[1.0, 2.0]]), "var": np.full((1, 2), 1e-300)}])
        r = oracle.mc_predictive(post, [[1.0, 1.0]], 100, np.random.default_rng(0))
        assert_allclose(r["mean"], [[3.0]]) and assert_allclose(r["std"], 0.0, atol=1e-12)

    def test_binomial_concentration(self):
        # w ~ N(0.4, 0) with input 1 under sigmoid gives p = expit(0.4)
        spec = NetworkSpec([1, 1], ["sigmoid"])
        post = Posterior(spec, [{"mean": np.array([[0.4]]), "var": np.array([[1e-300]])}])
        n = 10 ** 5
        f = oracle.mc_predictive(post, [[1.0]], n, np.random.default_rng(1))["spike_freq"][0, 0]
        p = 1 / (1 + np.exp(-0.4))
        assert abs(f - p) < 3 * np.sqrt(p * (1 - p) / n)

    def test_reproducible(self):
        from epsnn.verify import random_posterior
        post = random_posterior([3, 2], np.random.default_rng(0))
        a = oracle.mc_predictive(post, np.ones((1, 3)), 500, np.random.default_rng(5))
        b = oracle.mc_predictive(post, np.ones((1, 3)), 500, np.random.default_rng(5))
        assert np.array_equal(a["spike_freq"], b["spike_freq"])
        with pytest.raises(ValueError):
            oracle.mc_predictive(post, np.ones((1, 3)), 0, np.random.default_rng(5))


def test_oracle_is_independent():
    """The oracle module imports nothing from the package."""
    tree = ast.parse(Path(oracle.__file__).read_text())
    for node in ast.walk(tree):
        if isinstance(node, ast.ImportFrom):
            assert node.level == 0 and not (node.module or "").startswith("epsnn")
        if isinstance(node, ast.Import):
            assert all(not a.name.startswith("epsnn") for a in node.names)


class TestVerify:
    def test_fast_suites_pass(self):
        results = run(["dist", "tilted", "predictive"])
        for checks in results.values():
            for c in checks:
                assert c.passed, (c.name, c.detail)

    def test_unknown_suite(self):
        with pytest.raises(KeyError):
            run(["nope"])
        assert set(SUITES) == {"dist", "tilted", "conjugate", "enumeration", "predictive"}
