"""Tests for single-batch EP and the SEP outer loop."""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from epsnn.dist import GaussianFactor, gaussian_multiply
from epsnn.model import Batch, NetworkSpec, WeightPrior, prior_factor
from epsnn.trainer import (
    GlobalWeightState,
    TrainConfig,
    TrainDiagnostics,
    ep_single_batch,
    global_posterior,
    init_global,
    q0_w_update_pass,
    sep_cavity,
    sep_train,
    sep_update,
)


def gf(lam, h):
    return GaussianFactor(np.atleast_1d(float(lam)), np.atleast_1d(float(h)))


def one_weight_state(q1, B, q0=None):
    return GlobalWeightState([q0 if q0 is not None else gf(1, 0)], [q1], B)


def linear_data(n=40, d=5, seed=0):
    rng = np.random.default_rng(seed)
    X = np.zeros((n, d))
    X[np.arange(n), np.arange(n) % d] = 1.0
    return X, X @ rng.normal(size=d) + rng.normal(0, 0.1, n)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(batch_size=0), dict(epochs=0), dict(repeats=-1),
                                    dict(gamma_sep=0.0), dict(gamma_aep=1.5),
                                    dict(q0_policy="sometimes"), dict(init_mean_std=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_bounds_from_dict(self):
        c = TrainConfig(bounds={"lam_min": 1e-6, "lam_max": 1e6, "h_max": 1e6})
        assert c.bounds.lam_max == 1e6


class TestSepCavity:
    def test_single_batch_is_prior(self):
        (c,) = sep_cavity(one_weight_state(gf(3, 1), B=1))
        assert (c.lam[0], c.h[0]) == (1.0, 0.0)

    def test_uninformative_q1(self):
        (c,) = sep_cavity(one_weight_state(gf(0, 0), B=5))
        assert (c.lam[0], c.h[0]) == (1.0, 0.0)

    def test_two_batches(self):
        (c,) = sep_cavity(one_weight_state(gf(1, 0), B=2))
        assert_allclose(c.moments(), ([0.0], [0.5]))


class TestSepUpdate:
    def test_no_learning(self):
        g = one_weight_state(gf(0.4, 0.2), B=3)
        cav = sep_cavity(g)
        g2, sk = sep_update(g, cav, cav, 1 / 3)
        assert_allclose(g2.q1[0].lam, [0.4 * 2 / 3])
        # a no-information batch pulls q1 towards uninformative at rate gamma,
        # and q_b = cavity with gamma = 0 keeps it fixed
        g3, _ = sep_update(g, cav, cav, 0.0)
        assert_allclose((g3.q1[0].lam, g3.q1[0].h), ([0.4], [0.2]))
        assert sk == 0

    def test_single_batch_replaces(self):
        g = one_weight_state(gf(0.5, 0.1), B=1)
        qb = [gf(4.0, 2.0)]
        g2, _ = sep_update(g, qb, [gf(1, 0)], 1.0)
        assert_allclose((g2.q1[0].lam, g2.q1[0].h), ([3.0], [2.0]))

    def test_half_step(self):
        g = one_weight_state(gf(0, 0), B=2)
        g2, _ = sep_update(g, [gf(3.0, 0.0)], [gf(1.0, 0.0)], 0.5)
        assert_allclose(g2.q1[0].lam, [1.0])

    def test_improper_is_skipped(self):
        g = one_weight_state(gf(0.5, 0.0), B=1)
        g2, sk = sep_update(g, [gf(0.2, 0.0)], [gf(1.0, 0.0)], 1.0)
        assert sk == 1
        assert_allclose(g2.q1[0].lam, [0.5])


class TestSingleBatch:
    def test_zero_repeats_returns_prior(self):
        X, y = linear_data()
        spec = NetworkSpec([5, 1], ["gaussian"], noise_var=0.01)
        prior = [prior_factor(spec.priors[0], spec.weight_shape(0))]
        (bel,), _, _ = ep_single_batch(Batch(X, y), prior, spec, TrainConfig(repeats=0))
        assert_allclose((bel.lam, bel.h), (prior[0].lam, prior[0].h))

    def test_more_data_concentrates(self):
        spec = NetworkSpec([2, 1], ["gaussian"], noise_var=0.5)
        prior = [prior_factor(spec.priors[0], spec.weight_shape(0))]
        x = np.array([[1.0, 0.5]])
        cfg = TrainConfig(aep_max_iters=30, gamma_aep=1.0, aep_adaptive=False)
        (one,), _, _ = ep_single_batch(Batch(x, [1.0]), prior, spec, cfg)
        (two,), _, _ = ep_single_batch(Batch(np.vstack([x, x]), [1.0, 1.0]), prior, spec, cfg)
        assert np.all(two.lam > one.lam)

    def test_needs_targets(self):
        spec = NetworkSpec([2, 1], ["gaussian"])
        with pytest.raises(ValueError):
            ep_single_batch(Batch(np.zeros((1, 2))), [None], spec, TrainConfig())


class TestQ0Pass:
    def test_gaussian_prior_is_noop(self):
        spec = NetworkSpec([2, 1], ["heaviside"])
        g = init_global(spec, 2)
        g2 = q0_w_update_pass(g, spec, [gf(2.0, 1.0)])
        assert g2.q0[0] is g.q0[0]

    def test_uninformative_cavity_keeps_prior_prob(self):
        spec = NetworkSpec([1, 1], ["heaviside"], priors=[WeightPrior("spike_slab", p=0.3)])
        g = init_global(spec, 1)
        g2 = q0_w_update_pass(g, spec, [GaussianFactor(np.zeros((1, 1)), np.zeros((1, 1)))])
        assert_allclose(g2.activation_probs[0], 0.3)

    def test_concentrated_cavity_far_from_zero(self):
        spec = NetworkSpec([1, 1], ["heaviside"], priors=[WeightPrior("spike_slab", p=0.5)])
        g = init_global(spec, 1)
        cav = GaussianFactor.from_moments(np.full((1, 1), 2.0), np.full((1, 1), 0.1))
        g2 = q0_w_update_pass(g, spec, [cav])
        assert g2.activation_probs[0][0, 0] == pytest.approx(0.9999999578853673, rel=1e-9)


class TestSepTrain:
    def test_single_epoch_single_batch_matches_batch_ep(self):
        X, y = linear_data()
        spec = NetworkSpec([5, 1], ["gaussian"], noise_var=0.01)
        cfg = TrainConfig(batch_size=40, epochs=1, aep_max_iters=10, shuffle=False)
        post, _ = sep_train(X, y, spec, cfg)
        prior = [prior_factor(spec.priors[0], spec.weight_shape(0))]
        (bel,), _, _ = ep_single_batch(Batch(X, y), prior, spec, cfg)
        m, v = bel.moments()
        assert_allclose(post.weights[0]["mean"], m, rtol=1e-12)
        assert_allclose(post.weights[0]["var"], v, rtol=1e-12)

    def test_reproducible(self):
        rng = np.random.default_rng(0)
        X = (rng.random((30, 6)) < 0.5).astype(float)
        Y = (rng.random((30, 2)) < 0.5).astype(float)
        spec = NetworkSpec([6, 4, 2], ["heaviside", "sigmoid"])
        cfg = TrainConfig(batch_size=10, epochs=2, seed=3)
        a, da = sep_train(X, Y, spec, cfg)
        b, db = sep_train(X, Y, spec, cfg)
        for wa, wb in zip(a.weights, b.weights):
            for k in wa:
                assert np.array_equal(wa[k], wb[k])
        assert [r["skips"] for r in da.rows] == [r["skips"] for r in db.rows]

    def test_conjugate_variances_non_increasing(self):
        """Holds when every batch carries the same information about each
        weight; with unequal batches the SEP average fluctuates."""
        X, y = linear_data(n=60)
        spec = NetworkSpec([5, 1], ["gaussian"], noise_var=0.01)
        seen = []
        sep_train(X, y, spec, TrainConfig(batch_size=20, epochs=6, aep_max_iters=20,
                                          shuffle=False),
                  callback=lambda e, g, row: seen.append(global_posterior(g, spec)
                                                         .weights[0]["var"].copy()))
        for a, b in zip(seen, seen[1:]):
            assert np.all(b <= a + 1e-9)

    def test_no_information_fixed_point(self):
        """With the likelihood switched off every batch returns its cavity."""
        X = np.zeros((8, 3))
        y = np.zeros(8)
        spec = NetworkSpec([3, 1], ["gaussian"])
        post, _ = sep_train(X, y, spec, TrainConfig(batch_size=4, epochs=3))
        assert_allclose(post.weights[0]["mean"], 0.0)
        assert_allclose(post.weights[0]["var"], 1.0)

    def test_diagnostics(self, tmp_path):
        X, y = linear_data()
        spec = NetworkSpec([5, 1], ["gaussian"], noise_var=0.01)
        _, diag = sep_train(X, y, spec, TrainConfig(batch_size=20, epochs=2),
                            evaluate=lambda p: {"train_loss": 1.0})
        assert [r["epoch"] for r in diag.rows] == [1, 2]
        diag.write_csv(tmp_path / "d.csv")
        lines = (tmp_path / "d.csv").read_text().splitlines()
        assert lines[0].split(",") == list(TrainDiagnostics.CSV_FIELDS)
        assert len(lines) == 3

    def test_binary_weights_stay_probabilities(self):
        rng = np.random.default_rng(1)
        X = (rng.random((20, 4)) < 0.5).astype(float)
        Y = (X @ np.array([1.0, -1.0, 1.0, -1.0]) >= 0).astype(float)[:, None]
        spec = NetworkSpec([4, 1], ["heaviside"], ["binary"])
        post, _ = sep_train(X, Y, spec, TrainConfig(batch_size=10, epochs=3))
        p = post.weights[0]["p_plus"]
        assert np.all((p >= 0) & (p <= 1))

    def test_spike_slab_records_probabilities(self):
        rng = np.random.default_rng(2)
        X = rng.random((30, 5))
        Y = (X[:, :1] > 0.5).astype(float)
        spec = NetworkSpec([5, 1], ["sigmoid"], priors=[WeightPrior("spike_slab", p=0.5)])
        post, diag = sep_train(X, Y, spec, TrainConfig(batch_size=10, epochs=3))
        a = post.activation_probs[0]
        assert a.shape == (1, 5) and np.all((a >= 0) & (a <= 1))
        assert diag.improper_global == 0
