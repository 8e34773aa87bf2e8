"""Tests for the mixing-block AEP updates."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from epsnn import oracle
from epsnn.dist import DiscreteFactor, GaussianFactor, bernoulli
from epsnn.mixing import (
    EtaGaussian,
    MixingDiagnostics,
    SignalMoments,
    StepControl,
    aep_mixing_update,
    backward_update,
    eta_u_moments,
    eta_w_star_moments,
    factor_moments,
    recombine,
    update_u_local,
    update_v_local,
    update_w_local_binary,
    update_w_local_gaussian,
)
from epsnn.model import PM1, Batch, NetworkSpec, init_state

# N(1; 0.9, 0.1) / (N(1; 0.9, 0.1) + N(-1; 0.9, 0.1)) evaluated directly
P_PLUS_ETA09 = 0.9999999847700205
# N(1; 0.2, 0.25) / (N(1; 0.2, 0.25) + N(0; 0.2, 0.25))
P_SPIKE_ETA02 = 0.23147521650098232


def g(mean, var):
    return GaussianFactor.from_moments(mean, var)


class TestEtaU:
    def test_deterministic(self):
        eta = eta_u_moments([1.0, -1.0], [1.0, 1.0], [1.0, 0.0], [1.0, 0.0])
        assert (eta.mean, eta.var) == (1.0, 0.0)

    def test_sum_of_variances(self):
        eta = eta_u_moments([0.0, 0.0], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0])
        assert (eta.mean, eta.var) == (0.0, 2.0)

    def test_bernoulli_input(self):
        eta = eta_u_moments([1.0], [2.0], [0.5], [0.5])
        assert_allclose((eta.mean, eta.var), (0.5, 0.75))

    def test_monte_carlo(self):
        rng = np.random.default_rng(0)
        n = 10 ** 6
        for _ in range(5):
            wm, wv = rng.normal(0, 1, 3), rng.uniform(0.1, 1, 3)
            p = rng.uniform(0, 1, 3)
            eta = eta_u_moments(wm, wv + wm ** 2, p, p)
            w = wm + np.sqrt(wv) * rng.standard_normal((n, 3))
            v = rng.random((n, 3)) < p
            s = (w * v).sum(1)
            se_m = s.std() / np.sqrt(n)
            se_v = np.sqrt(np.mean((s - s.mean()) ** 4) / n)
            assert abs(s.mean() - eta.mean) < 3 * se_m
            assert abs(s.var() - eta.var) < 3 * se_v + 1e-12


class TestLocalUpdates:
    def test_u_local_returns_eta(self):
        q = update_u_local(EtaGaussian(0.0, 1.0), g(0, 1))
        assert_allclose(q.moments(), (0.0, 1.0))

    def test_u_local_flat_cavity(self):
        q = update_u_local(EtaGaussian(0.3, 2.0), GaussianFactor(0.0, 0.0))
        assert_allclose(q.moments(), (0.3, 2.0))

    def test_u_local_tilted(self):
        eta, cav = EtaGaussian(2.0, 0.25), g(0, 1)
        q = update_u_local(eta, cav)
        from epsnn.dist import gaussian_multiply
        assert_allclose(gaussian_multiply(q, cav).moments(), (1.6, 0.2))

    def test_u_local_degenerate_skip(self):
        assert update_u_local(EtaGaussian(1.0, 0.0), g(0, 1)) is None

    def test_w_star_examples(self):
        eta = eta_w_star_moments(g(2, 0.25), [], [], [], [], 1.0)
        assert_allclose((eta.mean, eta.var), (2.0, 0.25))
        assert eta_w_star_moments(g(2, 0.25), [], [], [], [], 0.0) is None
        eta = eta_w_star_moments(g(1, 0.1), [0.5], [0.2 + 0.25], [1.0], [1.0], 0.5)
        assert_allclose((eta.mean, eta.var), (1.0, 1.2))

    def test_w_star_monte_carlo(self):
        # (u - w v) / E[v] with u ~ N(1, 0.1), w ~ N(0.5, 0.2), v = 1
        rng = np.random.default_rng(3)
        u = rng.normal(1, np.sqrt(0.1), 10 ** 6)
        w = rng.normal(0.5, np.sqrt(0.2), 10 ** 6)
        s = (u - w) / 0.5
        assert s.mean() == pytest.approx(1.0, abs=0.01)
        assert s.var() == pytest.approx(1.2, rel=0.01)

    def test_w_local_gaussian(self):
        q = update_w_local_gaussian(EtaGaussian(0.3, 2.0), GaussianFactor(0.0, 0.0))
        assert_allclose(q.moments(), (0.3, 2.0))

    def test_w_local_binary(self):
        u = update_w_local_binary(EtaGaussian(0.0, 3.0), DiscreteFactor.uniform(PM1))
        assert_allclose(u.probs, [0.5, 0.5])
        p = update_w_local_binary(EtaGaussian(0.9, 0.1), DiscreteFactor.uniform(PM1))
        assert p.probs[1] == pytest.approx(P_PLUS_ETA09, rel=1e-12)
        wide = update_w_local_binary(EtaGaussian(5.0, 1e12), DiscreteFactor.uniform(PM1))
        assert_allclose(wide.probs, [0.5, 0.5], atol=1e-9)
        with pytest.raises(ValueError):
            update_w_local_binary(EtaGaussian(0.0, 0.0), DiscreteFactor.uniform(PM1))

    @settings(max_examples=100, deadline=None)
    @given(m=st.floats(-3, 3), v=st.floats(0.01, 10), p=st.floats(0.01, 0.99))
    def test_binary_sign_symmetry(self, m, v, p):
        cav = bernoulli(p, support=PM1)
        a = update_w_local_binary(EtaGaussian(m, v), cav)
        b = update_w_local_binary(EtaGaussian(-m, v), cav)
        assert a.log_odds == pytest.approx(-b.log_odds, abs=1e-9)

    def test_v_local(self):
        unif = DiscreteFactor.uniform((0.0, 1.0))
        assert_allclose(update_v_local(EtaGaussian(0.5, 0.7), unif).probs, [0.5, 0.5])
        assert update_v_local(EtaGaussian(1.0, 0.01), unif).probs[1] == pytest.approx(1.0)
        q = update_v_local(EtaGaussian(0.2, 0.25), bernoulli(0.5))
        assert q.probs[1] == pytest.approx(P_SPIKE_ETA02, rel=1e-12)
        assert update_v_local(None, unif) is None


class TestRecombine:
    def test_single_factor(self):
        f = g(0.4, 2.0)
        r = recombine([f])
        assert_allclose((r.lam, r.h), (f.lam, f.h))

    def test_uninformative(self):
        r = recombine([GaussianFactor(0.0, 0.0), GaussianFactor(0.0, 0.0)])
        assert (r.lam, r.h) == (0.0, 0.0)

    def test_two_factors(self):
        assert_allclose(recombine([g(1, 1), g(3, 1)]).moments(), (2.0, 0.5))

    def test_discrete(self):
        r = recombine([bernoulli(0.7), bernoulli(0.5)])
        assert_allclose(r.probs, [0.3, 0.7])

    def test_permutation_invariant(self):
        rng = np.random.default_rng(0)
        fs = [GaussianFactor(rng.uniform(0, 2), rng.normal()) for _ in range(7)]
        a = recombine(fs)
        b = recombine(fs[::-1])
        assert_allclose((a.lam, a.h), (b.lam, b.h), rtol=1e-14)


def linear_problem(n=50, d=20, seed=0, one_hot=True):
    rng = np.random.default_rng(seed)
    if one_hot:
        X = np.zeros((n, d))
        X[np.arange(n), np.arange(n) % d] = 1.0
    else:
        X = rng.uniform(0, 1, (n, d))
    y = X @ rng.normal(size=d) + rng.normal(0, 0.1, n)
    return X, y


def run_conjugate(X, y, noise=0.01, iters=20):
    spec = NetworkSpec([X.shape[1], 1], ["gaussian"], noise_var=noise)
    batch = Batch(X, y)
    (st_,) = init_state(spec, batch)
    st_.q0_U = GaussianFactor(np.full((len(X), 1), 1 / noise), y[:, None] / noise)
    sig = SignalMoments(*batch.input_moments(False))
    aep_mixing_update(st_, lambda _: sig, "backward", max_iters=iters, gamma=1.0)
    return gaussian_belief(st_)


def gaussian_belief(st_):
    from epsnn.dist import gaussian_multiply
    return gaussian_multiply(st_.q0_W, st_.q1_W).moments()


class TestBackward:
    def test_conjugate_exact_on_decoupled_design(self):
        X, y = linear_problem()
        m, v = run_conjugate(X, y)
        m_ref, C = oracle.conjugate_linear_posterior(X, y, 0.0, 1.0, 0.01)
        assert_allclose(m.ravel(), m_ref, rtol=1e-3)
        assert_allclose(v.ravel(), np.diag(C), rtol=1e-3)

    def test_zero_iterations_is_noop(self):
        spec = NetworkSpec([3, 2], ["heaviside"])
        batch = Batch(np.ones((4, 3)), np.ones((4, 2)))
        (st_,) = init_state(spec, batch)
        before = (st_.q1_W.lam.copy(), st_.q1_W.h.copy())
        aep_mixing_update(st_, lambda _: SignalMoments(np.ones((4, 3)), np.ones((4, 3))),
                          "backward", max_iters=0)
        assert_allclose((st_.q1_W.lam, st_.q1_W.h), before)

    def test_uninformative_potentials_leave_weights(self):
        spec = NetworkSpec([3, 2], ["heaviside"])
        batch = Batch(np.ones((4, 3)), np.ones((4, 2)))
        (st_,) = init_state(spec, batch)
        aep_mixing_update(st_, lambda _: SignalMoments(np.ones((4, 3)), np.ones((4, 3))),
                          "backward", max_iters=1)
        assert np.all(st_.q1_W.lam == 0) and np.all(st_.q1_W.h == 0)

    def test_silent_sample_is_skipped(self):
        """An all-zero input row contributes nothing to the weight messages."""
        from epsnn import _kernels
        rng = np.random.default_rng(2)
        n, i, j = 6, 3, 4
        mv = rng.uniform(0.2, 1, (n, j))
        mv[2] = 0.0
        mw, vw = rng.normal(size=(i, j)), rng.uniform(0.1, 1, (i, j))
        mu, lam = rng.normal(size=(n, i)), rng.uniform(0.5, 2, (n, i))
        sig = SignalMoments(mv, mv)
        from epsnn.mixing import row_sums
        s_m, s_v = row_sums(sig, mw, vw)
        args = (mv, mv, sig.var, mw, vw, mu, lam, s_m, s_v, 1e-3, False)
        full = _kernels.mixing_backward(*args)
        keep = np.arange(n) != 2
        sub = _kernels.mixing_backward(mv[keep], mv[keep], sig.var[keep], mw, vw, mu[keep],
                                       lam[keep], s_m[keep], s_v[keep], 1e-3, False)
        assert_allclose(full[0], sub[0], rtol=1e-13)
        assert_allclose(full[1], sub[1], rtol=1e-13)
        assert full[2] == sub[2] + i * j

    def test_direction_validated(self):
        spec = NetworkSpec([3, 2], ["heaviside"])
        (st_,) = init_state(spec, Batch(np.ones((4, 3)), np.ones((4, 2))))
        with pytest.raises(ValueError):
            aep_mixing_update(st_, lambda _: None, "sideways")

    def test_forward_uses_prior_moments(self):
        spec = NetworkSpec([2, 1], ["heaviside"])
        batch = Batch(np.array([[1.0, 0.5]]), np.ones((1, 1)))
        (st_,) = init_state(spec, batch)
        sig = SignalMoments(*batch.input_moments(False))
        aep_mixing_update(st_, lambda _: sig, "forward")
        # prior N(0,1): E[u] = 0, Var[u] = 1 + 0.25
        assert_allclose(st_.q1_U.moments(), ([[0.0]], [[1.25]]))


class TestStepControl:
    def test_defaults(self):
        s = StepControl(0.5)
        assert s.gamma_max == 0.5

    def test_oscillation_shrinks_step(self):
        # dense correlated inputs make the parallel sweep overshoot at gamma = 1
        X, y = linear_problem(n=60, d=20, one_hot=False, seed=1)
        spec = NetworkSpec([20, 1], ["gaussian"], noise_var=0.01)
        batch = Batch(X, y)
        (st_,) = init_state(spec, batch)
        st_.q0_U = GaussianFactor(np.full((60, 1), 100.0), y[:, None] * 100.0)
        sig = SignalMoments(*batch.input_moments(False))
        step = StepControl(1.0)
        diag = MixingDiagnostics()
        backward_update(st_.q0_W, st_.q1_W, st_.q0_U, lambda _: sig, max_iters=30,
                        step=step, diag=diag)
        assert step.gamma < 1.0
        assert diag.sweeps <= 30


def test_factor_moments():
    m, s = factor_moments(g(1.0, 2.0))
    assert (float(m), float(s)) == pytest.approx((1.0, 3.0))
    m, s = factor_moments(bernoulli(0.25, support=PM1))
    assert (float(m), float(s)) == pytest.approx((-0.5, 1.0))
