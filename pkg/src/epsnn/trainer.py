"""EP training: forward/backward sweeps on one batch, SEP across batches."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np

from .activation import update_potentials_backward, update_spikes_forward
from .dist import (
    DEFAULT_BOUNDS,
    DiscreteFactor,
    GaussianFactor,
    NaturalBounds,
    discrete_clip,
    discrete_damp,
    discrete_divide,
    discrete_multiply,
    discrete_power,
    from_log_odds,
    gaussian_damp,
    gaussian_divide,
    gaussian_multiply,
    gaussian_power,
    spike_slab_q0_update,
)
from .mixing import (
    EPS_V,
    GAMMA_AEP,
    MixingDiagnostics,
    StepControl,
    SignalMoments,
    backward_update,
    clip_message,
    forward_update,
    spike_signal,
)
from .model import (
    PM1,
    SPIKE,
    Batch,
    LayerFactorState,
    NetworkSpec,
    Posterior,
    init_state,
    prior_factor,
    uninformative_weights,
)

log = logging.getLogger(__name__)

Q0_POLICIES = ("auto", "never", "per-backward-pass", "per-batch")


@dataclass
class TrainConfig:
    batch_size: int = 1000
    epochs: int = 1
    repeats: int = 1
    gamma_sep: Optional[float] = None  # None -> 1/B
    gamma_aep: float = GAMMA_AEP
    gamma_act: Optional[float] = None  # None -> gamma_aep
    aep_max_iters: int = 3
    aep_tol: float = 1e-4
    aep_adaptive: bool = True
    init_mean_std: float = 1.0  # random q1(W) means for hidden layers
    init_precision: float = 1.0
    eps_v: float = EPS_V
    bounds: NaturalBounds = DEFAULT_BOUNDS
    seed: int = 0
    shuffle: bool = True
    q0_policy: str = "auto"
    persist_latents: bool = True
    exact_sigmoid: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.repeats < 0:
            raise ValueError("repeats must be >= 0")
        if self.gamma_sep is not None and not 0 < self.gamma_sep <= 1:
            raise ValueError("gamma_sep must be in (0, 1]")
        if not 0 < self.gamma_aep <= 1:
            raise ValueError("gamma_aep must be in (0, 1]")
        if self.init_mean_std < 0 or self.init_precision < 0:
            raise ValueError("initialisation scales must be non-negative")
        if self.q0_policy not in Q0_POLICIES:
            raise ValueError(f"q0_policy must be one of {Q0_POLICIES}")
        if isinstance(self.bounds, dict):
            self.bounds = NaturalBounds(**self.bounds)

    @property
    def act_damping(self) -> float:
        return self.gamma_aep if self.gamma_act is None else self.gamma_act


@dataclass
class TrainDiagnostics:
    rows: List[dict] = field(default_factory=list)
    skips: int = 0
    clips: int = 0
    improper_global: int = 0

    CSV_FIELDS = ("epoch", "train_loss", "test_loss", "train_acc", "test_acc",
                  "skips", "clips", "gamma_aep")

    def write_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.CSV_FIELDS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: r.get(k, "") for k in self.CSV_FIELDS})


# --------------------------------------------------------------------------
# factor helpers that work for both weight domains


def _is_gauss(f):
    return isinstance(f, GaussianFactor)


def _mul(a, b):
    return gaussian_multiply(a, b) if _is_gauss(a) else discrete_multiply(a, b)


def _pow(a, alpha):
    return gaussian_power(a, alpha) if _is_gauss(a) else discrete_power(a, alpha)


def _div(a, b):
    return gaussian_divide(a, b) if _is_gauss(a) else discrete_divide(a, b)


def _copy(f):
    if _is_gauss(f):
        return GaussianFactor(np.array(f.lam, float), np.array(f.h, float))
    return DiscreteFactor(f.support, f.log_weights.copy())


# --------------------------------------------------------------------------
# per-sample latent factors kept between visits of the same sample


class LatentStore:
    """Latent-variable factors for every training sample, so that revisiting a
    sample in a later epoch resumes from its previous messages."""

    def __init__(self, spec: NetworkSpec, n_samples: int):
        self.spec = spec
        self.layers = []
        for ell in range(spec.n_layers):
            I = spec.layer_sizes[ell + 1]
            self.layers.append({
                "q0u": np.zeros((n_samples, I, 2)),
                "q1u": np.zeros((n_samples, I, 2)),
                "q0v": np.zeros((n_samples, I)),
                "q1v": np.zeros((n_samples, I)),
            })

    def load(self, states: List[LayerFactorState], idx):
        for st, d in zip(states, self.layers):
            st.q0_U = GaussianFactor(d["q0u"][idx, :, 0], d["q0u"][idx, :, 1])
            st.q1_U = GaussianFactor(d["q1u"][idx, :, 0], d["q1u"][idx, :, 1])
            if st.q0_V is not None:
                st.q0_V = _lo(d["q0v"][idx])
                st.q1_V = _lo(d["q1v"][idx])

    def save(self, states: List[LayerFactorState], idx):
        for st, d in zip(states, self.layers):
            d["q0u"][idx, :, 0], d["q0u"][idx, :, 1] = st.q0_U.lam, st.q0_U.h
            d["q1u"][idx, :, 0], d["q1u"][idx, :, 1] = st.q1_U.lam, st.q1_U.h
            if st.q0_V is not None:
                d["q0v"][idx] = st.q0_V.log_odds
                d["q1v"][idx] = st.q1_V.log_odds


def _lo(lo):
    return DiscreteFactor(SPIKE, np.stack([np.zeros_like(lo), lo], axis=-1))


# --------------------------------------------------------------------------
# single batch


def _signal_fn(spec: NetworkSpec, states, batch: Batch, ell: int):
    if ell == 0:
        m, s = batch.input_moments(spec.has_bias)
        sig = SignalMoments(m, s)
        return lambda _q1v: sig
    prev = states[ell - 1]
    fan_out = spec.layer_sizes[ell + 1]
    return lambda q1v: spike_signal(prev.q0_V, q1v if q1v is not None else prev.q1_V,
                                    fan_out, spec.has_bias)


def ep_single_batch(batch: Batch, weight_prior: list, spec: NetworkSpec, config: TrainConfig,
                    q1_init: Optional[list] = None, states: Optional[List[LayerFactorState]] = None,
                    q0_hook: Optional[Callable] = None, diag: Optional[MixingDiagnostics] = None,
                    steps: Optional[List[StepControl]] = None):
    """Run the forward/backward EP sweeps on one batch.

    ``weight_prior[l]`` is the (cavity) prior factor of layer ``l``;
    ``steps[l]`` carries the adaptive AEP damping of layer ``l``.  Returns
    ``(beliefs, states, diag)`` where ``beliefs[l] = q0_W * q1_W``.
    """
    if batch.targets is None:
        raise ValueError("training batch needs targets")
    if states is None:
        states = init_state(spec, batch)
    diag = diag if diag is not None else MixingDiagnostics()
    if steps is None:
        steps = make_steps(spec, config)
    for ell, st in enumerate(states):
        st.q0_W = weight_prior[ell]
        if q1_init is not None and q1_init[ell] is not None:
            st.q1_W = _copy(q1_init[ell])
    L = spec.n_layers
    g_act = config.act_damping
    b = config.bounds
    for _ in range(config.repeats):
        for ell in range(L):
            st = states[ell]
            sig = _signal_fn(spec, states, batch, ell)(None)
            st.q1_U = forward_update(st.q0_W, st.q1_W, st.q1_U, sig, gamma=config.gamma_aep,
                                     bounds=b)
            if ell < L - 1:
                st.q0_V = update_spikes_forward(spec.activations[ell], st.q1_U, st.q1_V, st.q0_V,
                                                gamma=g_act, exact=config.exact_sigmoid)
        for ell in reversed(range(L)):
            st = states[ell]
            kind = spec.activations[ell]
            if ell == L - 1:
                st.q0_U, sk = update_potentials_backward(
                    kind, st.q1_U, st.q0_U, y=batch.targets, noise_var=spec.noise_var,
                    gamma=g_act, bounds=b, exact=config.exact_sigmoid)
            else:
                st.q0_U, sk = update_potentials_backward(
                    kind, st.q1_U, st.q0_U, q1_v=st.q1_V, gamma=g_act, bounds=b,
                    exact=config.exact_sigmoid)
            diag.u_skips += sk
            q1_v_in = states[ell - 1].q1_V if ell > 0 else None
            st.q1_W, q1_v_new = backward_update(
                st.q0_W, st.q1_W, st.q0_U, _signal_fn(spec, states, batch, ell), q1_v_in,
                has_bias=spec.has_bias, max_iters=config.aep_max_iters, gamma=config.gamma_aep,
                eps=config.eps_v, tol=config.aep_tol, bounds=b, diag=diag, step=steps[ell])
            if ell > 0:
                states[ell - 1].q1_V = q1_v_new
            if q0_hook is not None:
                new_prior = q0_hook(ell, st.q1_W)
                if new_prior is not None:
                    st.q0_W = new_prior
    beliefs = [_mul(st.q0_W, st.q1_W) for st in states]
    return beliefs, states, diag


def make_steps(spec: NetworkSpec, config: TrainConfig) -> List[StepControl]:
    return [StepControl(config.gamma_aep, adaptive=config.aep_adaptive)
            for _ in range(spec.n_layers)]


# --------------------------------------------------------------------------
# SEP


@dataclass
class GlobalWeightState:
    q0: list
    q1: list
    B: int
    activation_probs: list = field(default_factory=list)

    def belief(self, ell):
        return _mul(self.q0[ell], _pow(self.q1[ell], self.B))


def sep_cavity(g: GlobalWeightState, bounds: NaturalBounds = DEFAULT_BOUNDS) -> list:
    """Per-layer cavity prior ``q0 * q1^(B-1)``."""
    out = []
    for q0, q1 in zip(g.q0, g.q1):
        c = _mul(q0, _pow(q1, g.B - 1))
        out.append(clip_message(c, bounds) if _is_gauss(c) else discrete_clip(c))
    return out


def sep_update(g: GlobalWeightState, q_b: list, cavity: list, gamma: float,
               bounds: NaturalBounds = DEFAULT_BOUNDS):
    """``q1 <- q1^(1-gamma) * (q_b / cavity)^gamma``; improper sites are skipped.

    Returns ``(new_state, n_skipped)``.
    """
    new_q1 = []
    skipped = 0
    for q1_old, qb, cav in zip(g.q1, q_b, cavity):
        q1b = _div(qb, cav)
        if _is_gauss(q1b):
            new = gaussian_damp(q1b, q1_old, gamma)
            bad = ~((np.asarray(new.lam) >= 0) & np.isfinite(new.lam) & np.isfinite(new.h))
            skipped += int(np.count_nonzero(bad))
            lam = np.where(bad, q1_old.lam, new.lam)
            h = np.where(bad, q1_old.h, new.h)
            # exact zeros are a legitimate "no information" message
            lam = np.where(np.abs(lam) < 1e-300, 0.0, lam)
            new_q1.append(clip_message(GaussianFactor(lam, h), bounds))
        else:
            new_q1.append(discrete_clip(discrete_damp(q1b, q1_old, gamma)))
    return replace(g, q1=new_q1), skipped


def q0_w_update_pass(g: GlobalWeightState, spec: NetworkSpec, q1_batch: list,
                     record=True):
    """Refresh spike-and-slab prior sites with cavity ``q1^(B-1) * q1_batch``.

    Layers with conjugate priors are left untouched.
    """
    q0 = list(g.q0)
    probs = list(g.activation_probs) if g.activation_probs else [None] * spec.n_layers
    for ell, prior in enumerate(spec.priors):
        if prior.kind != "spike_slab":
            continue
        cav = gaussian_multiply(gaussian_power(g.q1[ell], g.B - 1), q1_batch[ell])
        q0[ell], act = spike_slab_q0_update(prior.spike_slab(), cav, old=g.q0[ell])
        if record:
            probs[ell] = np.asarray(act)
    return replace(g, q0=q0, activation_probs=probs)


def init_global(spec: NetworkSpec, B: int, rng=None, mean_std=0.0,
                precision=1.0) -> GlobalWeightState:
    """Initial SEP state: ``q0`` = prior, ``q1`` uninformative.

    Hidden layers get a weak random ``q1`` (total precision ``precision``,
    means of scale ``mean_std``) when ``mean_std > 0``.  Without it all
    hidden units receive identical messages and never differentiate.
    """
    q0 = [prior_factor(p, spec.weight_shape(ell)) for ell, p in enumerate(spec.priors)]
    q1 = [uninformative_weights(d, spec.weight_shape(ell))
          for ell, d in enumerate(spec.weight_domains)]
    if mean_std > 0 and precision > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        for ell in range(spec.n_layers - 1):
            shape = spec.weight_shape(ell)
            m = rng.normal(0.0, mean_std, size=shape)
            if spec.weight_domains[ell] == "binary":
                q1[ell] = from_log_odds(2.0 * precision * m / B, support=PM1)
            else:
                lam = np.full(shape, precision / B)
                q1[ell] = GaussianFactor(lam, lam * m)
    probs = [np.full(spec.weight_shape(ell), p.p) if p.kind == "spike_slab" else None
             for ell, p in enumerate(spec.priors)]
    return GlobalWeightState(q0, q1, B, probs)


def global_posterior(g: GlobalWeightState, spec: NetworkSpec, metadata=None) -> Posterior:
    weights = []
    for ell in range(spec.n_layers):
        bel = g.belief(ell)
        if _is_gauss(bel):
            m, v = bel.moments()
            weights.append({"mean": np.asarray(m), "var": np.asarray(v)})
        else:
            weights.append({"p_plus": bel.probs[..., 1]})
    probs = None
    if any(p.kind == "spike_slab" for p in spec.priors):
        probs = [None if a is None else np.asarray(a) for a in g.activation_probs]
    return Posterior(spec, weights, probs, dict(metadata or {}))


def _resolve_q0_policy(config: TrainConfig, spec: NetworkSpec):
    if config.q0_policy != "auto":
        return config.q0_policy
    return "per-batch" if any(p.kind == "spike_slab" for p in spec.priors) else "never"


def _count_improper(g: GlobalWeightState):
    n = 0
    for ell in range(len(g.q0)):
        bel = g.belief(ell)
        if _is_gauss(bel):
            n += int(np.count_nonzero(~(np.asarray(bel.lam) > 0)))
    return n


def sep_train(inputs, targets, spec: NetworkSpec, config: TrainConfig, *, input_mode="rate",
              evaluate: Optional[Callable] = None, callback: Optional[Callable] = None):
    """Train with stochastic EP over mini-batches.

    ``evaluate(posterior) -> dict`` is called after every epoch and its result
    merged into the diagnostics row (see ``predict.make_evaluator``).
    Returns ``(posterior, diagnostics)``.
    """
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float).reshape(len(inputs), -1)
    N = len(inputs)
    M = min(config.batch_size, N)
    B = int(np.ceil(N / M))
    gamma_sep = config.gamma_sep if config.gamma_sep is not None else 1.0 / B
    policy = _resolve_q0_policy(config, spec)
    rng = np.random.default_rng(config.seed)
    g = init_global(spec, B, rng, config.init_mean_std, config.init_precision)
    store = LatentStore(spec, N) if config.persist_latents else None
    diag = TrainDiagnostics()
    steps = make_steps(spec, config)
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(N) if config.shuffle else np.arange(N)
        mdiag = MixingDiagnostics()
        for b in range(B):
            idx = np.sort(order[b * M:(b + 1) * M])
            batch = Batch(inputs[idx], targets[idx], input_mode=input_mode)
            cavity = sep_cavity(g, config.bounds)
            states = init_state(spec, batch)
            if store is not None:
                store.load(states, idx)
            hook = None
            if policy == "per-backward-pass":
                hook = _make_q0_hook(g, spec, config)
            q_b, states, mdiag = ep_single_batch(batch, cavity, spec, config, q1_init=g.q1,
                                                 states=states, q0_hook=hook, diag=mdiag,
                                                 steps=steps)
            if hook is not None:
                g = replace(g, q0=hook.q0, activation_probs=hook.probs)
                cavity = [st.q0_W for st in states]
            if store is not None:
                store.save(states, idx)
            g_new, sk = sep_update(g, q_b, cavity, gamma_sep, config.bounds)
            diag.skips += sk
            if policy == "per-batch":
                refreshed = q0_w_update_pass(g, spec, [st.q1_W for st in states])
                g_new = replace(g_new, q0=refreshed.q0,
                                activation_probs=refreshed.activation_probs)
            g = g_new
            diag.improper_global += _count_improper(g)
        n_skip = mdiag.w_skips + mdiag.v_skips + mdiag.u_skips
        diag.skips += n_skip
        diag.clips += mdiag.clips
        row = {"epoch": epoch, "skips": n_skip, "clips": mdiag.clips,
               "gamma_aep": round(min(s.gamma for s in steps), 6),
               "seconds": round(time.perf_counter() - t0, 4)}
        if evaluate is not None:
            row.update(evaluate(global_posterior(g, spec)))
        diag.rows.append(row)
        log.info("epoch %d: %s", epoch, row)
        if callback is not None:
            callback(epoch, g, row)
    meta = {"epochs": config.epochs, "seed": config.seed, "gamma_aep": config.gamma_aep,
            "gamma_aep_final": [s.gamma for s in steps],
            "gamma_sep": gamma_sep, "batch_size": M, "batches": B, "input_mode": input_mode}
    return global_posterior(g, spec, meta), diag


class _Q0Hook:
    """Updates spike-and-slab sites inside the backward pass of a batch."""

    def __init__(self, g: GlobalWeightState, spec: NetworkSpec, config: TrainConfig):
        self.g = g
        self.spec = spec
        self.bounds = config.bounds
        self.q0 = list(g.q0)
        self.probs = list(g.activation_probs)

    def __call__(self, ell, q1_batch_layer):
        prior = self.spec.priors[ell]
        if prior.kind != "spike_slab":
            return None
        cav = gaussian_multiply(gaussian_power(self.g.q1[ell], self.g.B - 1), q1_batch_layer)
        self.q0[ell], act = spike_slab_q0_update(prior.spike_slab(), cav, old=self.q0[ell])
        self.probs[ell] = np.asarray(act)
        c = gaussian_multiply(self.q0[ell], gaussian_power(self.g.q1[ell], self.g.B - 1))
        return clip_message(c, self.bounds)


def _make_q0_hook(g, spec, config):
    return _Q0Hook(g, spec, config)
