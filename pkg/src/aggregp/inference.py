"""Stochastic variational inference with inducing variables on the latent processes.

q(u) = N(mu, L L^T) over the inducing values of every latent realisation. The
training loop alternates Adam ascent on (mu, L) (E-step) and on the
hyperparameters (M-step), drawing a fresh stratified minibatch per step.

Gradients come from ``jax`` automatic differentiation of the ELBO written in
``jax.numpy``. Parameters are optimised unconstrained: log lengthscales, log
Gaussian noise variances, and a lower-triangular L whose diagonal is stored as
its logarithm.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import jax
import jax.numpy as jnp
import jax.scipy.linalg as jsl
import numpy as np

from aggregp.data import TaskDataset, inducing_from_tasks
from aggregp.likelihoods import likelihood_from_dict
from aggregp.lmc import (
    DEFAULT_JITTER,
    LatentIndexMap,
    LMCParams,
    assemble_kff,
    assemble_kfu,
    build_Kuu,
    check_inducing,
    kuu_blocks,
    support_features,
)
from aggregp.supports import DEFAULT_RESOLUTION, SupportArrays, SupportError, encode, take

log = logging.getLogger(__name__)


class VariationalState(NamedTuple):
    mu: np.ndarray  # (T,)
    L: np.ndarray  # (T, T) lower triangular, positive diagonal

    @property
    def S(self):
        return self.L @ self.L.T


@dataclass
class TrainConfig:
    minibatch_size: int | None = None  # None: full batch
    e_steps: int = 10
    m_steps: int = 10
    cycles: int = 200
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.minibatch_size is not None and self.minibatch_size < 1:
            raise ValueError("minibatch_size must be positive")
        if self.e_steps < 0 or self.m_steps < 0 or self.e_steps + self.m_steps == 0:
            raise ValueError("need a positive number of E- or M-steps per cycle")
        if self.cycles < 1 or not self.lr > 0 or not self.tol >= 0:
            raise ValueError("cycles and lr must be positive, tol non-negative")


@dataclass
class ModelConfig:
    """Structure and initial values of the multi-task model."""

    Q: int = 1
    R: tuple = (1,)
    num_inducing: int = 20
    Z: np.ndarray | None = None
    lengthscales: list | None = None
    A: list | None = None
    a_scale: float = 0.5
    quad_resolution: int = DEFAULT_RESOLUTION
    jitter: float = DEFAULT_JITTER
    learn_lengthscales: bool = True
    seed: int = 0

    def __post_init__(self):
        self.R = tuple(int(r) for r in np.broadcast_to(self.R, (self.Q,)))


@dataclass
class Model:
    likelihoods: list
    slot_map: LatentIndexMap
    Z: np.ndarray
    params: LMCParams
    state: VariationalState
    quad_resolution: int = DEFAULT_RESOLUTION
    jitter: float = DEFAULT_JITTER
    seed: int = 0
    trace: list = field(default_factory=list)
    n_clamped: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.Z.shape[0] * sum(self.params.R)


class AdamState(NamedTuple):
    m: object
    v: object
    t: int


# -- parameter transforms --------------------------------------------------------------

def _tril_from_raw(raw):
    return jnp.tril(raw, -1) + jnp.diag(jnp.exp(jnp.diag(raw)))


def _raw_from_tril(L):
    L = np.asarray(L, dtype=float)
    d = np.diag(L)
    if np.any(d <= 0):
        raise ValueError("Cholesky factor must have a positive diagonal")
    return np.tril(L, -1) + np.diag(np.log(d))


def unconstrained(model: Model):
    var = {"mu": jnp.asarray(model.state.mu), "L_raw": jnp.asarray(_raw_from_tril(model.state.L))}
    hyp = {
        "log_ls": [jnp.log(jnp.asarray(l)) for l in model.params.lengthscales],
        "A": [jnp.asarray(a) for a in model.params.A],
        "lik": [lik.unconstrained() for lik in model.likelihoods],
    }
    return var, hyp


def _constrain_hyp(hyp, templates):
    params = LMCParams(tuple(jnp.exp(l) for l in hyp["log_ls"]), tuple(hyp["A"]))
    liks = [t.from_unconstrained(th) for t, th in zip(templates, hyp["lik"])]
    return params, liks


def with_unconstrained(model: Model, var, hyp) -> Model:
    params, liks = _constrain_hyp(hyp, model.likelihoods)
    params = LMCParams(tuple(np.asarray(l) for l in params.lengthscales), tuple(np.asarray(a) for a in params.A))
    liks = [likelihood_from_dict(l.to_dict()) for l in liks]
    state = VariationalState(np.asarray(var["mu"]), np.asarray(_tril_from_raw(var["L_raw"])))
    return dataclasses.replace(model, params=params, likelihoods=liks, state=state)


# -- core computations (traceable) -----------------------------------------------------

def _kuu_chol(Z, params, jitter):
    blocks = [jnp.linalg.cholesky(k) for k in kuu_blocks(Z, params, jitter)]
    return jsl.block_diag(*[b for b, r in zip(blocks, params.R) for _ in range(r)])


def _task_marginals(enc, slots, params, Z, Lk, L, mu):
    """Marginals of q(f) for each latent slot of a task: (N, S) means and variances."""
    ksu, kss = support_features(enc, Z, params)
    n = enc.lower.shape[0]
    ms, vs = [], []
    for j in slots:
        sl = jnp.full((n,), j, dtype=int)
        kfu = assemble_kfu(ksu, params, sl)  # (N, T)
        kff = assemble_kff(kss, params, sl)
        a = jsl.solve_triangular(Lk, kfu.T, lower=True)  # Lk^-1 Kuf
        alpha = jsl.solve_triangular(Lk.T, a, lower=False)  # Kuu^-1 Kuf
        ms.append(alpha.T @ mu)
        vs.append(kff - jnp.sum(a * a, axis=0) + jnp.sum((L.T @ alpha) ** 2, axis=0))
    return jnp.stack(ms, axis=1), jnp.stack(vs, axis=1)


def _kl(mu, L, Lk):
    T = mu.shape[0]
    a = jsl.solve_triangular(Lk, L, lower=True)
    b = jsl.solve_triangular(Lk, mu, lower=True)
    logdet_k = 2.0 * jnp.sum(jnp.log(jnp.diag(Lk)))
    logdet_s = 2.0 * jnp.sum(jnp.log(jnp.abs(jnp.diag(L))))
    return 0.5 * (jnp.sum(a * a) + jnp.sum(b * b) - T + logdet_k - logdet_s)


def _make_objective(model: Model):
    """ELBO as a function of (var, hyp, task arrays, row indices, scales)."""
    Z = jnp.asarray(model.Z)
    templates = list(model.likelihoods)
    slots = model.slot_map.slots
    jitter = model.jitter

    def objective(var, hyp, tasks, idx, scales):
        params, liks = _constrain_hyp(hyp, templates)
        Lk = _kuu_chol(Z, params, jitter)
        L = _tril_from_raw(var["L_raw"])
        mu = var["mu"]
        total, n_neg = 0.0, 0
        for d, ((enc, y), rows, scale) in enumerate(zip(tasks, idx, scales)):
            m, v = _task_marginals(take(enc, rows), slots[d], params, Z, Lk, L, mu)
            n_neg = n_neg + jnp.sum(v < 0)
            v = jnp.maximum(v, 0.0)
            total = total + scale * jnp.sum(liks[d].expected_loglik(y[rows], m, v))
        return total - _kl(mu, L, Lk), n_neg

    return objective


def _task_arrays(model: Model, data: Sequence[TaskDataset]):
    if len(data) != len(model.likelihoods):
        raise ValueError(f"model has {len(model.likelihoods)} tasks, got {len(data)} datasets")
    out = []
    for t in data:
        if len(t) == 0:
            raise ValueError(f"task {t.name!r} has no observations")
        if t.dim != model.Z.shape[1]:
            raise SupportError(f"task {t.name!r} has dimension {t.dim}, model expects {model.Z.shape[1]}")
        enc = encode(t.supports, model.quad_resolution)
        out.append((SupportArrays(*(jnp.asarray(a) for a in enc)), jnp.asarray(t.y)))
    return out


def _batch_args(data, batch):
    if batch is None:
        batch = [np.arange(len(t)) for t in data]
    idx = [jnp.asarray(np.asarray(b, dtype=int)) for b in batch]
    scales = [len(t) / len(b) for t, b in zip(data, batch)]
    if any(len(b) == 0 for b in batch):
        raise ValueError("every task needs at least one row in the batch")
    return idx, scales


# -- public operations -----------------------------------------------------------------

def _checked_cholesky(K, what="K_uu"):
    K = np.asarray(K)
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"Cholesky of {what} failed (condition number {np.linalg.cond(K):.3e}); increase the jitter"
        ) from exc


def qf_marginals(rows, state: VariationalState, params: LMCParams, Z,
                 quad_resolution: int = DEFAULT_RESOLUTION, jitter: float = DEFAULT_JITTER):
    """Mean and variance of q(f) for (latent slot, support) rows."""
    Z = check_inducing(Z)
    Lk = _checked_cholesky(build_Kuu(Z, params, jitter))
    slots = np.array([j for j, _ in rows], dtype=int)
    enc = encode([s for _, s in rows], quad_resolution)
    m = np.empty(len(rows))
    v = np.empty(len(rows))
    for j in np.unique(slots):
        sel = np.flatnonzero(slots == j)
        mj, vj = _task_marginals(take(enc, sel), (int(j),), params, jnp.asarray(Z), jnp.asarray(Lk),
                                 jnp.asarray(state.L), jnp.asarray(state.mu))
        m[sel], v[sel] = np.asarray(mj[:, 0]), np.asarray(vj[:, 0])
    return m, _clamp(v)


def _clamp(v: np.ndarray) -> np.ndarray:
    neg = v < 0
    if np.any(v < -1e-10):
        log.warning("clamped %d q(f) variances below -1e-10 (min %.3e)", int(np.sum(v < -1e-10)), v.min())
    if np.any(neg):
        log.debug("clamped %d slightly negative q(f) variances", int(np.sum(neg)))
    return np.where(neg, 0.0, v)


def kl_qu_pu(state: VariationalState, Kuu) -> float:
    Lk = _checked_cholesky(Kuu)
    return float(_kl(jnp.asarray(state.mu), jnp.asarray(state.L), jnp.asarray(Lk)))


def elbo(model: Model, data: Sequence[TaskDataset], batch=None) -> float:
    """ELBO estimate from a minibatch (per-task row indices), or the full data if ``batch`` is None.

    Each task's expected log-likelihood sum is scaled by N_d / batch_d.
    """
    tasks = _task_arrays(model, data)
    idx, scales = _batch_args(data, batch)
    var, hyp = unconstrained(model)
    value, _ = _make_objective(model)(var, hyp, tasks, idx, scales)
    return float(value)


def elbo_gradients(model: Model, data: Sequence[TaskDataset], batch=None) -> dict:
    """Gradient of :func:`elbo` w.r.t. every unconstrained parameter.

    Keys: ``mu``, ``L_raw`` (log-diagonal Cholesky factor), ``log_ls``, ``A``, ``lik``.
    """
    tasks = _task_arrays(model, data)
    idx, scales = _batch_args(data, batch)
    var, hyp = unconstrained(model)
    grads = jax.grad(lambda v, h: _make_objective(model)(v, h, tasks, idx, scales)[0], argnums=(0, 1))(var, hyp)
    gv, gh = jax.tree_util.tree_map(np.asarray, grads)
    return {**gv, **gh}


def adam_init(params) -> AdamState:
    zeros = jax.tree_util.tree_map(jnp.zeros_like, params)
    return AdamState(zeros, zeros, 0)


def adam_step(params, grads, moments: AdamState, config: TrainConfig):
    """One bias-corrected Adam ascent step on a parameter pytree."""
    t = moments.t + 1
    b1, b2 = config.beta1, config.beta2
    m = jax.tree_util.tree_map(lambda a, g: b1 * a + (1 - b1) * g, moments.m, grads)
    v = jax.tree_util.tree_map(lambda a, g: b2 * a + (1 - b2) * g * g, moments.v, grads)
    c1, c2 = 1 - b1 ** t, 1 - b2 ** t
    new = jax.tree_util.tree_map(
        lambda p, mm, vv: p + config.lr * (mm / c1) / (jnp.sqrt(vv / c2) + config.eps), params, m, v)
    return new, AdamState(m, v, t)


class StratifiedBatcher:
    """Per-task sampling without replacement within an epoch, proportional batch shares."""

    def __init__(self, sizes: Sequence[int], batch_size: int | None, rng: np.random.Generator):
        total = sum(sizes)
        self.sizes = list(sizes)
        self.rng = rng
        if batch_size is None or batch_size >= total:
            self.counts = list(sizes)
        else:
            self.counts = [min(n, max(1, round(batch_size * n / total))) for n in sizes]
        self.full = self.counts == self.sizes
        self._perm = [rng.permutation(n) for n in sizes]
        self._pos = [0] * len(sizes)

    def next(self) -> list:
        if self.full:
            return [np.arange(n) for n in self.sizes]
        out = []
        for d, (n, b) in enumerate(zip(self.sizes, self.counts)):
            if self._pos[d] + b > n:
                self._perm[d] = self.rng.permutation(n)
                self._pos[d] = 0
            out.append(self._perm[d][self._pos[d]: self._pos[d] + b])
            self._pos[d] += b
        return out


def init_model(data: Sequence[TaskDataset], mc: ModelConfig) -> Model:
    if not data:
        raise ValueError("no tasks given")
    p = data[0].dim
    if any(t.dim != p for t in data):
        raise SupportError("all tasks must share the input dimension")
    likelihoods = [t.likelihood for t in data]
    slot_map = LatentIndexMap.from_counts([lik.n_slots for lik in likelihoods])
    Z = check_inducing(mc.Z) if mc.Z is not None else inducing_from_tasks(data, mc.num_inducing, mc.seed)
    if Z.shape[1] != p:
        raise SupportError(f"inducing inputs have dimension {Z.shape[1]}, data has {p}")
    if mc.lengthscales is not None:
        ls = [np.broadcast_to(np.asarray(l, dtype=float), (p,)).copy() for l in mc.lengthscales]
    else:
        c = np.concatenate([t.centroids() for t in data])
        spread = c.max(axis=0) - c.min(axis=0)
        ls = [np.where(spread > 0, spread / 10.0, 1.0) for _ in range(mc.Q)]
    if len(ls) != mc.Q:
        raise ValueError(f"expected {mc.Q} lengthscale vectors, got {len(ls)}")
    if mc.A is not None:
        params = LMCParams.create(ls, mc.A)
    else:
        params = LMCParams.random(slot_map.J, ls, mc.R, seed=mc.seed, scale=mc.a_scale)
    if params.J != slot_map.J:
        raise ValueError(f"mixing matrices have {params.J} rows, tasks need {slot_map.J} latent slots")
    Kuu = build_Kuu(Z, params, mc.jitter)
    state = VariationalState(np.zeros(Kuu.shape[0]), _checked_cholesky(Kuu))
    return Model(likelihoods, slot_map, Z, params, state, mc.quad_resolution, mc.jitter, mc.seed,
                 metadata={"learn_lengthscales": mc.learn_lengthscales})


def _norms(tree) -> dict:
    flat, _ = jax.tree_util.tree_flatten_with_path(tree)
    return {jax.tree_util.keystr(k): float(jnp.linalg.norm(jnp.ravel(v))) for k, v in flat}


def fit(data: Sequence[TaskDataset], config: TrainConfig | None = None,
        model_config: ModelConfig | None = None, model: Model | None = None) -> Model:
    """Variational EM: Adam on q(u) then on hyperparameters, repeated per cycle.

    The full-batch ELBO after every cycle is recorded in ``model.trace`` as
    ``(cycle, step, elbo)`` tuples; training stops early once its relative
    change falls below ``config.tol``.
    """
    config = config or TrainConfig()
    if model is None:
        model = init_model(data, model_config or ModelConfig())
    tasks = _task_arrays(model, data)
    objective = _make_objective(model)
    e_grad = jax.jit(jax.value_and_grad(objective, argnums=0, has_aux=True))
    m_grad = jax.jit(jax.value_and_grad(objective, argnums=1, has_aux=True))
    full = jax.jit(objective)

    learn_ls = model.metadata.get("learn_lengthscales", True)
    rng = np.random.default_rng(config.seed)
    batcher = StratifiedBatcher([len(t) for t in data], config.minibatch_size, rng)
    full_idx, full_scales = _batch_args(data, None)
    var, hyp = unconstrained(model)
    adam_e, adam_m = adam_init(var), adam_init(hyp)

    def full_elbo():
        value, n_neg = full(var, hyp, tasks, full_idx, full_scales)
        return float(value), int(n_neg)

    def check(value, where):
        if not math.isfinite(value):
            raise FloatingPointError(
                f"non-finite ELBO at {where}; parameter norms: {_norms({'var': var, 'hyp': hyp})}")

    current, _ = full_elbo()
    check(current, "initialisation")
    trace = [(0, 0, current)]
    step, n_clamped = 0, 0
    for cycle in range(1, config.cycles + 1):
        for _ in range(config.e_steps):
            idx, scales = _batch_args(data, batcher.next())
            (value, n_neg), g = e_grad(var, hyp, tasks, idx, scales)
            step += 1
            check(float(value), f"cycle {cycle}, step {step} (E-step)")
            n_clamped += int(n_neg)
            var, adam_e = adam_step(var, g, adam_e, config)
        for _ in range(config.m_steps):
            idx, scales = _batch_args(data, batcher.next())
            (value, n_neg), g = m_grad(var, hyp, tasks, idx, scales)
            step += 1
            check(float(value), f"cycle {cycle}, step {step} (M-step)")
            n_clamped += int(n_neg)
            if not learn_ls:
                g = {**g, "log_ls": [jnp.zeros_like(x) for x in g["log_ls"]]}
            hyp, adam_m = adam_step(hyp, g, adam_m, config)
        previous = current
        current, n_neg = full_elbo()
        n_clamped += n_neg
        check(current, f"end of cycle {cycle}")
        trace.append((cycle, step, current))
        if abs(current - previous) <= config.tol * abs(previous):
            break
    if n_clamped:
        log.warning("clamped %d negative q(f) variances during training", n_clamped)
    out = with_unconstrained(model, var, hyp)
    out.trace = model.trace + trace if model.trace else trace
    out.n_clamped = model.n_clamped + n_clamped
    return out
