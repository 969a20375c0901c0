"""Posterior prediction at arbitrary supports and evaluation metrics."""
from __future__ import annotations

from typing import NamedTuple, Sequence

import jax.numpy as jnp
import numpy as np

from aggregp.inference import Model, _checked_cholesky, _clamp, _task_marginals
from aggregp.lmc import build_Kuu
from aggregp.supports import Support, SupportError, encode


class PredictiveMoments(NamedTuple):
    f_mean: np.ndarray  # (N, slots)
    f_var: np.ndarray
    y_mean: np.ndarray  # (N,)
    y_var: np.ndarray
    log_density: np.ndarray | None


def predict_f(model: Model, task: int, supports: Sequence[Support]):
    """q(f) means and variances, shape (N, n_slots), for each test support of ``task``."""
    if not 0 <= task < len(model.likelihoods):
        raise IndexError(f"task {task} out of range for a {len(model.likelihoods)}-task model")
    p = model.Z.shape[1]
    for s in supports:
        if s.dim != p:
            raise SupportError(f"test support has dimension {s.dim}, model expects {p}")
    Lk = _checked_cholesky(build_Kuu(model.Z, model.params, model.jitter))
    enc = encode(list(supports), model.quad_resolution)
    m, v = _task_marginals(enc, model.slot_map.slots[task], model.params, jnp.asarray(model.Z),
                           jnp.asarray(Lk), jnp.asarray(model.state.L), jnp.asarray(model.state.mu))
    return np.asarray(m), _clamp(np.asarray(v))


def predict_y(model: Model, task: int, supports: Sequence[Support], y=None) -> PredictiveMoments:
    lik = model.likelihoods[task]
    m, v = predict_f(model, task, supports)
    mean, var = lik.predictive_moments(m, v)
    logp = None
    if y is not None:
        y = lik.check_targets(y)
        if len(y) != len(supports):
            raise ValueError("need one target per test support")
        logp = np.asarray(lik.log_predictive_density(y, m, v))
    return PredictiveMoments(m, v, np.asarray(mean), np.asarray(var), logp)


def smse(y_true, y_pred) -> float:
    """Mean squared error divided by the (population) variance of the targets."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape or y_true.size < 2:
        raise ValueError("smse needs two equal-length vectors with at least 2 entries")
    var = np.var(y_true)
    if var == 0:
        raise ValueError("smse is undefined for constant targets")
    return float(np.mean((y_true - y_pred) ** 2) / var)


def snlp(log_densities, y_true, y_train) -> float:
    """Mean negative log predictive density minus that of a Gaussian fitted to the training targets.

    Negative values mean the model beats the trivial baseline.
    """
    logp = np.asarray(log_densities, dtype=float)
    y_true = np.asarray(y_true, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    if logp.shape != y_true.shape or y_true.size == 0 or y_train.size < 2:
        raise ValueError("snlp needs matching log densities and targets, and at least 2 training targets")
    mean, var = y_train.mean(), y_train.var()
    if var == 0:
        raise ValueError("snlp baseline is undefined for constant training targets")
    base = 0.5 * np.log(2 * np.pi * var) + 0.5 * (y_true - mean) ** 2 / var
    return float(np.mean(-logp) - np.mean(base))
