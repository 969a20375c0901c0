"""Per-task observation models.

Each likelihood consumes Gaussian marginals ``(m, v)`` of its latent slots,
arrays of shape ``(N, n_slots)``. Class methods are plain ``jax.numpy`` code
used inside the training objective; the module-level functions validate their
inputs and return NumPy values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import jax.numpy as jnp
import numpy as np
from jax.scipy.special import gammaln, logsumexp

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussHermiteRule:
    """Nodes and weights for integrals against exp(-t**2)."""

    order: int = 20
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("Gauss-Hermite order must be positive")
        t, w = np.polynomial.hermite.hermgauss(self.order)
        object.__setattr__(self, "nodes", t)
        object.__setattr__(self, "weights", w)

    def gaussian_points(self, m, v):
        """Abscissae m + sqrt(2 v) t, with a trailing node axis."""
        m, v = jnp.asarray(m)[..., None], jnp.asarray(v)[..., None]
        return m + jnp.sqrt(2.0 * v) * self.nodes

    def expectation(self, fn, m, v):
        """E[fn(f)] for f ~ N(m, v), elementwise over m and v."""
        vals = fn(self.gaussian_points(m, v))
        return jnp.sum(self.weights * vals, axis=-1) / math.sqrt(math.pi)

    def log_expectation(self, log_fn, m, v):
        """log E[exp(log_fn(f))] computed with log-sum-exp."""
        vals = log_fn(self.gaussian_points(m, v))
        return logsumexp(vals + jnp.log(self.weights), axis=-1) - 0.5 * math.log(math.pi)


GH20 = GaussHermiteRule(20)


class Likelihood:
    name = "base"
    n_slots = 1

    def expected_loglik(self, y, m, v):
        raise NotImplementedError

    def predictive_moments(self, m, v):
        raise NotImplementedError

    def log_predictive_density(self, y, m, v):
        raise NotImplementedError

    def unconstrained(self) -> dict:
        return {}

    def from_unconstrained(self, theta: dict) -> "Likelihood":
        return self

    def to_dict(self) -> dict:
        return {"kind": self.name}

    def check_targets(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise ValueError(f"{self.name} targets must be finite")
        return y


@dataclass(frozen=True)
class Gaussian(Likelihood):
    noise_variance: float = 1.0
    name = "gaussian"
    n_slots = 1

    def expected_loglik(self, y, m, v):
        s2 = self.noise_variance
        return -0.5 * jnp.log(2.0 * jnp.pi * s2) - ((y - m[..., 0]) ** 2 + v[..., 0]) / (2.0 * s2)

    def predictive_moments(self, m, v):
        return m[..., 0], v[..., 0] + self.noise_variance

    def log_predictive_density(self, y, m, v):
        s = v[..., 0] + self.noise_variance
        return -0.5 * (LOG_2PI + jnp.log(s)) - 0.5 * (y - m[..., 0]) ** 2 / s

    def unconstrained(self):
        return {"log_noise": jnp.log(jnp.asarray(self.noise_variance, dtype=float))}

    def from_unconstrained(self, theta):
        return Gaussian(jnp.exp(theta["log_noise"]))

    def to_dict(self):
        return {"kind": self.name, "noise_variance": float(self.noise_variance)}


@dataclass(frozen=True)
class Poisson(Likelihood):
    """Counts with rate exp(f)."""

    name = "poisson"
    n_slots = 1

    def expected_loglik(self, y, m, v):
        # E[exp(f)] for Gaussian f is exact; quadrature adds nothing and its
        # derivative w.r.t. v is singular at v = 0.
        m, v = m[..., 0], v[..., 0]
        return y * m - jnp.exp(m + 0.5 * v) - gammaln(y + 1.0)

    def predictive_moments(self, m, v):
        m, v = m[..., 0], v[..., 0]
        mean = jnp.exp(m + 0.5 * v)
        return mean, mean + jnp.exp(2.0 * m + v) * jnp.expm1(v)

    def log_predictive_density(self, y, m, v):
        y = jnp.asarray(y, dtype=float)[..., None]
        return GH20.log_expectation(lambda f: y * f - jnp.exp(f) - gammaln(y + 1.0), m[..., 0], v[..., 0])

    def check_targets(self, y):
        y = super().check_targets(y)
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("Poisson targets must be non-negative integers")
        return y


@dataclass(frozen=True)
class HetGaussian(Likelihood):
    """Gaussian with mean f and variance exp(g); slots are (f, g)."""

    name = "hetgaussian"
    n_slots = 2

    def expected_loglik(self, y, m, v):
        mf, mg, vf, vg = m[..., 0], m[..., 1], v[..., 0], v[..., 1]
        return -0.5 * LOG_2PI - 0.5 * mg - 0.5 * ((y - mf) ** 2 + vf) * jnp.exp(-mg + 0.5 * vg)

    def predictive_moments(self, m, v):
        return m[..., 0], v[..., 0] + jnp.exp(m[..., 1] + 0.5 * v[..., 1])

    def log_predictive_density(self, y, m, v):
        y = jnp.asarray(y, dtype=float)[..., None]
        mf, vf = m[..., 0][..., None], v[..., 0][..., None]

        def log_normal(g):
            s = vf + jnp.exp(g)
            return -0.5 * (LOG_2PI + jnp.log(s)) - 0.5 * (y - mf) ** 2 / s

        return GH20.log_expectation(log_normal, m[..., 1], v[..., 1])


KINDS = {"gaussian": Gaussian, "poisson": Poisson, "hetgaussian": HetGaussian}


def likelihood_from_dict(d: dict) -> Likelihood:
    kind = d.get("kind")
    if kind not in KINDS:
        raise ValueError(f"unknown likelihood {kind!r}; expected one of {sorted(KINDS)}")
    if kind == "gaussian":
        noise = float(d.get("noise_variance", 1.0))
        if not noise > 0:
            raise ValueError("Gaussian noise_variance must be positive")
        return Gaussian(noise)
    return KINDS[kind]()


def _marginals(m, v, kind: Likelihood):
    m = np.asarray(m, dtype=float)
    v = np.asarray(v, dtype=float)
    if kind.n_slots == 1 and (m.ndim == 0 or m.shape[-1:] != (1,)):
        m, v = m[..., None], v[..., None]
    if m.shape != v.shape or m.ndim == 0 or m.shape[-1] != kind.n_slots:
        raise ValueError(f"{kind.name} expects {kind.n_slots} latent slot(s) per row")
    if np.any(v < 0):
        raise ValueError("latent variances must be non-negative")
    return m, v


def expected_loglik(y, m, v, kind: Likelihood):
    """E_q[log p(y | f)] under independent Gaussian marginals of the task's slots."""
    m, v = _marginals(m, v, kind)
    y = kind.check_targets(y)
    return np.asarray(kind.expected_loglik(y, m, v))


def predictive_y_moments(m, v, kind: Likelihood):
    m, v = _marginals(m, v, kind)
    mean, var = kind.predictive_moments(m, v)
    return np.asarray(mean), np.asarray(var)


def log_predictive_density(y, m, v, kind: Likelihood):
    m, v = _marginals(m, v, kind)
    y = kind.check_targets(y)
    return np.asarray(kind.log_predictive_density(y, m, v))
