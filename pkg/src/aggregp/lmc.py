"""Linear model of coregionalisation over supports.

Task latent function ``j`` is ``f_j(s) = sum_q sum_i A_q[j, i] * avg_s u_q^i``
where the ``u_q^i`` are independent unit-variance EQ processes with shared
lengthscales per ``q``. Inducing variables are the values of every ``u_q^i``
at the common inducing inputs Z, ordered by ``(q, i, m)``.

A bag support (a finite point set) replaces the integral average by the plain
mean over its members; every builder below accepts it like any other support.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import jax.numpy as jnp
import jax.scipy.linalg as jsl
import numpy as np

from aggregp.kernels import cross_cov, cross_cov_points, self_cov
from aggregp.supports import DEFAULT_RESOLUTION, Support, SupportArrays, SupportError, encode

DEFAULT_JITTER = 1e-6


class LMCParams(NamedTuple):
    """Per latent kernel q: lengthscales (p,) and mixing matrix A_q (J, R_q)."""

    lengthscales: tuple
    A: tuple

    @property
    def Q(self) -> int:
        return len(self.A)

    @property
    def J(self) -> int:
        return self.A[0].shape[0]

    @property
    def R(self) -> tuple:
        return tuple(int(a.shape[1]) for a in self.A)

    @property
    def p(self) -> int:
        return int(self.lengthscales[0].shape[0])

    def B(self, q: int):
        return self.A[q] @ self.A[q].T

    @classmethod
    def create(cls, lengthscales, A) -> "LMCParams":
        ls = tuple(np.atleast_1d(np.asarray(l, dtype=float)) for l in lengthscales)
        mats = tuple(np.atleast_2d(np.asarray(a, dtype=float)) for a in A)
        if len(ls) != len(mats) or not ls:
            raise ValueError("need one lengthscale vector and one mixing matrix per latent kernel")
        if any(l.shape != ls[0].shape for l in ls) or any(np.any(l <= 0) for l in ls):
            raise ValueError("lengthscales must be positive and share the input dimension")
        if any(a.shape[0] != mats[0].shape[0] or a.shape[1] < 1 for a in mats):
            raise ValueError("every A_q must be J x R_q with R_q >= 1")
        return cls(ls, mats)

    @classmethod
    def random(cls, J: int, lengthscales, R=(1,), seed: int = 0, scale: float = 0.5) -> "LMCParams":
        """Mixing entries drawn i.i.d. from N(0, scale**2)."""
        rng = np.random.default_rng(seed)
        A = [rng.normal(0.0, scale, size=(J, r)) for r in R]
        if len(lengthscales) != len(R):
            raise ValueError("one lengthscale vector per latent kernel is required")
        return cls.create(lengthscales, A)


@dataclass(frozen=True)
class LatentIndexMap:
    """Rows of the A_q matrices owned by each task, one per latent parameter function."""

    slots: tuple

    @classmethod
    def from_counts(cls, counts: Sequence[int]) -> "LatentIndexMap":
        out, j = [], 0
        for c in counts:
            if c < 1:
                raise ValueError("every task needs at least one latent slot")
            out.append(tuple(range(j, j + c)))
            j += c
        return cls(tuple(out))

    @property
    def J(self) -> int:
        return sum(len(s) for s in self.slots)


def check_inducing(Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.ndim != 2 or Z.shape[0] < 1:
        raise ValueError("inducing inputs must be a non-empty (M, p) array")
    return Z


def n_inducing(params: LMCParams, M: int) -> int:
    return M * sum(params.R)


def kuu_blocks(Z, params: LMCParams, jitter: float = DEFAULT_JITTER) -> list:
    """One (M, M) Gram per latent kernel q, jitter included."""
    Z = jnp.asarray(Z)
    eye = jnp.eye(Z.shape[0])
    out = []
    for ls in params.lengthscales:
        r = (Z[:, None, :] - Z[None, :, :]) / ls
        out.append(jnp.exp(-jnp.sum(r * r, axis=-1)) + jitter * eye)
    return out


def build_Kuu(Z, params: LMCParams, jitter: float = DEFAULT_JITTER):
    Z = check_inducing(Z)
    if Z.shape[1] != params.p:
        raise SupportError(f"inducing inputs have dimension {Z.shape[1]}, kernel expects {params.p}")
    blocks = kuu_blocks(Z, params, jitter)
    return np.asarray(jsl.block_diag(*[b for b, r in zip(blocks, params.R) for _ in range(r)]))


def support_features(enc: SupportArrays, Z, params: LMCParams):
    """Per q: (N, M) support-to-inducing covariances and (N,) support variances."""
    ksu = [cross_cov_points(enc, Z, ls) for ls in params.lengthscales]
    kss = [self_cov(enc, ls) for ls in params.lengthscales]
    return ksu, kss


def assemble_kfu(ksu, params: LMCParams, slots):
    """K_fu rows for latent slots ``slots`` (N,) given per-q features."""
    cols = []
    for q, k in enumerate(ksu):
        coef = params.A[q][slots]  # (N, R_q)
        cols.append((coef[:, :, None] * k[:, None, :]).reshape(k.shape[0], -1))
    return jnp.concatenate(cols, axis=1)


def assemble_kff(kss, params: LMCParams, slots):
    out = 0.0
    for q, k in enumerate(kss):
        out = out + jnp.sum(params.A[q][slots] ** 2, axis=1) * k
    return out


def _split_rows(rows, params: LMCParams, quad_resolution: int):
    if len(rows) == 0:
        raise ValueError("no rows given")
    slots = np.array([j for j, _ in rows], dtype=int)
    if np.any(slots < 0) or np.any(slots >= params.J):
        raise IndexError(f"latent slot out of range 0..{params.J - 1}")
    supports = [s for _, s in rows]
    for s in supports:
        if s.dim != params.p:
            raise SupportError(f"support of dimension {s.dim} used with {params.p}-D kernels")
    return slots, encode(supports, quad_resolution)


def build_Kfu(rows: Sequence[tuple[int, Support]], Z, params: LMCParams,
              quad_resolution: int = DEFAULT_RESOLUTION) -> np.ndarray:
    Z = check_inducing(Z)
    if Z.shape[1] != params.p:
        raise SupportError(f"inducing inputs have dimension {Z.shape[1]}, kernel expects {params.p}")
    slots, enc = _split_rows(rows, params, quad_resolution)
    ksu, _ = support_features(enc, Z, params)
    return np.asarray(assemble_kfu(ksu, params, slots))


def kff_diag(rows: Sequence[tuple[int, Support]], params: LMCParams,
             quad_resolution: int = DEFAULT_RESOLUTION) -> np.ndarray:
    slots, enc = _split_rows(rows, params, quad_resolution)
    kss = [self_cov(enc, ls) for ls in params.lengthscales]
    return np.asarray(assemble_kff(kss, params, slots))


def prior_gram(rows: Sequence[tuple[int, Support]], params: LMCParams,
               quad_resolution: int = DEFAULT_RESOLUTION, rows2=None) -> np.ndarray:
    """Full prior covariance between the task values on two row lists."""
    slots, enc = _split_rows(rows, params, quad_resolution)
    if rows2 is None:
        slots2, enc2 = slots, enc
    else:
        slots2, enc2 = _split_rows(rows2, params, quad_resolution)
    out = 0.0
    for q, ls in enumerate(params.lengthscales):
        B = np.asarray(params.B(q))
        out = out + B[np.ix_(slots, slots2)] * np.asarray(cross_cov(enc, enc2, ls))
    return np.asarray(out)


def cov_ff(j: int, j2: int, s: Support, s2: Support, params: LMCParams,
           quad_resolution: int = DEFAULT_RESOLUTION) -> float:
    return float(prior_gram([(j, s)], params, quad_resolution, rows2=[(j2, s2)])[0, 0])
