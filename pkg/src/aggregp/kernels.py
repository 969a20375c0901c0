"""Exponentiated-quadratic kernel and its averages over supports.

The base kernel uses the convention

    k(z, z') = variance * exp(-sum_i (z_i - z'_i)**2 / l_i**2)

i.e. there is NO factor 2 in the denominator. Most GP libraries use
``2 * l**2``; a lengthscale ``l`` here corresponds to ``l / sqrt(2)`` there.

Box-box and box-point averages are closed form. Everything else goes through
the node-set encoding of :mod:`aggregp.supports`. All array functions are
written with ``jax.numpy`` so the training code can differentiate through them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.special import erf

from aggregp.supports import (
    DEFAULT_RESOLUTION,
    SupportArrays,
    Support,
    SupportError,
    encode,
)

SQRT_PI = math.sqrt(math.pi)

# Intervals narrower than this fraction of the lengthscale are averaged with
# Gauss-Legendre nodes; the closed forms lose digits to cancellation there.
NARROW = 1e-2
_GL_T, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_W = _GL_W / 2.0

# Above this many pairwise node evaluations the node-node sums are mapped row by row.
_CHUNK_LIMIT = 2_000_000


@dataclass(frozen=True)
class EQParams:
    lengthscales: np.ndarray
    variance: float = 1.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if ls.ndim != 1 or not np.all(ls > 0):
            raise ValueError(f"lengthscales must be positive, got {ls}")
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")
        object.__setattr__(self, "lengthscales", ls)

    @property
    def dim(self) -> int:
        return self.lengthscales.size


def h(z):
    """sqrt(pi) * z * erf(z) + exp(-z**2); twice the second antiderivative of exp(-z**2)."""
    z = jnp.asarray(z, dtype=float)
    return SQRT_PI * z * erf(z) + jnp.exp(-z * z)


# -- unit-variance vectorised building blocks ------------------------------------

def _eq(d, ell):
    r = d / ell
    return jnp.exp(-r * r)


def _kip_closed(a, b, x, ell):
    return ell * SQRT_PI / (2.0 * (b - a)) * (erf((b - x) / ell) + erf((x - a) / ell))


def _kip(a, b, x, ell):
    """Average of the kernel over [a, b] against the point x."""
    a, b, x = jnp.broadcast_arrays(jnp.asarray(a, float), jnp.asarray(b, float), jnp.asarray(x, float))
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    z = mid[..., None] + half[..., None] * _GL_T
    narrow = jnp.sum(_GL_W * _eq(z - x[..., None], ell), axis=-1)
    return jnp.where(b - a < NARROW * ell, narrow, _kip_closed(a, b, x, ell))


def _kii(a, b, c, d, ell):
    """Double average of the kernel over [a, b] x [c, d]."""
    a, b, c, d = jnp.broadcast_arrays(*(jnp.asarray(t, float) for t in (a, b, c, d)))
    da, dc = b - a, d - c
    closed = ell * ell / (2.0 * da * dc) * (
        (h((b - c) / ell) + h((a - d) / ell)) - (h((a - c) / ell) + h((b - d) / ell))
    )
    za = (0.5 * (a + b))[..., None] + (0.5 * da)[..., None] * _GL_T
    zc = (0.5 * (c + d))[..., None] + (0.5 * dc)[..., None] * _GL_T
    over_a = jnp.sum(_GL_W * _kip(c[..., None], d[..., None], za, ell), axis=-1)
    over_c = jnp.sum(_GL_W * _kip(a[..., None], b[..., None], zc, ell), axis=-1)
    # integrate over the narrower interval; averaging on ties keeps the result exactly symmetric
    nodes = jnp.where(da < dc, over_a, jnp.where(dc < da, over_c, 0.5 * (over_a + over_c)))
    return jnp.where(jnp.minimum(da, dc) < NARROW * ell, nodes, closed)


def _node_kernel(x, y, ls):
    """(..., p) x (..., p) -> (...)."""
    r = (x - y) / ls
    return jnp.exp(-jnp.sum(r * r, axis=-1))


def _node_node(na, wa, nb, wb, ls):
    """sum_k sum_l wa_k wb_l k(na_k, nb_l) for every row pair: (Na, Nb)."""
    Na, Ka, p = na.shape
    Nb, Kb, _ = nb.shape

    def one_row(args):
        n, w = args
        k = _node_kernel(n[:, None, None, :], nb[None, :, :, :], ls)  # (Ka, Nb, Kb)
        return jnp.einsum("k,knl,nl->n", w, k, wb)

    if Na * Ka * Nb * Kb <= _CHUNK_LIMIT:
        k = _node_kernel(na[:, :, None, None, :], nb[None, None, :, :, :], ls)
        return jnp.einsum("ik,ikjl,jl->ij", wa, k, wb)
    return jax.lax.map(one_row, (na, wa))


def cross_cov(a: SupportArrays, b: SupportArrays, ls, variance=1.0):
    """Covariance between the support averages of two encoded support lists."""
    ls = jnp.asarray(ls, dtype=float)
    p = ls.shape[0]
    bb = jnp.ones((a.lower.shape[0], b.lower.shape[0]))
    bn = jnp.ones(a.lower.shape[:1] + b.nodes.shape[:2])
    nb = jnp.ones(b.lower.shape[:1] + a.nodes.shape[:2])
    for i in range(p):
        bb = bb * _kii(a.lower[:, None, i], a.upper[:, None, i], b.lower[None, :, i], b.upper[None, :, i], ls[i])
        bn = bn * _kip(a.lower[:, None, None, i], a.upper[:, None, None, i], b.nodes[None, :, :, i], ls[i])
        nb = nb * _kip(b.lower[:, None, None, i], b.upper[:, None, None, i], a.nodes[None, :, :, i], ls[i])
    bn = jnp.einsum("ijl,jl->ij", bn, b.weights)
    nb = jnp.einsum("jil,il->ij", nb, a.weights)
    nn = _node_node(a.nodes, a.weights, b.nodes, b.weights, ls)
    ab, bbx = jnp.asarray(a.is_box)[:, None], jnp.asarray(b.is_box)[None, :]
    out = jnp.where(ab & bbx, bb, jnp.where(ab, bn, jnp.where(bbx, nb, nn)))
    return variance * out


def cross_cov_points(a: SupportArrays, Z, ls, variance=1.0):
    """Covariance between support averages and point values at the rows of Z: (N, M)."""
    ls = jnp.asarray(ls, dtype=float)
    Z = jnp.asarray(Z, dtype=float)
    box = jnp.ones((a.lower.shape[0], Z.shape[0]))
    for i in range(ls.shape[0]):
        box = box * _kip(a.lower[:, None, i], a.upper[:, None, i], Z[None, :, i], ls[i])
    k = _node_kernel(a.nodes[:, :, None, :], Z[None, None, :, :], ls)  # (N, K, M)
    nodes = jnp.einsum("nk,nkm->nm", a.weights, k)
    return variance * jnp.where(jnp.asarray(a.is_box)[:, None], box, nodes)


def self_cov(a: SupportArrays, ls, variance=1.0):
    """Prior variance of each support average: (N,)."""
    ls = jnp.asarray(ls, dtype=float)
    box = jnp.ones(a.lower.shape[:1])
    for i in range(ls.shape[0]):
        box = box * _kii(a.lower[:, i], a.upper[:, i], a.lower[:, i], a.upper[:, i], ls[i])
    N, K, _ = a.nodes.shape
    if N * K * K <= _CHUNK_LIMIT:
        k = _node_kernel(a.nodes[:, :, None, :], a.nodes[:, None, :, :], ls)
        nodes = jnp.einsum("nk,nkl,nl->n", a.weights, k, a.weights)
    else:
        def one(args):
            n, w = args
            return w @ _node_kernel(n[:, None, :], n[None, :, :], ls) @ w

        nodes = jax.lax.map(one, (a.nodes, a.weights))
    return variance * jnp.where(jnp.asarray(a.is_box), box, nodes)


# -- scalar public API ---------------------------------------------------------------

def _check_interval(lo, hi, name="interval"):
    if not float(lo) < float(hi):
        raise ValueError(f"{name} must satisfy lower < upper, got [{lo}, {hi}]")


def _scalar_params(params: EQParams) -> tuple[float, float]:
    if params.dim != 1:
        raise ValueError(f"1-D kernel called with {params.dim}-D parameters")
    return float(params.lengthscales[0]), float(params.variance)


def k_point(z, z2, params: EQParams) -> float:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    z2 = np.atleast_1d(np.asarray(z2, dtype=float))
    if z.shape != z2.shape or z.size != params.dim:
        raise ValueError(f"dimension mismatch: {z.size}, {z2.size} vs {params.dim} lengthscales")
    return params.variance * float(_node_kernel(jnp.asarray(z), jnp.asarray(z2), params.lengthscales))


def k_interval_interval_1d(xa, xb, xa2, xb2, params: EQParams) -> float:
    _check_interval(xa, xb)
    _check_interval(xa2, xb2)
    ell, var = _scalar_params(params)
    return var * float(_kii(xa, xb, xa2, xb2, ell))


def k_interval_point_1d(xa, xb, x, params: EQParams) -> float:
    _check_interval(xa, xb)
    ell, var = _scalar_params(params)
    return var * float(_kip(xa, xb, x, ell))


def gram(supports_a, supports_b, params: EQParams, quad_resolution: int = DEFAULT_RESOLUTION) -> np.ndarray:
    for s in list(supports_a) + list(supports_b):
        if s.dim != params.dim:
            raise SupportError(f"support of dimension {s.dim} used with {params.dim}-D kernel")
    a = encode(supports_a, quad_resolution)
    b = a if supports_b is supports_a else encode(supports_b, quad_resolution)
    return np.asarray(cross_cov(a, b, params.lengthscales, params.variance))


def k_support(s: Support, s2: Support, params: EQParams, quad_resolution: int = DEFAULT_RESOLUTION) -> float:
    """Covariance between the averages of the latent process over two supports."""
    return float(gram([s], [s2], params, quad_resolution)[0, 0])
