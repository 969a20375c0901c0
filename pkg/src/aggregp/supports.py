"""Observation supports: points, boxes, 2-D polygons and finite bags of points.

Every support is an immutable value. Kernels never look at the geometry
directly; they consume the array encoding produced by :func:`encode`, where a
support is either an axis-aligned box (handled analytically) or a weighted set
of nodes whose weights sum to one (points, bags, and polygons via quadrature).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np
import shapely

DEFAULT_RESOLUTION = 32


class SupportError(ValueError):
    """Raised for malformed supports or operations undefined on a support kind."""


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1 or arr.size == 0:
        raise SupportError(f"{name} must be a non-empty 1-D coordinate vector")
    if not np.all(np.isfinite(arr)):
        raise SupportError(f"{name} has non-finite coordinates")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Point:
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", _as_vector(self.coords, "coords"))

    @property
    def dim(self) -> int:
        return self.coords.size

    def centroid(self) -> np.ndarray:
        return self.coords.copy()

    def shift(self, c) -> "Point":
        return Point(self.coords + np.asarray(c, dtype=float))


@dataclass(frozen=True, eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _as_vector(self.lower, "lower")
        hi = _as_vector(self.upper, "upper")
        if lo.shape != hi.shape:
            raise SupportError("box lower and upper must have the same dimension")
        if not np.all(lo < hi):
            raise SupportError(
                f"box requires lower < upper in every dimension, got {lo} and {hi}"
                " (use Point for zero-width supports)"
            )
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def centroid(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def shift(self, c) -> "Box":
        c = np.asarray(c, dtype=float)
        return Box(self.lower + c, self.upper + c)


@dataclass(frozen=True, eq=False)
class Polytope:
    """Simple polygon in the plane, vertices given as an open ring."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise SupportError("only 2-D polygons are supported; vertices must be (n, 2)")
        if len(v) > 1 and np.array_equal(v[0], v[-1]):
            v = v[:-1]
        if len(v) < 3:
            raise SupportError("a polygon needs at least 3 vertices")
        if not np.all(np.isfinite(v)):
            raise SupportError("polygon has non-finite vertices")
        ring = shapely.LinearRing(v)
        if not ring.is_simple:
            raise SupportError("polygon is self-intersecting")
        if abs(_shoelace(v)) <= 0.0:
            raise SupportError("polygon has zero area")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def dim(self) -> int:
        return 2

    def centroid(self) -> np.ndarray:
        c = shapely.Polygon(self.vertices).centroid
        return np.array([c.x, c.y])

    def shift(self, c) -> "Polytope":
        return Polytope(self.vertices + np.asarray(c, dtype=float))


@dataclass(frozen=True, eq=False)
class Bag:
    """Finite set of points; the observation is the plain mean over members."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise SupportError("a bag needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise SupportError("bag has non-finite points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def shift(self, c) -> "Bag":
        return Bag(self.points + np.asarray(c, dtype=float))


Support = Union[Point, Box, Polytope, Bag]


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray


def _shoelace(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def measure(s: Support) -> float:
    """Length, area or volume of a support."""
    if isinstance(s, Box):
        return float(np.prod(s.upper - s.lower))
    if isinstance(s, Polytope):
        return abs(_shoelace(s.vertices))
    if isinstance(s, Point):
        raise SupportError("point support has no measure")
    if isinstance(s, Bag):
        raise SupportError("bag support has no measure")
    raise TypeError(f"not a support: {s!r}")


def _midpoint_grid(lower: np.ndarray, upper: np.ndarray, resolution: int):
    axes = [lo + (np.arange(resolution) + 0.5) * (hi - lo) / resolution
            for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)
    cell = float(np.prod((upper - lower) / resolution))
    return nodes, cell


def quadrature(s: Support, resolution: int = DEFAULT_RESOLUTION) -> QuadratureRule:
    """Midpoint rule on a regular grid over the bounding box of ``s``.

    For polygons only cells whose midpoints fall inside are kept; their common
    weight is rescaled so the weights sum to the exact polygon area.
    """
    if not isinstance(resolution, (int, np.integer)) or resolution < 1:
        raise SupportError(f"quadrature resolution must be a positive integer, got {resolution!r}")
    if isinstance(s, Box):
        nodes, cell = _midpoint_grid(s.lower, s.upper, int(resolution))
        return QuadratureRule(nodes, np.full(len(nodes), cell))
    if isinstance(s, Polytope):
        lo, hi = s.vertices.min(axis=0), s.vertices.max(axis=0)
        nodes, _ = _midpoint_grid(lo, hi, int(resolution))
        inside = shapely.contains_xy(shapely.Polygon(s.vertices), nodes[:, 0], nodes[:, 1])
        nodes = nodes[inside]
        if len(nodes) == 0:
            p = shapely.Polygon(s.vertices).representative_point()
            nodes = np.array([[p.x, p.y]])
        area = measure(s)
        return QuadratureRule(nodes, np.full(len(nodes), area / len(nodes)))
    raise SupportError(f"quadrature is undefined for {type(s).__name__} supports")


class SupportArrays(NamedTuple):
    """Padded array encoding of a list of supports.

    ``is_box`` rows use ``lower``/``upper``; the others are node sets with
    weights summing to one (zero-weight padding). Box rows carry zero weights
    and node rows carry a dummy unit box so every branch stays finite.
    """

    is_box: np.ndarray  # (N,)
    lower: np.ndarray  # (N, p)
    upper: np.ndarray  # (N, p)
    nodes: np.ndarray  # (N, K, p)
    weights: np.ndarray  # (N, K)


def support_dim(s: Support) -> int:
    return s.dim


def node_set(s: Support, resolution: int = DEFAULT_RESOLUTION):
    """Nodes and normalised weights representing ``s`` as an average of point values."""
    if isinstance(s, Point):
        return s.coords[None, :], np.ones(1)
    if isinstance(s, Bag):
        k = len(s.points)
        return np.array(s.points), np.full(k, 1.0 / k)
    rule = quadrature(s, resolution)
    return rule.nodes, rule.weights / rule.weights.sum()


def encode(supports: Sequence[Support], resolution: int = DEFAULT_RESOLUTION) -> SupportArrays:
    if len(supports) == 0:
        raise SupportError("cannot encode an empty support list")
    p = supports[0].dim
    for s in supports:
        if s.dim != p:
            raise SupportError(f"support dimension mismatch: expected {p}, got {s.dim}")
    sets = [None if isinstance(s, Box) else node_set(s, resolution) for s in supports]
    k = max([1] + [len(ns[0]) for ns in sets if ns is not None])
    n = len(supports)
    is_box = np.zeros(n, dtype=bool)
    lower = np.zeros((n, p))
    upper = np.ones((n, p))
    nodes = np.zeros((n, k, p))
    weights = np.zeros((n, k))
    for i, (s, ns) in enumerate(zip(supports, sets)):
        if ns is None:
            is_box[i] = True
            lower[i], upper[i] = s.lower, s.upper
            nodes[i] = s.centroid()
        else:
            pts, w = ns
            nodes[i, : len(pts)] = pts
            nodes[i, len(pts):] = pts[0]
            weights[i, : len(w)] = w
    return SupportArrays(is_box, lower, upper, nodes, weights)


def take(arrays: SupportArrays, idx) -> SupportArrays:
    return SupportArrays(*(a[idx] for a in arrays))
