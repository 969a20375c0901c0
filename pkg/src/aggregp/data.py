"""Task datasets, synthetic experiments, aggregation and inducing-input seeding."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from aggregp.kernels import EQParams, gram
from aggregp.likelihoods import Gaussian, Likelihood, Poisson
from aggregp.supports import Box, Point, Support, SupportError


@dataclass
class TaskDataset:
    name: str
    likelihood: Likelihood
    supports: list
    y: np.ndarray
    role: str = "train"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.supports = list(self.supports)
        self.y = self.likelihood.check_targets(np.asarray(self.y, dtype=float).ravel())
        if len(self.supports) != len(self.y):
            raise ValueError(f"task {self.name!r}: {len(self.supports)} supports but {len(self.y)} targets")
        if self.supports:
            p = self.supports[0].dim
            if any(s.dim != p for s in self.supports):
                raise SupportError(f"task {self.name!r}: supports have mixed dimensions")

    def __len__(self):
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.supports[0].dim

    def centroids(self) -> np.ndarray:
        return np.array([s.centroid() for s in self.supports])

    def subset(self, idx, role: str | None = None) -> "TaskDataset":
        idx = np.asarray(idx, dtype=int)
        return TaskDataset(self.name, self.likelihood, [self.supports[i] for i in idx],
                           self.y[idx], role or self.role, dict(self.metadata))


# -- synthetic experiments -------------------------------------------------------------

POISSON_GENERATOR = {"lengthscale": 10.0, "A": [1.0, 0.8], "domain": [0.0, 250.0],
                     "gap": [130.0, 180.0], "widths": [1.0, 2.0]}


def _sample_joint(K: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (K + K.T))
    return V @ (np.sqrt(np.clip(w, 0.0, None)) * rng.standard_normal(len(w)))


def synth_poisson_two_task(seed: int = 0, **overrides):
    """Two Poisson tasks over unit and two-unit intervals tiling [0, 250].

    Returns ``(train, test)`` where ``train`` is ``[task1_train, task2]`` and
    ``test`` holds the task-1 rows whose interval midpoints fall in the gap.
    Keys of ``POISSON_GENERATOR`` can be overridden by keyword.
    """
    unknown = set(overrides) - set(POISSON_GENERATOR)
    if unknown:
        raise TypeError(f"unknown generator settings: {sorted(unknown)}")
    g = {**POISSON_GENERATOR, **overrides}
    rng = np.random.default_rng(seed)
    lo, hi = g["domain"]
    tasks = []
    for width in g["widths"]:
        edges = np.arange(lo, hi, width)
        tasks.append([Box([e], [e + width]) for e in edges])
    supports = tasks[0] + tasks[1]
    n1 = len(tasks[0])
    K = gram(supports, supports, EQParams([g["lengthscale"]]))
    a = np.array(g["A"])
    coef = np.concatenate([np.full(n1, a[0]), np.full(len(tasks[1]), a[1])])
    f = _sample_joint(coef[:, None] * coef[None, :] * K, rng)
    counts = rng.poisson(np.exp(f)).astype(float)

    meta = {"generator": "poisson_two_task", "seed": int(seed), **g}
    task1 = TaskDataset("task1", Poisson(), tasks[0], counts[:n1], metadata=dict(meta, latent=f[:n1].tolist()))
    task2 = TaskDataset("task2", Poisson(), tasks[1], counts[n1:], metadata=dict(meta, latent=f[n1:].tolist()))
    mids = np.array([s.centroid()[0] for s in tasks[0]])
    in_gap = (mids >= g["gap"][0]) & (mids <= g["gap"][1])
    train1 = task1.subset(np.flatnonzero(~in_gap), role="train")
    test1 = task1.subset(np.flatnonzero(in_gap), role="test")
    return [train1, task2], test1


FERTILITY_GRID = {"ages": (15, 54), "years": (1944, 2009), "lengthscales": [10.0, 15.0],
                  "noise_std": 0.05, "n_train": 1640, "n_test": 1000}


def synth_fertility_analog(seed: int = 0, n_high: int = 100, block=(2.0, 2.0)):
    """Smooth 2-D surface on a 40 x 66 grid standing in for the fertility data.

    Returns ``(train, test)``: ``train`` is ``[high_res, aggregated]`` where
    the high-resolution task holds ``n_high`` of the training points and the
    second task aggregates all training points into ``block`` boxes.
    """
    g = FERTILITY_GRID
    rng = np.random.default_rng(seed)
    ages = np.arange(g["ages"][0], g["ages"][1] + 1, dtype=float)
    years = np.arange(g["years"][0], g["years"][1] + 1, dtype=float)
    la, ly = g["lengthscales"]
    Ka = np.exp(-((ages[:, None] - ages[None, :]) / la) ** 2)
    Ky = np.exp(-((years[:, None] - years[None, :]) / ly) ** 2)

    def factor(K):
        w, V = np.linalg.eigh(K)
        return V * np.sqrt(np.clip(w, 0.0, None))

    surface = factor(Ka) @ rng.standard_normal((len(ages), len(years))) @ factor(Ky).T
    y = surface.ravel() + g["noise_std"] * rng.standard_normal(surface.size)
    coords = np.array([(a, t) for a in ages for t in years])

    perm = rng.permutation(len(coords))
    train_idx, test_idx = perm[: g["n_train"]], perm[g["n_train"]: g["n_train"] + g["n_test"]]
    meta = {"generator": "fertility_analog", "seed": int(seed), "n_high": int(n_high),
            "block": list(block), **{k: v for k, v in g.items()}}
    noise = Gaussian(0.1)
    full_train = TaskDataset("high_res", noise, [Point(c) for c in coords[train_idx]], y[train_idx], metadata=meta)
    high = full_train.subset(rng.choice(len(train_idx), size=n_high, replace=False))
    agg = aggregate(full_train, block)
    agg.name = "aggregated"
    test = TaskDataset("high_res", noise, [Point(c) for c in coords[test_idx]], y[test_idx], role="test", metadata=meta)
    return [high, agg], test


# -- aggregation ---------------------------------------------------------------------------

def _cell_spacing(values: np.ndarray) -> float:
    u = np.unique(values)
    return float(np.min(np.diff(u))) if len(u) > 1 else 1.0


def aggregate(ds: TaskDataset, block, spacing=None) -> TaskDataset:
    """Average a gridded dataset into blocks of edge lengths ``block``.

    Point rows stand for grid cells of width ``spacing`` (inferred from the
    smallest gap between distinct coordinates when not given) centred on the
    point. Blocks are laid out from the lower edge of the grid; a trailing
    remainder narrower than a block is merged into the last block. Each
    non-empty block yields one Box row whose target is the mean of its members.
    """
    if len(ds) == 0:
        raise ValueError("cannot aggregate an empty dataset")
    p = ds.dim
    block = np.broadcast_to(np.asarray(block, dtype=float), (p,))
    if np.any(block <= 0):
        raise ValueError("block edge lengths must be positive")
    if all(isinstance(s, Point) for s in ds.supports):
        c = np.array([s.coords for s in ds.supports])
        if spacing is None:
            spacing = [_cell_spacing(c[:, i]) for i in range(p)]
        spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (p,))
        lo, hi = c - spacing / 2, c + spacing / 2
    elif all(isinstance(s, Box) for s in ds.supports):
        lo = np.array([s.lower for s in ds.supports])
        hi = np.array([s.upper for s in ds.supports])
        c = 0.5 * (lo + hi)
    else:
        raise SupportError("aggregate expects all-point or all-box supports")

    origin, top = lo.min(axis=0), hi.max(axis=0)
    n_blocks = np.maximum(1, np.floor((top - origin) / block + 1e-9).astype(int))
    index = np.minimum(np.floor((c - origin) / block + 1e-9).astype(int), n_blocks - 1)

    keys, inverse = np.unique(index, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    supports, y = [], []
    for k, key in enumerate(keys):
        b_lo = origin + key * block
        b_hi = np.where(key == n_blocks - 1, top, origin + (key + 1) * block)
        supports.append(Box(b_lo, b_hi))
        y.append(ds.y[inverse == k].mean())
    meta = dict(ds.metadata, aggregated_block=block.tolist())
    return TaskDataset(ds.name, ds.likelihood, supports, np.array(y), ds.role, meta)


# -- inducing inputs -----------------------------------------------------------------------

def kmeans_init(inputs, M: int, seed: int = 0) -> np.ndarray:
    """k-means++ seeded Lloyd iterations (at most 100); returns the M centroids."""
    from sklearn.cluster import KMeans

    X = np.asarray(inputs, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n_distinct = len(np.unique(X, axis=0))
    if M < 1 or M > n_distinct:
        raise ValueError(f"cannot place {M} inducing inputs on {n_distinct} distinct inputs")
    km = KMeans(n_clusters=M, init="k-means++", n_init=1, max_iter=100, random_state=seed)
    km.fit(X)
    return km.cluster_centers_


def inducing_from_tasks(tasks: Sequence[TaskDataset], M: int, seed: int = 0) -> np.ndarray:
    """k-means over the centroids of every training support."""
    return kmeans_init(np.concatenate([t.centroids() for t in tasks]), M, seed)


def all_supports(tasks: Sequence[TaskDataset]) -> list[Support]:
    return [s for t in tasks for s in t.supports]
