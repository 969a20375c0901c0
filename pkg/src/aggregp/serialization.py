"""Task CSV files and JSON model checkpoints.

Task CSV layout::

    kind,c0,c1,...,y

``kind`` is ``point``, ``box``, ``polytope`` or ``bag``. A point row fills
the first p coordinate columns, a box row gives p lower then p upper
coordinates; unused columns stay empty. Polytope and bag rows leave every
coordinate column empty and take their vertex ring / member points from a
companion JSON file mapping the 0-based data-row index to a list of points.

Floats are written with 17 significant digits so files round-trip exactly.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from aggregp.data import TaskDataset
from aggregp.inference import Model, VariationalState
from aggregp.likelihoods import Likelihood, likelihood_from_dict
from aggregp.lmc import LatentIndexMap, LMCParams
from aggregp.supports import Bag, Box, Point, Polytope, SupportError

CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    """Malformed input file; the message names the file and line."""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def companion_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".shapes.json")


def save_task_csv(ds: TaskDataset, path) -> None:
    path = Path(path)
    p = ds.dim
    width = 2 * p if any(isinstance(s, Box) for s in ds.supports) else p
    shapes = {}
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind"] + [f"c{i}" for i in range(width)] + ["y"])
        for n, (s, y) in enumerate(zip(ds.supports, ds.y)):
            if isinstance(s, Point):
                kind, coords = "point", list(s.coords)
            elif isinstance(s, Box):
                kind, coords = "box", list(s.lower) + list(s.upper)
            elif isinstance(s, Polytope):
                kind, coords = "polytope", []
                shapes[str(n)] = s.vertices.tolist()
            elif isinstance(s, Bag):
                kind, coords = "bag", []
                shapes[str(n)] = s.points.tolist()
            else:
                raise TypeError(f"cannot serialise support {s!r}")
            cells = [_fmt(c) for c in coords] + [""] * (width - len(coords))
            w.writerow([kind] + cells + [_fmt(y)])
    if shapes:
        companion_path(path).write_text(json.dumps(shapes))


def load_task_csv(path, likelihood: Likelihood, name: str | None = None, role: str = "train",
                  shapes_path=None) -> TaskDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["kind"] or rows[0][-1] != "y" or len(rows[0]) < 3:
        raise FormatError(f"{path}:1: header must be 'kind,c0,...,y'")
    width = len(rows[0]) - 2
    shapes_path = Path(shapes_path) if shapes_path else companion_path(path)
    shapes = json.loads(shapes_path.read_text()) if shapes_path.exists() else {}

    parsed = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width + 2:
            raise FormatError(f"{path}:{lineno}: expected {width + 2} columns, got {len(row)}")
        kind, cells, ycell = row[0].strip().lower(), row[1:-1], row[-1]
        try:
            coords = [float(c) for c in cells if c.strip() != ""]
            y = float(ycell)
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        parsed.append((lineno, kind, coords, y))

    # p comes from the point rows if any; otherwise from the column count
    dims = {len(c) for _, k, c, _ in parsed if k == "point"}
    p = dims.pop() if len(dims) == 1 else (width // 2 if any(k == "box" for _, k, _, _ in parsed) else width)
    supports, ys = [], []
    for n, (lineno, kind, coords, y) in enumerate(parsed):
        try:
            if kind == "point":
                if len(coords) != p:
                    raise SupportError(f"point row needs {p} coordinates, got {len(coords)}")
                s = Point(coords)
            elif kind == "box":
                if len(coords) != 2 * p:
                    raise SupportError(f"box row needs {2 * p} coordinates, got {len(coords)}")
                s = Box(coords[:p], coords[p:])
            elif kind in ("polytope", "bag"):
                if str(n) not in shapes:
                    raise SupportError(f"row {n} has no entry in {shapes_path.name}")
                s = Polytope(shapes[str(n)]) if kind == "polytope" else Bag(shapes[str(n)])
            else:
                raise SupportError(f"unknown support kind {kind!r}")
        except (SupportError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        supports.append(s)
        ys.append(y)
    if not supports:
        raise FormatError(f"{path}: no data rows")
    try:
        return TaskDataset(name or path.stem, likelihood, supports, np.array(ys), role)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def read_targets(path) -> np.ndarray:
    """The ``y`` column of a task CSV, without building supports."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][-1:] != ["y"]:
        raise FormatError(f"{path}:1: last header column must be 'y'")
    ys = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            ys.append(float(row[-1]))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    return np.array(ys)


def load_tasks_csv(paths: Sequence, likelihoods: Sequence[Likelihood], names=None) -> list[TaskDataset]:
    if len(paths) != len(likelihoods):
        raise ValueError(f"{len(paths)} data files for {len(likelihoods)} task likelihoods")
    names = names or [None] * len(paths)
    return [load_task_csv(p, lik, n) for p, lik, n in zip(paths, likelihoods, names)]


# -- checkpoints ------------------------------------------------------------------------

def _dump(obj) -> str:
    """JSON text with every float written at 17 significant digits."""
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_dump(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_dump(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return _dump(obj.tolist())
    if isinstance(obj, (bool, np.bool_)) or obj is None or isinstance(obj, str):
        return json.dumps(obj if not isinstance(obj, np.bool_) else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not np.isfinite(obj):
            raise ValueError("cannot checkpoint non-finite values")
        return _fmt(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def model_to_dict(model: Model) -> dict:
    L = np.asarray(model.state.L)
    return {
        "version": CHECKPOINT_VERSION,
        "p": int(model.Z.shape[1]),
        "Q": model.params.Q,
        "R_q": list(model.params.R),
        "lengthscales": [np.asarray(l).tolist() for l in model.params.lengthscales],
        "A": [np.asarray(a).ravel().tolist() for a in model.params.A],
        "J": model.params.J,
        "likelihoods": [lik.to_dict() for lik in model.likelihoods],
        "slots": [list(s) for s in model.slot_map.slots],
        "Z": np.asarray(model.Z).ravel().tolist(),
        "M": int(model.Z.shape[0]),
        "mu": np.asarray(model.state.mu).tolist(),
        "L": L[np.tril_indices(L.shape[0])].tolist(),
        "quad_resolution": model.quad_resolution,
        "jitter": model.jitter,
        "seed": model.seed,
        "metadata": {**model.metadata, "trace": [list(t) for t in model.trace]},
    }


def model_from_dict(d: dict) -> Model:
    try:
        if d["version"] != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {d['version']}")
        p, M, J = d["p"], d["M"], d["J"]
        A = [np.asarray(a, dtype=float).reshape(J, r) for a, r in zip(d["A"], d["R_q"])]
        params = LMCParams.create(d["lengthscales"], A)
        Z = np.asarray(d["Z"], dtype=float).reshape(M, p)
        mu = np.asarray(d["mu"], dtype=float)
        T = len(mu)
        L = np.zeros((T, T))
        L[np.tril_indices(T)] = d["L"]
        metadata = dict(d.get("metadata", {}))
        trace = [tuple(t) for t in metadata.pop("trace", [])]
        return Model(
            likelihoods=[likelihood_from_dict(l) for l in d["likelihoods"]],
            slot_map=LatentIndexMap(tuple(tuple(s) for s in d["slots"])),
            Z=Z, params=params, state=VariationalState(mu, L),
            quad_resolution=int(d["quad_resolution"]), jitter=float(d["jitter"]), seed=int(d["seed"]),
            trace=trace, metadata=metadata,
        )
    except KeyError as exc:
        raise FormatError(f"checkpoint is missing field {exc}") from None


def save_model(model: Model, path) -> None:
    Path(path).write_text(_dump(model_to_dict(model)) + "\n")


def load_model(path) -> Model:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    return model_from_dict(d)
