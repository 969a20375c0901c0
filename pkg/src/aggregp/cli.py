"""Command-line front end: ``aggregp synth | train | predict | eval``.

Training is driven by one JSON config::

    {
      "seed": 0,
      "tasks": [{"name": "task1", "likelihood": {"kind": "poisson"}}, ...],
      "model": {"Q": 1, "R": [1], "num_inducing": 30, ...},
      "train": {"cycles": 200, "lr": 0.01, "minibatch_size": null, ...}
    }

``model`` and ``train`` take the fields of :class:`ModelConfig` and
:class:`TrainConfig`; both may be omitted. Failures exit with status 1 and a
one-line diagnostic on stderr.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from aggregp.data import synth_fertility_analog, synth_poisson_two_task
from aggregp.inference import ModelConfig, TrainConfig, fit
from aggregp.likelihoods import likelihood_from_dict
from aggregp.predict import predict_y, smse, snlp
from aggregp.serialization import (
    FormatError,
    load_model,
    load_task_csv,
    read_targets,
    save_model,
    save_task_csv,
)

EXPERIMENTS = {"poisson": synth_poisson_two_task, "fertility": synth_fertility_analog}
PRED_FIELDS = ["row", "f_mean", "f_var", "y_mean", "y_var", "log_density"]


class ConfigError(ValueError):
    pass


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _build(cls, fields: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(fields) - known
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    try:
        return cls(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path, n_data: int, seed: int | None = None):
    """Parse a training config into (likelihoods, names, ModelConfig, TrainConfig)."""
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(cfg, dict) or "tasks" not in cfg:
        raise ConfigError(f"{path}: missing field 'tasks'")
    tasks = cfg["tasks"]
    if len(tasks) != n_data:
        raise ConfigError(f"{path}: 'tasks' lists {len(tasks)} task(s) but {n_data} data file(s) were given")
    liks, names = [], []
    for i, t in enumerate(tasks):
        if "likelihood" not in t:
            raise ConfigError(f"{path}: tasks[{i}] has no 'likelihood'")
        try:
            liks.append(likelihood_from_dict(t["likelihood"]))
        except ValueError as exc:
            raise ConfigError(f"{path}: tasks[{i}].likelihood: {exc}") from None
        names.append(t.get("name"))
    seed = cfg.get("seed", 0) if seed is None else seed
    model = dict(cfg.get("model", {}))
    train = dict(cfg.get("train", {}))
    if model.get("Z") is not None:
        model["Z"] = np.asarray(model["Z"], dtype=float)
    model.setdefault("seed", seed)
    train.setdefault("seed", seed)
    mc = _build(ModelConfig, model, f"{path}: model")
    tc = _build(TrainConfig, train, f"{path}: train")
    return liks, names, mc, tc


def default_config(tasks, seed: int) -> dict:
    return {
        "seed": seed,
        "tasks": [{"name": t.name, "likelihood": t.likelihood.to_dict()} for t in tasks],
        "model": {"Q": 1, "R": [1], "num_inducing": 30},
        "train": {"cycles": 200, "lr": 0.01, "minibatch_size": None},
    }


def cmd_synth(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test = EXPERIMENTS[args.experiment](seed=args.seed)
    files = []
    for t in train:
        name = f"train_{t.name}.csv"
        save_task_csv(t, out / name)
        files.append(name)
    save_task_csv(test, out / "test.csv")
    meta = {"experiment": args.experiment, "seed": args.seed, "train": files, "test": "test.csv",
            "test_task": 0, "generator": {k: v for k, v in test.metadata.items() if k != "latent"}}
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(default_config(train, args.seed), indent=2) + "\n")
    return 0


def cmd_train(args) -> int:
    liks, names, mc, tc = load_config(args.config, len(args.data), args.seed)
    data = [load_task_csv(p, lik, n) for p, lik, n in zip(args.data, liks, names)]
    model = fit(data, tc, mc)
    save_model(model, args.out)
    trace = Path(args.trace) if args.trace else Path(args.out).with_suffix(".trace.csv")
    with trace.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cycle", "step", "elbo"])
        for cycle, step, value in model.trace:
            w.writerow([cycle, step, _fmt(value)])
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    if not 0 <= args.task < len(model.likelihoods):
        raise ConfigError(f"--task {args.task} out of range; {args.model} has {len(model.likelihoods)} task(s)")
    test = load_task_csv(args.test, model.likelihoods[args.task], role="test")
    pr = predict_y(model, args.task, test.supports, test.y)
    with Path(args.out).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PRED_FIELDS)
        for n in range(len(test)):
            w.writerow([n, _fmt(pr.f_mean[n, 0]), _fmt(pr.f_var[n, 0]), _fmt(pr.y_mean[n]),
                        _fmt(pr.y_var[n]), _fmt(pr.log_density[n])])
    return 0


def _read_predictions(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"y_mean", "log_density"} - set(reader.fieldnames or [])
        if missing:
            raise FormatError(f"{path}:1: missing column(s) {sorted(missing)}")
        mean, logp = [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                mean.append(float(row["y_mean"]))
                logp.append(float(row["log_density"]))
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return np.array(mean), np.array(logp)


def cmd_eval(args) -> int:
    mean, logp = _read_predictions(args.pred)
    y = read_targets(args.truth)
    if len(y) != len(mean):
        raise FormatError(f"{args.pred} has {len(mean)} rows but {args.truth} has {len(y)}")
    # the SNLP baseline Gaussian is fitted to the training targets when given
    y_train = read_targets(args.train) if args.train else y
    print("metric,value")
    print(f"smse,{smse(y, mean):.10g}")
    print(f"snlp,{snlp(logp, y, y_train):.10g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aggregp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic experiment as task CSVs")
    p.add_argument("--experiment", choices=sorted(EXPERIMENTS), default="poisson")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a model and write a checkpoint plus ELBO trace")
    p.add_argument("--data", nargs="+", required=True, help="one task CSV per task, in config order")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--trace", help="ELBO trace CSV (default: <out stem>.trace.csv)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="per-row predictive moments and log densities")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--task", type=int, default=0, help="index of the task to predict")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="print SMSE and SNLP as metric,value CSV")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--train", help="training targets for the SNLP baseline (default: the truth targets)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, np.linalg.LinAlgError, FloatingPointError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"aggregp {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
