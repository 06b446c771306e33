"""Command-line entry point: ``henon-extremes <command> ...``.

Commands: orbit, geometry, train, evaluate, sweep, verify. Each command that
writes an artifact also writes ``<artifact>.record.json`` holding the full
configuration; ``verify`` regenerates from a record and compares.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .dataset import ClassStarvationError, Standardizer, build_train_test
from .dynamics import MapParameters, OrbitEscapeError, StatePoint, generate_orbit, random_orbit
from .experiments import (
    PROFILES,
    RunConfig,
    SweepSpec,
    misclassification_map,
    run_sweep,
    run_training,
)
from .geometry import (
    Threshold,
    class_map,
    preimage_curves,
    write_class_map_csv,
    write_preimages_csv,
)
from .neuralnet import TrainingDivergedError, evaluate, load_checkpoint
from .records import RunRecord, file_digest

OUT_ENV = "HENON_EXTREMES_OUT"

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_STARVED = 4
EXIT_IO = 5


class ConfigError(Exception):
    pass


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def _record_path(artifact: Path) -> Path:
    return artifact.with_name(artifact.name + ".record.json")


def _read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


# -- orbit ------------------------------------------------------------------

def make_orbit(cfg: dict, out: Path) -> None:
    params = MapParameters(cfg["a"], cfg["b"])
    if cfg["start"] is not None:
        orbit = generate_orbit(StatePoint(*cfg["start"]), cfg["length"], cfg["burn_in"], params)
    else:
        orbit = random_orbit(np.random.default_rng(cfg["seed"]), cfg["length"],
                             cfg["burn_in"], params)
    np.savetxt(out, orbit.points, delimiter=",", header="x,y", comments="", fmt="%.17g")


def cmd_orbit(args) -> int:
    out = Path(args.out or default_out_dir() / "orbit.csv")
    cfg = {"length": args.length, "burn_in": args.burn_in, "seed": args.seed,
           "start": args.start, "a": args.a, "b": args.b}
    return _produce("orbit", cfg, out)


# -- geometry ---------------------------------------------------------------

def make_geometry(cfg: dict, out: Path) -> None:
    params = MapParameters(cfg["a"], cfg["b"])
    threshold = Threshold(cfg["theta"])
    if cfg["mode"] == "classmap":
        cmap = class_map(cfg["horizon"], cfg["points"], params, threshold, seed=cfg["seed"])
        write_class_map_csv(cmap, out)
    else:
        curves = preimage_curves(cfg["depth"], params, threshold)
        write_preimages_csv(curves, out)


def cmd_geometry(args) -> int:
    out = Path(args.out or default_out_dir() / f"{args.mode}.csv")
    cfg = {"mode": args.mode, "horizon": args.horizon, "depth": args.depth,
           "points": args.points, "seed": args.seed, "a": args.a, "b": args.b,
           "theta": args.theta}
    return _produce("geometry", cfg, out)


_MAKERS = {"orbit": make_orbit, "geometry": make_geometry}


def _produce(command: str, cfg: dict, out: Path) -> int:
    out.parent.mkdir(parents=True, exist_ok=True)
    _MAKERS[command](cfg, out)
    rec = RunRecord.create(command, cfg, artifacts={"output": out.name},
                           metrics={"sha256": file_digest(out)})
    rec.save(_record_path(out))
    print(f"wrote {out}")
    return EXIT_OK


# -- train / evaluate -------------------------------------------------------

_TRAIN_FLAGS = ("horizon", "history_length", "train_size", "test_size", "epochs", "seed",
                "layers")


def train_config(args) -> RunConfig:
    values = _read_json(args.config) if args.config else {}
    profile = args.profile or values.get("profile", "paper")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    for name in _TRAIN_FLAGS:
        v = getattr(args, name)
        if v is not None:
            values[name] = v
    try:
        return RunConfig.from_dict(values, profile)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def cmd_train(args) -> int:
    config = train_config(args)
    out = Path(args.out or default_out_dir() / "train")
    outcome = run_training(config)
    rec = outcome.save(out, "run")
    if args.misclassified:
        misclassification_map(outcome.params, outcome.test, outcome.standardizer).write_csv(
            out / "misclassified.csv")
    print(json.dumps({"accuracy": outcome.accuracy, "record": str(out / "run.record.json"),
                      "n_params": rec.metrics["n_params"]}))
    return EXIT_OK


def evaluate_checkpoint(path, test_size: int | None = None) -> float:
    params, meta = load_checkpoint(path)
    config = RunConfig.from_dict(meta["config"])
    if test_size is not None:
        config.test_size = test_size
    _, test = build_train_test(config.train_size, config.test_size, config.horizon,
                               config.history_length, config.map_params, config.threshold,
                               config.seed)
    return evaluate(params, test, Standardizer.from_dict(meta["standardizer"]))


def cmd_evaluate(args) -> int:
    acc = evaluate_checkpoint(args.checkpoint, args.test_size)
    print(json.dumps({"accuracy": acc}))
    return EXIT_OK


# -- sweep ------------------------------------------------------------------

def cmd_sweep(args) -> int:
    try:
        spec = SweepSpec.from_dict(_read_json(args.spec))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out or default_out_dir() / "sweep")
    result = run_sweep(spec, jobs=args.jobs, out_dir=out)
    rec = RunRecord.create("sweep", spec.to_dict(), artifacts={"csv": "sweep.csv",
                                                                "summary": "summary.json"},
                           metrics={"sha256": file_digest(out / "sweep.csv")})
    rec.save(out / "sweep.record.json")
    print(json.dumps(result.summary()["crossing_times"]))
    return EXIT_OK


# -- verify -----------------------------------------------------------------

def verify_record(path) -> tuple[bool, dict]:
    """Re-run the command behind a record and compare its metrics exactly."""
    path = Path(path)
    rec = RunRecord.load(path)
    if rec.command == "train":
        outcome = run_training(RunConfig.from_dict(rec.config))
        report = {"accuracy": (rec.metrics["accuracy"], outcome.accuracy)}
        ckpt = rec.artifacts.get("checkpoint")
        if ckpt and (path.parent / ckpt).exists():
            report["checkpoint_accuracy"] = (rec.metrics["accuracy"],
                                             evaluate_checkpoint(path.parent / ckpt))
    elif rec.command in _MAKERS:
        tmp = path.parent / (rec.artifacts["output"] + ".verify")
        _MAKERS[rec.command](rec.config, tmp)
        report = {"sha256": (rec.metrics["sha256"], file_digest(tmp))}
        tmp.unlink()
    elif rec.command == "sweep":
        tmp = path.parent / "verify"
        run_sweep(SweepSpec.from_dict(rec.config), out_dir=tmp)
        report = {"sha256": (rec.metrics["sha256"], file_digest(tmp / "sweep.csv"))}
    else:
        raise ConfigError(f"unknown command in record: {rec.command}")
    return all(a == b for a, b in report.values()), report


def cmd_verify(args) -> int:
    if not Path(args.record).is_file():
        raise ConfigError(f"record not found: {args.record}")
    ok, report = verify_record(args.record)
    print(json.dumps({"match": ok, **{k: list(v) for k, v in report.items()}}))
    return EXIT_OK if ok else EXIT_MISMATCH


# -- parser -----------------------------------------------------------------

def _add_map_args(p):
    p.add_argument("--a", type=float, default=1.4)
    p.add_argument("--b", type=float, default=0.3)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="henon-extremes", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("orbit", help="write an attractor orbit as CSV")
    p.add_argument("--length", type=int, default=10_000)
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start", type=float, nargs=2, metavar=("X", "Y"),
                   help="explicit seed point instead of a random one")
    p.add_argument("--out")
    _add_map_args(p)
    p.set_defaults(func=cmd_orbit)

    p = sub.add_parser("geometry", help="class map or threshold preimage curves as CSV")
    p.add_argument("--mode", choices=("classmap", "preimages"), required=True)
    p.add_argument("--horizon", type=int, default=4)
    p.add_argument("--depth", type=int, default=4, help="deepest preimage curve")
    p.add_argument("--points", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--theta", type=float, default=0.3)
    p.add_argument("--out")
    _add_map_args(p)
    p.set_defaults(func=cmd_geometry)

    p = sub.add_parser("train", help="train one network and write checkpoint + record")
    p.add_argument("--config", help="JSON file of RunConfig fields")
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("--horizon", type=int)
    p.add_argument("--history-length", type=int)
    p.add_argument("--train-size", type=int)
    p.add_argument("--test-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--layers", type=int, help="use the L-family topology with this L")
    p.add_argument("--misclassified", action="store_true",
                   help="also write misclassified test points")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="re-evaluate a checkpoint on its test corpus")
    p.add_argument("checkpoint")
    p.add_argument("--test-size", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run a sweep described by a JSON spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="re-derive a run record and compare metrics")
    p.add_argument("record")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ClassStarvationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STARVED
    except OrbitEscapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
