"""Training runs and the accuracy sweeps built from them.

A sweep is a grid of independent cells (horizon, training size, topology,
history length, repeat). Each cell derives its own seed from the master seed
and its coordinates, builds fresh train/test corpora from one orbit, trains,
and records the test accuracy. Crossing times (the largest horizon at which
the mean accuracy stays at or above 80%) are then fitted with exponentials
against training size or parameter count.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .dataset import (
    ClassStarvationError,
    Corpus,
    Standardizer,
    build_train_test,
    fit_standardizer,
)
from .dynamics import TOPOLOGICAL_ENTROPY, MapParameters, StatePoint
from .geometry import ClassMap, Threshold, class_map, nearest_opposite_distance
from .neuralnet import (
    NetworkParameters,
    NetworkTopology,
    TrainingConfig,
    TrainingDivergedError,
    count_parameters,
    evaluate,
    predict,
    save_checkpoint,
    train,
)
from .records import RunRecord

ACCURACY_LEVEL = 0.80

PROFILES = {
    "paper": {"epochs": 5000, "test_size": 1_000_000},
    "desk": {"epochs": 500, "test_size": 100_000},
}


def topology_family(L: int, history_length: int = 10) -> NetworkTopology:
    """(2N, 32 x L, 16, 7, 2): L full-width layers, then a short taper."""
    if L < 1:
        raise ValueError("L must be >= 1")
    return NetworkTopology((2 * history_length, *([32] * L), 16, 7, 2))


@dataclass
class RunConfig:
    """Everything needed to reproduce one training run bit for bit."""

    horizon: int = 1
    history_length: int = 10
    train_size: int = 10_000
    test_size: int = 1_000_000
    epochs: int = 5000
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    use_bias: bool = True
    seed: int = 0
    # None -> baseline topology, int -> L-family member; `widths` overrides both
    layers: int | None = None
    widths: list[int] | None = None
    a: float = 1.4
    b: float = 0.3
    theta: float = 0.3
    init: str = "glorot_uniform"

    @classmethod
    def from_dict(cls, d: Mapping, profile: str | None = None) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known - {"profile"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        base = dict(PROFILES[profile]) if profile else {}
        base.update({k: v for k, v in d.items() if k in known})
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def map_params(self) -> MapParameters:
        return MapParameters(self.a, self.b)

    @property
    def threshold(self) -> Threshold:
        return Threshold(self.theta)

    def topology(self) -> NetworkTopology:
        if self.widths is not None:
            return NetworkTopology(tuple(self.widths))
        if self.layers is not None:
            return topology_family(self.layers, self.history_length)
        return NetworkTopology.baseline(self.history_length)

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(
            batch_size=self.batch_size, epochs=self.epochs, seed=self.seed,
            learning_rate=self.learning_rate, beta1=self.beta1, beta2=self.beta2,
            eps=self.eps, use_bias=self.use_bias, init=self.init,
        )


@dataclass
class TrainingOutcome:
    config: RunConfig
    params: NetworkParameters
    standardizer: Standardizer
    accuracy: float
    loss_history: list[float]
    train: Corpus
    test: Corpus

    @property
    def train_accuracy(self) -> float:
        return evaluate(self.params, self.train, self.standardizer)

    def record(self, artifacts: dict | None = None) -> RunRecord:
        return RunRecord.create(
            "train",
            self.config.to_dict(),
            metrics={
                "accuracy": self.accuracy,
                "final_loss": self.loss_history[-1] if self.loss_history else None,
                "n_params": len(self.params),
            },
            artifacts=artifacts or {},
            extra={"standardizer": self.standardizer.to_dict()},
        )

    def save(self, directory, stem: str = "run") -> RunRecord:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        ckpt = directory / f"{stem}.ckpt"
        save_checkpoint(ckpt, self.params, {
            "seed": self.config.seed,
            "config": self.config.to_dict(),
            "standardizer": self.standardizer.to_dict(),
        })
        rec = self.record({"checkpoint": ckpt.name})
        rec.save(directory / f"{stem}.record.json")
        return rec


def run_training(config: RunConfig) -> TrainingOutcome:
    """Build corpora, standardise on the training split, train and evaluate."""
    train_corpus, test_corpus = build_train_test(
        config.train_size, config.test_size, config.horizon, config.history_length,
        config.map_params, config.threshold, config.seed,
    )
    std = fit_standardizer(train_corpus)
    with threadpool_limits(limits=1):
        params, history = train(config.topology(), std.transform(train_corpus.flat()),
                                train_corpus.labels, config.training_config())
        acc = evaluate(params, test_corpus, std)
    return TrainingOutcome(config, params, std, acc, history, train_corpus, test_corpus)


# -- sweeps -----------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    horizons: tuple[int, ...]
    training_sizes: tuple[int, ...] = (1000, 5000, 10_000, 50_000)
    repeats: int = 3
    layer_counts: tuple[int | None, ...] = (None,)  # None is the baseline topology
    history_lengths: tuple[int, ...] = (10,)
    test_size: int = 100_000
    epochs: int = 500
    batch_size: int = 128
    learning_rate: float = 1e-3
    use_bias: bool = True
    init: str = "glorot_uniform"
    master_seed: int = 0

    def __post_init__(self):
        for name in ("horizons", "training_sizes", "layer_counts", "history_lengths"):
            value = tuple(getattr(self, name))
            if not value:
                raise ValueError(f"{name} must not be empty")
            object.__setattr__(self, name, value)
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SweepSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown sweep keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def cells(self) -> list["Cell"]:
        return [Cell(T, nt, L, N, r) for T, nt, L, N, r in itertools.product(
            self.horizons, self.training_sizes, self.layer_counts,
            self.history_lengths, range(self.repeats))]


@dataclass(frozen=True)
class Cell:
    horizon: int
    train_size: int
    layers: int | None
    history_length: int
    repeat: int

    @property
    def key(self) -> str:
        L = "base" if self.layers is None else self.layers
        return f"T{self.horizon}_NT{self.train_size}_L{L}_N{self.history_length}_r{self.repeat}"


def cell_seed(master_seed: int, cell: Cell) -> int:
    """Seed depending only on the master seed and the cell coordinates.

    Data and weight initialisation share it, so both vary together per repeat.
    """
    L = 0 if cell.layers is None else cell.layers
    ss = np.random.SeedSequence([master_seed, cell.horizon, cell.train_size, L,
                                 cell.history_length, cell.repeat])
    return int(ss.generate_state(1, np.uint32)[0])


def cell_config(spec: SweepSpec, cell: Cell) -> RunConfig:
    return RunConfig(
        horizon=cell.horizon, history_length=cell.history_length,
        train_size=cell.train_size, test_size=spec.test_size, epochs=spec.epochs,
        batch_size=spec.batch_size, learning_rate=spec.learning_rate,
        use_bias=spec.use_bias, seed=cell_seed(spec.master_seed, cell), layers=cell.layers,
        init=spec.init,
    )


@dataclass
class CellResult:
    cell: Cell
    seed: int
    accuracy: float
    status: str  # "ok", "diverged" or "starved"
    n_params: int
    message: str = ""
    record: RunRecord | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def run_cell(spec: SweepSpec, cell: Cell, out_dir=None) -> CellResult:
    config = cell_config(spec, cell)
    n_params = count_parameters(config.topology(), config.use_bias)
    try:
        outcome = run_training(config)
    except ClassStarvationError as exc:
        return CellResult(cell, config.seed, math.nan, "starved", n_params, str(exc))
    except TrainingDivergedError as exc:
        return CellResult(cell, config.seed, math.nan, "diverged", n_params, str(exc))
    if out_dir is not None:
        rec = outcome.save(Path(out_dir) / "cells", cell.key)
    else:
        rec = outcome.record()
    return CellResult(cell, config.seed, outcome.accuracy, "ok", n_params, record=rec)


def _run_cell_job(args):
    return run_cell(*args)


@dataclass
class SweepResult:
    spec: SweepSpec
    results: list[CellResult]

    def select(self, **axes) -> list[CellResult]:
        return [r for r in self.results
                if all(getattr(r.cell, k) == v for k, v in axes.items())]

    def curve_keys(self) -> list[tuple[int, int | None, int]]:
        s = self.spec
        return list(itertools.product(s.training_sizes, s.layer_counts, s.history_lengths))

    def cell_stats(self, **axes) -> tuple[float, float, int]:
        """Mean, standard deviation and count of successful repeats."""
        accs = [r.accuracy for r in self.select(**axes) if r.ok]
        if not accs:
            return math.nan, math.nan, 0
        return float(np.mean(accs)), float(np.std(accs)), len(accs)

    def curve(self, train_size=None, layers="_", history_length=None) -> dict[int, float]:
        """Mean accuracy against horizon for one (N_T, L, N) combination.

        Axes left unspecified must have a single value in the spec.
        """
        s = self.spec
        if train_size is None:
            (train_size,) = s.training_sizes
        if layers == "_":
            (layers,) = s.layer_counts
        if history_length is None:
            (history_length,) = s.history_lengths
        out = {}
        for T in s.horizons:
            mean, _, n = self.cell_stats(horizon=T, train_size=train_size, layers=layers,
                                         history_length=history_length)
            if n:
                out[T] = mean
        return out

    def crossing_times(self, level: float = ACCURACY_LEVEL) -> dict:
        return {key: crossing_time(self.curve(*key), level) for key in self.curve_keys()}

    def rows(self) -> list[dict]:
        rows = []
        for r in self.results:
            c = r.cell
            rows.append({
                "T": c.horizon, "N_T": c.train_size,
                "L": "baseline" if c.layers is None else c.layers,
                "N": c.history_length, "repeat": c.repeat, "seed": r.seed,
                "n_params": r.n_params,
                "accuracy": repr(r.accuracy), "status": r.status,
            })
        rows.sort(key=lambda d: (d["T"], d["N_T"], str(d["L"]), d["N"], d["repeat"]))
        return rows

    def write_csv(self, path) -> None:
        rows = self.rows()
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)

    def write_curves_csv(self, path) -> None:
        """Mean/spread per (N_T, L, N, T): the data behind accuracy-vs-horizon plots."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N_T", "L", "N", "T", "mean", "std", "n_ok"])
            for nt, L, N in self.curve_keys():
                for T in self.spec.horizons:
                    mean, std, n = self.cell_stats(horizon=T, train_size=nt, layers=L,
                                                   history_length=N)
                    w.writerow([nt, "baseline" if L is None else L, N, T, mean, std, n])

    def summary(self, level: float = ACCURACY_LEVEL) -> dict:
        crossings = self.crossing_times(level)
        out = {
            "level": level,
            "topological_entropy": TOPOLOGICAL_ENTROPY,
            "crossing_times": [
                {"N_T": nt, "L": L, "N": N, "T_star": t,
                 "n_params": count_parameters(
                     RunConfig(layers=L, history_length=N).topology(), self.spec.use_bias)}
                for (nt, L, N), t in crossings.items()
            ],
            "failed_cells": [r.cell.key for r in self.results if not r.ok],
            "fits": {},
        }
        for name, fitter in (("training_size", training_size_fit),
                             ("parameter_count", parameter_count_fit)):
            try:
                out["fits"][name] = fitter(self, level).to_dict()
            except ValueError as exc:
                out["fits"][name] = {"error": str(exc)}
        return out


def run_sweep(spec: SweepSpec, jobs: int = 1, out_dir=None) -> SweepResult:
    """Run every cell; results come back in cell order whatever `jobs` is."""
    cells = spec.cells()
    args = [(spec, c, out_dir) for c in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_job, args))
    else:
        results = [run_cell(*a) for a in args]
    result = SweepResult(spec, results)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.write_csv(out / "sweep.csv")
        result.write_curves_csv(out / "curves.csv")
        (out / "summary.json").write_text(json.dumps(result.summary(), indent=2, default=_json_default))
    return result


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o))


def accuracy_curve(spec: SweepSpec, jobs: int = 1, out_dir=None) -> SweepResult:
    """Accuracy against horizon for each training size (baseline topology)."""
    return run_sweep(spec, jobs, out_dir)


# -- crossing times and fits ------------------------------------------------

def crossing_time(curve: Mapping[int, float], level: float = ACCURACY_LEVEL) -> int | None:
    """Largest horizon whose mean accuracy is >= level.

    None when the curve never drops below the level within the swept range
    or never reaches it at all.
    """
    if not curve:
        return None
    above = [T for T, acc in curve.items() if acc >= level]
    if not above or len(above) == len(curve):
        return None
    return max(above)


@dataclass
class CrossingFit:
    """value ~ prefactor * exp(rate * T_star), by least squares on log(value)."""

    prefactor: float
    rate: float
    points: list[tuple[float, float]]
    level: float = ACCURACY_LEVEL
    h: float = TOPOLOGICAL_ENTROPY

    @property
    def rate_over_h(self) -> float:
        return self.rate / self.h

    @property
    def rate_over_2h(self) -> float:
        return self.rate / (2 * self.h)

    def predict(self, T) -> np.ndarray:
        return self.prefactor * np.exp(self.rate * np.asarray(T, dtype=float))

    def to_dict(self) -> dict:
        return {
            "prefactor": self.prefactor, "rate": self.rate, "level": self.level,
            "points": [list(p) for p in self.points], "h": self.h, "2h": 2 * self.h,
            "rate_over_h": self.rate_over_h, "rate_over_2h": self.rate_over_2h,
        }


def fit_exponential(points: Iterable[tuple[float, float]],
                    level: float = ACCURACY_LEVEL) -> CrossingFit:
    pts = [(float(t), float(v)) for t, v in points]
    if len(pts) < 3:
        raise ValueError("an exponential fit needs at least 3 points")
    T = np.array([p[0] for p in pts])
    values = np.array([p[1] for p in pts])
    if np.any(values <= 0):
        raise ValueError("fitted values must be positive")
    if np.ptp(T) == 0:
        raise ValueError("degenerate fit: all crossing times are equal")
    rate, intercept = np.polyfit(T, np.log(values), 1)
    return CrossingFit(float(math.exp(intercept)), float(rate), pts, level)


def _fit_points(result: SweepResult, level, value_of, vary: str):
    pts = []
    for key, t in result.crossing_times(level).items():
        if t is not None:
            pts.append((t, value_of(key)))
    if len({p[1] for p in pts}) < len(pts):
        # several curves share an x value (e.g. more than one history length)
        raise ValueError(f"ambiguous fit: {vary} is not the only varying axis")
    return pts


def training_size_fit(result: SweepResult, level: float = ACCURACY_LEVEL) -> CrossingFit:
    """N_T against crossing time, one point per training size."""
    s = result.spec
    if len(s.layer_counts) != 1 or len(s.history_lengths) != 1:
        raise ValueError("training-size fit needs a single topology and history length")
    pts = _fit_points(result, level, lambda key: key[0], "N_T")
    return fit_exponential(pts, level)


def parameter_count_fit(result: SweepResult, level: float = ACCURACY_LEVEL) -> CrossingFit:
    """Parameter count against crossing time, one point per topology."""
    s = result.spec
    if len(s.training_sizes) != 1 or len(s.history_lengths) != 1:
        raise ValueError("parameter-count fit needs a single training size and history length")

    def n_params(key):
        return count_parameters(RunConfig(layers=key[1], history_length=key[2]).topology(),
                                s.use_bias)
    return fit_exponential(_fit_points(result, level, n_params, "L"), level)


def topology_sweep(L_values: Sequence[int], horizons: Sequence[int], train_size: int = 100_000,
                   jobs: int = 1, out_dir=None, **spec_kw):
    """Accuracy over (L, T) at fixed N_T, plus the N_p-vs-crossing-time fit."""
    spec = SweepSpec(horizons=tuple(horizons), training_sizes=(train_size,),
                     layer_counts=tuple(L_values), **spec_kw)
    result = run_sweep(spec, jobs, out_dir)
    try:
        fit = parameter_count_fit(result)
    except ValueError:
        fit = None
    return result, fit


def history_sweep(N_values: Sequence[int], horizons: Sequence[int],
                  training_sizes: Sequence[int], layers: int | None = None,
                  jobs: int = 1, out_dir=None, **spec_kw) -> SweepResult:
    """Accuracy over (N, T, N_T) with the input layer resized to 2N."""
    if min(N_values) < 1:
        raise ValueError("history lengths must be >= 1")
    spec = SweepSpec(horizons=tuple(horizons), training_sizes=tuple(training_sizes),
                     layer_counts=(layers,), history_lengths=tuple(N_values), **spec_kw)
    return run_sweep(spec, jobs, out_dir)


# -- misclassification geometry ---------------------------------------------

@dataclass
class MisclassificationMap:
    """Leading points (x_n, y_n) of misclassified test windows."""

    points: np.ndarray
    predicted: np.ndarray
    actual: np.ndarray
    horizon: int
    n_total: int
    background: ClassMap | None = None

    def __len__(self) -> int:
        return len(self.points)

    @property
    def entries(self) -> list[tuple[StatePoint, bool, bool]]:
        return [(StatePoint(float(x), float(y)), bool(p), bool(a))
                for (x, y), p, a in zip(self.points, self.predicted, self.actual)]

    @property
    def false_positives(self) -> np.ndarray:
        return self.points[self.predicted & ~self.actual]

    @property
    def false_negatives(self) -> np.ndarray:
        return self.points[~self.predicted & self.actual]

    @property
    def error_rate(self) -> float:
        return len(self) / self.n_total

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "predicted", "actual", "kind"])
            for (x, y), p, a in zip(self.points, self.predicted, self.actual):
                kind = "false_positive" if p else "false_negative"
                w.writerow([repr(float(x)), repr(float(y)), int(p), int(a), kind])


def misclassification_map(params: NetworkParameters, test_corpus: Corpus, std: Standardizer,
                          background_points: int = 0, seed: int = 0,
                          predictions: np.ndarray | None = None) -> MisclassificationMap:
    """Collect misclassified windows; optionally attach an oracle class map."""
    if predictions is None:
        predictions = predict(params, std.transform(test_corpus.flat()))
    predictions = np.asarray(predictions, dtype=bool)
    wrong = predictions != test_corpus.labels
    lead = test_corpus.features[wrong, -1, :]
    background = class_map(test_corpus.horizon, background_points, seed=seed) \
        if background_points else None
    return MisclassificationMap(lead.copy(), predictions[wrong], test_corpus.labels[wrong].copy(),
                                test_corpus.horizon, len(test_corpus), background)


@dataclass
class BoundaryStatistic:
    misclassified_median: float
    random_median: float
    n: int

    @property
    def concentrated(self) -> bool:
        return self.misclassified_median < self.random_median


def boundary_concentration(mmap: MisclassificationMap, reference: ClassMap,
                           rng: np.random.Generator) -> BoundaryStatistic:
    """Compare nearest-opposite-label distances of misclassified points with
    those of an equally sized random attractor sample."""
    if len(mmap) == 0:
        raise ValueError("no misclassified points")
    if reference.horizon != mmap.horizon:
        raise ValueError("reference class map has a different horizon")
    d_wrong = nearest_opposite_distance(mmap.points, mmap.actual, reference)
    pick = rng.choice(len(reference), size=min(len(mmap), len(reference)), replace=False)
    d_rand = nearest_opposite_distance(reference.points[pick], reference.labels[pick], reference)
    return BoundaryStatistic(float(np.median(d_wrong)), float(np.median(d_rand)), len(mmap))
