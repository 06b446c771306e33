"""Balanced corpora of history windows cut from long orbits.

A window ending at orbit index n holds the N points n-(N-1) .. n and is
labelled by whether y at index n+T reaches the threshold. Windows are taken
with stride 1 and accepted in orbit order until each class holds half the
requested size.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import CLASSICAL, DEFAULT_BURN_IN, MapParameters, extend_orbit, random_orbit
from .geometry import DEFAULT_THRESHOLD, Threshold

# Orbit points allowed per requested window before giving up on balance.
DEFAULT_ORBIT_BUDGET_FACTOR = 50


class ClassStarvationError(RuntimeError):
    def __init__(self, label: bool, found: int, needed: int, budget: int):
        self.label = label
        name = "exceedance" if label else "non-exceedance"
        super().__init__(
            f"{name} class starved: {found} of {needed} windows within an orbit "
            f"budget of {budget} points"
        )


@dataclass(frozen=True)
class TrajectoryWindow:
    history: np.ndarray  # (N, 2), oldest point first
    label: bool
    index: int = -1  # orbit index of the final point

    @property
    def final_point(self):
        return self.history[-1]


@dataclass
class Corpus:
    """Windows stored as arrays.

    `indices` are orbit indices of each window's final point. `span` is the
    half-open range of orbit indices touched by the corpus, including the
    histories and the label look-ahead.
    """

    features: np.ndarray  # (n, N, 2) raw coordinates
    labels: np.ndarray  # (n,) bool
    indices: np.ndarray  # (n,) int
    horizon: int
    history_length: int
    seed: int
    span: tuple[int, int]
    balanced: bool = True

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i) -> TrajectoryWindow:
        return TrajectoryWindow(self.features[i], bool(self.labels[i]), int(self.indices[i]))

    @property
    def windows(self) -> list[TrajectoryWindow]:
        return [self[i] for i in range(len(self))]

    def flat(self) -> np.ndarray:
        """Raw (n, 2N) feature matrix, ordered x_{n-N+1}, y_{n-N+1}, ..., x_n, y_n."""
        return self.features.reshape(len(self), -1)

    def class_counts(self) -> tuple[int, int]:
        pos = int(self.labels.sum())
        return len(self) - pos, pos


def build_corpus(
    size: int,
    horizon: int,
    history_length: int,
    params: MapParameters = CLASSICAL,
    threshold: Threshold = DEFAULT_THRESHOLD,
    seed: int = 0,
    *,
    start: int = 0,
    burn_in: int = DEFAULT_BURN_IN,
    orbit_budget: int | None = None,
) -> Corpus:
    """Balanced corpus of `size` windows from the orbit seeded by `seed`.

    Only orbit indices >= `start` are used, which lets a second corpus be
    cut from the same orbit without overlapping the first (see
    `build_train_test`).
    """
    if size < 2 or size % 2:
        raise ValueError("size must be even and >= 2")
    if horizon < 1 or history_length < 1:
        raise ValueError("horizon and history_length must be >= 1")
    half = size // 2
    budget = orbit_budget or DEFAULT_ORBIT_BUDGET_FACTOR * size + history_length + horizon
    first = start + history_length - 1  # earliest admissible final index

    rng = np.random.default_rng(seed)
    chunk = 3 * size + history_length + horizon + 64
    orbit = random_orbit(rng, start + chunk, burn_in, params)
    while True:
        n_final = len(orbit) - horizon - first
        finals = np.arange(first, first + max(n_final, 0))
        lab = threshold.exceeded(orbit.y[finals + horizon])
        pos_rank = np.cumsum(lab)
        neg_rank = np.cumsum(~lab)
        accept = np.where(lab, pos_rank <= half, neg_rank <= half)
        n_pos = min(int(pos_rank[-1]) if len(finals) else 0, half)
        n_neg = min(int(neg_rank[-1]) if len(finals) else 0, half)
        if n_pos == half and n_neg == half:
            break
        used = len(orbit) - start
        if used >= budget:
            starved = (half - n_pos) >= (half - n_neg)
            raise ClassStarvationError(starved, n_pos if starved else n_neg, half, budget)
        orbit = extend_orbit(orbit, min(chunk, budget - used))

    idx = finals[accept]
    offsets = np.arange(-(history_length - 1), 1)
    feats = orbit.points[idx[:, None] + offsets[None, :]]
    return Corpus(
        features=feats,
        labels=lab[accept].copy(),
        indices=idx,
        horizon=horizon,
        history_length=history_length,
        seed=seed,
        span=(int(idx.min()) - (history_length - 1), int(idx.max()) + horizon + 1),
    )


def build_train_test(
    train_size: int,
    test_size: int,
    horizon: int,
    history_length: int,
    params: MapParameters = CLASSICAL,
    threshold: Threshold = DEFAULT_THRESHOLD,
    seed: int = 0,
) -> tuple[Corpus, Corpus]:
    """Training and test corpora from disjoint segments of one orbit."""
    train = build_corpus(train_size, horizon, history_length, params, threshold, seed)
    test = build_corpus(test_size, horizon, history_length, params, threshold, seed,
                        start=train.span[1])
    return train, test


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        if np.any(~(self.scale > 0)):
            raise ValueError("standardizer scale must be positive")

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale

    def inverse_transform(self, Z: np.ndarray) -> np.ndarray:
        return Z * self.scale + self.mean

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["scale"], dtype=np.float64))


def fit_standardizer(corpus: Corpus) -> Standardizer:
    if len(corpus) == 0:
        raise ValueError("cannot fit a standardizer on an empty corpus")
    X = corpus.flat()
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    if np.any(scale == 0):
        bad = np.flatnonzero(scale == 0).tolist()
        raise ValueError(f"zero variance in feature(s) {bad}; degenerate corpus")
    return Standardizer(mean, scale)


def vectorize(window: TrajectoryWindow, std: Standardizer) -> np.ndarray:
    v = np.asarray(window.history, dtype=np.float64).reshape(-1)
    if v.shape != std.mean.shape:
        raise ValueError(f"window has {v.size} features, standardizer expects {std.mean.size}")
    return std.transform(v)


def unflatten(vector: np.ndarray, history_length: int) -> np.ndarray:
    return np.asarray(vector).reshape(history_length, 2)


def write_corpus_csv(corpus: Corpus, path) -> None:
    N = corpus.history_length
    cols = [f"{c}{k}" for k in range(N) for c in ("x", "y")]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "horizon", "N", *cols, "label"])
        for row, lab in zip(corpus.flat(), corpus.labels):
            w.writerow([corpus.seed, corpus.horizon, N, *map(repr, row.tolist()), int(lab)])
