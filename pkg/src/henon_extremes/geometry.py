"""Exceedance labels and the geometry behind them.

A point is labelled True at horizon T when its T-th forward iterate has
y >= theta. The set of such points is bounded by preimages of the line
y = theta: the first preimage is the vertical line x = theta / b, the second
a parabola, and deeper preimages fold ever more often across the attractor.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .dynamics import (
    CLASSICAL,
    DEFAULT_BURN_IN,
    MapParameters,
    StatePoint,
    forward,
    inverse_array,
    iterate_array,
    random_orbit,
)

# Attractor extent used to bound curve sampling and the plotting viewport.
ATTRACTOR_X_EXTENT = (-1.5, 1.5)
ATTRACTOR_Y_EXTENT = (-0.45, 0.45)

# Intermediate iterates beyond this magnitude belong to escaping orbits and
# cannot return to the bounded threshold segment.
_ESCAPE_BOUND = 10.0


@dataclass(frozen=True)
class Threshold:
    theta: float = 0.3

    def exceeded(self, y):
        return y >= self.theta


DEFAULT_THRESHOLD = Threshold()


def oracle_label(
    p: StatePoint,
    horizon: int,
    threshold: Threshold = DEFAULT_THRESHOLD,
    params: MapParameters = CLASSICAL,
) -> bool:
    """True iff the point `horizon` steps ahead has y >= theta.

    Intermediate crossings are ignored on purpose.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    for _ in range(horizon):
        p = forward(p, params)
    return bool(threshold.exceeded(p.y))


def oracle_labels(xy: np.ndarray, horizon: int, threshold=DEFAULT_THRESHOLD,
                  params=CLASSICAL) -> np.ndarray:
    """Vectorised oracle_label over an (n, 2) array of points."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    xy = np.asarray(xy, dtype=np.float64)
    _, y = iterate_array(xy[..., 0], xy[..., 1], horizon, params)
    return threshold.exceeded(y)


@dataclass
class PreimageCurve:
    """Sampled polyline of points mapped onto y = theta after `depth` steps.

    The curve is clipped to a viewport, so it is stored as one or more
    branches. `params_along` holds, per branch, the y coordinate on the
    depth-1 line that each point descends from.
    """

    depth: int
    branches: list[np.ndarray]
    params_along: list[np.ndarray] = field(default_factory=list)
    truncated: bool = False

    @property
    def points(self) -> np.ndarray:
        if not self.branches:
            return np.empty((0, 2))
        return np.concatenate(self.branches)


def threshold_preimage_line(
    params: MapParameters = CLASSICAL,
    threshold: Threshold = DEFAULT_THRESHOLD,
    samples: int = 201,
    y_extent: tuple[float, float] = ATTRACTOR_Y_EXTENT,
) -> PreimageCurve:
    """Depth-1 preimage: the vertical line x = theta / b."""
    s = np.linspace(*y_extent, samples)
    pts = np.column_stack([np.full_like(s, threshold.theta / params.b), s])
    return PreimageCurve(1, [pts], [s])


def _descend(s: np.ndarray, depth: int, params: MapParameters, threshold: Threshold):
    """Map line parameters s to their depth-`depth` preimages.

    Returns the points and a mask of those whose intermediate preimages all
    stayed within the escape bound.
    """
    x = np.full_like(s, threshold.theta / params.b)
    y = s.copy()
    ok = np.ones(s.shape, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(depth - 1):
            x, y = inverse_array(x, y, params)
            ok &= (np.abs(x) <= _ESCAPE_BOUND) & (np.abs(y) <= _ESCAPE_BOUND)
    return np.column_stack([x, y]), ok


def preimage_curves(
    max_depth: int,
    params: MapParameters = CLASSICAL,
    threshold: Threshold = DEFAULT_THRESHOLD,
    samples_per_curve: int = 2001,
    *,
    viewport: tuple[tuple[float, float], tuple[float, float]] = (
        ATTRACTOR_X_EXTENT, ATTRACTOR_Y_EXTENT),
    segment_cap: float = 0.01,
    resample_budget: int = 200_000,
) -> list[PreimageCurve]:
    """Preimage curves of the threshold line for depths 1..max_depth.

    Every sample is an exact inverse iterate of a point on the depth-1 line
    (no interpolation). Segments whose image is longer than `segment_cap`
    are split at the parameter midpoint until the cap holds or the sample
    budget runs out, in which case the curve is flagged as truncated.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    (x0, x1), (y0, y1) = viewport
    base = np.linspace(*ATTRACTOR_Y_EXTENT, samples_per_curve)
    curves = []
    for depth in range(1, max_depth + 1):
        s = base
        truncated = False
        while True:
            pts, ok = _descend(s, depth, params, threshold)
            inside = ok & (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & \
                (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
            seg = np.hypot(*(np.diff(pts, axis=0).T))
            # refine where either end is visible and the segment is too long
            # or crosses the viewport edge
            keep = (inside[:-1] | inside[1:]) & ok[:-1] & ok[1:]
            refine = keep & ((seg > segment_cap) | (inside[:-1] != inside[1:]))
            refine &= np.diff(s) > 1e-12
            if not refine.any():
                break
            if len(s) + refine.sum() > resample_budget:
                truncated = True
                break
            mids = 0.5 * (s[:-1][refine] + s[1:][refine])
            s = np.sort(np.concatenate([s, mids]))
        if truncated:
            warnings.warn(f"depth-{depth} preimage curve truncated at resample budget",
                          RuntimeWarning, stacklevel=2)
        branches, along = [], []
        edges = np.flatnonzero(np.diff(np.concatenate([[0], inside.astype(np.int8), [0]])))
        for start, stop in zip(edges[::2], edges[1::2]):
            branches.append(pts[start:stop])
            along.append(s[start:stop])
        curves.append(PreimageCurve(depth, branches, along, truncated))
    return curves


@dataclass
class ClassMap:
    """Attractor samples and their oracle labels at one horizon."""

    horizon: int
    points: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    @property
    def samples(self):
        return [(StatePoint(float(x), float(y)), bool(lab))
                for (x, y), lab in zip(self.points, self.labels)]


def class_map(
    horizon: int,
    n_points: int,
    params: MapParameters = CLASSICAL,
    threshold: Threshold = DEFAULT_THRESHOLD,
    seed: int = 0,
    burn_in: int = DEFAULT_BURN_IN,
) -> ClassMap:
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    orbit = random_orbit(np.random.default_rng(seed), n_points + horizon, burn_in, params)
    # Looking ahead along the orbit is the oracle itself: the orbit was built
    # with the same arithmetic as forward().
    labels = threshold.exceeded(orbit.y[horizon:])
    return ClassMap(horizon, orbit.points[:n_points].copy(), labels)


def count_label_changes(cmap: ClassMap) -> int:
    """Number of label flips when the samples are ordered by x.

    A proxy for the number of disjoint label intervals cut into the attractor.
    """
    order = np.argsort(cmap.points[:, 0], kind="stable")
    lab = cmap.labels[order]
    return int(np.count_nonzero(lab[1:] != lab[:-1]))


def nearest_opposite_distance(query: np.ndarray, query_labels: np.ndarray,
                              reference: ClassMap) -> np.ndarray:
    """Distance from each query point to the closest reference point of the
    other class."""
    query = np.asarray(query, dtype=np.float64).reshape(-1, 2)
    query_labels = np.asarray(query_labels, dtype=bool)
    out = np.full(len(query), np.inf)
    for cls in (False, True):
        ref = reference.points[reference.labels != cls]
        sel = query_labels == cls
        if sel.any() and len(ref):
            out[sel] = cKDTree(ref).query(query[sel])[0]
    return out


def write_class_map_csv(cmap: ClassMap, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "label"])
        for (x, y), lab in zip(cmap.points, cmap.labels):
            w.writerow([repr(float(x)), repr(float(y)), int(lab)])


def write_preimages_csv(curves: list[PreimageCurve], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "depth", "branch"])
        for curve in curves:
            for b, branch in enumerate(curve.branches):
                for x, y in branch:
                    w.writerow([repr(float(x)), repr(float(y)), curve.depth, b])
