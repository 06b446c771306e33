"""Hénon map iteration, its inverse, and orbit generation on the attractor.

The map is

    x' = 1 - a x**2 + y
    y' = b x

with the classical parameters a = 1.4, b = 0.3. Scalar and array code paths
evaluate the same floating point operations in the same order, so labels
computed along an orbit agree bit for bit with labels computed by iterating
single points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

# Published topological entropy of the classical Hénon map; used as the
# reference rate for the scaling fits, never recomputed.
TOPOLOGICAL_ENTROPY = 0.465

DEFAULT_BURN_IN = 1000
SEED_BOX = 0.1
MAX_SEED_RETRIES = 100


class OrbitEscapeError(ArithmeticError):
    """An iterate left the basin of attraction and became non-finite."""


@dataclass(frozen=True)
class MapParameters:
    a: float = 1.4
    b: float = 0.3

    def __post_init__(self):
        if not self.b != 0.0:
            raise ValueError("b must be non-zero, the inverse map divides by b")
        if not self.a > 0.0:
            raise ValueError("a must be positive")


CLASSICAL = MapParameters()


class StatePoint(NamedTuple):
    x: float
    y: float


def forward(p: StatePoint, params: MapParameters = CLASSICAL) -> StatePoint:
    x, y = p
    nx = 1.0 - params.a * x * x + y
    ny = params.b * x
    if not (math.isfinite(nx) and math.isfinite(ny)):
        raise OrbitEscapeError(f"forward image of {p} is not finite")
    return StatePoint(nx, ny)


def inverse(p: StatePoint, params: MapParameters = CLASSICAL) -> StatePoint:
    x, y = p
    px = y / params.b
    py = x - 1.0 + params.a * y * y / (params.b * params.b)
    return StatePoint(px, py)


def forward_array(x: np.ndarray, y: np.ndarray, params: MapParameters = CLASSICAL):
    """Vectorised `forward`; no escape check, non-finite values propagate."""
    return 1.0 - params.a * x * x + y, params.b * x


def inverse_array(x: np.ndarray, y: np.ndarray, params: MapParameters = CLASSICAL):
    return y / params.b, x - 1.0 + params.a * y * y / (params.b * params.b)


def iterate_array(x, y, steps: int, params: MapParameters = CLASSICAL):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(steps):
            x, y = forward_array(x, y, params)
    return x, y


def fixed_points(params: MapParameters = CLASSICAL) -> tuple[StatePoint, StatePoint]:
    """Both fixed points, the one on the attractor first.

    Solves a x**2 + (1 - b) x - 1 = 0.
    """
    a, b = params.a, params.b
    disc = math.sqrt((1.0 - b) ** 2 + 4.0 * a)
    x_plus = ((b - 1.0) + disc) / (2.0 * a)
    x_minus = ((b - 1.0) - disc) / (2.0 * a)
    return StatePoint(x_plus, b * x_plus), StatePoint(x_minus, b * x_minus)


@dataclass(frozen=True)
class Orbit:
    """Consecutive iterates stored as an (n, 2) array of (x, y) rows."""

    points: np.ndarray
    burn_in: int
    params: MapParameters = CLASSICAL

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, i: int) -> StatePoint:
        x, y = self.points[i]
        return StatePoint(float(x), float(y))

    @property
    def x(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def last(self) -> StatePoint:
        return self[len(self) - 1]


def _iterate_scalar(x: float, y: float, n: int, a: float, b: float, out=None):
    # Plain float loop: identical arithmetic to forward(), far cheaper per step.
    for i in range(n):
        x, y = 1.0 - a * x * x + y, b * x
        if out is not None:
            out[i, 0] = x
            out[i, 1] = y
    return x, y


def generate_orbit(
    seed_point: StatePoint,
    length: int,
    burn_in: int = DEFAULT_BURN_IN,
    params: MapParameters = CLASSICAL,
) -> Orbit:
    """Iterate `burn_in + length` times and keep the last `length` iterates.

    The seed point itself is not part of the orbit. Raises OrbitEscapeError
    if any kept or discarded iterate is non-finite.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    x, y = float(seed_point[0]), float(seed_point[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise OrbitEscapeError(f"seed point {seed_point} is not finite")
    x, y = _iterate_scalar(x, y, burn_in, params.a, params.b)
    if not (math.isfinite(x) and math.isfinite(y)):
        raise OrbitEscapeError(f"orbit from {seed_point} escaped during burn-in")
    out = np.empty((length, 2), dtype=np.float64)
    _iterate_scalar(x, y, length, params.a, params.b, out)
    if not np.isfinite(out).all():
        raise OrbitEscapeError(f"orbit from {seed_point} escaped")
    return Orbit(out, burn_in, params)


def extend_orbit(orbit: Orbit, length: int) -> Orbit:
    """Continue `orbit` by `length` further iterates."""
    tail = generate_orbit(orbit.last, length, burn_in=0, params=orbit.params)
    return Orbit(np.concatenate([orbit.points, tail.points]), orbit.burn_in, orbit.params)


def random_orbit(
    rng: np.random.Generator,
    length: int,
    burn_in: int = DEFAULT_BURN_IN,
    params: MapParameters = CLASSICAL,
    max_retries: int = MAX_SEED_RETRIES,
) -> Orbit:
    """Orbit from a seed drawn uniformly in [-0.1, 0.1]**2, retrying escaped seeds."""
    for _ in range(max_retries):
        seed = StatePoint(*rng.uniform(-SEED_BOX, SEED_BOX, size=2))
        try:
            return generate_orbit(seed, length, burn_in, params)
        except OrbitEscapeError:
            continue
    raise OrbitEscapeError(f"no bounded orbit after {max_retries} seed points")
