import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from henon_extremes.dynamics import (
    CLASSICAL,
    MapParameters,
    OrbitEscapeError,
    StatePoint,
    TOPOLOGICAL_ENTROPY,
    extend_orbit,
    fixed_points,
    forward,
    forward_array,
    generate_orbit,
    inverse,
    random_orbit,
)

finite = st.floats(-2.0, 2.0, allow_nan=False)


def test_forward_origin():
    assert forward(StatePoint(0.0, 0.0)) == (1.0, 0.0)


def test_forward_hand_arithmetic():
    # x' = 1 - 1.4 * 1 + 0 = -0.4, y' = 0.3 * 1
    x, y = forward(StatePoint(1.0, 0.0))
    assert x == pytest.approx(-0.4, abs=1e-15)
    assert y == pytest.approx(0.3, abs=1e-15)


def test_inverse_hand_arithmetic():
    assert inverse(StatePoint(1.0, 0.0)) == (0.0, 0.0)


def test_fixed_point_closed_form():
    p, q = fixed_points()
    x_star = ((0.3 - 1) + math.sqrt(0.7 ** 2 + 5.6)) / 2.8
    assert p.x == pytest.approx(0.6313545, abs=1e-7)
    assert p.x == pytest.approx(x_star, rel=1e-15)
    for fp in (p, q):
        assert np.allclose(forward(fp), fp, atol=1e-12, rtol=0)
        assert np.allclose(inverse(fp), fp, atol=1e-12, rtol=0)


@settings(max_examples=300)
@given(finite, finite)
def test_roundtrip_property(x, y):
    p = StatePoint(x, y)
    back = inverse(forward(p))
    assert abs(back.x - x) <= 1e-12 and abs(back.y - y) <= 1e-12


@given(finite, finite)
def test_second_component_is_exactly_b_x(x, y):
    assert forward(StatePoint(x, y)).y == CLASSICAL.b * x


def test_array_path_matches_scalar():
    rng = np.random.default_rng(3)
    xy = rng.uniform(-1.5, 1.5, size=(500, 2))
    nx, ny = forward_array(xy[:, 0], xy[:, 1])
    for (x, y), ax, ay in zip(xy, nx, ny):
        assert forward(StatePoint(x, y)) == (ax, ay)


def test_forward_rejects_escape():
    with pytest.raises(OrbitEscapeError):
        forward(StatePoint(1e200, 0.0))


def test_parameter_validation():
    with pytest.raises(ValueError):
        MapParameters(b=0.0)
    with pytest.raises(ValueError):
        MapParameters(a=-1.0)


def test_two_step_orbit_from_origin():
    orbit = generate_orbit(StatePoint(0.0, 0.0), 2, burn_in=0)
    assert orbit[0] == (1.0, 0.0)
    assert orbit[1].x == pytest.approx(-0.4, abs=1e-15)
    assert orbit[1].y == pytest.approx(0.3, abs=1e-15)


@pytest.mark.parametrize("length,burn_in", [(1, 0), (7, 3), (1000, 1000)])
def test_orbit_length(length, burn_in):
    orbit = generate_orbit(StatePoint(0.05, -0.02), length, burn_in)
    assert len(orbit) == length
    assert orbit.burn_in == burn_in


def test_orbit_consecutive_points_satisfy_map():
    orbit = generate_orbit(StatePoint(0.0, 0.0), 2000, 100)
    for i in range(len(orbit) - 1):
        assert forward(orbit[i]) == orbit[i + 1]


def test_attractor_extent():
    orbit = generate_orbit(StatePoint(0.0, 0.0), 10_000, 1000)
    assert np.all(np.abs(orbit.x) < 1.5)
    assert np.all(np.abs(orbit.y) < 0.45)


def test_long_orbit_stays_finite():
    orbit = generate_orbit(StatePoint(0.01, 0.01), 1_000_000, 1000)
    assert np.isfinite(orbit.points).all()


def test_determinism():
    a = random_orbit(np.random.default_rng(11), 5000)
    b = random_orbit(np.random.default_rng(11), 5000)
    assert np.array_equal(a.points, b.points)


def test_extend_continues_orbit():
    whole = generate_orbit(StatePoint(0.0, 0.0), 300, 10)
    part = extend_orbit(generate_orbit(StatePoint(0.0, 0.0), 100, 10), 200)
    assert np.array_equal(whole.points, part.points)


def test_escaping_seed_raises():
    with pytest.raises(OrbitEscapeError):
        generate_orbit(StatePoint(3.0, 3.0), 10, 100)


def test_entropy_constant():
    assert TOPOLOGICAL_ENTROPY == 0.465
