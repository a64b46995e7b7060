import math
import os
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qdlab import GridFunction, GridSpec, Measure, read_gf1, write_gf1
from qdlab._obstacle import neg_laplacian
from qdlab.potential import (discrete_potential, fundamental_solution, green_potential, newtonian_potential,
                             unit_ball_volume)


@pytest.mark.parametrize("r, n, want", [(1.0, 2, 0.0), (math.e, 2, -1 / (2 * math.pi)), (1.0, 3, 1 / (4 * math.pi))])
def test_fundamental_solution_values(r, n, want):
    assert fundamental_solution(r, n) == pytest.approx(want, abs=1e-15)


def test_fundamental_solution_rejects_nonpositive_radius():
    with pytest.raises(ValueError):
        fundamental_solution(0.0)


@pytest.mark.parametrize("n, want", [(2, math.pi), (3, 4 * math.pi / 3), (4, math.pi ** 2 / 2)])
def test_unit_ball_volume(n, want):
    assert unit_ball_volume(n) == pytest.approx(want, rel=1e-14)


def test_point_potential_matches_log():
    spec = GridSpec.around(0, 0, 1.0, 1 / 16)
    U = newtonian_potential(Measure.point(0, 0, 1.0), spec)
    X, Y = spec.mesh()
    r = np.hypot(X, Y)
    far = r >= spec.h
    assert np.allclose(U.values[far], -np.log(r[far]) / (2 * math.pi), atol=1e-13)


def test_zero_measure_potential_is_zero():
    spec = GridSpec.around(0, 0, 1.0, 1 / 8)
    assert not newtonian_potential(Measure(), spec).values.any()


def test_disk_potential_laplacian_is_minus_density():
    h = 1 / 32
    spec = GridSpec.around(0, 0, 1.5, h)
    X, Y = spec.mesh()
    mu = Measure(density=GridFunction(spec, (np.hypot(X, Y) <= 1).astype(float)))
    U = newtonian_potential(mu, spec)
    inner = np.hypot(X, Y) < 0.5
    assert np.abs(neg_laplacian(U.values, h)[inner] - 1.0).max() < 20 * h


def test_discrete_potential_solves_five_point_equation():
    h = 1 / 16
    spec = GridSpec.around(0, 0, 1.0, h)
    X, Y = spec.mesh()
    d = np.where(np.hypot(X, Y) < 0.4, 2.0, 0.0)
    U = discrete_potential(Measure(density=GridFunction(spec, d)), spec).values
    res = neg_laplacian(U, h)[1:-1, 1:-1] - d[1:-1, 1:-1]
    assert np.abs(res).max() < 1e-8


def test_green_potential_centre_value():
    h = 1 / 64
    spec = GridSpec.around(0, 0, 1.2, h)
    X, Y = spec.mesh()
    G = green_potential(np.hypot(X, Y) < 1, spec)
    j, i = spec.nearest(0, 0)
    assert G.values[j, i] == pytest.approx(0.25, abs=2 * h)


def test_green_potential_empty_set_errors():
    spec = GridSpec.around(0, 0, 1.0, 1 / 8)
    with pytest.raises(ValueError):
        green_potential(np.zeros(spec.shape, bool), spec)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_green_potential_monotone_in_set(seed):
    rng = np.random.default_rng(seed)
    spec = GridSpec.around(0, 0, 1.0, 1 / 16)
    A2 = np.zeros(spec.shape, bool)
    A2[2:-2, 2:-2] = rng.random((spec.ny - 4, spec.nx - 4)) < 0.8
    A1 = A2 & (rng.random(spec.shape) < 0.7)
    if not A1.any():
        return
    G1 = green_potential(A1, spec).values
    G2 = green_potential(A2, spec).values
    assert (G1 <= G2 + 1e-12).all()


@settings(max_examples=20, deadline=None)
@given(st.integers(3, 12), st.integers(3, 12), st.floats(-5, 5), st.floats(-5, 5), st.floats(1e-3, 1.0))
def test_gf1_round_trip(nx, ny, x0, y0, h):
    spec = GridSpec(x0, y0, nx, ny, h)
    vals = np.random.default_rng(nx * 31 + ny).standard_normal(spec.shape)
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "f.gf1")
        write_gf1(p, GridFunction(spec, vals))
        back = read_gf1(p)
    assert back.spec == spec
    assert np.array_equal(back.values, vals)
