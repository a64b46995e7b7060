import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qdlab import GridFunction, GridSpec, Measure, mollify, total_mass
from qdlab.measures import ball_criterion, concentration_ok, grid_density

MASS = 4 * math.pi / 9


def test_atom_masses_must_be_positive():
    with pytest.raises(ValueError):
        Measure(((0, 0, 0.0),))


def test_density_must_be_nonnegative():
    spec = GridSpec.around(0, 0, 1, 0.25)
    with pytest.raises(ValueError):
        Measure(density=GridFunction(spec, -np.ones(spec.shape)))


def test_mollified_point_is_uniform_disk():
    h = 1 / 256
    spec = GridSpec.around(0, 0, 0.5, h)
    m = mollify(Measure.point(0, 0, MASS), 0.1, spec)
    d = grid_density(m, spec)
    X, Y = spec.mesh()
    core = np.hypot(X, Y) < 0.1 - h
    assert np.ptp(d[core]) <= 1e-12 * d[core].max()
    assert d[core].max() == pytest.approx(MASS / (math.pi * 0.01), rel=1e-3)
    assert not d[np.hypot(X, Y) > 0.1 + h].any()
    assert total_mass(m) == pytest.approx(MASS, rel=1e-12)


def test_mollified_zero_is_zero():
    spec = GridSpec.around(0, 0, 1, 1 / 32)
    assert not grid_density(mollify(Measure(), 0.2, spec), spec).any()


def test_mollified_atoms_stay_apart():
    spec = GridSpec.around(0, 0, 2, 1 / 32)
    d = 1.0
    eps = 0.45
    a = grid_density(mollify(Measure.point(-d / 2, 0, 1), eps, spec), spec) > 0
    b = grid_density(mollify(Measure.point(d / 2, 0, 1), eps, spec), spec) > 0
    assert not (a & b).any()


def test_total_mass_values():
    assert total_mass(Measure.point(0, 0, MASS)) == MASS
    assert total_mass(Measure()) == 0.0
    spec = GridSpec(0.0, 0.0, 64, 64, 1 / 64)
    assert total_mass(Measure(density=GridFunction(spec, np.ones(spec.shape)))) == pytest.approx(1.0, abs=1e-12)


def test_concentration_condition():
    spec = GridSpec.around(0, 0, 1.5, 1 / 64)
    X, Y = spec.mesh()
    disk = Measure(density=GridFunction(spec, 5.0 * (np.hypot(X, Y) <= 1)))
    assert concentration_ok(Measure.point(0.3, 0.1, 1e-3), (0.3, 0.1))
    assert concentration_ok(disk, (0.0, 0.0))
    assert not concentration_ok(disk, (1.0, 0.0))


def test_ball_criterion():
    mu = Measure.point(0, 0, MASS)
    assert ball_criterion(mu, (0, 0), 0.3)
    assert not ball_criterion(mu, (0, 0), 0.4)
    assert not ball_criterion(Measure(), (0, 0), 0.3)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(0.01, 3)), min_size=1, max_size=4),
       st.floats(0.0, 2.0), st.floats(0.125, 0.3))
def test_mollify_is_monotone_and_mass_preserving(atoms, extra, eps):
    spec = GridSpec.around(0, 0, 1.0, 1 / 32)
    mu = Measure(tuple(atoms))
    eta = Measure(tuple(atoms[:-1]) + ((atoms[-1][0], atoms[-1][1], atoms[-1][2] + extra),))
    dm = grid_density(mollify(mu, eps, spec), spec)
    de = grid_density(mollify(eta, eps, spec), spec)
    assert (dm <= de + 1e-12 * (1 + de.max())).all()
    assert total_mass(mollify(mu, eps, spec)) == pytest.approx(total_mass(mu), rel=1e-10)
