import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qdlab import GridFunction, GridSpec, Measure, total_mass
from qdlab._obstacle import complementarity_residual, neg_laplacian
from qdlab.balayage import (BoxTooSmall, auto_grid, balayage_measure, check_mollification_stability, energy_Jf,
                            noncontact_set, partial_balayage)
from qdlab.measures import grid_density

MASS = 4 * math.pi / 9


def radial_W(t, r):
    """Closed-form W for tδ₀ swept to density 1: zero beyond R = √(t/π)."""
    R = math.sqrt(t / math.pi)
    rr = np.maximum(r, 1e-300)
    return np.where(r < R, t / (2 * math.pi) * np.log(R / rr) + (rr ** 2 - R ** 2) / 4, 0.0)


def test_point_mass_matches_radial_solution():
    h = 1 / 64
    mu = Measure.point(0, 0, math.pi)
    res = partial_balayage(mu, h=h)
    X, Y = res.spec.mesh()
    r = np.hypot(X, Y)
    far = r >= 2 * 8 * h
    assert np.abs(res.W.values - radial_W(math.pi, r))[far].max() <= 2 * h


def test_radial_oracle_satisfies_its_equation():
    r = np.linspace(0.2, 0.95, 50)
    d = 1e-4
    W = lambda s: radial_W(math.pi, s)
    lap = (W(r + d) - 2 * W(r) + W(r - d)) / d ** 2 + (W(r + d) - W(r - d)) / (2 * d) / r
    assert np.abs(lap - 1.0).max() < 1e-5
    assert W(np.array([1.0]))[0] == pytest.approx(0.0, abs=1e-15)
    assert (W(np.array([1 - d])) / d)[0] == pytest.approx(0.0, abs=1e-3)


def test_ball_radius_mass_and_structure(ball_run):
    res = ball_run
    h = res.spec.h
    area = h * h * res.omega.sum()
    assert math.sqrt(area / math.pi) == pytest.approx(2 / 3, abs=2 * h)
    assert abs(area - MASS) <= 0.05 * MASS
    assert not res.bal_boundary.density.values.any()
    assert not res.bal_untouched.density.values.any()
    assert np.array_equal(res.bal_density.values, res.omega.astype(float))


def test_complementarity_on_ball(ball_run):
    res = ball_run
    f = res.mu_density - res.rho
    free = np.zeros(res.spec.shape, bool)
    free[1:-1, 1:-1] = True
    assert complementarity_residual(res.W.values, f, free, res.spec.h) <= 1e-8 * (1 + np.abs(f).max())
    assert (res.W.values >= 0).all()


def test_density_below_rho_gives_zero():
    spec = GridSpec.around(0, 0, 1, 1 / 32)
    X, Y = spec.mesh()
    mu = Measure(density=GridFunction(spec, 0.7 * (np.hypot(X, Y) < 0.5)))
    res = partial_balayage(mu, None, 1.0, spec)
    assert not res.W.values.any()
    assert not noncontact_set(res).any()
    assert np.allclose(balayage_measure(res).density.values, grid_density(mu, spec))


def test_empty_measure_gives_zero_fields():
    res = partial_balayage(Measure(), h=1 / 16)
    assert not res.W.values.any() and not res.omega.any()


def test_restricted_domain_sweeps_to_boundary():
    h = 1 / 64
    mu = Measure.point(0, 0, MASS)
    spec = auto_grid(mu, h)
    X, Y = spec.mesh()
    D = np.hypot(X, Y) < 0.5
    res = partial_balayage(mu, D, 1.0, spec)
    assert not (res.omega & ~D).any()
    nu = res.bal_boundary.density.values
    assert not (nu.astype(bool) & D).any()
    area = h * h * res.omega.sum()
    assert h * h * nu.sum() == pytest.approx(MASS - area, rel=0.02)
    total = h * h * balayage_measure(res).density.values.sum()
    assert total == pytest.approx(total_mass(mu), rel=0.02)


def test_pdas_and_psor_agree():
    mu = Measure.point(0.1, -0.2, 1.0)
    spec = auto_grid(mu, 1 / 32)
    a = partial_balayage(mu, None, 1.0, spec, solver="pdas")
    b = partial_balayage(mu, None, 1.0, spec, solver="psor")
    assert np.array_equal(a.omega, b.omega)
    assert np.abs(a.W.values - b.W.values).max() <= 1e-6 * (1 + a.W.values.max())


def test_small_box_is_rejected():
    mu = Measure.point(0, 0, 4.0)
    with pytest.raises(BoxTooSmall):
        partial_balayage(mu, None, 1.0, GridSpec.around(0, 0, 1.0, 1 / 32))


def test_unknown_solver_errors():
    with pytest.raises(ValueError):
        partial_balayage(Measure.point(0, 0, 1.0), h=1 / 16, solver="jacobi")


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_solution_minimises_energy(seed):
    rng = np.random.default_rng(seed)
    mu = Measure.point(0, 0, 1.0)
    spec = auto_grid(mu, 1 / 16)
    res = partial_balayage(mu, None, 1.0, spec)
    f = res.mu_density - 1.0
    J0 = energy_Jf(res.W.values, f, spec.h)
    bump = np.zeros(spec.shape)
    bump[2:-2, 2:-2] = rng.random((spec.ny - 4, spec.nx - 4)) * 1e-3
    trial = np.maximum(res.W.values + bump * rng.choice([-1, 1], spec.shape), 0.0)
    trial[0], trial[-1], trial[:, 0], trial[:, -1] = 0, 0, 0, 0
    assert energy_Jf(trial, f, spec.h) >= J0 - 1e-12 * abs(J0)


def test_mollification_stability_on_ball():
    h = 1 / 64
    mu = Measure.point(0, 0, MASS)
    rep = check_mollification_stability(mu, None, 1.0, [4 * h, 8 * h], h=h)
    assert rep.status == "PASS", rep.summary()


def test_mollification_stability_large_eps_not_applicable():
    h = 1 / 64
    rep = check_mollification_stability(Measure.point(0, 0, MASS), None, 1.0, [0.5], h=h)
    assert rep.status == "NOT_APPLICABLE"


def test_default_eps_compares_with_itself():
    h = 1 / 32
    rep = check_mollification_stability(Measure.point(0, 0, MASS), None, 1.0, [8 * h], h=h)
    assert rep.overall
    assert rep.get(f"V_eps_{8 * h:.6g}").worst == 0.0
