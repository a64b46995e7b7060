import math

import numpy as np
import pytest

from qdlab import GridFunction, GridSpec, Measure
from qdlab.analytic import ring_band_measure, solve_equal_energy
from qdlab.balayage import auto_grid, partial_balayage
from qdlab.multiphase import (NotApplicable, PhaseProblem, SegregatedState, construct_via_disjoint_one_phase,
                              coupled_energy, energy, minimize_Sm, minimize_Smmu, point_mass_qd,
                              point_mass_threshold, support_bound_constant)
from qdlab.potential import fundamental_solution
from qdlab.verify import check_strong_mqd

MASS = 4 * math.pi / 9


def zero_state(problem):
    return SegregatedState([GridFunction(problem.spec, np.zeros(problem.spec.shape))
                            for _ in range(problem.m)], problem.tau)


def test_zero_state_has_zero_energy():
    mu = Measure.point(0, 0, 1.0)
    p = PhaseProblem([mu], auto_grid(mu, 1 / 16))
    assert energy(zero_state(p), p) == 0.0
    assert coupled_energy(zero_state(p), p) == 0.0


def test_one_phase_energy_is_minus_dirichlet_integral():
    h = 1 / 64
    mu = Measure.point(0, 0, math.pi)
    spec = auto_grid(mu, h)
    p = PhaseProblem([mu], spec)
    W = partial_balayage(mu, None, 1.0, spec).W
    st = SegregatedState([W], p.tau)
    grad = float((np.diff(W.values, axis=1) ** 2).sum() + (np.diff(W.values, axis=0) ** 2).sum())
    assert energy(st, p) == pytest.approx(-grad, rel=1e-7)


def test_one_phase_minimiser_is_partial_balayage():
    mu = Measure.point(0.2, 0.1, 2.0)
    spec = auto_grid(mu, 1 / 32)
    p = PhaseProblem([mu], spec)
    st = minimize_Sm(p)
    W = partial_balayage(mu, None, 1.0, spec).W.values
    assert np.abs(st.u[0].values - W).max() <= 10 * p.tau
    assert st.info["status"] == "CONVERGED"


def test_far_apart_masses_give_two_balls():
    h = 1 / 32
    a, b = Measure.point(-5, 0, MASS), Measure.point(5, 0, MASS)
    spec = auto_grid(a + b, h)
    p = PhaseProblem([a, b], spec)
    st = minimize_Sm(p, candidates=False)
    one = [PhaseProblem([mu], spec) for mu in (a, b)]
    E1 = sum(energy(SegregatedState([partial_balayage(mu, None, 1.0, spec).W], q.tau), q) for mu, q in zip((a, b), one))
    assert energy(st, p) == pytest.approx(E1, rel=1e-8)
    for Q in st.masks:
        assert math.sqrt(h * h * Q.sum() / math.pi) == pytest.approx(2 / 3, abs=2 * h)


def test_three_point_state_is_segregated_and_certified(three_point_coarse):
    st, p = three_point_coarse
    assert st.is_segregated()
    assert all(Q.any() for Q in st.masks)
    assert check_strong_mqd(st, p).overall
    U = st.stack()
    for j in range(3):
        assert (U[j] <= st.one_phase[j] + 10 * p.tau).all()
    middle = st.masks[1]
    X, Y = p.spec.mesh()
    assert np.abs(X[middle]).max() < 2 / 3


def test_three_point_energy_trace_is_monotone(three_point_coarse):
    st, _ = three_point_coarse
    coupled = [row[2] for row in st.info["energy_trace"]]
    assert all(b <= a + 1e-12 * abs(a) for a, b in zip(coupled, coupled[1:]))


def test_separated_supports_are_required():
    spec = GridSpec.around(0, 0, 2, 1 / 32)
    with pytest.raises(ValueError):
        PhaseProblem([Measure.point(0, 0, 1), Measure.point(0.05, 0, 1)], spec)


def disk_measure(spec, x, y, r, c):
    X, Y = spec.mesh()
    A = np.hypot(X - x, Y - y) <= r
    return Measure(density=GridFunction(spec, np.where(A, c, 0.0))), A


def test_smmu_single_seed_meets_lower_barrier():
    spec = GridSpec.around(0, 0, 1.5, 1 / 32)
    mu, A = disk_measure(spec, 0, 0, 0.25, 6.0)
    p = PhaseProblem([mu], spec, seeds=[A])
    st = minimize_Smmu(p)
    assert max(st.info["barrier_excess"]) <= 10 * p.tau
    assert st.info["in_Smmu"]
    W = partial_balayage(mu, None, 1.0, spec).W.values
    assert np.abs(st.u[0].values - W).max() <= 10 * p.tau


def test_smmu_with_inactive_seeds_matches_sm():
    spec = GridSpec.around(0, 0, 3, 1 / 32)
    m1, A1 = disk_measure(spec, -1.5, 0, 0.25, 5.0)
    m2, A2 = disk_measure(spec, 1.5, 0, 0.25, 5.0)
    a = minimize_Smmu(PhaseProblem([m1, m2], spec, seeds=[A1, A2]))
    p = PhaseProblem([m1, m2], spec)
    b = minimize_Sm(p, candidates=False)
    assert np.abs(a.stack() - b.stack()).max() <= 10 * p.tau


def test_seed_assumptions_are_enforced():
    spec = GridSpec.around(0, 0, 1.5, 1 / 32)
    mu, A = disk_measure(spec, 0, 0, 0.25, 0.8)
    with pytest.raises(ValueError):
        PhaseProblem([mu], spec, seeds=[A])
    mu2, _ = disk_measure(spec, 0, 0, 0.4, 3.0)
    with pytest.raises(ValueError):
        PhaseProblem([mu2], spec, seeds=[A])


def test_ring_pair_sm_kills_a_phase_smmu_keeps_both():
    h = 1 / 8
    R = solve_equal_energy()
    spec = GridSpec.around(0, 0, 17.6, h)
    m1, b1 = ring_band_measure(4, 16, spec, 2 * h)
    m2, b2 = ring_band_measure(R, 17, spec, 2 * h)
    sm = minimize_Sm(PhaseProblem([m1, m2], spec, eps=2 * h))
    smmu = minimize_Smmu(PhaseProblem([m1, m2], spec, eps=2 * h, seeds=[b1, b2]))
    assert sum(Q.any() for Q in sm.masks) == 1
    assert all(Q.any() for Q in smmu.masks)
    assert smmu.info["in_Smmu"]
    assert sm.info["energy"] < smmu.info["energy"]
    X, Y = spec.mesh()
    r = np.hypot(X, Y)
    q1, q2 = smmu.masks
    # the two-phase radial configuration with an inner disk and an outer annulus
    assert r[q1].max() == pytest.approx(4.722, abs=2 * h)
    assert r[q2].min() == pytest.approx(4.722, abs=2 * h)
    assert r[q2].max() == pytest.approx(8.809, abs=2 * h)


def test_construct_single_phase_is_one_phase_set():
    mu = Measure.point(0, 0, MASS)
    spec = auto_grid(mu, 1 / 32)
    p = PhaseProblem([mu], spec)
    st = construct_via_disjoint_one_phase(p)
    assert np.array_equal(st.masks[0], partial_balayage(mu, None, 1.0, spec).omega)


def test_construct_rejects_overlapping_balls():
    a, b = Measure.point(-0.5, 0, math.pi), Measure.point(0.5, 0, math.pi)
    p = PhaseProblem([a, b], auto_grid(a + b, 1 / 32))
    with pytest.raises(NotApplicable) as exc:
        construct_via_disjoint_one_phase(p)
    assert exc.value.pair in {(1, 2), (2, 1)}


def test_support_bound_constant_value():
    R, d, R1, M = 1.0, 0.1, 2.0, 3.0
    R2 = R1 + math.sqrt(M / math.pi)
    # direct re-derivation with natural logs
    want = 1 + M * math.log(2 * R2 / R) / math.log(R / d) / (math.pi * d * d)
    assert support_bound_constant(R, d, R1, M) == pytest.approx(want, rel=1e-12)
    psi = lambda r: fundamental_solution(r)
    assert psi(d) - psi(R) == pytest.approx(math.log(R / d) / (2 * math.pi), rel=1e-14)


def test_required_mass_vanishes_as_delta_shrinks():
    deltas = [2.0 ** -k for k in range(3, 11)]
    vals = [point_mass_threshold(1.0, d, 2.0, 3.0) for d in deltas]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    # the decay is logarithmic: vals·ln(1/δ) stays bounded while ln(1/δ) grows
    scaled = [v * math.log(1 / d) for v, d in zip(vals, deltas)]
    assert max(scaled) <= 2 * min(scaled)


def test_support_bound_constant_rejects_delta_equal_R():
    with pytest.raises(ValueError):
        support_bound_constant(1.0, 1.0, 2.0, 3.0)


def test_point_mass_single_atom_is_unit_disk():
    h = 1 / 64
    st, p = point_mass_qd([Measure.point(0, 0, math.pi)], h=h)
    X, Y = p.spec.mesh()
    r = np.hypot(X, Y)
    assert math.sqrt(h * h * st.masks[0].sum() / math.pi) == pytest.approx(1.0, abs=2 * h)
    exact = np.where(r < 1, 0.5 * np.log(1 / np.maximum(r, 1e-300)) + (r ** 2 - 1) / 4, 0.0)
    away = r >= 2 * h
    assert np.abs(st.u[0].values - exact)[away].max() <= 2 * h


def test_point_mass_reflection_symmetry():
    # the point-mass bound only admits this configuration from h = 1/256 on
    h = 1 / 256
    mus = [Measure(((-0.5, 0.0, 0.5), (0.5, 0.0, 0.5))), Measure.point(0.0, 1.4, 0.5)]
    st, p = point_mass_qd(mus, GridSpec(-1.25, -0.75, 641, 769, h))
    U = st.stack()
    assert np.abs(U - U[:, :, ::-1]).max() <= 10 * p.tau


def test_point_mass_matches_construction(three_point):
    cst, cp = three_point
    st, p = point_mass_qd([Measure.point(x, 0, MASS) for x in (-1.0, 0.0, 1.0)], cp.spec)
    X, Y = cp.spec.mesh()
    far = np.ones(cp.spec.shape, bool)
    for x in (-1.0, 0.0, 1.0):
        far &= np.hypot(X - x, Y) >= 2 * max(p.eps, cp.eps)
    diff = np.abs(st.stack() - cst.stack())[:, far]
    assert diff.max() <= cp.h ** 2
    assert all(np.array_equal(a, b) for a, b in zip(st.masks, cst.masks))
