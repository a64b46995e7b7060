"""Segregated m-phase minimisation and the existence constructions built on it.

A state is stored as one non-negative field ``v`` plus a phase label per node
(-1 where every phase vanishes), so segregation holds by construction.  The
descent works on the energy

    E(u) = Σ_j Σ_edges (u_j(a) - u_j(b))² + 2 Σ_edges Σ_{j≠l} u_j(a) u_l(b)
           - 2h² Σ_j Σ_nodes f_j u_j,

i.e. the forward-difference energy plus an interface coupling term that is
O(h) per unit interface length.  Without that term the discrete segregated
problem does not see the interface balance |∇u_j| = |∇u_l|; with it, a node
wise minimiser satisfies -Δ_h(u_j - Σ_{l≠j} u_l) = f_j exactly on Q_j.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _obstacle
from .balayage import DEFAULT_EPS_CELLS, auto_grid, partial_balayage, tau_for
from .measures import Measure, MollifiedMeasure, concentration_ok, grid_density, mollify, total_mass
from .potential import GridFunction, GridSpec, fundamental_solution, green_potential, unit_ball_volume, write_gf1


class NotApplicable(RuntimeError):
    """A construction's hypotheses fail; ``pair`` names the offending phases."""

    def __init__(self, msg: str, pair: tuple[int, int] | None = None):
        super().__init__(msg)
        self.pair = pair


@dataclass(eq=False)
class PhaseProblem:
    """m measures competing for space, each with background density 1."""

    measures: list
    spec: GridSpec
    eps: float | None = None
    seeds: list[np.ndarray] | None = None
    c: float | None = None
    max_cycles: int = 500
    energy_rtol: float = 1e-9
    mass_rtol: float = 1e-6
    _dens: list[np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.measures) < 1:
            raise ValueError("need at least one phase")
        if self.eps is None:
            self.eps = DEFAULT_EPS_CELLS * self.spec.h
        mol = []
        for mu in self.measures:
            if isinstance(mu, MollifiedMeasure) or (isinstance(mu, Measure) and not mu.atoms):
                mol.append(mu)
            else:
                mol.append(mollify(mu, self.eps, self.spec))
        self.mollified = mol
        self._dens = [grid_density(mu, self.spec) for mu in mol]
        sup = [d > 0 for d in self._dens]
        for a in range(self.m):
            for b in range(a + 1, self.m):
                if (sup[a] & _dilate(sup[b])).any():
                    raise ValueError(f"supports of phases {a + 1} and {b + 1} are not separated")
        if self.seeds is not None:
            self._check_seeds()

    @property
    def m(self) -> int:
        return len(self.measures)

    @property
    def h(self) -> float:
        return self.spec.h

    def density(self, j: int) -> np.ndarray:
        return self._dens[j]

    def f(self, j: int) -> np.ndarray:
        return self._dens[j] - 1.0

    @property
    def mu_sup(self) -> float:
        return max(float(d.max(initial=0.0)) for d in self._dens)

    @property
    def tau(self) -> float:
        return tau_for(np.stack([self.f(j) for j in range(self.m)]), self.h)

    def _check_seeds(self) -> None:
        if len(self.seeds) != self.m:
            raise ValueError("one seed mask per phase is required")
        seeds = [np.asarray(s, bool) for s in self.seeds]
        self.seeds = seeds
        for a in range(self.m):
            for b in range(a + 1, self.m):
                if (seeds[a] & seeds[b]).any():
                    raise ValueError(f"seeds of phases {a + 1} and {b + 1} overlap")
        cs = []
        for j, A in enumerate(seeds):
            d = self._dens[j]
            if not A.any():
                raise ValueError(f"seed of phase {j + 1} is empty")
            if (d[~A] > 0).any():
                raise ValueError(f"assumption on seeds violated: μ_{j + 1} charges nodes outside its seed")
            cs.append(float(d[A].min()))
        c = min(cs)
        if not c > 1:
            raise ValueError(f"assumption on seeds violated: density floor {c:g} on the seeds is not above 1")
        self.c = c if self.c is None else min(self.c, c)


@dataclass(eq=False)
class SegregatedState:
    """m non-negative grid functions with disjoint positivity sets."""

    u: list[GridFunction]
    tau: float
    info: dict = field(default_factory=dict)
    one_phase: list[np.ndarray] | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return len(self.u)

    @property
    def spec(self) -> GridSpec:
        return self.u[0].spec

    @property
    def masks(self) -> list[np.ndarray]:
        return [g.values > self.tau for g in self.u]

    def stack(self) -> np.ndarray:
        return np.stack([g.values for g in self.u])

    def is_segregated(self) -> bool:
        pos = self.stack() > 0
        return bool((pos.sum(axis=0) <= 1).all())

    def save(self, out: str | os.PathLike) -> None:
        os.makedirs(out, exist_ok=True)
        for j, g in enumerate(self.u, start=1):
            write_gf1(os.path.join(out, f"u_{j}.gf1"), g)
            write_gf1(os.path.join(out, f"Q_{j}.gf1"), GridFunction(g.spec, (g.values > self.tau).astype(float)))
        trace = self.info.get("energy_trace", [])
        with open(os.path.join(out, "energy_trace.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cycle", "energy", "coupled_energy"])
            for row in trace:
                w.writerow(row)
        with open(os.path.join(out, "state_report.json"), "w") as fh:
            json.dump(_jsonable({k: v for k, v in self.info.items() if k != "energy_trace"} | {"tau_pos": self.tau}),
                      fh, indent=2)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


def _dilate(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


# --- energies --------------------------------------------------------------

def _grad_sq(u: np.ndarray) -> float:
    gx = np.diff(u, axis=1, append=0.0)
    gy = np.diff(u, axis=0, append=0.0)
    return float((gx ** 2).sum() + (gy ** 2).sum())


def energy(state: SegregatedState, problem: PhaseProblem) -> float:
    """Σ_j h²Σ(|∇_h u_j|² - 2 f_j u_j) with forward differences."""
    if state.spec != problem.spec:
        raise ValueError("state and problem live on different grids")
    h2 = problem.h ** 2
    return sum(_grad_sq(g.values) - 2 * h2 * float((problem.f(j) * g.values).sum())
               for j, g in enumerate(state.u))


def _cross(u: np.ndarray) -> float:
    """2 Σ_edges Σ_{j≠l} u_j(a) u_l(b) for a stack of phase fields."""
    tot = u.sum(axis=0)
    s = 0.0
    for a, b in (((slice(None), slice(1, None)), (slice(None), slice(None, -1))),
                 ((slice(1, None), slice(None)), (slice(None, -1), slice(None)))):
        same = (u[(slice(None),) + a] * u[(slice(None),) + b]).sum()
        s += float((tot[a] * tot[b]).sum() - same)
    return 2.0 * s


def coupled_energy(state: SegregatedState, problem: PhaseProblem) -> float:
    """The descent functional: energy plus the interface coupling term."""
    return energy(state, problem) + _cross(state.stack())


# --- the descent engine ------------------------------------------------------

class _Engine:
    def __init__(self, problem: PhaseProblem, reach: np.ndarray):
        self.p = problem
        self.m = problem.m
        self.h = problem.h
        self.shape = problem.spec.shape
        self.F = np.stack([problem.f(j) for j in range(self.m)])
        inner = _obstacle.interior(self.shape)
        allowed = np.stack([inner & reach[j] for j in range(self.m)])
        if problem.seeds is not None:
            for j in range(self.m):
                for l in range(self.m):
                    if l != j:
                        allowed[j] &= ~problem.seeds[l]
        self.allowed = allowed
        jj, ii = np.indices(self.shape)
        self.colours = [(ii + jj) % 2 == c for c in (0, 1)]

    # state <-> (v, lab)
    def split(self, U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        v = U.max(axis=0)
        lab = np.where(v > 0, U.argmax(axis=0), -1)
        return v, lab

    def join(self, v: np.ndarray, lab: np.ndarray) -> np.ndarray:
        U = np.zeros((self.m,) + self.shape)
        for j in range(self.m):
            U[j] = np.where(lab == j, v, 0.0)
        return U

    def E(self, v, lab) -> float:
        U = self.join(v, lab)
        h2 = self.h ** 2
        return sum(_grad_sq(U[j]) - 2 * h2 * float((self.F[j] * U[j]).sum()) for j in range(self.m)) + _cross(U)

    def targets(self, U: np.ndarray) -> np.ndarray:
        """Nodewise optimal value t_j for each phase given the neighbours."""
        S = np.stack([_obstacle.neighbour_sum(U[j]) for j in range(self.m)])
        T = S.sum(axis=0)
        t = (2 * S - T + self.h ** 2 * self.F) / 4.0
        return np.where(self.allowed, t, -np.inf)

    def sweep(self, v, lab, n: int):
        U = self.join(v, lab)
        for _ in range(n):
            for c in self.colours:
                t = self.targets(U)
                best = t.argmax(axis=0)
                tb = np.take_along_axis(t, best[None], 0)[0]
                val = np.maximum(tb, 0.0)
                for j in range(self.m):
                    U[j][c] = np.where(best[c] == j, val[c], 0.0)
        return self.split(U)

    def qp(self, v, lab, hint: np.ndarray):
        """Exact minimisation of E over v ≥ 0 with labels frozen.

        Positive nodes keep their phase; zero nodes take the phase that would
        like them most (or the hint phase) so that phases can grow by many
        cells in one step.
        """
        U = self.join(v, lab)
        t = self.targets(U)
        best = t.argmax(axis=0)
        tb = np.take_along_axis(t, best[None], 0)[0]
        L = lab.copy()
        grow = (lab < 0) & (tb > 0)
        L[grow] = best[grow]
        rest = (L < 0) & (hint >= 0)
        L[rest] = hint[rest]
        ok = np.zeros(self.shape, bool)
        for j in range(self.m):
            ok |= (L == j) & self.allowed[j]
        L = np.where(ok, L, -1)
        idx = np.flatnonzero(L.ravel() >= 0)
        if idx.size == 0:
            return v, lab
        A = _signed_matrix(L, idx)
        b = (self.h ** 2 * np.take_along_axis(self.F, np.maximum(L, 0)[None], 0)[0]).ravel()[idx]
        x0 = v.ravel()[idx].copy()
        x = _pdas_matrix(A, b, x0)
        if x is None:
            return v, lab
        v2 = np.zeros(self.shape)
        v2.ravel()[idx] = x
        lab2 = np.where(v2 > 0, L, -1)
        return v2, lab2


def _signed_matrix(L: np.ndarray, idx: np.ndarray) -> sp.csr_matrix:
    ny, nx = L.shape
    n = idx.size
    pos = -np.ones(ny * nx, dtype=np.int64)
    pos[idx] = np.arange(n)
    lab = L.ravel()[idx]
    jj, ii = np.divmod(idx, nx)
    rows, cols, vals = [np.arange(n)], [np.arange(n)], [np.full(n, 4.0)]
    for dj, di in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        j2, i2 = jj + dj, ii + di
        ok = (j2 >= 0) & (j2 < ny) & (i2 >= 0) & (i2 < nx)
        nb = np.full(n, -1, dtype=np.int64)
        nb[ok] = pos[j2[ok] * nx + i2[ok]]
        keep = nb >= 0
        rows.append(np.arange(n)[keep])
        cols.append(nb[keep])
        vals.append(np.where(lab[keep] == lab[nb[keep]], -1.0, 1.0))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def _pdas_matrix(A: sp.csr_matrix, b: np.ndarray, x0: np.ndarray, max_iter: int = 60) -> np.ndarray | None:
    """Primal-dual active set for min ½xᵀAx - bᵀx, x ≥ 0; None if it cycles."""
    x = np.maximum(x0, 0.0)
    lam = np.maximum(A @ x - b, 0.0)
    active = (lam - x) > 0
    seen = set()
    for _ in range(max_iter):
        I = np.flatnonzero(~active)
        x = np.zeros_like(b)
        if I.size:
            x[I] = _obstacle.solve_spd(A[I][:, I].tocsr(), b[I])
        lam = np.where(active, A @ x - b, 0.0)
        new = (lam - x) > 0
        if np.array_equal(new, active):
            return np.maximum(x, 0.0)
        key = new.tobytes()
        if key in seen:
            return None
        seen.add(key)
        active = new
    return None


def _one_phase_fields(problem: PhaseProblem) -> list[np.ndarray]:
    out = []
    for mu in problem.mollified:
        r = partial_balayage(mu, None, 1.0, problem.spec, check_box=True)
        out.append(r.W.values.copy())
    return out


def _default_init(problem: PhaseProblem, W1: list[np.ndarray]) -> np.ndarray:
    """Each phase takes its one-phase W where it is the largest (lowest index on ties)."""
    S = np.stack(W1)
    if problem.seeds is not None:
        for j, A in enumerate(problem.seeds):
            S[:, A] = 0.0
            S[j, A] = np.maximum(W1[j][A], 0.0)
    best = S.argmax(axis=0)
    U = np.zeros_like(S)
    for j in range(problem.m):
        U[j] = np.where(best == j, S[j], 0.0)
    return U


def _minimize(problem: PhaseProblem, init, sweeps_per_cycle: int = 3, max_sweeps: int = 60) -> SegregatedState:
    W1 = _one_phase_fields(problem)
    reach = [_dilate(w > 0) for w in W1]
    eng = _Engine(problem, reach)
    if init is None or (isinstance(init, str) and init.upper() == "DEFAULT"):
        U0 = _default_init(problem, W1)
    elif isinstance(init, SegregatedState):
        if init.spec != problem.spec or init.m != problem.m:
            raise ValueError("initial state does not match the problem")
        U0 = init.stack().copy()
        if not init.is_segregated():
            raise ValueError("initial state is not segregated")
    else:
        raise ValueError(f"unknown init {init!r}")
    U0 = np.where(eng.allowed, np.maximum(U0, 0.0), 0.0)
    v, lab = eng.split(U0)
    hint = np.stack(W1).argmax(axis=0)
    hint = np.where(np.stack(W1).max(axis=0) > 0, hint, -1)
    E = eng.E(v, lab)
    trace = [(0, _plain_energy(eng, v, lab), E)]
    status = "UNCONVERGED"
    cycles = 0
    for cycles in range(1, problem.max_cycles + 1):
        # sweep until the labels settle, so interfaces can travel many cells between QP solves
        v1, lab1 = eng.sweep(v, lab, sweeps_per_cycle)
        done = sweeps_per_cycle
        while done < max_sweeps:
            v_next, lab_next = eng.sweep(v1, lab1, sweeps_per_cycle)
            settled = np.array_equal(lab_next, lab1)
            v1, lab1 = v_next, lab_next
            done += sweeps_per_cycle
            if settled:
                break
        v2, lab2 = eng.qp(v1, lab1, hint)
        E1, E2 = eng.E(v1, lab1), eng.E(v2, lab2)
        if E2 <= E1:
            v1, lab1, E1 = v2, lab2, E2
        moved = not np.array_equal(lab1 >= 0, lab >= 0) or not np.array_equal(lab1, lab)
        dE = E - E1
        v, lab = v1, lab1
        E = min(E, E1)
        trace.append((cycles, _plain_energy(eng, v, lab), E1))
        if not moved and dE < problem.energy_rtol * (1 + abs(E)):
            status = "CONVERGED"
            break
    U = eng.join(v, lab)
    tau = problem.tau
    state = SegregatedState([GridFunction(problem.spec, U[j]) for j in range(problem.m)], tau)
    state.info.update(status=status, cycles=cycles, energy=trace[-1][1], coupled_energy=E,
                      energy_trace=trace)
    state.one_phase = W1
    return state


def _plain_energy(eng: _Engine, v, lab) -> float:
    U = eng.join(v, lab)
    h2 = eng.h ** 2
    return sum(_grad_sq(U[j]) - 2 * h2 * float((eng.F[j] * U[j]).sum()) for j in range(eng.m))


def fixed_point_residual(state: SegregatedState, problem: PhaseProblem) -> list[int]:
    """#(Q_j Δ ω_{Q_j}(μ_j)) for each phase."""
    out = []
    for j, Q in enumerate(state.masks):
        if not Q.any():
            out.append(0)
            continue
        r = partial_balayage(problem.mollified[j], Q, 1.0, problem.spec)
        out.append(int((r.omega != Q).sum()))
    return out


def _finish(state: SegregatedState, problem: PhaseProblem) -> SegregatedState:
    state.info["fixed_point_residual"] = fixed_point_residual(state, problem)
    return state


def minimize_Sm(problem: PhaseProblem, init="DEFAULT", candidates: bool | None = None) -> SegregatedState:
    """Minimise the segregation energy over S_m from ``init``.

    With ``candidates`` (default: on for m = 2) every phase-killed state is
    re-minimised with the remaining phases as well; the lowest-energy state
    is returned and all candidate energies are recorded.  A single surviving
    phase is solved exactly by one-phase balayage.
    """
    state = _finish(_minimize(problem, init), problem)
    if candidates is None:
        candidates = problem.m == 2
    if not candidates or problem.m < 2:
        return state
    cand = {}
    best, best_E = state, state.info["energy"]
    for j in range(problem.m):
        keep = [k for k in range(problem.m) if k != j]
        if len(keep) == 1:
            k = keep[0]
            W = partial_balayage(problem.mollified[k], None, 1.0, problem.spec).W.values
            U = np.zeros((problem.m,) + problem.spec.shape)
            U[k] = W
            trial = SegregatedState([GridFunction(problem.spec, U[i]) for i in range(problem.m)], state.tau,
                                    {"status": "CONVERGED", "cycles": 0, "energy_trace": []})
            trial.info["energy"] = trial.info["coupled_energy"] = energy(trial, problem)
        else:
            U = state.stack().copy()
            U[j] = 0.0
            sub = PhaseProblem([problem.mollified[k] for k in keep], problem.spec,
                               eps=problem.eps, max_cycles=problem.max_cycles)
            st0 = SegregatedState([GridFunction(problem.spec, U[k]) for k in keep], state.tau)
            st = _minimize(sub, st0)
            full = np.zeros((problem.m,) + problem.spec.shape)
            for i, k in enumerate(keep):
                full[k] = st.u[i].values
            trial = SegregatedState([GridFunction(problem.spec, full[i]) for i in range(problem.m)], state.tau,
                                    dict(st.info))
        cand[f"without_phase_{j + 1}"] = trial.info["energy"]
        if trial.info["energy"] < best_E - problem.energy_rtol * (1 + abs(best_E)):
            best, best_E = trial, trial.info["energy"]
            best.info["killed_phase"] = j + 1
    if best is not state:
        best.one_phase = state.one_phase
        best.info["descent_energy"] = state.info["energy"]
        best = _finish(best, problem)
    best.info["phase_killed_candidates"] = cand
    return best


def minimize_Smmu(problem: PhaseProblem, init="DEFAULT") -> SegregatedState:
    """Minimise over S_{m,μ}: seed nodes A_j are reserved for phase j."""
    if problem.seeds is None or problem.c is None:
        raise ValueError("S_{m,μ} minimisation needs seeds with a recorded constant c > 1")
    state = _finish(_minimize(problem, init), problem)
    h = problem.h
    barrier = []
    lost = []
    for j, A in enumerate(problem.seeds):
        inner = A & _obstacle.interior(problem.spec.shape)
        G = green_potential(inner, problem.spec).values
        gap = (problem.c - 1) * G - state.u[j].values
        barrier.append(float(gap[A].max()))
        d = problem.density(j)
        lost.append(float(h * h * d[state.u[j].values <= state.tau].sum()) / max(total_mass(problem.mollified[j]), 1e-300))
    state.info["barrier_excess"] = barrier
    state.info["uncharged_mass_fraction"] = lost
    state.info["in_Smmu"] = all(x <= problem.mass_rtol for x in lost)
    return state


# --- existence constructions -------------------------------------------------

def construct_via_disjoint_one_phase(problem: PhaseProblem) -> SegregatedState:
    """Build the m-phase domain from disjoint one-phase non-contact sets.

    The hypotheses are checked on the grid: no support meets the closure of
    another phase's one-phase set.  The truncated one-phase solves
    W_{D_i}^{μ_i}, D_i = grid ∖ closure(∪_{l≠i} ω(μ_l)), are lower barriers
    for the minimiser; the returned state is the minimiser started from them.
    """
    W1 = _one_phase_fields(problem)
    tau = problem.tau
    omegas = [w > tau for w in W1]
    sup = [problem.density(j) > 0 for j in range(problem.m)]
    for i in range(problem.m):
        for j in range(problem.m):
            if i != j and (sup[i] & _dilate(omegas[j])).any():
                raise NotApplicable(f"support of phase {i + 1} meets the one-phase set of phase {j + 1}", (i + 1, j + 1))
    for j, mu in enumerate(problem.measures):
        src = mu.source if isinstance(mu, MollifiedMeasure) else mu
        pts = src.support_points()
        step = max(1, len(pts) // 50)
        for (x, y) in pts[::step]:
            if not concentration_ok(src, (x, y)):
                raise NotApplicable(f"measure {j + 1} fails the concentration condition at ({x:g}, {y:g})", (j + 1, j + 1))
    U = np.zeros((problem.m,) + problem.spec.shape)
    for i in range(problem.m):
        others = np.zeros(problem.spec.shape, bool)
        for l in range(problem.m):
            if l != i:
                others |= omegas[l]
        D = ~_dilate(others)
        r = partial_balayage(problem.mollified[i], D, 1.0, problem.spec)
        if (sup[i] & ~r.omega).any():
            raise NotApplicable(f"support of phase {i + 1} is not inside its truncated non-contact set", (i + 1, i + 1))
        U[i] = r.W.values
    lower = SegregatedState([GridFunction(problem.spec, U[j]) for j in range(problem.m)], tau)
    state = minimize_Sm(problem, lower, candidates=False)
    state.info["lower_barrier_gap"] = float((U - state.stack()).max())
    return state


def support_bound_constant(R: float, delta: float, R1: float, M: float, n: int = 2) -> float:
    """Right-hand side of the density threshold that keeps B̄_δ(x) inside {u_j > 0}.

        1 + M(Ψ(R) - Ψ(2R₂)) / (Ψ(δ) - Ψ(R)) / |B_δ|,   R₂ = R1 + (M/|B_1|)^{1/n}.
    """
    if not 0 < delta < R:
        raise ValueError("need 0 < δ < R")
    b1 = unit_ball_volume(n)
    R2 = R1 + (M / b1) ** (1.0 / n)
    psi = lambda r: fundamental_solution(r, n)
    return 1.0 + M * (psi(R) - psi(2 * R2)) / (psi(delta) - psi(R)) / (b1 * delta ** n)


def point_mass_threshold(R: float, delta: float, R1: float, M: float, n: int = 2) -> float:
    """|B_δ| + M(Ψ(R) - Ψ(2R₂)) / (Ψ(δ) - Ψ(R)): an atom heavier than this is admissible."""
    if not 0 < delta < R:
        raise ValueError("need 0 < δ < R")
    b1 = unit_ball_volume(n)
    R2 = R1 + (M / b1) ** (1.0 / n)
    psi = lambda r: fundamental_solution(r, n)
    return b1 * delta ** n + M * (psi(R) - psi(2 * R2)) / (psi(delta) - psi(R))


def _disk_nodes(spec: GridSpec, x: float, y: float, r: float) -> np.ndarray:
    X, Y = spec.mesh()
    return (X - x) ** 2 + (Y - y) ** 2 <= r * r


def choose_delta(atoms_by_phase: list[list[tuple[float, float, float]]], h: float) -> tuple[float, dict]:
    """Largest δ ≥ 4h on a geometric ladder meeting the point-mass threshold at every atom."""
    allp = [(a[0], a[1]) for ph in atoms_by_phase for a in ph]
    M = max(sum(a[2] for a in ph) for ph in atoms_by_phase)
    pts = np.array(allp)
    diam = float(np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1)).max()) if len(pts) > 1 else 0.0
    R1 = diam * (1 + 1e-9) + 1e-9
    R2 = R1 + math.sqrt(M / math.pi)
    same_gap = math.inf
    Rs = []
    for j, ph in enumerate(atoms_by_phase):
        for k, a in enumerate(ph):
            others = [b for l, q in enumerate(atoms_by_phase) if l != j for b in q]
            R = min((math.hypot(a[0] - b[0], a[1] - b[1]) for b in others), default=2 * R2) / 2 * (1 - 1e-9)
            R = min(R, R2)
            Rs.append((R, a[2]))
            for b in ph[k + 1:]:
                same_gap = min(same_gap, math.hypot(a[0] - b[0], a[1] - b[1]) / 2)
    best = None
    d = 4 * h
    while d < min(min(R for R, _ in Rs), same_gap):
        if all(c > point_mass_threshold(R, d, R1, M) for R, c in Rs):
            best = d
        d *= 1.125
    info = {"R1": R1, "R2": R2, "M": M, "R_per_atom": [R for R, _ in Rs]}
    if best is None:
        raise ValueError("no admissible δ ≥ 4h at this resolution; refine the grid")
    return best, info


def point_mass_problem(measures: list[Measure], spec: GridSpec | None = None,
                       h: float = 1 / 128) -> PhaseProblem:
    """The δ-disk problem behind point_mass_qd (δ recorded as problem.eps)."""
    for mu in measures:
        if mu.density is not None or not mu.atoms:
            raise ValueError("point_mass_qd takes atom-only measures")
    atoms = [list(mu.atoms) for mu in measures]
    if spec is None:
        spec = auto_grid(sum(measures[1:], measures[0]), h)
    delta, _ = choose_delta(atoms, spec.h)
    dens, seeds = [], []
    for ph in atoms:
        d = np.zeros(spec.shape)
        A = np.zeros(spec.shape, bool)
        for (x, y, c) in ph:
            disk = _disk_nodes(spec, x, y, delta)
            d[disk] += c / (spec.h ** 2 * disk.sum())
            A |= disk
        dens.append(Measure(density=GridFunction(spec, d)))
        seeds.append(A)
    return PhaseProblem(dens, spec, eps=delta, seeds=seeds)


def point_mass_qd(measures: list[Measure], spec: GridSpec | None = None, h: float = 1 / 128) -> tuple[SegregatedState, PhaseProblem]:
    """m-phase quadrature domain for finite sums of point masses.

    Atoms are replaced by uniform δ-disks on the node set within δ (so the
    seed condition c·χ_A ≤ μ^δ ≤ ‖μ^δ‖χ_A holds exactly on the grid), the
    S_{m,μ} minimiser is computed with those disks as seeds, and each u_j is
    corrected by U^{μ_j} - U^{μ_j^δ}, which vanishes outside the disks.
    """
    problem = point_mass_problem(measures, spec, h)
    spec = problem.spec
    atoms = [list(mu.atoms) for mu in measures]
    delta, info = choose_delta(atoms, spec.h)
    state = minimize_Smmu(problem)
    X, Y = spec.mesh()
    r_self = spec.h / math.sqrt(math.pi * math.e)
    U = state.stack().copy()
    for j, ph in enumerate(atoms):
        for (x, y, c) in ph:
            r = np.hypot(X - x, Y - y)
            inside = r < delta
            rr = np.where(r < 1e-9 * spec.h, r_self, np.maximum(r, 1e-300))
            corr = c * (-np.log(rr) / (2 * math.pi) + np.log(delta) / (2 * math.pi)
                        - (delta ** 2 - r ** 2) / (4 * math.pi * delta ** 2))
            U[j] += np.where(inside, corr, 0.0)
    out = SegregatedState([GridFunction(spec, U[j]) for j in range(len(atoms))], state.tau, dict(state.info))
    out.info.update(delta=delta, **info)
    out.info["atoms"] = atoms
    return out, problem
