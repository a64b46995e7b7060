"""One-phase partial balayage through the discrete obstacle problem.

W is the smallest non-negative grid function with -Δ_h W ≥ μ - ρ on the
admissible set D (and W = 0 off D); V = U^μ - W; ω = {W > τ_pos}.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import _obstacle
from .measures import Measure, MollifiedMeasure, grid_density, mollify, total_mass
from .potential import GridFunction, GridSpec, discrete_potential, write_gf1

DEFAULT_EPS_CELLS = 8


class BoxTooSmall(RuntimeError):
    """The non-contact set reached the edge of the computational box."""


class NotConverged(RuntimeError):
    pass


@dataclass(eq=False)
class BalayageResult:
    W: GridFunction
    omega: np.ndarray
    mu: MollifiedMeasure | Measure
    rho: np.ndarray
    D: np.ndarray
    tau_pos: float
    residual: float
    iterations: int
    solver: str
    _V: GridFunction | None = field(default=None, repr=False)

    @property
    def spec(self) -> GridSpec:
        return self.W.spec

    @property
    def V(self) -> GridFunction:
        """U^μ - W, with U^μ the 5-point-consistent potential (computed on first use)."""
        if self._V is None:
            self._V = discrete_potential(self.mu, self.spec) - self.W
        return self._V

    @property
    def mu_density(self) -> np.ndarray:
        return grid_density(self.mu, self.spec)

    @property
    def bal_density(self) -> GridFunction:
        return GridFunction(self.spec, np.where(self.omega, self.rho, 0.0))

    @property
    def bal_untouched(self) -> Measure:
        return Measure(density=GridFunction(self.spec, np.where(self.omega, 0.0, self.mu_density)))

    @property
    def bal_boundary(self) -> Measure:
        """Flux of W through ∂D: (μ + Δ_h W)⁺ on nodes outside D next to ω."""
        h = self.spec.h
        near = _dilate(self.omega) & ~self.D
        flux = np.maximum(self.mu_density - _obstacle.neg_laplacian(self.W.values, h), 0.0)
        return Measure(density=GridFunction(self.spec, np.where(near, flux, 0.0)))

    def report(self) -> dict:
        h = self.spec.h
        return {
            "residual": self.residual,
            "iterations": self.iterations,
            "area_omega": float(h * h * self.omega.sum()),
            "mass_mu": total_mass(self.mu),
            "tau_pos": self.tau_pos,
            "solver": self.solver,
        }

    def save(self, out: str | os.PathLike) -> None:
        os.makedirs(out, exist_ok=True)
        write_gf1(os.path.join(out, "W.gf1"), self.W)
        write_gf1(os.path.join(out, "V.gf1"), self.V)
        write_gf1(os.path.join(out, "omega.gf1"), GridFunction(self.spec, self.omega.astype(float)))
        with open(os.path.join(out, "report.json"), "w") as fh:
            json.dump(self.report(), fh, indent=2)


def _dilate(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def support_radius_bound(mu, n: int = 2) -> tuple[tuple[float, float], float]:
    """Centre of mass and a radius R₂ with {W^μ > 0} inside B_{R₂}(centre).

    R₂ = R₁ + (‖μ‖/|B_1|)^{1/n} with R₁ the diameter of the support plus a
    hair, so the ball around any support point covers the support.
    """
    pts = mu.support_points()
    if pts.size == 0:
        return (0.0, 0.0), 0.0
    if isinstance(mu, MollifiedMeasure):
        mu = mu.source
    w = np.array([a[2] for a in mu.atoms])
    cx = cy = 0.0
    mass = total_mass(mu)
    if mu.atoms:
        cx += float((w * np.array([a[0] for a in mu.atoms])).sum())
        cy += float((w * np.array([a[1] for a in mu.atoms])).sum())
    if mu.density is not None:
        X, Y = mu.density.spec.mesh()
        hh = mu.density.spec.h ** 2
        cx += float((mu.density.values * X).sum() * hh)
        cy += float((mu.density.values * Y).sum() * hh)
    cx, cy = cx / mass, cy / mass
    diam = 0.0
    if len(pts) > 1:
        from scipy.spatial import ConvexHull, QhullError

        try:
            hull = pts[ConvexHull(pts).vertices]
        except (QhullError, ValueError):
            hull = pts
        d = hull[:, None, :] - hull[None, :, :]
        diam = float(np.sqrt((d ** 2).sum(-1)).max())
    R1 = diam * (1 + 1e-9) + 1e-12
    return (cx, cy), R1 + math.sqrt(mass / math.pi)


def auto_grid(mu, h: float, eps: float | None = None) -> GridSpec:
    """Box centred at the centre of mass with half-width R₂ + 4ε."""
    if eps is None:
        eps = DEFAULT_EPS_CELLS * h
    (cx, cy), R2 = support_radius_bound(mu)
    if R2 == 0.0:
        return GridSpec.around(0.0, 0.0, 4 * h, h)
    return GridSpec.around(cx, cy, R2 + 4 * eps + 2 * h, h)


def prepare_source(mu, spec: GridSpec, eps: float | None = None):
    """Mollify bare atoms (default ε = 8h); pass grid densities through."""
    if isinstance(mu, MollifiedMeasure):
        return mu
    if mu.atoms:
        return mollify(mu, DEFAULT_EPS_CELLS * spec.h if eps is None else eps, spec)
    return mu


def solve_obstacle(f: np.ndarray, free: np.ndarray, h: float, solver: str = "pdas",
                   W0: np.ndarray | None = None) -> _obstacle.ObstacleSolution:
    if solver == "pdas":
        sol = _obstacle.pdas(f, free, h, W0=W0)
        if not sol.converged:
            # polish with projected SOR from the active-set iterate
            sol2 = _obstacle.psor(f, free, h, W0=sol.W)
            sol = _obstacle.ObstacleSolution(sol2.W, sol2.residual, sol.iterations + sol2.iterations, sol2.converged)
        return sol
    if solver == "psor":
        return _obstacle.psor(f, free, h, W0=W0)
    raise ValueError(f"unknown solver {solver!r}")


def tau_for(f: np.ndarray, h: float) -> float:
    """Positivity cutoff: ten times the solver tolerance, in units of W."""
    return 1e-7 * (1.0 + float(np.abs(f).max(initial=0.0))) * h * h


def partial_balayage(mu, D=None, rho=1.0, spec: GridSpec | None = None, *,
                     h: float | None = None, eps: float | None = None,
                     solver: str = "pdas", check_box: bool = True) -> BalayageResult:
    """Solve for W_{D,ρ}^μ on ``spec`` (or an automatic box at spacing ``h``).

    ``D`` is a boolean node mask or None for the whole plane.  ``rho`` is a
    constant or an array on the grid.
    """
    if spec is None:
        if h is None:
            raise ValueError("give either a grid or a spacing")
        spec = auto_grid(mu, h, eps)
    src = prepare_source(mu, spec, eps)
    dens = grid_density(src, spec)
    rho_arr = np.broadcast_to(np.asarray(rho, dtype=float), spec.shape).copy()
    if (rho_arr < 0).any():
        raise ValueError("rho must be non-negative")
    whole = D is None
    Dm = np.ones(spec.shape, bool) if whole else np.asarray(D, dtype=bool)
    if Dm.shape != spec.shape:
        raise ValueError("D mask does not match the grid")
    free = Dm & _obstacle.interior(spec.shape)
    f = dens - rho_arr
    sol = solve_obstacle(f, free, spec.h, solver)
    if not sol.converged:
        raise NotConverged(f"obstacle solver stopped at residual {sol.residual:.3e}")
    W = np.where(free, sol.W, 0.0)
    tau = tau_for(np.where(free, f, 0.0), spec.h)
    omega = W > tau
    if whole and check_box:
        ring = ~_obstacle.interior(spec.shape)
        if (_dilate(omega) & _dilate(ring)).any():
            raise BoxTooSmall("non-contact set touches the grid boundary; enlarge the box")
    return BalayageResult(GridFunction(spec, W), omega, src, rho_arr, Dm, tau,
                          sol.residual, sol.iterations, solver)


def noncontact_set(result: BalayageResult) -> np.ndarray:
    return result.omega.copy()


def balayage_measure(result: BalayageResult) -> Measure:
    """ρ|_ω + μ|_{ω^c} + ν assembled into one grid measure."""
    total = (result.bal_density.values + result.bal_untouched.density.values
             + result.bal_boundary.density.values)
    return Measure(density=GridFunction(result.spec, total))


def energy_Jf(W: np.ndarray, f: np.ndarray, h: float) -> float:
    """h²Σ(|∇_h W|² - 2 f W) with forward differences."""
    gx = np.diff(W, axis=1, append=0.0)
    gy = np.diff(W, axis=0, append=0.0)
    return float((gx ** 2).sum() + (gy ** 2).sum() - 2 * h * h * (f * W).sum())


def check_mollification_stability(mu: Measure, D=None, rho=1.0, eps_list=(), spec: GridSpec | None = None,
                                  *, h: float | None = None):
    """Compare V and ω across mollification radii against the default-ε run."""
    from .verify import Check, VerificationReport

    if spec is None:
        spec = auto_grid(mu, h if h is not None else 1 / 128, max(list(eps_list) + [DEFAULT_EPS_CELLS * (h or 1 / 128)]))
    base = partial_balayage(mu, D, rho, spec)
    pts = mu.support_points()
    X, Y = spec.mesh()
    j = np.clip(np.round((pts[:, 1] - spec.y0) / spec.h).astype(int), 0, spec.ny - 1)
    i = np.clip(np.round((pts[:, 0] - spec.x0) / spec.h).astype(int), 0, spec.nx - 1)
    if not base.omega[j, i].all():
        return VerificationReport([], status="NOT_APPLICABLE", note="support not inside the non-contact set")
    edge = base.omega & ~_erode(base.omega)
    ex, ey = X[edge], Y[edge]
    dist = min(float(np.hypot(ex - px, ey - py).min()) for (px, py) in pts)
    V0 = base.V.values
    scale = 1.0 + float(np.abs(V0).max())
    checks = []
    for eps in eps_list:
        if eps >= dist / 2:
            return VerificationReport(checks, status="NOT_APPLICABLE",
                                      note=f"ε = {eps:g} is not below half the distance {dist:g} to ∂ω")
        r = partial_balayage(mu, D, rho, spec, eps=eps)
        dv = np.abs(r.V.values - V0)
        k = int(np.argmax(dv))
        checks.append(Check(f"V_eps_{eps:.6g}", float(dv.max()), 1e-6 * scale, bool(dv.max() <= 1e-6 * scale),
                            _loc(spec, k)))
        diff = int((r.omega != base.omega).sum())
        checks.append(Check(f"omega_eps_{eps:.6g}", float(diff), 0.0, diff == 0, None))
    return VerificationReport(checks)


def _erode(mask: np.ndarray) -> np.ndarray:
    return ~_dilate(~mask)


def _loc(spec: GridSpec, flat: int) -> tuple[float, float]:
    j, i = divmod(flat, spec.nx)
    return (spec.x0 + i * spec.h, spec.y0 + j * spec.h)
