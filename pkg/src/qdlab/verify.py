"""A-posteriori certificates for one-phase and m-phase quadrature domains.

Every check is read-only and returns a VerificationReport; nothing raises on
a failed certificate.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from . import _obstacle
from .measures import Measure, MollifiedMeasure, grid_density, total_mass
from .potential import GridFunction, GridSpec

PDE_RTOL = 1e-6
INTERFACE_C = 5.0
QUADRATURE_TOL = 0.05
TEST_FAMILY_VERSION = "harmonic-k4+log40/v1"


@dataclass
class Check:
    """One certified quantity: ``passed`` is worst ≤ threshold (or ≥ for kind 'min')."""

    name: str
    worst: float
    threshold: float
    passed: bool
    location: tuple[float, float] | None = None
    kind: str = "max"

    def __post_init__(self):
        self.worst = float(self.worst)
        self.threshold = float(self.threshold)
        self.passed = bool(self.passed)
        if not math.isfinite(self.worst):
            raise ValueError(f"check {self.name}: residual is not finite")


@dataclass
class VerificationReport:
    checks: list[Check]
    status: str | None = None
    note: str = ""

    def __post_init__(self):
        if self.status is None:
            self.status = "PASS" if all(c.passed for c in self.checks) else "FAIL"
        if self.status not in ("PASS", "FAIL", "NOT_APPLICABLE"):
            raise ValueError(f"unknown status {self.status}")

    @property
    def overall(self) -> bool:
        return self.status == "PASS"

    def __bool__(self) -> bool:
        return self.overall

    def failed(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def get(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def merged(self, other: "VerificationReport", prefix: str = "") -> "VerificationReport":
        checks = self.checks + [Check(prefix + c.name, c.worst, c.threshold, c.passed, c.location, c.kind)
                                for c in other.checks]
        statuses = {self.status, other.status}
        note = "; ".join(n for n in (self.note, other.note) if n)
        if "FAIL" in statuses or not all(c.passed for c in checks):
            return VerificationReport(checks, "FAIL", note)
        if statuses == {"NOT_APPLICABLE"}:
            return VerificationReport(checks, "NOT_APPLICABLE", note)
        return VerificationReport(checks, "PASS", note)

    def to_dict(self) -> dict:
        return {"overall": self.overall, "status": self.status, "note": self.note,
                "test_family": TEST_FAMILY_VERSION, "checks": [asdict(c) for c in self.checks]}

    def save(self, path: str | os.PathLike) -> None:
        if os.path.isdir(path):
            path = os.path.join(path, "verify_report.json")
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def summary(self) -> str:
        lines = [f"{self.status}" + (f" ({self.note})" if self.note else "")]
        for c in self.checks:
            op = "≥" if c.kind == "min" else "≤"
            lines.append(f"  [{'ok' if c.passed else 'FAIL'}] {c.name}: {c.worst:.4g} {op} {c.threshold:.4g}")
        return "\n".join(lines)


def _loc(spec: GridSpec, flat: int) -> tuple[float, float]:
    j, i = divmod(int(flat), spec.nx)
    return (spec.x0 + i * spec.h, spec.y0 + j * spec.h)


def _erode(mask: np.ndarray, k: int = 1) -> np.ndarray:
    if k <= 0:
        return mask.copy()
    return ndimage.binary_erosion(mask, iterations=k, border_value=0)


def _boundary_edges(Q: np.ndarray) -> int:
    P = np.pad(Q, 1)
    return int((P[1:, :] != P[:-1, :]).sum() + (P[:, 1:] != P[:, :-1]).sum())


def _source(mu):
    return mu.source if isinstance(mu, MollifiedMeasure) else mu


def _support_nodes(mu, spec: GridSpec) -> np.ndarray:
    """Node mask of the (unmollified) support; atoms mark their nearest node."""
    src = _source(mu)
    out = np.zeros(spec.shape, bool)
    for (x, y, _) in src.atoms:
        j, i = spec.nearest(x, y)
        if 0 <= j < spec.ny and 0 <= i < spec.nx:
            out[j, i] = True
    if src.density is not None:
        out |= grid_density(Measure(density=src.density), spec) > 0
    return out


def _support_distance(Q: np.ndarray, support: np.ndarray, h: float) -> tuple[float, int | None]:
    """Smallest distance from a support node to a node outside Q (0 if outside)."""
    if not support.any():
        return math.inf, None
    dist = ndimage.distance_transform_edt(Q) * h
    d = np.where(support, dist, np.inf)
    k = int(np.argmin(d))
    return float(d.ravel()[k]), k


def check_one_phase_qd(Q: np.ndarray, mu, u: GridFunction, *, eps: float = 0.0,
                       exclude: np.ndarray | None = None, rtol: float = PDE_RTOL) -> VerificationReport:
    """u = 0 off Q, -Δ_h u = μ - 1 deep inside Q, u > τ_pos on Q, supp μ inside Q.

    The support must lie at distance ≥ 2·eps from the complement of Q.
    """
    spec = u.spec
    h = spec.h
    Q = np.asarray(Q, bool)
    dens = grid_density(mu, spec)
    f = dens - 1.0
    tau = 1e-7 * (1.0 + float(np.abs(f).max())) * h * h
    U = u.values
    checks = []

    off = np.where(Q, 0.0, np.abs(U))
    k = int(np.argmax(off))
    checks.append(Check("zero_outside", off.max(), tau, off.max() <= tau, _loc(spec, k)))

    deep = _erode(Q, 2) & _obstacle.interior(spec.shape)
    if exclude is not None:
        deep &= ~exclude
    scale = 1.0 + float(dens.max(initial=0.0))
    if deep.any():
        r = np.where(deep, np.abs(_obstacle.neg_laplacian(U, h) - f), 0.0)
        k = int(np.argmax(r))
        checks.append(Check("pde_interior", r.max(), rtol * scale, r.max() <= rtol * scale, _loc(spec, k)))

    if Q.any():
        lo = np.where(Q, U, np.inf)
        k = int(np.argmin(lo))
        checks.append(Check("positivity", lo.ravel()[k], tau, lo.ravel()[k] > tau, _loc(spec, k), "min"))

    if total_mass(_source(mu)) > 0:
        d, k = _support_distance(Q, _support_nodes(mu, spec), h)
        need = max(2.0 * eps, h * 0.5)
        checks.append(Check("support_interior", d, need, d >= need, None if k is None else _loc(spec, k), "min"))
    return VerificationReport(checks)


def interface_residuals(U: np.ndarray, F: np.ndarray, masks: list[np.ndarray], h: float) -> np.ndarray:
    """Σ_{l≠j} f_l χ_{Q_l} - f_j χ_{Q_j} + Δ_h(Σ_{l≠j} u_l - u_j) for every j."""
    m = U.shape[0]
    chi = np.stack([np.where(masks[j], F[j], 0.0) for j in range(m)])
    lap = np.stack([-_obstacle.neg_laplacian(U[j], h) for j in range(m)])
    tot_chi, tot_lap = chi.sum(0), lap.sum(0)
    inner = _obstacle.interior(U.shape[1:])
    out = np.empty_like(U)
    for j in range(m):
        r = (tot_chi - 2 * chi[j]) + (tot_lap - 2 * lap[j])
        out[j] = np.where(inner, r, np.inf)
    return out


def check_strong_mqd(state, problem, *, C: float = INTERFACE_C, exclude: np.ndarray | None = None,
                     restrict_to_free_of_others: bool = False) -> VerificationReport:
    """Certify the strong m-phase definition on the grid.

    The measure inequality is tested nodewise against -C·h·(1 + ‖μ‖_∞).
    ``exclude`` masks nodes left out of the inequality (e.g. neighbourhoods of
    atoms).  With ``restrict_to_free_of_others`` each phase's inequality is
    only required off the other phases' supports (the S_{m,μ} variant).
    """
    if state.spec != problem.spec:
        return VerificationReport([], "FAIL", "state and problem live on different grids")
    spec, h = problem.spec, problem.h
    masks = state.masks
    if problem.m == 1:
        return check_one_phase_qd(masks[0], problem.mollified[0], state.u[0], eps=problem.eps, exclude=exclude)
    U = state.stack()
    F = np.stack([problem.f(j) for j in range(problem.m)])
    checks = []
    overlap = (np.stack(masks).sum(0) > 1)
    checks.append(Check("disjoint", float(overlap.sum()), 0.0, not overlap.any(),
                        _loc(spec, int(np.argmax(overlap))) if overlap.any() else None))
    neg = float(U.min())
    checks.append(Check("nonnegative", neg, 0.0, neg >= 0.0, _loc(spec, int(np.argmin(U.min(0)))), "min"))
    tol = C * h * (1.0 + problem.mu_sup)
    res = interface_residuals(U, F, masks, h)
    for j in range(problem.m):
        r = res[j].copy()
        if exclude is not None:
            r[exclude] = np.inf
        if restrict_to_free_of_others:
            for l in range(problem.m):
                if l != j:
                    r[problem.density(l) > 0] = np.inf
        k = int(np.argmin(r))
        worst = float(r.ravel()[k]) if np.isfinite(r.ravel()[k]) else 0.0
        checks.append(Check(f"interface_{j + 1}", worst, -tol, worst >= -tol, _loc(spec, k), "min"))
    for j in range(problem.m):
        d, k = _support_distance(masks[j], _support_nodes(problem.measures[j], spec), h)
        need = 2.0 * problem.eps
        checks.append(Check(f"support_interior_{j + 1}", min(d, 1e300), need, d >= need,
                            None if k is None else _loc(spec, k), "min"))
    return VerificationReport(checks)


def check_euler_lagrange(state, problem, *, C: float = INTERFACE_C, smmu: bool = False) -> VerificationReport:
    """The Euler-Lagrange inequality of minimisers (the same field as the interface check)."""
    rep = check_strong_mqd(state, problem, C=C, restrict_to_free_of_others=smmu)
    keep = [c for c in rep.checks if c.name.startswith("interface_")]
    if problem.m == 1:
        keep = rep.checks
    return VerificationReport([Check("el_" + c.name, c.worst, c.threshold, c.passed, c.location, c.kind)
                               for c in keep])


def check_state_bounds(state, problem) -> VerificationReport:
    """u_j ≤ W^{μ_j} + tol and μ_j ≤ 1 + tol outside closure(∪_{l≠j} Q_l) ∪ Q_j."""
    spec, h = problem.spec, problem.h
    tol = 10 * state.tau
    checks = []
    W1 = state.one_phase
    if W1 is None:
        from .balayage import partial_balayage

        W1 = [partial_balayage(mu, None, 1.0, spec).W.values for mu in problem.mollified]
    masks = state.masks
    for j in range(problem.m):
        ex = state.u[j].values - W1[j]
        k = int(np.argmax(ex))
        checks.append(Check(f"below_one_phase_{j + 1}", ex.ravel()[k], tol, ex.ravel()[k] <= tol, _loc(spec, k)))
        others = np.zeros(spec.shape, bool)
        for l in range(problem.m):
            if l != j:
                others |= masks[l]
        closed = ndimage.binary_dilation(others) if others.any() else others
        outside = ~(closed | masks[j])
        dens = np.where(outside, problem.density(j), 0.0)
        k = int(np.argmax(dens))
        lim = 1.0 + 1e-9
        checks.append(Check(f"exterior_density_{j + 1}", dens.ravel()[k], lim, dens.ravel()[k] <= lim, _loc(spec, k)))
    return VerificationReport(checks)


def _harmonic_family():
    fam = [("one", lambda z: np.ones_like(z.real))]
    for k in range(1, 5):
        fam.append((f"re_z{k}", lambda z, k=k: (z ** k).real))
        fam.append((f"im_z{k}", lambda z, k=k: (z ** k).imag))
    return fam


def _integrate(mu, s) -> float:
    """∫ s dμ: atoms exactly, densities by the cell sum."""
    src = _source(mu)
    tot = 0.0
    for (x, y, m) in src.atoms:
        tot += m * float(s(np.array([complex(x, y)]))[0])
    if src.density is not None:
        X, Y = src.density.spec.mesh()
        d = src.density.values
        pos = d > 0
        tot += src.density.spec.h ** 2 * float((d[pos] * s(X[pos] + 1j * Y[pos])).sum())
    return tot


def check_quadrature_inequality(Q, mu, spec: GridSpec | None = None, *, tol: float = QUADRATURE_TOL,
                                n_log: int = 40) -> VerificationReport:
    """h²Σ_Q s ≥ ∫ s dμ - tol·‖s‖_{L¹(Q)} over a fixed test family.

    The family: Re/Im zᵏ for k ≤ 4 with both signs (two-sided identities),
    and ln|x - a| for ``n_log`` centres a split over two circles around Q.
    """
    if isinstance(Q, GridFunction):
        spec = Q.spec
        Q = Q.values > 0.5
    if spec is None:
        raise ValueError("a grid is needed to integrate over the mask")
    Q = np.asarray(Q, bool)
    h = spec.h
    if not Q.any():
        return VerificationReport([Check("nonempty", 0.0, 1.0, False, None, "min")], "FAIL", "empty domain")
    X, Y = spec.mesh()
    Z = X[Q] + 1j * Y[Q]
    checks = []
    fam = []
    for name, s in _harmonic_family():
        fam.append((name + "_pos", s))
        fam.append((name + "_neg", lambda z, s=s: -s(z)))
    c = Z.mean()
    R = float(np.abs(Z - c).max()) + h
    half = n_log // 2
    for ring, rad in enumerate((1.1 * R + 2 * h, 1.6 * R)):
        for k in range(half if ring == 0 else n_log - half):
            a = c + rad * np.exp(2j * np.pi * (k + 0.5 * ring) / (half if ring == 0 else n_log - half))
            fam.append((f"log_r{ring}_{k:02d}", lambda z, a=a: np.log(np.abs(z - a))))
    for name, s in fam:
        vals = s(Z)
        lhs = h * h * float(vals.sum())
        l1 = h * h * float(np.abs(vals).sum())
        rhs = _integrate(mu, s)
        gap = (rhs - lhs) / max(l1, 1e-300)
        checks.append(Check(name, gap, tol, gap <= tol))
    return VerificationReport(checks)


def check_fixed_point(state, problem) -> VerificationReport:
    """Q_i against ω_{Q_i}(μ_i): symmetric difference within 2·(boundary edge count) nodes."""
    from .balayage import partial_balayage

    checks = []
    for j, Q in enumerate(state.masks):
        if not Q.any():
            checks.append(Check(f"fixed_point_{j + 1}", 0.0, 0.0, True))
            continue
        r = partial_balayage(problem.mollified[j], Q, 1.0, problem.spec)
        diff = r.omega != Q
        lim = 2 * _boundary_edges(Q)
        k = int(np.argmax(diff))
        checks.append(Check(f"fixed_point_{j + 1}", float(diff.sum()), float(lim), diff.sum() <= lim,
                            _loc(problem.spec, k) if diff.any() else None))
    return VerificationReport(checks)


def certify(state, problem, *, exclude: np.ndarray | None = None, smmu: bool = False) -> VerificationReport:
    """Strong m-phase check plus the fixed-point test.

    The per-phase quadrature inequality is reported separately by
    quadrature_report: touching phases sweep mass onto shared interfaces, so
    |Q_i| < μ_i(R^n) there and the one-phase inequality is not expected.
    """
    rep = check_strong_mqd(state, problem, exclude=exclude, restrict_to_free_of_others=smmu)
    return rep.merged(check_fixed_point(state, problem))


def quadrature_report(state, problem) -> VerificationReport:
    """Per-phase quadrature inequalities, informational for touching phases."""
    rep = VerificationReport([])
    for j, Q in enumerate(state.masks):
        rep = rep.merged(check_quadrature_inequality(Q, problem.measures[j], problem.spec), prefix=f"q{j + 1}_")
    return rep
