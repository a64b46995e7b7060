"""Closed forms for the planar examples: ring-measure profiles and energies,
the equal-energy root, the two-phase nonexistence search, and the sector
junction problem with its barrier.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import _obstacle
from .balayage import BalayageResult, DEFAULT_EPS_CELLS, partial_balayage
from .measures import Measure, mollify
from .potential import GridFunction, GridSpec

# --- ring measures and their one-phase profiles ----------------------------


@dataclass(frozen=True)
class AnnulusProfile:
    """W(R1, R2, r): one-phase potential of the ring measure (R2²/2R1)·arc length on |x| = R1."""

    R1: float
    R2: float

    def __post_init__(self):
        if not 0 < self.R1 < self.R2:
            raise ValueError("need 0 < R1 < R2")

    @property
    def C1(self) -> float:
        return self.R2 ** 2 / 2 * math.log(self.R2 / self.R1) - self.R2 ** 2 / 4

    @property
    def C2(self) -> float:
        return -self.R2 ** 2 / 2

    @property
    def C3(self) -> float:
        return self.R2 ** 2 / 2 * math.log(self.R2) - self.R2 ** 2 / 4

    @property
    def line_density(self) -> float:
        return self.R2 ** 2 / (2 * self.R1)

    @property
    def mass(self) -> float:
        return math.pi * self.R2 ** 2

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        inner = r ** 2 / 4 + self.C1
        with np.errstate(divide="ignore"):
            mid = r ** 2 / 4 + self.C2 * np.log(np.where(r > 0, r, 1.0)) + self.C3
        out = np.where(r < self.R1, inner, np.where(r < self.R2, mid, 0.0))
        return float(out) if out.ndim == 0 else out

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        mid = r / 2 + self.C2 / np.where(r > 0, r, 1.0)
        out = np.where(r < self.R1, r / 2, np.where(r < self.R2, mid, 0.0))
        return float(out) if out.ndim == 0 else out


def radial_W(R1: float, R2: float, r):
    return AnnulusProfile(R1, R2)(r)


def radial_energy(R1: float, R2: float) -> float:
    """π/8 (3R2⁴ - 4R2⁴ ln(R2/R1) - 4R1²R2²)."""
    if not 0 < R1 <= R2:
        raise ValueError("need 0 < R1 ≤ R2")
    return math.pi / 8 * (3 * R2 ** 4 - 4 * R2 ** 4 * math.log(R2 / R1) - 4 * R1 ** 2 * R2 ** 2)


def radial_energy_quadrature(R1: float, R2: float) -> float:
    """-2π ∫₀^{R2} r W'(r)² dr by adaptive quadrature, split at the ring."""
    p = AnnulusProfile(R1, R2)
    g = lambda r: r * p.derivative(r) ** 2
    a, _ = integrate.quad(g, 0.0, R1, epsabs=0, epsrel=1e-13, limit=200)
    b, _ = integrate.quad(g, R1, R2, epsabs=0, epsrel=1e-13, limit=200)
    return -2 * math.pi * (a + b)


def equal_energy_gap(R: float) -> float:
    return radial_energy(R, 17.0) - radial_energy(4.0, 16.0)


def solve_equal_energy(lo: float = 5.0, hi: float = 5.1, tol: float = 1e-10) -> float:
    """Bisection for radial_energy(R, 17) = radial_energy(4, 16) on [lo, hi]."""
    glo, ghi = equal_energy_gap(lo), equal_energy_gap(hi)
    if glo * ghi > 0:
        raise ValueError(f"no sign change on [{lo}, {hi}]: g = {glo:.6g}, {ghi:.6g}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        gm = equal_energy_gap(mid)
        if gm == 0:
            return mid
        if (gm < 0) == (glo < 0):
            lo, glo = mid, gm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ring_density(R1: float, R2: float, eps: float, d):
    """Density of the ring measure mollified by the normalised ε-disk, at distance d from 0."""
    d = np.asarray(d, dtype=float)
    lam = R2 ** 2 / (2 * R1)
    near = np.abs(d - R1) < eps
    dd = np.where(d > 0, d, 1.0)
    cosang = np.clip((dd ** 2 + R1 ** 2 - eps ** 2) / (2 * dd * R1), -1.0, 1.0)
    arc = np.where(near, 2 * R1 * np.arccos(cosang), 0.0)
    if eps > R1:
        arc = np.where(d <= eps - R1, 2 * math.pi * R1, arc)
    return lam * arc / (math.pi * eps ** 2)


def ring_measure(R1: float, R2: float, spec: GridSpec, eps: float | None = None) -> Measure:
    """The mollified ring measure as a grid density with its mass renormalised."""
    eps = DEFAULT_EPS_CELLS * spec.h if eps is None else eps
    X, Y = spec.mesh()
    d = ring_density(R1, R2, eps, np.hypot(X, Y))
    d *= math.pi * R2 ** 2 / (d.sum() * spec.h ** 2)
    return Measure(density=GridFunction(spec, d))


def discrete_radial_energy(R1: float, R2: float, h: float, eps: float | None = None,
                           rows_per_block: int = 256) -> float:
    """Σ_edges (ΔW)² - 2h² Σ (μ_ε - 1) W for the closed-form W on a grid of spacing h.

    The grid is the square box covering B_{R2 + 2h} centred at the origin; it
    is streamed in row blocks so h = 1/256 fits in memory.  μ_ε is the ring
    measure mollified analytically and sampled at nodes, renormalised to the
    exact mass.
    """
    p = AnnulusProfile(R1, R2)
    eps = DEFAULT_EPS_CELLS * h if eps is None else eps
    k = int(math.ceil((R2 + eps) / h)) + 2
    xs = h * np.arange(-k, k + 1)
    grad = 0.0
    lin_w = 0.0
    lin_mu = 0.0
    mass = 0.0
    prev = None
    for start in range(0, xs.size, rows_per_block):
        ys = xs[start:start + rows_per_block]
        r = np.hypot(xs[None, :], ys[:, None])
        W = p(r)
        mu = ring_density(R1, R2, eps, r)
        grad += float((np.diff(W, axis=1) ** 2).sum())
        grad += float((np.diff(W, axis=0) ** 2).sum())
        if prev is not None:
            grad += float(((W[0] - prev) ** 2).sum())
        prev = W[-1].copy()
        lin_w += float(W.sum())
        lin_mu += float((mu * W).sum())
        mass += float(mu.sum())
    scale = p.mass / (mass * h * h)
    return grad - 2 * h * h * (lin_mu * scale - lin_w)


def energy_decrease_pattern(R1: float, R2_values) -> list[int]:
    """Signs of successive differences of radial_energy(R1, ·) over the given R2 values."""
    E = [radial_energy(R1, r) for r in R2_values]
    return [int(np.sign(b - a)) for a, b in zip(E, E[1:])]


# --- the two-phase nonexistence search ------------------------------------

def _d_coeffs(r1, r2, r3, R):
    """d1..d8 from the continuity and free-boundary equations (r1 > 0 branch)."""
    d1 = -r1 ** 2 / 2
    d2 = r1 ** 2 / 2 * np.log(r1) - r1 ** 2 / 4
    d3 = (2 * r1 ** 2 * np.log(4 / r1) + r1 ** 2 - r2 ** 2) / (4 * np.log(r2 / 4))
    d4 = -r2 ** 2 / 4 - d3 * np.log(r2)
    d7 = -r3 ** 2 / 2
    d8 = r3 ** 2 / 2 * np.log(r3) - r3 ** 2 / 4
    d5 = (2 * r3 ** 2 * np.log(r3 / R) - r3 ** 2 + r2 ** 2) / (4 * np.log(R / r2))
    d6 = -r2 ** 2 / 4 - d5 * np.log(r2)
    return d1, d2, d3, d4, d5, d6, d7, d8


def nonexistence_residuals(r1, r2, r3, R: float, branch: str = "r1>0") -> np.ndarray:
    """Residual vector (ring jump at 4, interface balance at r2, ring jump at R, area match).

    Each entry is the corresponding equation with its logarithmic
    denominators cleared, so it stays finite as r2 → 4 or r2 → R.
    """
    r1, r2, r3 = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (r1, r2, r3)))
    L4 = np.log(r2 / 4)
    LR = np.log(R / r2)
    num5 = 2 * r3 ** 2 * np.log(r3 / R) - r3 ** 2 + r2 ** 2
    e11 = -2 * r3 ** 2 * np.log(r3 / r2) + r3 ** 2 - r2 ** 2 + 578 * LR
    if branch == "r1>0":
        num3 = 2 * r1 ** 2 * np.log(4 / r1) + r1 ** 2 - r2 ** 2
        e9 = 2 * r1 ** 2 * np.log(r2 / r1) + r1 ** 2 - r2 ** 2 + 512 * L4
        e10 = num3 * LR + num5 * L4 + 4 * r2 ** 2 * L4 * LR
        area = r3 ** 2 - 2 * r2 ** 2 + r1 ** 2 - 33
        return np.stack([e9, e10, e11, area])
    if branch == "r1=0":
        e10 = (r2 ** 2 - 128) * 4 * LR + num5
        area = r3 ** 2 - 2 * r2 ** 2 - 33
        return np.stack([e10, e11, area])
    raise ValueError(f"unknown branch {branch!r}")


@dataclass
class SearchReport:
    branch: str
    min_residual: float
    argmin: tuple[float, ...]
    components: list[float]
    near_feasible_e9_count: int = 0
    near_feasible_e9_max_r2: float = float("nan")
    evaluated: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def _norm(res: np.ndarray) -> np.ndarray:
    return np.sqrt((res ** 2).sum(axis=0))


def _axes(R: float, n: int, r1_min: float, branch: str):
    t = (np.arange(n) + 0.5) / n
    r1 = r1_min + (4 - r1_min) * t if branch == "r1>0" else np.zeros(1)
    r2 = 4 + (R - 4) * t
    r3 = R + (17 - R) * np.linspace(0, 1, n + 1)[1:]
    return r1, r2, r3


def _scan(R, r1, r2, r3, branch, chunk=16):
    """Exhaustive evaluation; returns the best value, triple, and near-feasible stats."""
    best, arg = math.inf, None
    cnt, max_r2 = 0, -math.inf
    for a in range(0, r1.size, chunk):
        A, B, Cc = np.meshgrid(r1[a:a + chunk], r2, r3, indexing="ij")
        res = nonexistence_residuals(A, B, Cc, R, branch)
        nrm = _norm(res)
        k = np.unravel_index(np.argmin(nrm), nrm.shape)
        if nrm[k] < best or (nrm[k] == best and (A[k], B[k], Cc[k]) < arg):
            best, arg = float(nrm[k]), (float(A[k]), float(B[k]), float(Cc[k]))
        if branch == "r1>0":
            near = np.abs(res[0]) <= 1e-3
            if near.any():
                cnt += int(near.sum())
                max_r2 = max(max_r2, float(B[near].max()))
    return best, arg, cnt, max_r2


def _candidates(R, r1, r2, r3, branch, k, chunk=16):
    """The k smallest residual triples of the coarse scan (distinct cells)."""
    vals, trip = [], []
    for a in range(0, r1.size, chunk):
        A, B, Cc = np.meshgrid(r1[a:a + chunk], r2, r3, indexing="ij")
        nrm = _norm(nonexistence_residuals(A, B, Cc, R, branch)).ravel()
        idx = np.argpartition(nrm, min(k, nrm.size - 1))[:k]
        vals.extend(nrm[idx])
        trip.extend(zip(A.ravel()[idx], B.ravel()[idx], Cc.ravel()[idx]))
    order = np.lexsort((np.array([t[2] for t in trip]), np.array([t[1] for t in trip]),
                        np.array([t[0] for t in trip]), np.array(vals)))
    return [trip[i] for i in order[:k]]


def nonexistence_search(resolution: int = 200, refinements: int = 2, R: float | None = None,
                        branch: str = "r1>0", r1_min: float = 1e-3, n_local: int = 21,
                        n_candidates: int = 16) -> SearchReport:
    """Minimum residual norm of the two-phase radial system over admissible radii.

    0 < r1 < 4 < r2 < R < r3 ≤ 17 (r1 = 0 in the other branch).  The coarse
    scan is exhaustive at ``resolution`` points per axis; each refinement
    round rescans a ``n_local``-point box of half the previous width around
    the current best candidates, clipped to the admissible region.
    """
    if R is None:
        R = solve_equal_energy()
    r1, r2, r3 = _axes(R, resolution, r1_min, branch)
    best, arg, cnt, max_r2 = _scan(R, r1, r2, r3, branch)
    total = r1.size * r2.size * r3.size
    cands = _candidates(R, r1, r2, r3, branch, n_candidates)
    steps = [(4 - r1_min) / resolution if branch == "r1>0" else 0.0, (R - 4) / resolution, (17 - R) / resolution]
    for _ in range(refinements):
        new = []
        for (a, b, c) in cands:
            la = np.clip(a + steps[0] * np.linspace(-1, 1, n_local), r1_min, 4 - 1e-12) if branch == "r1>0" else np.zeros(1)
            lb = np.clip(b + steps[1] * np.linspace(-1, 1, n_local), 4 + 1e-12, R - 1e-12)
            lc = np.clip(c + steps[2] * np.linspace(-1, 1, n_local), R + 1e-12, 17.0)
            v, t, n1, m1 = _scan(R, la, lb, lc, branch)
            total += la.size * lb.size * lc.size
            cnt += n1
            max_r2 = max(max_r2, m1)
            new.append(t)
            if v < best:
                best, arg = v, t
        cands = new
        steps = [s / (n_local // 2) for s in steps]
    comp = nonexistence_residuals(*arg, R, branch).tolist()
    argout = arg if branch == "r1>0" else arg[1:]
    return SearchReport(branch, best, tuple(argout), comp, cnt, max_r2, total, {"R": R})


def radial_two_phase_root(R: float | None = None, guess: tuple[float, float] = (4.7, 8.8)) -> dict:
    """Root (r2, r3) of the r1 = 0 residual system, polished by Newton's method.

    Returns the radii, the largest residual and the Jacobian condition; a
    small residual means a radial two-phase configuration does exist there.
    """
    if R is None:
        R = solve_equal_energy()
    x = np.array(guess, dtype=float)
    F = lambda z: nonexistence_residuals(0.0, z[0], z[1], R, "r1=0")
    for _ in range(50):
        f = F(x)
        J = np.empty((3, 2))
        for k in range(2):
            dz = np.zeros(2)
            dz[k] = 1e-7 * max(1.0, abs(x[k]))
            J[:, k] = (F(x + dz) - F(x - dz)) / (2 * dz[k])
        step = np.linalg.lstsq(J, -f, rcond=None)[0]
        x = x + step
        if np.abs(step).max() < 1e-14 * (1 + np.abs(x).max()):
            break
    res = F(x)
    return {"r2": float(x[0]), "r3": float(x[1]), "R": R, "max_residual": float(np.abs(res).max()),
            "residuals": res.tolist(), "admissible": bool(4 < x[0] < R < x[1] <= 17)}


# --- the sector junction problem ------------------------------------------

@dataclass(frozen=True)
class SectorProblem:
    """Sector |θ| < theta0 with a point mass C at z = 1."""

    theta0: float
    C: float
    h: float = 1 / 128
    eps: float | None = None
    node_budget: int = 2_500_000

    def __post_init__(self):
        if not 0 < self.theta0 < math.pi / 2:
            raise ValueError("theta0 must lie strictly inside (0, π/2)")
        if not self.C > 0:
            raise ValueError("C must be positive")

    @property
    def epsilon(self) -> float:
        return DEFAULT_EPS_CELLS * self.h if self.eps is None else self.eps


def sector_mask(spec: GridSpec, theta0: float, centre_angle: float = 0.0) -> np.ndarray:
    """Nodes with |θ - centre_angle| < theta0 (node-centre membership; apex excluded)."""
    X, Y = spec.mesh()
    ang = np.angle((X + 1j * Y) * np.exp(-1j * centre_angle))
    return (np.abs(ang) < theta0) & (np.hypot(X, Y) > 1e-12)


def _sector_box(p: SectorProblem, scale: float = 1.0) -> tuple[GridSpec, bool]:
    """Box [-0.5, L] × [-L', L'] from ω ⊂ B(1, √(C/π)), clipped to the node budget."""
    h, eps = p.h, p.epsilon
    r = math.sqrt(p.C / math.pi) * scale
    L = 1 + r + 4 * eps
    Ly = min(r + 4 * eps, L * math.tan(p.theta0) + 2 * h)
    truncated = False
    while (L + 0.5) * 2 * Ly / h ** 2 > p.node_budget:
        truncated = True
        L *= 0.95
        Ly = min(Ly, L * math.tan(p.theta0) + 2 * h)
    if L < 1 + 4 * eps:
        raise ValueError("node budget too small to hold the mass neighbourhood")
    i0 = int(math.ceil(0.5 / h))
    nx = i0 + int(math.ceil(L / h)) + 1
    ky = int(math.ceil(Ly / h))
    return GridSpec(-i0 * h, -ky * h, nx, 2 * ky + 1, h), truncated


@dataclass(eq=False)
class SectorResult:
    result: BalayageResult
    truncated: bool
    problem: SectorProblem

    @property
    def omega(self) -> np.ndarray:
        return self.result.omega

    @property
    def W(self) -> GridFunction:
        return self.result.W

    def hole_radius(self) -> float:
        """Distance from the apex to the nearest node of ω."""
        X, Y = self.result.spec.mesh()
        if not self.omega.any():
            return math.inf
        return float(np.hypot(X[self.omega], Y[self.omega]).min())


def sector_balayage(p: SectorProblem) -> SectorResult:
    """Partial balayage of C·δ₁ in the sector, with the box rule and one enlargement retry.

    When the box would exceed ``node_budget`` the run uses D ∩ box and is
    flagged truncated; ω of the truncated run is contained in the true ω.
    """
    mu = Measure.point(1.0, 0.0, p.C)
    for scale in (1.0, 2.0):
        spec, truncated = _sector_box(p, scale)
        D = sector_mask(spec, p.theta0)
        src = mollify(mu, p.epsilon, spec)
        r = partial_balayage(src, D, 1.0, spec)
        edge = ~_obstacle.interior(spec.shape)
        touches = bool((_dilate(r.omega) & _dilate(edge)).any())
        if not touches:
            return SectorResult(r, truncated, p)
        if truncated:
            return SectorResult(r, True, p)
    raise RuntimeError("sector box too small even after doubling")


def _dilate(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


class Inconclusive(RuntimeError):
    """A truncated run could not decide the question."""


def junction_test(theta0: float, C: float, eps: float, h: float = 1 / 128, *,
                  result: SectorResult | None = None) -> bool:
    """Whether ω_D(Cδ₁) comes within ``eps`` of the apex on the grid."""
    if eps < 2 * h * (1 - 1e-12):
        raise ValueError("eps must be at least 2h")
    res = result or sector_balayage(SectorProblem(theta0, C, h))
    hit = res.hole_radius() <= eps * (1 + 1e-12)
    if not hit and res.truncated:
        raise Inconclusive("truncated box: a negative answer is not certified")
    return hit


def barrier_h(s: float, r):
    """h_s(r) = r²/4 ln(r/s) - r²/16 + s⁴/(16 r²)."""
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("r must be positive")
    out = r ** 2 / 4 * np.log(r / s) - r ** 2 / 16 + s ** 4 / (16 * r ** 2)
    return float(out) if out.ndim == 0 else out


def barrier_hprime1(s: float) -> float:
    """h_s'(1) = ln(1/s)/2 + 1/8 - s⁴/8."""
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    return 0.5 * math.log(1 / s) + 0.125 - s ** 4 / 8


def _h_log(L: float, r):
    """h_s(r) written with L = ln(1/s), so s far below the float range is fine."""
    r = np.asarray(r, dtype=float)
    lr = np.log(r)
    return r ** 2 / 4 * (lr + L) - r ** 2 / 16 + np.exp(np.minimum(-4 * L - 2 * lr, 700.0)) / 16


def barrier_f(s: float, X: np.ndarray, Y: np.ndarray, log_inv_s: float | None = None) -> np.ndarray:
    """f_s in the quarter-angle sector: h_s(r) cos 2θ on s ≤ r ≤ 1, h_s(1) cos 2θ beyond, 0 inside B_s."""
    L = math.log(1 / s) if log_inv_s is None else log_inv_s
    r = np.hypot(X, Y)
    c2 = np.cos(2 * np.arctan2(Y, X))
    inner = np.log(np.maximum(r, 1e-300)) < -L
    rr = np.clip(r, 1e-300, 1.0)
    val = _h_log(L, rr) * c2
    return np.where(inner, 0.0, val)


@dataclass
class BarrierCertificate:
    s: float
    log_inv_s: float
    hprime1: float
    radius: float
    max_excess: float
    tol: float
    passed: bool


def barrier_certificate(res: SectorResult, radius: float | None = None) -> BarrierCertificate:
    """W ≤ f_s + tol on B_radius ∩ D for the matched s.

    s is the largest 2^{-k} for which f_s dominates W on the circle
    r = radius, radius = 1 - 2ε by default (inside that circle μ_ε vanishes
    and the comparison argument applies).  f_s ≥ 0 with -Δf_s ≥ -1 there,
    so the minimality of W forces W ≤ f_s; the check confirms it on the grid
    and so certifies that ω stays out of B_s.  s underflows for large C, so
    the certificate also carries L = ln(1/s).
    """
    p = res.problem
    if abs(p.theta0 - math.pi / 4) > 1e-12:
        raise ValueError("the f_s barrier is for the quarter-angle sector θ0 = π/4")
    spec = res.result.spec
    h = spec.h
    radius = 1 - 2 * p.epsilon if radius is None else radius
    X, Y = spec.mesh()
    W = res.W.values
    r = np.hypot(X, Y)
    ring = (np.abs(r - radius) <= h) & res.result.D
    c2 = np.cos(2 * np.arctan2(Y, X))
    # nodes of the ring sit at slightly different radii, so match node by node
    ok = ring & (c2 > 1e-3)
    k = 1
    while True:
        L = k * math.log(2)
        if (_h_log(L, r[ok]) * c2[ok] >= W[ok]).all():
            break
        k += 1
    tol = 4 * h * h
    disk = res.result.D & (r <= radius)
    ex = np.where(disk, W - barrier_f(0.5, X, Y, log_inv_s=L), -np.inf)
    mx = float(ex.max()) if disk.any() else 0.0
    hp1 = 0.5 * L + 0.125 - math.exp(-4 * L) / 8
    return BarrierCertificate(2.0 ** -k, L, hp1, radius, mx, tol, mx <= tol)


# --- the symmetric m-phase configuration ----------------------------------

def symmetric_problem(m: int, C: float, h: float = 1 / 128, eps: float | None = None):
    """m equal masses C on the unit circle at angles 2π(j-1)/m, on a square grid."""
    from .multiphase import PhaseProblem

    if m < 2:
        raise ValueError("m must be at least 2")
    eps = DEFAULT_EPS_CELLS * h if eps is None else eps
    half = 1 + math.sqrt(C / math.pi) + 4 * eps
    spec = GridSpec.around(0.0, 0.0, half, h)
    mus = [Measure.point(math.cos(2 * math.pi * j / m), math.sin(2 * math.pi * j / m), C) for j in range(m)]
    return PhaseProblem(mus, spec, eps=eps)


def _rotate_sample(g: GridFunction, angle: float) -> np.ndarray:
    """Values of g(R_{-angle} x) at the nodes of g's grid."""
    X, Y = g.spec.mesh()
    c, s = math.cos(angle), math.sin(angle)
    return g.sample(c * X + s * Y, -s * X + c * Y)


def symmetric_mqd(m: int, C: float, h: float = 1 / 128, eps: float | None = None):
    """Symmetric m-phase domain: sector solve, rotated copies as the start, then descent.

    Returns (state, problem).  ``state.info`` records the rotational
    covariance defect of the final state and the distance from the origin
    to each phase.
    """
    from .multiphase import SegregatedState, minimize_Sm

    problem = symmetric_problem(m, C, h, eps)
    spec = problem.spec
    theta0 = math.pi / m
    D1 = sector_mask(spec, theta0)
    r1 = partial_balayage(problem.mollified[0], D1, 1.0, spec)
    X, Y = spec.mesh()
    ang = np.angle(X + 1j * Y)
    U = np.zeros((m,) + spec.shape)
    for j in range(m):
        a = 2 * math.pi * j / m
        inside = np.abs(np.angle(np.exp(1j * (ang - a)))) < theta0
        U[j] = np.where(inside, np.maximum(_rotate_sample(r1.W, a), 0.0), 0.0)
    init = SegregatedState([GridFunction(spec, U[j]) for j in range(m)], problem.tau)
    state = minimize_Sm(problem, init, candidates=False)
    base = state.u[0]
    scale = max(float(base.values.max()), 1e-300)
    defect = 0.0
    for j in range(1, m):
        rot = _rotate_sample(base, 2 * math.pi * j / m)
        far = np.hypot(X, Y) < 1 + math.sqrt(C / math.pi)
        defect = max(defect, float(np.abs(state.u[j].values - rot)[far].max()) / scale)
    dist = []
    for Q in state.masks:
        dist.append(float(np.hypot(X[Q], Y[Q]).min()) if Q.any() else math.inf)
    state.info.update(rotation_defect=defect, origin_distance=dist, sector_area=float(r1.omega.sum() * h * h))
    return state, problem


def ring_band_measure(R1: float, R2: float, spec: GridSpec, half_width: float) -> tuple[Measure, np.ndarray]:
    """Ring measure spread uniformly over the node band |r - R1| ≤ half_width.

    The density is constant on the band, so the band is an admissible seed
    with c equal to that constant.  Returns (measure, band mask).
    """
    X, Y = spec.mesh()
    band = np.abs(np.hypot(X, Y) - R1) <= half_width
    d = np.where(band, math.pi * R2 ** 2 / (band.sum() * spec.h ** 2), 0.0)
    return Measure(density=GridFunction(spec, d)), band
