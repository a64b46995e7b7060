"""Finite positive measures in the plane: atoms plus an optional grid density."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .potential import GridFunction, GridSpec, unit_ball_volume

Atom = tuple[float, float, float]

_SUBSAMPLE = 24  # per-axis subcell count for area fractions


@dataclass(frozen=True, eq=False)
class Measure:
    """Point masses ``(x, y, mass)`` plus an optional non-negative density."""

    atoms: tuple[Atom, ...] = ()
    density: GridFunction | None = None

    def __post_init__(self):
        atoms = tuple((float(x), float(y), float(m)) for (x, y, m) in self.atoms)
        for (_, _, m) in atoms:
            if not m > 0:
                raise ValueError("atom masses must be positive")
        object.__setattr__(self, "atoms", atoms)
        if self.density is not None and (self.density.values < 0).any():
            raise ValueError("density must be non-negative")

    @classmethod
    def point(cls, x: float, y: float, mass: float) -> "Measure":
        return cls(atoms=((x, y, mass),))

    @property
    def is_zero(self) -> bool:
        return not self.atoms and (self.density is None or not self.density.values.any())

    def support_points(self) -> np.ndarray:
        """Atom locations and density nodes with positive value, as (k, 2)."""
        pts = [np.array([[a[0], a[1]] for a in self.atoms]).reshape(-1, 2)]
        if self.density is not None:
            X, Y = self.density.spec.mesh()
            pos = self.density.values > 0
            pts.append(np.column_stack([X[pos], Y[pos]]))
        return np.concatenate(pts)

    def __add__(self, other: "Measure") -> "Measure":
        dens = self.density
        if other.density is not None:
            dens = other.density if dens is None else dens + other.density
        return Measure(self.atoms + other.atoms, dens)

    def scaled(self, c: float) -> "Measure":
        if c <= 0:
            raise ValueError("scale factor must be positive")
        return Measure(
            tuple((x, y, c * m) for (x, y, m) in self.atoms),
            None if self.density is None else self.density * c,
        )


@dataclass(frozen=True, eq=False)
class MollifiedMeasure:
    """``source`` convolved with the normalised indicator of B_ε, on a grid."""

    source: Measure
    epsilon: float
    density: GridFunction
    atoms: tuple = field(default=(), init=False)

    def as_measure(self) -> Measure:
        return Measure(density=self.density)

    @property
    def is_zero(self) -> bool:
        return not self.density.values.any()

    def support_points(self) -> np.ndarray:
        return self.source.support_points()


def total_mass(mu) -> float:
    """Σ atom masses + h²·Σ density values."""
    m = sum(a[2] for a in mu.atoms)
    if mu.density is not None:
        m += mu.density.integral()
    return float(m)


def disk_fraction_kernel(radius: float, h: float, sub: int = _SUBSAMPLE,
                         offset: tuple[float, float] = (0.0, 0.0)) -> tuple[np.ndarray, int]:
    """Area fraction of each cell [x±h/2]×[y±h/2] lying in the disk.

    The disk is centred at ``offset`` relative to the central node.  Returns
    the (2k+1)² fraction array and k.
    """
    k = int(math.ceil((radius + abs(offset[0]) + abs(offset[1])) / h)) + 1
    t = (np.arange(sub) + 0.5) / sub - 0.5
    ax = np.arange(-k, k + 1)
    px = (ax[:, None] + t[None, :]).ravel() * h - offset[0]
    py = (ax[:, None] + t[None, :]).ravel() * h - offset[1]
    inside = (px[None, :] ** 2 + py[:, None] ** 2) <= radius * radius
    frac = inside.reshape(2 * k + 1, sub, 2 * k + 1, sub).mean(axis=(1, 3))
    return frac, k


def _check_inside(spec: GridSpec, pts: np.ndarray, margin: float) -> None:
    for (x, y) in pts:
        if not spec.contains(x, y, margin):
            raise ValueError("grid does not contain the mollification neighbourhood of the support")


def _density_on(mu: Measure, spec: GridSpec) -> np.ndarray:
    """The density part of μ on ``spec``, resampled with its mass preserved."""
    if mu.density is None:
        return np.zeros(spec.shape)
    d = mu.density
    if d.spec == spec:
        return np.array(d.values)
    X, Y = spec.mesh()
    vals = d.sample(X, Y)
    mass = d.integral()
    got = vals.sum() * spec.h ** 2
    if got > 0:
        vals *= mass / got
    return vals


def mollify(mu: Measure, epsilon: float, grid: GridSpec) -> MollifiedMeasure:
    """μ^ε = μ * (1/|B_ε|)χ_{B_ε}, sampled on ``grid`` by cell area fractions.

    Each atom's weights are normalised so its mass is reproduced exactly.
    """
    if not epsilon > 0:
        raise ValueError("mollification radius must be positive")
    h = grid.h
    if h > epsilon / 4 * (1 + 1e-12):
        raise ValueError(f"grid spacing {h} does not resolve ε = {epsilon} (need h ≤ ε/4)")
    if isinstance(mu, MollifiedMeasure):
        mu = mu.as_measure()
    pts = mu.support_points()
    _check_inside(grid, pts, epsilon + h)
    out = np.zeros(grid.shape)
    for (ax, ay, m) in mu.atoms:
        j, i = grid.nearest(ax, ay)
        off = (ax - (grid.x0 + i * h), ay - (grid.y0 + j * h))
        frac, k = disk_fraction_kernel(epsilon, h, offset=off)
        w = frac / frac.sum()
        out[j - k:j + k + 1, i - k:i + k + 1] += (m / h ** 2) * w
    if mu.density is not None:
        base = _density_on(mu, grid)
        frac, _ = disk_fraction_kernel(epsilon, h)
        kern = frac / frac.sum()
        out += ndimage.convolve(base, kern, mode="constant", cval=0.0)
    return MollifiedMeasure(mu, float(epsilon), GridFunction(grid, out))


def grid_density(mu, spec: GridSpec) -> np.ndarray:
    """Node density of μ on ``spec``; bare atoms go to their nearest node."""
    if isinstance(mu, MollifiedMeasure):
        if mu.density.spec != spec:
            return _density_on(mu.as_measure(), spec)
        return np.array(mu.density.values)
    out = _density_on(mu, spec)
    for (ax, ay, m) in mu.atoms:
        j, i = spec.nearest(ax, ay)
        if not (0 <= j < spec.ny and 0 <= i < spec.nx):
            raise ValueError("atom outside the grid")
        out[j, i] += m / spec.h ** 2
    return out


def _in_support(mu: Measure, x: tuple[float, float], tol: float) -> bool:
    pts = mu.support_points()
    if pts.size == 0:
        return False
    return bool((np.hypot(pts[:, 0] - x[0], pts[:, 1] - x[1]) <= tol).any())


def concentration_ok(mu: Measure, x: tuple[float, float], n: int = 2) -> bool:
    """Whether limsup_{r→0} μ(B_r(x))/m(B_r) > 2ⁿ, via dyadic radii.

    Exact for atoms.  For densities the ratio is evaluated with cell area
    fractions at r = h·2^k, k = 0..6, and the largest value is compared.
    """
    h_guess = mu.density.spec.h if mu.density is not None else 0.0
    if not _in_support(mu, x, tol=max(1e-12, h_guess)):
        raise ValueError("point is not in the support of the measure")
    for (ax, ay, _) in mu.atoms:
        if math.hypot(ax - x[0], ay - x[1]) <= 1e-12:
            return True
    if mu.density is None:
        return False
    d = mu.density
    h = d.spec.h
    j, i = d.spec.nearest(*x)
    off = (x[0] - (d.spec.x0 + i * h), x[1] - (d.spec.y0 + j * h))
    padded = np.pad(d.values, 130)
    best = 0.0
    for k in range(7):
        r = h * 2 ** k
        frac, kk = disk_fraction_kernel(r, h, sub=16, offset=off)
        block = padded[j + 130 - kk:j + 130 + kk + 1, i + 130 - kk:i + 130 + kk + 1]
        ratio = (block * frac).sum() * h * h / (unit_ball_volume(2) * r * r)
        best = max(best, ratio)
    return best > 2 ** n


def ball_criterion(mu: Measure, x: tuple[float, float], r: float, n: int = 2) -> bool:
    """supp μ ⊂ B_r(x) and μ(B_r(x)) > 2ⁿ |B_1| rⁿ (the sufficient ball test)."""
    if mu.is_zero:
        return False
    pts = mu.support_points()
    if (np.hypot(pts[:, 0] - x[0], pts[:, 1] - x[1]) >= r).any():
        return False
    return total_mass(mu) > 2 ** n * unit_ball_volume(n) * r ** n
