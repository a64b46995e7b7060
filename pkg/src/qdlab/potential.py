"""Grids, the fundamental solution of -Δ, Newtonian and Green potentials, GF1 files."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import _obstacle

if TYPE_CHECKING:
    from .measures import Measure

# Self-term radius: Ψ at h/√(πe) equals the mean potential of the equal-area disk over itself.
SELF_RADIUS_FACTOR = 1.0 / math.sqrt(math.pi * math.e)


@dataclass(frozen=True)
class GridSpec:
    """Uniform node grid; node (i, j) sits at (x0 + i*h, y0 + j*h)."""

    x0: float
    y0: float
    nx: int
    ny: int
    h: float

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError("grid needs at least 3 nodes per axis")
        if not self.h > 0:
            raise ValueError("grid spacing must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def x1(self) -> float:
        return self.x0 + (self.nx - 1) * self.h

    @property
    def y1(self) -> float:
        return self.y0 + (self.ny - 1) * self.h

    def xs(self) -> np.ndarray:
        return self.x0 + self.h * np.arange(self.nx)

    def ys(self) -> np.ndarray:
        return self.y0 + self.h * np.arange(self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates as two (ny, nx) arrays."""
        return np.meshgrid(self.xs(), self.ys())

    def contains(self, x: float, y: float, margin: float = 0.0) -> bool:
        return (
            self.x0 + margin <= x <= self.x1 - margin
            and self.y0 + margin <= y <= self.y1 - margin
        )

    def nearest(self, x: float, y: float) -> tuple[int, int]:
        """(j, i) of the node closest to (x, y)."""
        return (int(round((y - self.y0) / self.h)), int(round((x - self.x0) / self.h)))

    @classmethod
    def around(cls, cx: float, cy: float, half_width: float, h: float) -> "GridSpec":
        """Square grid centred on (cx, cy) whose box covers ±half_width."""
        k = int(math.ceil(half_width / h)) + 1
        return cls(cx - k * h, cy - k * h, 2 * k + 1, 2 * k + 1, h)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values on a GridSpec, stored as an (ny, nx) array (row j, column i)."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.spec.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.spec.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def _check(self, other: "GridFunction") -> None:
        if other.spec != self.spec:
            raise ValueError("grid functions live on different grids")

    def __add__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.spec, self.values + other.values)
        return GridFunction(self.spec, self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.spec, self.values - other.values)
        return GridFunction(self.spec, self.values - other)

    def __mul__(self, c: float):
        return GridFunction(self.spec, self.values * c)

    __rmul__ = __mul__

    def integral(self) -> float:
        """Cell sum h²·Σ values."""
        return float(self.spec.h ** 2 * self.values.sum())

    def sample(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Bilinear interpolation; zero outside the grid box."""
        s = self.spec
        fx = (np.asarray(x, float) - s.x0) / s.h
        fy = (np.asarray(y, float) - s.y0) / s.h
        inside = (fx >= 0) & (fx <= s.nx - 1) & (fy >= 0) & (fy <= s.ny - 1)
        i0 = np.clip(np.floor(fx).astype(int), 0, s.nx - 2)
        j0 = np.clip(np.floor(fy).astype(int), 0, s.ny - 2)
        tx = np.clip(fx - i0, 0.0, 1.0)
        ty = np.clip(fy - j0, 0.0, 1.0)
        v = self.values
        out = (
            v[j0, i0] * (1 - tx) * (1 - ty)
            + v[j0, i0 + 1] * tx * (1 - ty)
            + v[j0 + 1, i0] * (1 - tx) * ty
            + v[j0 + 1, i0 + 1] * tx * ty
        )
        return np.where(inside, out, 0.0)


def zeros(spec: GridSpec) -> GridFunction:
    return GridFunction(spec, np.zeros(spec.shape))


def unit_ball_volume(n: int) -> float:
    """Lebesgue measure of the unit ball in ℝⁿ: 2π^{n/2} / (n Γ(n/2))."""
    if n < 1:
        raise ValueError("dimension must be positive")
    return 2.0 * math.pi ** (n / 2) / (n * math.gamma(n / 2))


def fundamental_solution(r, n: int = 2):
    """Ψ(r) for -Δ in ℝⁿ: -(1/2π) ln r in the plane, 1/(n(n-2)|B_1| r^{n-2}) above."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0):
        raise ValueError("the fundamental solution is singular at r <= 0")
    if n < 2:
        raise ValueError("dimension must be at least 2")
    if n == 2:
        out = -np.log(r_arr) / (2.0 * math.pi)
    else:
        out = 1.0 / (n * (n - 2) * unit_ball_volume(n) * r_arr ** (n - 2))
    return float(out) if np.ndim(out) == 0 else out


def _sources(mu: "Measure") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Point sources (x, y, weight): atoms first, then density cells row-major."""
    xs, ys, ws = [], [], []
    for (ax, ay, m) in mu.atoms:
        xs.append(ax)
        ys.append(ay)
        ws.append(m)
    px, py, pw = np.array(xs, float), np.array(ys, float), np.array(ws, float)
    if mu.density is not None:
        d = mu.density
        jj, ii = np.nonzero(d.values)
        px = np.concatenate([px, d.spec.x0 + ii * d.spec.h])
        py = np.concatenate([py, d.spec.y0 + jj * d.spec.h])
        pw = np.concatenate([pw, d.spec.h ** 2 * d.values[jj, ii]])
    return px, py, pw


def potential_at(mu: "Measure", x: np.ndarray, y: np.ndarray, h: float, chunk: int = 4_000_000) -> np.ndarray:
    """Direct-summation U^μ at arbitrary points, with the cell self-term rule.

    A source closer than h·1e-9 to an evaluation point is treated as a self
    term and evaluated at radius h/√(πe).
    """
    px, py, pw = _sources(mu)
    x = np.asarray(x, float).ravel()
    y = np.asarray(y, float).ravel()
    out = np.zeros(x.size)
    if pw.size == 0 or x.size == 0:
        return out
    r_self = h * SELF_RADIUS_FACTOR
    step = max(1, chunk // max(1, pw.size))
    for k in range(0, x.size, step):
        dx = x[k:k + step, None] - px[None, :]
        dy = y[k:k + step, None] - py[None, :]
        r = np.hypot(dx, dy)
        r = np.where(r < 1e-9 * h, r_self, r)
        out[k:k + step] = (-np.log(r) / (2 * math.pi)) @ pw
    return out


def newtonian_potential(mu: "Measure", spec: GridSpec) -> GridFunction:
    """U^μ at every node of ``spec`` by direct summation."""
    X, Y = spec.mesh()
    return GridFunction(spec, potential_at(mu, X, Y, spec.h).reshape(spec.shape))


def discrete_potential(mu: "Measure", spec: GridSpec) -> GridFunction:
    """Potential consistent with the 5-point operator.

    Solves -Δ_h U = μ (grid density plus atoms placed at their nearest node)
    inside the box, with direct-summation values of U^μ on the box edge.  Away
    from the sources it agrees with ``newtonian_potential`` to O(h²); unlike
    the latter, it satisfies the discrete equation exactly, which is what
    comparisons against obstacle-problem output need.
    """
    from .measures import grid_density

    rhs = grid_density(mu, spec)
    X, Y = spec.mesh()
    edge = ~_obstacle.interior(spec.shape)
    U = np.zeros(spec.shape)
    U[edge] = potential_at(mu, X[edge], Y[edge], spec.h)
    # move the edge data to the right-hand side of the interior solve
    lift = np.zeros(spec.shape)
    lift[edge] = U[edge]
    rhs_eff = rhs + _obstacle.neighbour_sum(lift) / spec.h ** 2
    inner = _obstacle.interior(spec.shape)
    U[inner] = _obstacle.solve_dirichlet(inner, np.where(inner, rhs_eff, 0.0), spec.h)[inner]
    return GridFunction(spec, U)


def green_potential(A: np.ndarray, spec: GridSpec) -> GridFunction:
    """Solve -Δ_h G = 1 on the node set A with G = 0 off A."""
    A = np.asarray(A, dtype=bool)
    if A.shape != spec.shape:
        raise ValueError("mask shape does not match grid")
    if not A.any():
        raise ValueError("green_potential needs a nonempty set")
    if (A & ~_obstacle.interior(spec.shape)).any():
        raise ValueError("set touches the grid boundary")
    G = _obstacle.solve_dirichlet(A, np.ones(spec.shape), spec.h)
    return GridFunction(spec, np.maximum(G, 0.0))


# --- GF1 files -------------------------------------------------------------

def write_gf1(path: str | os.PathLike, gf: GridFunction) -> None:
    s = gf.spec
    header = f"GF1\n{s.nx} {s.ny}\n{s.x0!r} {s.y0!r} {s.h!r}\nbinary-le-f64\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(gf.values, dtype="<f8").tobytes())


def read_gf1(path: str | os.PathLike) -> GridFunction:
    with open(path, "rb") as fh:
        lines = [fh.readline().decode("ascii").strip() for _ in range(4)]
        if lines[0] != "GF1" or lines[3] != "binary-le-f64":
            raise ValueError(f"{path}: not a GF1 file")
        nx, ny = (int(t) for t in lines[1].split())
        x0, y0, h = (float(t) for t in lines[2].split())
        raw = fh.read()
    if len(raw) != 8 * nx * ny:
        raise ValueError(f"{path}: expected {nx * ny} values, found {len(raw) // 8}")
    vals = np.frombuffer(raw, dtype="<f8").reshape(ny, nx).astype(float)
    return GridFunction(GridSpec(x0, y0, nx, ny, h), vals)
