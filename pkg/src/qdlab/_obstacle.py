"""Discrete obstacle-problem kernels on a uniform 5-point grid.

All arrays are indexed ``a[j, i]`` (row j, column i).  The operator is the
h²-scaled negative Laplacian ``L v = 4 v - (sum of four neighbours)``; nodes
outside the free mask and the outer ring of the grid are Dirichlet zeros.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

_DIRECT_LIMIT = 60_000


def neighbour_sum(v: np.ndarray) -> np.ndarray:
    """Sum of the four lattice neighbours, zero-padded at the grid edge."""
    s = np.zeros_like(v)
    s[1:, :] += v[:-1, :]
    s[:-1, :] += v[1:, :]
    s[:, 1:] += v[:, :-1]
    s[:, :-1] += v[:, 1:]
    return s


def neg_laplacian(v: np.ndarray, h: float) -> np.ndarray:
    """-Δ_h v with zero values assumed beyond the grid edge."""
    return (4.0 * v - neighbour_sum(v)) / (h * h)


def interior(shape: tuple[int, int]) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    m[1:-1, 1:-1] = True
    return m


def assemble(mask: np.ndarray) -> tuple[sp.csr_matrix, np.ndarray]:
    """Matrix of L restricted to ``mask`` nodes, and the flat node indices."""
    ny, nx = mask.shape
    idx = np.flatnonzero(mask.ravel())
    n = idx.size
    pos = -np.ones(ny * nx, dtype=np.int64)
    pos[idx] = np.arange(n)
    rows = [np.arange(n)]
    cols = [np.arange(n)]
    vals = [np.full(n, 4.0)]
    jj, ii = np.divmod(idx, nx)
    for dj, di in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        j2, i2 = jj + dj, ii + di
        ok = (j2 >= 0) & (j2 < ny) & (i2 >= 0) & (i2 < nx)
        nb = np.full(n, -1, dtype=np.int64)
        nb[ok] = pos[j2[ok] * nx + i2[ok]]
        keep = nb >= 0
        rows.append(np.arange(n)[keep])
        cols.append(nb[keep])
        vals.append(np.full(keep.sum(), -1.0))
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return A, idx


def solve_spd(A: sp.csr_matrix, b: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
    """Solve an SPD lattice system: sparse LU when small, AMG-preconditioned CG otherwise."""
    if A.shape[0] == 0:
        return np.zeros(0)
    if A.shape[0] <= _DIRECT_LIMIT:
        return spla.spsolve(A.tocsc(), b)
    import pyamg

    ml = pyamg.smoothed_aggregation_solver(A, symmetry="symmetric")
    return ml.solve(b, x0=x0, tol=1e-13, accel="cg", maxiter=400)


def solve_dirichlet(mask: np.ndarray, rhs: np.ndarray, h: float) -> np.ndarray:
    """Solve -Δ_h v = rhs on ``mask`` with v = 0 elsewhere."""
    v = np.zeros(mask.shape)
    A, idx = assemble(mask)
    if idx.size:
        v.ravel()[idx] = solve_spd(A, h * h * rhs.ravel()[idx])
    return v


def complementarity_residual(W: np.ndarray, f: np.ndarray, free: np.ndarray, h: float) -> float:
    """max |min(W, -Δ_h W - f)| over free nodes."""
    if not free.any():
        return 0.0
    r = np.minimum(W, neg_laplacian(W, h) - f)
    return float(np.abs(r[free]).max())


@dataclass
class ObstacleSolution:
    W: np.ndarray
    residual: float
    iterations: int
    converged: bool


def _coarsen(a: np.ndarray) -> np.ndarray:
    return a[::2, ::2]


def _prolong(c: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear interpolation from the every-other-node grid."""
    ny, nx = shape
    cy = np.minimum(np.arange(ny) / 2.0, c.shape[0] - 1)
    cx = np.minimum(np.arange(nx) / 2.0, c.shape[1] - 1)
    rows = np.array([np.interp(cx, np.arange(c.shape[1]), r) for r in c])
    return np.array([np.interp(cy, np.arange(c.shape[0]), col) for col in rows.T]).T


def pdas(
    f: np.ndarray,
    free: np.ndarray,
    h: float,
    W0: np.ndarray | None = None,
    tol: float | None = None,
    max_iter: int = 500,
    nested: bool = True,
) -> ObstacleSolution:
    """Primal-dual active-set solver for W ≥ 0, L W ≥ h² f, complementarity.

    ``free`` marks nodes where W may be positive; every other node is held at
    zero.  With ``nested`` the active set is warm-started from the same
    problem on the every-other-node grid, which keeps the iteration count
    small on fine grids.
    """
    free = free & interior(free.shape)
    if tol is None:
        tol = 1e-8 * (1.0 + float(np.abs(f[free]).max(initial=0.0)))
    if W0 is None and nested and min(free.shape) > 65:
        fc = _coarsen(f)
        # keep the coarse source mass-consistent: average of the 3x3 block
        fsm = f.copy()
        fsm[1:-1, 1:-1] = (
            4 * f[1:-1, 1:-1]
            + 2 * (f[:-2, 1:-1] + f[2:, 1:-1] + f[1:-1, :-2] + f[1:-1, 2:])
            + f[:-2, :-2] + f[2:, 2:] + f[:-2, 2:] + f[2:, :-2]
        ) / 16.0
        fc = _coarsen(fsm)
        coarse = pdas(fc, _coarsen(free), 2 * h, nested=True, max_iter=max_iter)
        W0 = _prolong(coarse.W, free.shape) * free
    if W0 is None:
        W0 = np.zeros(free.shape)
    W = np.where(free, np.maximum(W0, 0.0), 0.0)
    b = h * h * f
    lam = np.where(free, np.maximum(4 * W - neighbour_sum(W) - b, 0.0), 0.0)
    active = free & ((lam - W) > 0) | (free & (W <= 0))
    # nodes where the source is positive can never be active at the solution
    active &= ~(free & (f > 0) & (W0 > 0))
    prev = None
    it = 0
    for it in range(1, max_iter + 1):
        inact = free & ~active
        A, idx = assemble(inact)
        W = np.zeros(free.shape)
        if idx.size:
            W.ravel()[idx] = solve_spd(A, b.ravel()[idx])
        lam = np.where(active, 4 * W - neighbour_sum(W) - b, 0.0)
        new_active = free & ((lam - W) > 0)
        key = new_active.tobytes()
        if prev is not None and key == prev:
            break
        if np.array_equal(new_active, active):
            break
        prev = active.tobytes()
        active = new_active
    W = np.maximum(W, 0.0)
    res = complementarity_residual(W, f, free, h)
    return ObstacleSolution(W, res, it, res <= tol)


def psor(
    f: np.ndarray,
    free: np.ndarray,
    h: float,
    W0: np.ndarray | None = None,
    omega: float = 1.8,
    tol: float | None = None,
    max_sweeps: int | None = None,
) -> ObstacleSolution:
    """Projected SOR with red-black ordering."""
    free = free & interior(free.shape)
    if tol is None:
        tol = 1e-8 * (1.0 + float(np.abs(f[free]).max(initial=0.0)))
    if max_sweeps is None:
        max_sweeps = 200 * max(free.shape)
    W = np.zeros(free.shape) if W0 is None else np.where(free, np.maximum(W0, 0.0), 0.0)
    jj, ii = np.indices(free.shape)
    colours = [free & ((ii + jj) % 2 == c) for c in (0, 1)]
    b = h * h * f
    res = complementarity_residual(W, f, free, h)
    sweep = 0
    while res > tol and sweep < max_sweeps:
        for c in colours:
            gs = (neighbour_sum(W) + b) / 4.0
            W[c] = np.maximum(0.0, W[c] + omega * (gs[c] - W[c]))
        sweep += 1
        if sweep % 10 == 0:
            res = complementarity_residual(W, f, free, h)
    res = complementarity_residual(W, f, free, h)
    return ObstacleSolution(W, res, sweep, res <= tol)
