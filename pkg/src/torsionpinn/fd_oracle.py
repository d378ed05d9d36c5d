"""Finite-difference reference solvers.

These stand in for a commercial FE package: a five-point Poisson solver on a
masked lattice (Dirichlet zero outside the mask), a conservative solver for
``(J phi')' + f = 0`` in 1D, and a grid-sensitivity sweep.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded

from .errors import ConvergenceError, GeometryError
from .geometry import Domain2D, grid_nodes
from .quadrature import adaptive_simpson  # noqa: F401  (re-exported oracle primitive)


@dataclass
class MaskedGrid:
    h: float
    xs: np.ndarray
    ys: np.ndarray
    mask: np.ndarray  # (len(xs), len(ys)) True for unknown (interior) nodes

    @classmethod
    def for_domain(cls, domain: Domain2D, h: float) -> "MaskedGrid":
        xs, ys = grid_nodes(domain, h)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        mask = domain.contains(np.column_stack([X.ravel(), Y.ravel()])).reshape(X.shape)
        return cls(h, xs, ys, mask)

    @property
    def n_interior(self) -> int:
        return int(self.mask.sum())

    def points(self) -> np.ndarray:
        X, Y = np.meshgrid(self.xs, self.ys, indexing="ij")
        return np.column_stack([X[self.mask], Y[self.mask]])


@dataclass
class PoissonSolution:
    grid: MaskedGrid
    phi: np.ndarray  # values at grid.points(), in that order
    J: float
    iterations: int
    residual: float

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "phi"])
            for (x, y), v in zip(self.grid.points(), self.phi):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])
        return path


def _laplacian(mask: np.ndarray, h: float) -> sp.csr_matrix:
    """Negative five-point Laplacian on masked nodes; outside nodes are zero."""
    idx = -np.ones(mask.shape, dtype=np.int64)
    idx[mask] = np.arange(mask.sum())
    rows, cols = [], []
    ii, jj = np.nonzero(mask)
    me = idx[ii, jj]
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        ni, nj = ii + di, jj + dj
        ok = (ni >= 0) & (ni < mask.shape[0]) & (nj >= 0) & (nj < mask.shape[1])
        nb = np.full(ii.shape, -1)
        nb[ok] = idx[ni[ok], nj[ok]]
        keep = nb >= 0
        rows.append(me[keep])
        cols.append(nb[keep])
    n = int(mask.sum())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    off = sp.csr_matrix((-np.ones(rows.shape[0]), (rows, cols)), shape=(n, n))
    return (sp.identity(n, format="csr") * 4.0 + off) / (h * h)


def conjugate_gradient(A, b: np.ndarray, rtol: float = 1e-10, max_iter: int | None = None):
    """Jacobi-preconditioned CG; returns ``(x, iterations, relative residual)``."""
    n = b.shape[0]
    max_iter = max_iter or 10 * n
    inv_diag = 1.0 / A.diagonal()
    x = np.zeros(n)
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    b_norm = np.linalg.norm(b)
    if b_norm == 0:
        return x, 0, 0.0
    for it in range(1, max_iter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / b_norm
        if res <= rtol:
            return x, it, res
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(f"CG did not reach rtol={rtol} in {max_iter} iterations (at {res:.3e})")


def solve_poisson_2d(domain: Domain2D, G: float = 1.0, h: float = 0.0025, rtol: float = 1e-10,
                     min_interior: int = 100) -> PoissonSolution:
    """Solve ``lap(phi) = -2G`` with ``phi = 0`` off the interior mask.

    The torsional constant is ``(2/G) * sum(phi) * h^2`` over interior nodes.
    """
    if not G > 0:
        raise ValueError("shear modulus must be positive")
    grid = MaskedGrid.for_domain(domain, h)
    if grid.n_interior < max(min_interior, 1):
        raise GeometryError(f"only {grid.n_interior} interior nodes at h={h}; refine the grid")
    A = _laplacian(grid.mask, h)
    b = np.full(grid.n_interior, 2.0 * G)
    phi, iters, res = conjugate_gradient(A, b, rtol)
    J = 2.0 / G * float(np.sum(phi)) * h * h
    return PoissonSolution(grid, phi, J, iters, res)


@dataclass
class SensitivityRow:
    h: float
    J: float
    rel_change: float | None


def sensitivity_sweep(domain: Domain2D, hs: Sequence[float], G: float = 1.0) -> list[SensitivityRow]:
    """J at each cell size and its relative difference to the finest one."""
    hs = [float(h) for h in hs]
    if not hs:
        raise ValueError("need at least one grid size")
    if any(not h > 0 for h in hs):
        raise ValueError("grid sizes must be positive")
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError("grid sizes must be strictly decreasing")
    # coarse sweep entries are allowed below the usual node floor
    Js = [solve_poisson_2d(domain, G, h, min_interior=1).J for h in hs]
    if len(hs) == 1:
        return [SensitivityRow(hs[0], Js[0], None)]
    ref = Js[-1]
    return [SensitivityRow(h, J, abs(J - ref) / abs(ref)) for h, J in zip(hs, Js)]


def write_sensitivity(rows: Sequence[SensitivityRow], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["h", "J", "rel_change"])
        for r in rows:
            w.writerow([repr(r.h), repr(r.J), "" if r.rel_change is None else repr(r.rel_change)])
    return path


def observed_order(hs: Sequence[float], errors: Sequence[float]) -> np.ndarray:
    hs, errors = np.asarray(hs, float), np.asarray(errors, float)
    return np.log(errors[:-1] / errors[1:]) / np.log(hs[:-1] / hs[1:])


# ---------------------------------------------------------------------------
# 1D
# ---------------------------------------------------------------------------

@dataclass
class ODESolution:
    x: np.ndarray
    phi: np.ndarray
    J_half: np.ndarray

    def fluxes(self) -> np.ndarray:
        h = np.diff(self.x)
        return self.J_half * np.diff(self.phi) / h


def solve_ode_1d(J: Callable[[np.ndarray], np.ndarray], bc: tuple[float, float], n: int,
                 source: Callable[[np.ndarray], np.ndarray] | None = None,
                 interval: tuple[float, float] = (0.0, 1.0)) -> ODESolution:
    """Conservative scheme for ``(J phi')' + f = 0``.

    ``bc = (phi(a), phi'(b))``: Dirichlet on the left, slope on the right
    (imposed as the flux ``J(b) phi'(b)``).  Coefficients are sampled at cell
    midpoints; the right node uses a half-cell balance.
    """
    if n < 16:
        raise ValueError("need at least 16 intervals")
    a, b = interval
    x = np.linspace(a, b, n + 1)
    h = (b - a) / n
    xm = 0.5 * (x[:-1] + x[1:])
    Jm = np.asarray(J(xm), dtype=np.float64)
    Jb = float(np.asarray(J(np.array([b])), dtype=np.float64).reshape(-1)[0])
    if np.any(Jm <= 0) or Jb <= 0:
        raise ValueError("coefficient J must be positive everywhere (singular system)")
    f = np.zeros(n + 1) if source is None else np.asarray(source(x), dtype=np.float64)
    left, slope = bc
    # unknowns phi_1..phi_n; row i corresponds to node i
    m = n
    ab = np.zeros((3, m))
    rhs = np.zeros(m)
    for k in range(m):
        i = k + 1
        if i < n:
            ab[1, k] = Jm[i - 1] + Jm[i]
            if k + 1 < m:
                ab[0, k + 1] = -Jm[i]
            if k > 0:
                ab[2, k - 1] = -Jm[i - 1]
            rhs[k] = h * h * f[i]
            if i == 1:
                rhs[k] += Jm[0] * left
        else:
            ab[1, k] = Jm[n - 1]
            ab[2, k - 1] = -Jm[n - 1]
            rhs[k] = h * Jb * slope + 0.5 * h * h * f[n]
    phi = np.concatenate([[left], solve_banded((1, 1), ab, rhs)])
    return ODESolution(x, phi, Jm)
