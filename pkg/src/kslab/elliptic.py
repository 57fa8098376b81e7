"""Neumann solver for the signal equation ``-d Δv + v = u``.

The discrete Laplacian is the flux-form DivGrad of :mod:`kslab.grid`
(two-point face gradients, zero boundary flux). Multiplying by cell
weights gives the symmetric system ``(W + d K) v = W u`` with ``K`` the
stiffness matrix; it is an M-matrix, so the solution operator is positive
and satisfies a discrete maximum principle.
"""

from __future__ import annotations

import logging
import math

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Field, Grid, divgrad_array

logger = logging.getLogger(__name__)

CG_RTOL = 1e-12


class EllipticSolveError(RuntimeError):
    """The iterative solve did not reach its tolerance within the iteration cap."""


def stiffness_matrix(grid: Grid) -> sp.csr_matrix:
    """Symmetric positive semi-definite ``K`` with ``W^{-1} K = -DivGrad``.

    Each interior face between cells ``i`` and ``j`` contributes
    ``area / h`` to ``K[i, i]`` and ``K[j, j]`` and subtracts it from
    ``K[i, j]`` and ``K[j, i]``; rows therefore sum to zero.
    """
    index = np.arange(grid.size).reshape(grid.shape)
    rows, cols, vals = [], [], []
    for axis, (dx, area) in enumerate(zip(grid.h, grid.face_areas)):
        inner = [slice(None)] * grid.ndim
        inner[axis] = slice(1, -1)
        coef = (area[tuple(inner)] / dx).ravel()
        left = np.delete(index, -1, axis=axis).ravel()
        right = np.delete(index, 0, axis=axis).ravel()
        rows += [left, right, left, right]
        cols += [left, right, right, left]
        vals += [coef, coef, -coef, -coef]
    n = grid.size
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def divgrad_matrix(grid: Grid) -> sp.csr_matrix:
    """Discrete Neumann Laplacian acting on flattened cell values."""
    winv = sp.diags(1.0 / grid.weights.ravel())
    return sp.csr_matrix(-(winv @ stiffness_matrix(grid)))


class EllipticOperator:
    """Assembled ``W + d K`` for one grid and one diffusion rate ``d``.

    Solvers (``method``):

    * ``"banded"``: symmetric tridiagonal elimination, one-axis meshes
      (interval, radial disc); the default there
    * ``"spectral"``: exact diagonalization by the type-II cosine transform,
      rectangles only; the default there
    * ``"cg"``: Jacobi-preconditioned conjugate gradients, relative
      tolerance ``1e-12``, iteration cap ``20 * n_cells``; any grid
    """

    def __init__(self, grid: Grid, d: float, method: str = "auto"):
        if not (math.isfinite(d) and d > 0):
            raise ValueError(f"diffusion rate d must be positive, got {d}")
        if method == "auto":
            method = "banded" if grid.ndim == 1 else "spectral"
        if method == "banded" and grid.ndim != 1 or method == "spectral" and grid.domain.shape != "rectangle":
            raise ValueError(f"method {method!r} does not apply to {grid.domain.shape} grids")
        if method not in ("banded", "spectral", "cg"):
            raise ValueError(f"unknown elliptic method {method!r}")
        self.grid = grid
        self.d = float(d)
        self.method = method
        self.stiffness = stiffness_matrix(grid)
        self.matrix = sp.csr_matrix(sp.diags(grid.weights.ravel()) + self.d * self.stiffness)
        if method == "banded":
            # upper banded storage for solveh_banded
            diag = self.matrix.diagonal()
            off = self.matrix.diagonal(1)
            self._banded = np.vstack([np.concatenate([[0.0], off]), diag])
        elif method == "spectral":
            # eigenvalues of -DivGrad on cell-centered Neumann meshes: (4/h^2) sin^2(pi j / 2n)
            lams = [
                4 / dx**2 * np.sin(np.pi * np.arange(k) / (2 * k)) ** 2
                for k, dx in zip(grid.n_cells, grid.h)
            ]
            self._symbol = 1.0 + self.d * (lams[0][:, None] + lams[1][None, :])
        else:
            self._jacobi = sp.diags(1.0 / self.matrix.diagonal())
            self._maxiter = 20 * grid.size

    def residual(self, v: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Cell residual ``-d Δv + v - u``, Laplacian in flux form."""
        return -self.d * divgrad_array(self.grid, v) + v - u

    def solve_array(self, u: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        if self.method == "spectral":
            coef = scipy.fft.dctn(u, type=2, norm="ortho") / self._symbol
            return scipy.fft.idctn(coef, type=2, norm="ortho")
        rhs = (self.grid.weights * u).ravel()
        if self.method == "banded":
            v = scipy.linalg.solveh_banded(self._banded, rhs, check_finite=False)
        else:
            guess = None if x0 is None else np.ravel(x0)
            v, info = spla.cg(
                self.matrix, rhs, x0=guess, rtol=CG_RTOL, atol=0.0,
                maxiter=self._maxiter, M=self._jacobi,
            )
            if info != 0:
                raise EllipticSolveError(
                    f"CG did not converge in {self._maxiter} iterations (info={info})"
                )
        return v.reshape(self.grid.shape)

    def solve(self, u: Field, x0: Field | None = None) -> Field:
        return solve_v(self, u, x0)


def solve_v(op: EllipticOperator, u: Field, x0: Field | None = None) -> Field:
    """Return ``v`` with ``-d Δv + v = u`` and zero Neumann flux.

    Args:
        op: assembled operator on ``u.grid``
        u: source field (cell density)
        x0: optional starting guess, used by the ``"cg"`` method only
    """
    if u.grid != op.grid:
        raise ValueError("source field lives on a different grid than the operator")
    return Field(op.grid, op.solve_array(u.data, None if x0 is None else x0.data))


def min_signal(v: Field) -> float:
    return float(v.data.min())


def exp_moment(v: Field, rate: float) -> float:
    """Return ``∫ exp(rate·v) dx``; ``inf`` when the exponential overflows."""
    if not np.all(np.isfinite(v.data)):
        raise ValueError("exp_moment needs finite values")
    with np.errstate(over="ignore"):
        value = float(np.sum(v.grid.weights * np.exp(rate * v.data)))
    if not math.isfinite(value):
        logger.warning("exponential moment overflowed (rate=%g, max v=%g)", rate, v.max())
        return math.inf
    return value
