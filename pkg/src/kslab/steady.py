"""Nonconstant steady states of the reduced nonlocal problems.

At equilibrium the cell density is slaved to the signal,
``u = theta * gamma(v)**beta`` with ``beta = alpha - 1`` and ``theta`` fixed
by the mass, which leaves one nonlocal elliptic equation for ``v``.

* algebraic motility (``k = (1 - alpha) lambda``): solve the local problem
  ``d Δw - w + w**k = 0`` and rescale, ``V = (m / m0) w`` with ``m0 = ∫w``;
* exponential motility on a disc: with ``ṽ = chi (1 - alpha) v`` and
  ``m̃ = chi (1 - alpha) m`` solve
  ``d Δṽ - ṽ + m̃ exp(ṽ) / ∫exp(ṽ) = 0`` directly, with the rank-one part of
  the Jacobian handled by Sherman-Morrison.

Both Newton solvers iterate on the offset from the constant solution
(``w - 1`` and ``ṽ - m̃/|Ω|``), which keeps the roundoff floor of the
flux-form residual well below the ``1e-10`` tolerance on fine grids.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import j0, jn_zeros

from .elliptic import divgrad_matrix
from .grid import Field, Grid, divgrad_array
from .motility import MotilityPair

logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
NONLOCAL_TOL = 1e-9
IDENTITY_RTOL = 1e-8
MAX_ITER = 50
MAX_HALVINGS = 30
GUESS_AMPLITUDE = 0.3
CONSTANT_RTOL = 1e-6
AMPLITUDE_THRESHOLD = 1e-3
MIN_RESOLVED_CELLS = 5
BRANCH_COLUMNS = ("parameter", "amplitude", "residual", "max_v", "min_v", "theta")
KINDS = ("algebraic", "exponential_radial")


class NewtonError(RuntimeError):
    """Newton's method failed; ``iterate`` and ``residual`` hold the last state."""

    def __init__(self, message: str, iterate: np.ndarray | None = None, residual: float = math.nan):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual


@dataclass(frozen=True)
class SteadyProblem:
    """One reduced steady problem.

    Attributes:
        kind: ``"algebraic"`` or ``"exponential_radial"``
        d: signal diffusion rate
        m: cell mass
        grid: mesh (a radial disc for the exponential kind)
        k: exponent ``(1 - alpha) lambda`` of the algebraic kind
        scale: ``chi (1 - alpha)`` of the exponential kind, so ``m̃ = scale * m``
        pair: motility pair the problem came from, used for ``theta``
    """

    kind: str
    d: float
    m: float
    grid: Grid
    k: float | None = None
    scale: float = 1.0
    pair: MotilityPair | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown steady problem kind {self.kind!r}")
        if not (self.d > 0 and self.m > 0 and self.scale > 0):
            raise ValueError("d, m and scale must be positive")
        if self.kind == "algebraic" and not (self.k is not None and self.k > 0):
            raise ValueError("algebraic problems need k > 0")
        if self.kind == "exponential_radial" and not self.grid.is_radial:
            raise ValueError("the exponential problem is solved on radial disc grids")

    @classmethod
    def from_pair(cls, pair: MotilityPair, d: float, m: float, grid: Grid) -> SteadyProblem:
        """Reduce a ``ks_algebraic`` or ``ks_exponential`` pair."""
        alpha = pair.params.get("alpha")
        if pair.family == "ks_algebraic":
            return cls("algebraic", d, m, grid, k=(1 - alpha) * pair.params["lambda"], pair=pair)
        if pair.family == "ks_exponential":
            return cls("exponential_radial", d, m, grid, scale=(1 - alpha) * pair.params["chi"], pair=pair)
        raise ValueError(f"no steady reduction for the {pair.family} family")

    @property
    def m_tilde(self) -> float:
        return self.scale * self.m

    @property
    def parameter_name(self) -> str:
        return "d" if self.kind == "algebraic" else "m_tilde"


@dataclass(frozen=True)
class SteadySolution:
    """Converged steady state.

    ``v`` is the signal in original units, ``u = theta * gamma(v)**beta`` the
    recovered density and ``residual`` the weighted 2-norm of the nonlocal
    equation. ``local`` holds ``w`` for algebraic solutions.
    """

    v: Field
    u: Field
    theta: float
    residual: float
    iterations: int = 0
    local: Field | None = None

    @property
    def is_constant(self) -> bool:
        return self.v.max() - self.v.min() < CONSTANT_RTOL * float(np.mean(self.v.data))

    @property
    def amplitude(self) -> float:
        return self.v.max() / self.v.min()

    @property
    def mass(self) -> float:
        return self.u.integral()


@dataclass(frozen=True)
class BranchPoint:
    parameter: float
    amplitude: float
    residual: float
    converged_from: str  # constant_guess | perturbed_guess | previous_branch_point
    max_v: float
    min_v: float
    theta: float
    solution: SteadySolution | None = field(default=None, repr=False, compare=False)

    @property
    def nonconstant(self) -> bool:
        return self.amplitude > 1 + AMPLITUDE_THRESHOLD

    def row(self) -> list[float]:
        return [getattr(self, c) for c in BRANCH_COLUMNS]


@dataclass
class Branch:
    """Result of :func:`continuation`.

    ``threshold`` is the parameter interval (low, high) where the amplitude
    crosses ``1 + 1e-3``, narrowed by bisection when requested; ``None`` if
    it never crosses.
    """

    parameter_name: str
    points: list[BranchPoint]
    threshold: tuple[float, float] | None = None
    terminations: list[str] = field(default_factory=list)

    def amplitudes(self) -> np.ndarray:
        return np.array([p.amplitude for p in self.points])

    def parameters(self) -> np.ndarray:
        return np.array([p.parameter for p in self.points])


def weighted_norm(grid: Grid, r: np.ndarray) -> float:
    return math.sqrt(float(np.sum(grid.weights * r * r)))


def first_neumann_mode(grid: Grid) -> Field:
    """Lowest nonconstant Neumann eigenfunction, normalized to 1 at the origin."""
    if grid.is_radial:
        j11 = float(jn_zeros(1, 1)[0])
        radius = grid.domain.lengths[0]
        return Field(grid, j0(j11 * grid.centers[0] / radius))
    axis = int(np.argmax(grid.domain.lengths))
    coords = grid.cell_coords()[axis]
    return Field(grid, np.cos(np.pi * coords / grid.domain.lengths[axis]))


def perturbed_guess(grid: Grid, constant: float, amplitude: float = GUESS_AMPLITUDE) -> Field:
    """``constant * (1 + amplitude * psi1)``, the reproducible branch selector."""
    return constant * (1 + amplitude * first_neumann_mode(grid))


def _newton(
    residual: Callable[[np.ndarray], np.ndarray],
    solve_jacobian: Callable[[np.ndarray, np.ndarray], np.ndarray],
    z: np.ndarray,
    grid: Grid,
    tol: float,
    max_iter: int = MAX_ITER,
    admissible: Callable[[np.ndarray], bool] | None = None,
) -> tuple[np.ndarray, int, float]:
    """Damped Newton with a halving line search on the weighted residual norm."""
    r = residual(z)
    res = weighted_norm(grid, r)
    for it in range(max_iter + 1):
        if res <= tol:
            return z, it, res
        if it == max_iter:
            break
        dz = solve_jacobian(z, -r)
        if not np.all(np.isfinite(dz)):
            raise NewtonError("Newton step is not finite", z, res)
        lam = 1.0
        for _ in range(MAX_HALVINGS):
            trial = z + lam * dz
            if admissible is None or admissible(trial):
                with np.errstate(over="ignore", invalid="ignore"):
                    r_new = residual(trial)
                res_new = weighted_norm(grid, r_new)
                if math.isfinite(res_new) and res_new < (1 - 1e-4 * lam) * res:
                    break
            lam *= 0.5
        else:
            raise NewtonError(
                f"line search failed after {MAX_HALVINGS} halvings (residual {res:.3e})", z, res
            )
        z, r, res = trial, r_new, res_new
    raise NewtonError(f"no convergence after {max_iter} iterations (residual {res:.3e})", z, res)


def _deflated_newton(
    residual: Callable[[np.ndarray], np.ndarray],
    solve_jacobian: Callable[[np.ndarray, np.ndarray], np.ndarray],
    z: np.ndarray,
    grid: Grid,
    tol: float,
    known: Sequence[np.ndarray],
    max_iter: int = MAX_ITER,
    admissible: Callable[[np.ndarray], bool] | None = None,
) -> tuple[np.ndarray, int, float]:
    """Newton on ``M(z) F(z)`` with ``M = prod(1/|z - z_i|^2 + 1)`` over known roots.

    The deflated step is the plain Newton step scaled by
    ``1 / (1 - grad(log M) . step)``, so no extra solves are needed. Steps
    are halved only to stay admissible and finite.
    """
    w = grid.weights
    res = math.inf
    for it in range(max_iter + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            r = residual(z)
        res = weighted_norm(grid, r)
        if not math.isfinite(res):
            break
        if res <= tol:
            return z, it, res
        if it == max_iter:
            break
        dz = solve_jacobian(z, -r)
        slope = 0.0
        for root in known:
            e = z - root
            n2 = float(np.sum(w * e * e))
            if n2 == 0.0:
                raise NewtonError("deflated Newton sits on a known root", z, res)
            slope += float(np.sum(-2.0 * w * e * dz)) / (n2 * n2 + n2)
        step = dz / (1.0 - slope)
        if not np.all(np.isfinite(step)):
            break
        lam = 1.0
        for _ in range(MAX_HALVINGS):
            trial = z + lam * step
            if admissible is None or admissible(trial):
                break
            lam *= 0.5
        else:
            break
        z = trial
    raise NewtonError(f"deflated Newton did not converge (residual {res:.3e})", z, res)


def _is_flat(values: np.ndarray) -> bool:
    return float(values.max() - values.min()) < CONSTANT_RTOL * abs(float(np.mean(values)))


# -- algebraic motility ------------------------------------------------------


def _local_offset_residual(grid: Grid, k: float, d: float, z: np.ndarray) -> np.ndarray:
    # d Δw - w + w^k written for z = w - 1; expm1/log1p keep w^k - 1 accurate near w = 1
    return d * divgrad_array(grid, z) - z + np.expm1(k * np.log1p(z))


def local_residual(w: Field, k: float, d: float) -> float:
    """Weighted residual norm of ``d Δw - w + w**k``."""
    return weighted_norm(w.grid, _local_offset_residual(w.grid, k, d, w.data - 1.0))


def solve_local(
    k: float,
    d: float,
    grid: Grid,
    guess: Field | None = None,
    tol: float = NEWTON_TOL,
    max_iter: int = MAX_ITER,
    deflate: bool = True,
) -> Field:
    """Solve ``d Δw - w + w**k = 0`` with zero Neumann flux by damped Newton.

    The line search also halves steps that would make ``w`` non-positive.
    For ``k = 1`` every constant solves and ``w = 1`` is returned.
    When a nonconstant guess converges to ``w = 1`` and ``deflate`` is set,
    Newton is rerun from the guess with the roots ``w = 1`` and ``w = 0``
    deflated; a nonconstant root found that way is returned instead.

    Raises:
        NewtonError: no convergence in ``max_iter`` iterations or a failed
            line search
    """
    w, _, _ = _solve_local(k, d, grid, guess, tol, max_iter, deflate)
    return w


def _solve_local(k, d, grid, guess, tol, max_iter, deflate=True):
    if not k > 0:
        raise ValueError(f"k must be positive, got {k}")
    if not d > 0:
        raise ValueError(f"d must be positive, got {d}")
    w0 = np.ones(grid.shape) if guess is None else np.asarray(getattr(guess, "data", guess), dtype=float)
    if np.any(w0 <= 0):
        raise ValueError("the guess for w must be positive")
    if k == 1:
        # d Δw = 0: every constant solves and the Jacobian is singular
        return Field(grid, np.ones(grid.shape)), 0, 0.0
    lap = divgrad_matrix(grid)
    eye = sp.identity(grid.size, format="csc")
    shape = grid.shape

    def solve_jacobian(z, rhs):
        w = 1.0 + z.ravel()
        jac = (d * lap - eye + sp.diags(k * w ** (k - 1))).tocsc()
        return spla.spsolve(jac, rhs.ravel()).reshape(shape)

    def residual(z):
        return _local_offset_residual(grid, k, d, z)

    def positive(z):
        return bool(np.all(z > -1.0))

    z, it, res = _newton(residual, solve_jacobian, w0 - 1.0, grid, tol, max_iter, positive)
    if deflate and _is_flat(1.0 + z) and not _is_flat(w0):
        # the guess fell into the basin of w = 1; look for a root away from 1 and 0
        try:
            zd, itd, resd = _deflated_newton(
                residual, solve_jacobian, w0 - 1.0, grid, tol,
                [np.zeros(shape), np.full(shape, -1.0)], max_iter, positive,
            )
            if not _is_flat(1.0 + zd):
                z, it, res = zd, it + itd, resd
        except NewtonError as exc:
            logger.debug("deflated local solve failed: %s", exc)
    return Field(grid, 1.0 + z), it, res


def nonlocal_algebraic_residual(v: Field, k: float, m: float, d: float) -> float:
    """Weighted residual norm of ``d Δv - v + (m / ∫v**k) v**k``."""
    vk = v.data**k
    r = d * divgrad_array(v.grid, v.data) - v.data + m / float(np.sum(v.grid.weights * vk)) * vk
    return weighted_norm(v.grid, r)


def rescale_to_nonlocal(
    w: Field,
    k: float,
    m: float,
    d: float,
    pair: MotilityPair | None = None,
    tol: float = NONLOCAL_TOL,
    iterations: int = 0,
) -> SteadySolution:
    """Map a local solution ``w`` to the nonlocal problem with mass ``m``.

    ``V = (m / m0) w`` with ``m0 = ∫w`` solves
    ``d ΔV - V + (m0/m)**(k-1) V**k = 0``, and integrating that gives the
    scaling identity ``(m0/m)**(k-1) = m / ∫V**k``, which is checked to ``1e-8`` relative and the
    nonlocal residual to ``tol``. ``theta`` uses ``pair`` when given and
    ``gamma(v) = v**-lambda`` otherwise; ``u`` does not depend on that choice.

    Raises:
        ValueError: ``k = 1``, or the identity or residual check fails
            (``w`` was not a solution of the local problem)
    """
    if k == 1:
        raise ValueError("k = 1 is linear: only the constant satisfies the mass constraint")
    if not m > 0:
        raise ValueError(f"mass must be positive, got {m}")
    grid = w.grid
    m0 = w.integral()
    ratio = m / m0
    v = ratio * w
    vk = v.data**k
    int_vk = float(np.sum(grid.weights * vk))
    lhs, rhs = ratio ** (1 - k), m / int_vk
    if abs(lhs - rhs) > IDENTITY_RTOL * abs(rhs):
        raise ValueError(f"scaling identity violated: {lhs!r} vs {rhs!r}")
    residual = nonlocal_algebraic_residual(v, k, m, d)
    if residual > tol:
        raise ValueError(f"nonlocal residual {residual:.3e} exceeds {tol:g}")
    u = Field(grid, m * vk / int_vk)
    if pair is not None:
        gb = pair.gamma(v.data) ** (pair.params["alpha"] - 1)
        theta = m / float(np.sum(grid.weights * gb))
    else:
        theta = m / int_vk
    return SteadySolution(v=v, u=u, theta=theta, residual=residual, iterations=iterations, local=w)


def solve_nonlocal_algebraic(
    k: float,
    d: float,
    m: float,
    grid: Grid,
    guess: Field | None = None,
    pair: MotilityPair | None = None,
    tol: float = NEWTON_TOL,
) -> SteadySolution:
    """:func:`solve_local` followed by :func:`rescale_to_nonlocal`; ``guess`` is for ``w``."""
    w, it, _ = _solve_local(k, d, grid, guess, tol, MAX_ITER)
    if k == 1:
        # linear case: integrating gives ∫v = m, then d Δv = 0 leaves only the constant
        v = Field(grid, np.full(grid.shape, m / grid.volume))
        return SteadySolution(v=v, u=v, theta=m / v.integral(), residual=0.0, iterations=it, local=w)
    return rescale_to_nonlocal(w, k, m, d, pair, iterations=it)


# -- exponential motility ----------------------------------------------------


def _exp_terms(grid: Grid, z: np.ndarray):
    e = np.exp(z - z.max())
    return e, float(np.sum(grid.weights * e))


def _exp_offset_residual(grid: Grid, m_tilde: float, d: float, z: np.ndarray) -> np.ndarray:
    e, s = _exp_terms(grid, z)
    return d * divgrad_array(grid, z) - z + (m_tilde * e / s - m_tilde / grid.volume)


def solve_nonlocal_exponential(
    m_tilde: float,
    d: float,
    grid: Grid,
    guess: Field | None = None,
    scale: float = 1.0,
    tol: float = NEWTON_TOL,
    max_iter: int = MAX_ITER,
    deflate: bool = True,
) -> SteadySolution:
    """Solve ``d Δṽ - ṽ + m̃ exp(ṽ) / ∫exp(ṽ) = 0`` on a radial disc.

    The Jacobian ``d DivGrad - I + (m̃/S) diag(e) - (m̃/S²) e (W e)ᵀ`` is
    applied through a sparse LU factor of its local part and a
    Sherman-Morrison correction for the rank-one part. Exponentials are
    evaluated relative to ``max ṽ`` so they never overflow.

    ``guess`` is a field of ``ṽ``; the reported ``v`` is ``ṽ / scale`` with
    ``scale = chi (1 - alpha)``, and ``u = m exp(ṽ) / ∫exp(ṽ)`` with
    ``m = m̃ / scale``. A nonconstant guess that converges to the constant
    triggers a deflated rerun as in :func:`solve_local`.

    Raises:
        NewtonError: no convergence or a failed line search
    """
    if not (m_tilde > 0 and d > 0 and scale > 0):
        raise ValueError("m_tilde, d and scale must be positive")
    if not grid.is_radial:
        raise ValueError("solve_nonlocal_exponential needs a radial disc grid")
    level = m_tilde / grid.volume
    z0 = np.zeros(grid.shape) if guess is None else np.asarray(getattr(guess, "data", guess), dtype=float) - level
    lap = divgrad_matrix(grid)
    eye = sp.identity(grid.size, format="csc")
    weights = grid.weights

    def solve_jacobian(z, rhs):
        e, s = _exp_terms(grid, z)
        lu = spla.splu((d * lap - eye + sp.diags(m_tilde * e / s)).tocsc())
        a = m_tilde * e / s**2
        b = weights * e
        x = lu.solve(rhs)
        y = lu.solve(a)
        # (A - a bᵀ)⁻¹ rhs = x + y (bᵀx) / (1 - bᵀy)
        return x + y * (b @ x) / (1.0 - b @ y)

    def residual(z):
        return _exp_offset_residual(grid, m_tilde, d, z)

    z, it, res = _newton(residual, solve_jacobian, z0, grid, tol, max_iter)
    if deflate and _is_flat(z + level) and not _is_flat(z0 + level):
        try:
            zd, itd, resd = _deflated_newton(residual, solve_jacobian, z0, grid, tol, [np.zeros(grid.shape)], max_iter)
            if not _is_flat(zd + level):
                z, it, res = zd, it + itd, resd
        except NewtonError as exc:
            logger.debug("deflated exponential solve failed: %s", exc)
    vt = z + level
    e, s = _exp_terms(grid, z)
    m = m_tilde / scale
    u = Field(grid, m * e / s)
    # theta = m / ∫exp(ṽ), computed in logs: ∫exp(ṽ) = exp(max z + level) * s
    log_theta = math.log(m) - math.log(s) - float(z.max()) - level
    theta = math.exp(log_theta) if log_theta < 700 else math.inf
    return SteadySolution(v=Field(grid, vt / scale), u=u, theta=theta, residual=res, iterations=it)


def exponential_residual(solution: SteadySolution, m_tilde: float, d: float, scale: float = 1.0) -> float:
    """Weighted residual norm of the exponential nonlocal equation at ``solution``."""
    grid = solution.v.grid
    z = scale * solution.v.data - m_tilde / grid.volume
    return weighted_norm(grid, _exp_offset_residual(grid, m_tilde, d, z))


# -- continuation ------------------------------------------------------------


def resolved_cells(solution: SteadySolution) -> int:
    """Cells where the density is at least half its peak (all cells when flat)."""
    u = solution.u.data
    return int(np.count_nonzero(u >= 0.5 * u.max()))


def _is_resolved(solution: SteadySolution, min_cells: int) -> bool:
    return resolved_cells(solution) >= min_cells ** solution.v.grid.ndim


def _solve_at(problem: SteadyProblem, parameter: float, guess: Field | None, tol: float) -> SteadySolution:
    if problem.kind == "algebraic":
        return solve_nonlocal_algebraic(problem.k, parameter, problem.m, problem.grid, guess, problem.pair, tol)
    return solve_nonlocal_exponential(parameter, problem.d, problem.grid, guess, problem.scale, tol)


def _guesses(problem: SteadyProblem, parameter: float, previous: SteadySolution | None):
    grid = problem.grid
    if problem.kind == "algebraic":
        level = 1.0
        carried = None if previous is None else previous.local
    else:
        level = parameter / grid.volume
        carried = None if previous is None else problem.scale * previous.v
    out = []
    if carried is not None:
        out.append(("previous_branch_point", carried))
    out.append(("perturbed_guess", perturbed_guess(grid, level)))
    out.append(("constant_guess", Field(grid, np.full(grid.shape, level))))
    return out


def _point(parameter: float, source: str, sol: SteadySolution) -> BranchPoint:
    return BranchPoint(
        parameter=float(parameter),
        amplitude=sol.amplitude,
        residual=sol.residual,
        converged_from=source,
        max_v=sol.v.max(),
        min_v=sol.v.min(),
        theta=sol.theta,
        solution=sol,
    )


def _accept(sol: SteadySolution, source: str, min_cells: int) -> bool:
    if not _is_resolved(sol, min_cells):
        return False
    # a carried guess that collapses to the constant means the branch ended
    return not (source == "previous_branch_point" and sol.amplitude <= 1 + AMPLITUDE_THRESHOLD)


def continuation(
    problem: SteadyProblem,
    values: Sequence[float],
    refine: int = 0,
    tol: float = NEWTON_TOL,
    min_resolved_cells: int = MIN_RESOLVED_CELLS,
) -> Branch:
    """March the bifurcation parameter through ``values`` in the given order.

    The parameter is ``d`` for the algebraic kind and ``m̃`` for the
    exponential kind; the other problem data stay fixed. At every value the
    previous nonconstant solution is tried first, then the perturbed
    constant, then the constant. A solution whose density peak covers fewer
    than ``min_resolved_cells`` cells per axis is rejected: it is a grid-scale
    remnant of a concentrating profile, not a point of the continuous branch.
    Every rejection of the carried solution is logged as a branch
    termination.

    With ``refine > 0`` the first amplitude crossing of ``1 + 1e-3`` is
    bisected that many times, continuing from the nonconstant end.

    Raises:
        NewtonError: the first value cannot be solved from any guess
    """
    values = [float(x) for x in values]
    if len(values) < 1:
        raise ValueError("continuation needs at least one parameter value")
    diffs = np.diff(values)
    if len(values) > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise ValueError("parameter values must be strictly monotone")

    points: list[BranchPoint] = []
    terminations: list[str] = []
    previous: SteadySolution | None = None
    for index, parameter in enumerate(values):
        found = None
        for source, guess in _guesses(problem, parameter, previous):
            try:
                sol = _solve_at(problem, parameter, guess, tol)
            except (NewtonError, ValueError) as exc:
                if source == "previous_branch_point":
                    terminations.append(f"branch terminated before {parameter:g}: {exc}")
                logger.debug("%s at %g failed: %s", source, parameter, exc)
                continue
            if _accept(sol, source, min_resolved_cells):
                found = (source, sol)
                break
            if source == "previous_branch_point":
                reason = "unresolved concentration" if not _is_resolved(sol, min_resolved_cells) else "collapsed to the constant"
                terminations.append(f"branch terminated before {parameter:g}: {reason}")
        if found is None:
            if index == 0:
                raise NewtonError(f"no guess converged at the first parameter value {parameter:g}")
            terminations.append(f"no solution recorded at {parameter:g}")
            previous = None
            continue
        source, sol = found
        points.append(_point(parameter, source, sol))
        previous = sol if points[-1].nonconstant else None

    branch = Branch(problem.parameter_name, points, terminations=terminations)
    branch.threshold = _crossing(points)
    if refine and branch.threshold is not None:
        branch.threshold = _bisect(problem, points, refine, tol, min_resolved_cells)
    return branch


def _crossing(points: Sequence[BranchPoint]) -> tuple[float, float] | None:
    for a, b in zip(points, points[1:]):
        if a.nonconstant != b.nonconstant:
            return (min(a.parameter, b.parameter), max(a.parameter, b.parameter))
    return None


def _bisect(problem, points, steps, tol, min_cells) -> tuple[float, float]:
    for a, b in zip(points, points[1:]):
        if a.nonconstant != b.nonconstant:
            inside, outside = (a, b) if a.nonconstant else (b, a)
            break
    good, bad, sol = inside.parameter, outside.parameter, inside.solution
    for _ in range(steps):
        mid = 0.5 * (good + bad)
        carried = sol.local if problem.kind == "algebraic" else problem.scale * sol.v
        trial = None
        try:
            trial = _solve_at(problem, mid, carried, tol)
        except (NewtonError, ValueError):
            pass
        if trial is None:
            # the carried guess failed; a perturbed start may still find the branch near onset
            try:
                trial = _solve_at(problem, mid, _guesses(problem, mid, None)[0][1], tol)
            except (NewtonError, ValueError):
                trial = None
        if trial is not None and _is_resolved(trial, min_cells) and trial.amplitude > 1 + AMPLITUDE_THRESHOLD:
            good, sol = mid, trial
        else:
            bad = mid
    return (min(good, bad), max(good, bad))


def write_branch(branch: Branch | Sequence[BranchPoint], path: str | Path) -> None:
    """CSV with columns ``parameter,amplitude,residual,max_v,min_v,theta``."""
    points = branch.points if isinstance(branch, Branch) else branch
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BRANCH_COLUMNS)
        for p in points:
            writer.writerow([repr(float(x)) for x in p.row()])


def read_branch(path: str | Path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
