"""Explicit finite-volume time stepping of the cell density.

The cell flux on every face is ``gamma(v_f) ∂u - u_f phi(v_f) ∂v`` with
``v_f`` the arithmetic face mean, a central difference for the diffusive
part and the upwind cell value ``u_f`` for the drift ``phi(v_f) ∂v``.
Boundary faces carry no flux, so the weighted sum of the update vanishes
and mass is conserved to roundoff. The signal is re-solved after every
update of ``u``.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog

from .elliptic import EllipticOperator, exp_moment
from .grid import Field, Grid, _face_neighbors, divergence_array, face_gradient_array, face_mean_array
from .motility import MotilityPair, phi_inverse_moment

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ("t", "mass", "linf_u", "lp_u", "min_v", "max_v", "exp_moment", "phi_inv_moment", "dt")
SAFETY = 0.4
ADVECTION = ("upwind", "central")
CLIP_TOLERANCE = 1e-6


class PositivityError(RuntimeError):
    """A single step lost more than ``1e-6`` of the mass to negative cells."""


@dataclass(frozen=True)
class SimState:
    u: Field
    v: Field
    t: float = 0.0
    dt: float = 0.0
    step_index: int = 0
    measured_eta: float = math.inf
    mass0: float = math.nan
    blowup_suspected: bool = False
    positivity_clipped_count: int = 0
    clipped_mass: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.u.grid


@dataclass(frozen=True)
class DiagRecord:
    t: float
    mass: float
    linf_u: float
    lp_u: float
    min_v: float
    max_v: float
    exp_moment: float
    phi_inv_moment: float
    dt: float

    def row(self) -> list[float]:
        return [getattr(self, c) for c in TRAJECTORY_COLUMNS]


@dataclass
class RunConfig:
    """Run controls.

    Attributes:
        cadence: time between diagnostic records
        p: exponent of the monitored ``∫u^p`` and ``∫phi(v)^-p``
        exp_rate: rate of the monitored ``∫exp(rate v)``; ``None`` means
            ``0.9 * 4 pi d / m``
        blowup_factor: flag blowup once ``max u`` exceeds this multiple of
            its initial value
        dt_floor: flag blowup once the stable step drops below this
        safety: CFL safety factor
        scheme: ``"euler"`` or ``"heun"``
        advection: face density of the drift, ``"upwind"`` (default) or the
            second-order ``"central"`` mean
        snapshot_cadence: time between stored ``(t, u, v)`` snapshots, or
            ``None`` for none
        max_steps: hard cap on the number of steps
    """

    cadence: float = 0.1
    p: float = 2.0
    exp_rate: float | None = None
    blowup_factor: float = 1e4
    dt_floor: float = 1e-12
    safety: float = SAFETY
    scheme: str = "euler"
    advection: str = "upwind"
    snapshot_cadence: float | None = None
    max_steps: int | None = None

    def validate(self):
        if not self.cadence > 0:
            raise ValueError(f"cadence must be positive, got {self.cadence}")
        if self.snapshot_cadence is not None and not self.snapshot_cadence > 0:
            raise ValueError("snapshot_cadence must be positive")
        if self.scheme not in ("euler", "heun"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.advection not in ADVECTION:
            raise ValueError(f"unknown advection {self.advection!r}")
        if not (0 < self.safety <= 1):
            raise ValueError("safety must lie in (0, 1]")


@dataclass(frozen=True)
class Outcome:
    status: str  # "completed" | "blowup_suspected"
    t_star: float | None = None
    reason: str = ""

    @property
    def completed(self) -> bool:
        return self.status == "completed"


@dataclass
class RunResult:
    trajectory: list[DiagRecord]
    outcome: Outcome
    final: SimState
    snapshots: list[tuple[float, Field, Field]] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.trajectory])


def _face_terms(grid: Grid, u: np.ndarray, v: np.ndarray, pair: MotilityPair):
    vf = face_mean_array(grid, v)
    gu = face_gradient_array(grid, u)
    gv = face_gradient_array(grid, v)
    gam = [pair.gamma(x) for x in vf]
    drift = [pair.phi(x) * g for x, g in zip(vf, gv)]
    return gam, gu, drift


def _rate_from_terms(grid: Grid, u: np.ndarray, terms, advection: str = "upwind") -> np.ndarray:
    gam, gu, drift = terms
    fluxes = []
    for axis, (g, du, c) in enumerate(zip(gam, gu, drift)):
        lo, hi = _face_neighbors(u, axis)
        u_face = np.where(c > 0, lo, hi) if advection == "upwind" else 0.5 * (lo + hi)
        fluxes.append(g * du - u_face * c)
    if not all(np.all(np.isfinite(f)) for f in fluxes):
        raise FloatingPointError("non-finite face flux")
    return divergence_array(grid, fluxes)


def _rate(grid: Grid, u: np.ndarray, v: np.ndarray, pair: MotilityPair, advection: str = "upwind") -> np.ndarray:
    return _rate_from_terms(grid, u, _face_terms(grid, u, v, pair), advection)


def flux_divergence(u: Field, v: Field, pair: MotilityPair, advection: str = "upwind") -> Field:
    """Cell-wise ``∂u/∂t = ∇·(gamma(v)∇u - u phi(v)∇v)`` of the finite-volume scheme.

    ``advection="central"`` replaces the upwind face density by the face
    mean; it is second order but loses the positivity margin of upwinding.
    """
    if u.grid != v.grid:
        raise ValueError("u and v live on different grids")
    if advection not in ADVECTION:
        raise ValueError(f"unknown advection {advection!r}")
    return Field(u.grid, _rate(u.grid, u.data, v.data, pair, advection))


def _stable_dt(grid: Grid, u: np.ndarray, v: np.ndarray, pair: MotilityPair, safety: float, terms=None) -> float:
    gam, _, drift = _face_terms(grid, u, v, pair) if terms is None else terms
    h = min(grid.h)
    gmax = max(float(np.max(g)) for g in gam)
    cmax = max(float(np.max(np.abs(c))) for c in drift)
    diffusive = h * h / (2 * grid.ndim * gmax) if gmax > 0 else math.inf
    advective = h / cmax if cmax > 0 else math.inf
    return safety * min(diffusive, advective)


def stable_dt(state: SimState, pair: MotilityPair, safety: float = SAFETY) -> float:
    """``safety * min(h^2 / (2 D max gamma), h / max|phi ∇v|)`` with ``D`` mesh axes."""
    return _stable_dt(state.grid, state.u.data, state.v.data, pair, safety)


def initial_state(u0: Field, op: EllipticOperator) -> SimState:
    if np.any(u0.data < 0) or not np.any(u0.data > 0):
        raise ValueError("initial density must be non-negative and not identically zero")
    v0 = op.solve(u0)
    return SimState(u=u0, v=v0, measured_eta=v0.min(), mass0=u0.integral())


def step(
    state: SimState,
    pair: MotilityPair,
    op: EllipticOperator,
    dt: float,
    scheme: str = "euler",
    advection: str = "upwind",
    rate: np.ndarray | None = None,
) -> SimState:
    """Advance ``u`` by one explicit step and re-solve ``v``.

    Negative cells are set to zero and the lost mass is restored by scaling
    the remaining cells. A non-finite update returns the old state with the
    blowup flag set. ``rate`` may carry the already evaluated first-stage
    rate of ``state``.

    Raises:
        PositivityError: the clipped mass exceeds ``1e-6`` of the total.
    """
    grid = state.grid
    u, v = state.u.data, state.v.data
    with np.errstate(all="ignore"):
        try:
            r0 = _rate(grid, u, v, pair, advection) if rate is None else rate
            u1 = u + dt * r0
            if scheme == "heun":
                vs = op.solve_array(np.maximum(u1, 0.0), x0=v)
                u1 = u + 0.5 * dt * (r0 + _rate(grid, u1, vs, pair, advection))
        except FloatingPointError:
            u1 = np.full_like(u, np.nan)
    if not np.all(np.isfinite(u1)):
        logger.warning("non-finite density at t=%g; flagging suspected blowup", state.t)
        return replace(state, blowup_suspected=True)

    clipped, lost = state.positivity_clipped_count, state.clipped_mass
    negative = u1 < 0
    if np.any(negative):
        w = grid.weights
        target = float(np.sum(w * u1))
        deficit = -float(np.sum(w[negative] * u1[negative]))
        mass = abs(target)
        if deficit > CLIP_TOLERANCE * mass:
            raise PositivityError(
                f"step at t={state.t:g} clipped mass {deficit:.3e} > {CLIP_TOLERANCE:g} * m"
            )
        u1 = np.where(negative, 0.0, u1)
        u1 *= target / float(np.sum(w * u1))
        clipped += 1
        lost += deficit
        logger.info("clipped %d negative cells at t=%g (deficit %.3e)", int(negative.sum()), state.t, deficit)

    v1 = op.solve_array(u1, x0=v)
    return SimState(
        u=Field(grid, u1),
        v=Field(grid, v1),
        t=state.t + dt,
        dt=dt,
        step_index=state.step_index + 1,
        measured_eta=min(state.measured_eta, float(v1.min())),
        mass0=state.mass0,
        blowup_suspected=state.blowup_suspected,
        positivity_clipped_count=clipped,
        clipped_mass=lost,
    )


def diagnose(state: SimState, pair: MotilityPair, p: float, exp_rate: float, safety: float = SAFETY) -> DiagRecord:
    u, v = state.u, state.v
    w = state.grid.weights
    try:
        phi_moment = phi_inverse_moment(pair, v, p)
    except (ValueError, ZeroDivisionError):
        phi_moment = math.inf
    return DiagRecord(
        t=state.t,
        mass=u.integral(),
        linf_u=u.max(),
        lp_u=float(np.sum(w * u.data**p)),
        min_v=v.min(),
        max_v=v.max(),
        exp_moment=exp_moment(v, exp_rate),
        phi_inv_moment=phi_moment,
        dt=stable_dt(state, pair, safety),
    )


def run(
    u0: Field,
    pair: MotilityPair,
    d: float,
    horizon: float,
    config: RunConfig | None = None,
    callback: Callable[[SimState], None] | None = None,
) -> RunResult:
    """Integrate from ``u0`` up to ``horizon`` or until blowup is suspected.

    Step sizes come from :func:`stable_dt` and are shortened to land on
    every diagnostic time, so records sit exactly on multiples of
    ``config.cadence``.
    """
    config = config or RunConfig()
    config.validate()
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")

    op = EllipticOperator(u0.grid, d)
    state = initial_state(u0, op)
    mass = state.mass0
    rate = config.exp_rate if config.exp_rate is not None else 0.9 * 4 * math.pi * d / mass
    linf0 = state.u.max()
    eps = 1e-12 * max(1.0, horizon)

    trajectory = [diagnose(state, pair, config.p, rate, config.safety)]
    snapshots = []
    next_snap = None
    if config.snapshot_cadence is not None:
        snapshots.append((state.t, state.u, state.v))
        next_snap = config.snapshot_cadence
    next_sample = config.cadence
    outcome = Outcome("completed")

    while state.t < horizon - eps:
        if config.max_steps is not None and state.step_index >= config.max_steps:
            outcome = Outcome("completed", reason="max_steps reached")
            break
        u, v = state.u.data, state.v.data
        with np.errstate(all="ignore"):
            terms = _face_terms(state.grid, u, v, pair)
            dt = _stable_dt(state.grid, u, v, pair, config.safety, terms)
            try:
                rate0 = _rate_from_terms(state.grid, u, terms, config.advection)
            except FloatingPointError:
                rate0 = None
        if not dt >= config.dt_floor:
            outcome = Outcome("blowup_suspected", state.t, f"dt collapse ({dt:.3e} < {config.dt_floor:g})")
            break
        dt = min(dt, next_sample - state.t, horizon - state.t)
        if next_snap is not None:
            dt = min(dt, next_snap - state.t)
        state = step(state, pair, op, dt, config.scheme, config.advection, rate0)
        if state.blowup_suspected:
            outcome = Outcome("blowup_suspected", state.t, "non-finite density")
            break
        if callback is not None:
            callback(state)
        if state.t >= next_sample - eps:
            trajectory.append(diagnose(state, pair, config.p, rate, config.safety))
            next_sample += config.cadence
        if next_snap is not None and state.t >= next_snap - eps:
            snapshots.append((state.t, state.u, state.v))
            next_snap += config.snapshot_cadence
        if state.u.max() > config.blowup_factor * linf0:
            outcome = Outcome(
                "blowup_suspected", state.t,
                f"max u grew beyond {config.blowup_factor:g} x its initial value",
            )
            break

    if trajectory[-1].t < state.t:
        trajectory.append(diagnose(state, pair, config.p, rate, config.safety))
    if not outcome.completed:
        state = replace(state, blowup_suspected=True)
        logger.warning("run stopped at t=%g: %s", outcome.t_star, outcome.reason)
    return RunResult(trajectory, outcome, state, snapshots)


def write_trajectory(trajectory: Sequence[DiagRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_COLUMNS)
        for rec in trajectory:
            writer.writerow([repr(float(x)) for x in rec.row()])


def read_trajectory(path: str | Path) -> list[DiagRecord]:
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRAJECTORY_COLUMNS:
            raise ValueError(f"unexpected trajectory columns {header}")
        return [DiagRecord(*(float(x) for x in row)) for row in reader]


@dataclass
class PeiReport:
    """Affine bound ``d/dt ∫u^p + ∫u^p <= c0 + c1 ∫phi(v)^-p`` fitted over a run."""

    p: float
    t: np.ndarray
    lhs: np.ndarray
    rhs_basis: np.ndarray
    c0: float | None
    c1: float | None
    fit_ok: bool
    admissible: bool | None
    max_coefficient: float

    def bound(self) -> np.ndarray:
        return self.c0 + self.c1 * self.rhs_basis


def monitor_pei(
    trajectory: Sequence[DiagRecord],
    p: float,
    admissible_p_range: tuple[float, float] | None = None,
    max_coefficient: float = 1e6,
) -> PeiReport:
    """Fit the smallest non-negative ``(c0, c1)`` covering a recorded run.

    The time derivative of ``∫u^p`` uses second-order finite differences
    over the record times. The fit is the linear program minimizing the
    summed gap ``c0 + c1 b_t - lhs_t`` subject to a non-negative gap at
    every record; ties are broken towards the smallest ``c1``.
    ``fit_ok`` is false when no pair within ``[0, max_coefficient]`` exists.
    """
    if len(trajectory) < 3:
        raise ValueError("need at least three records")
    admissible = None
    if admissible_p_range is not None:
        lo, hi = admissible_p_range
        admissible = lo < p <= hi
        if not admissible:
            warnings.warn(f"p={p} lies outside the admissible range ({lo}, {hi}]", stacklevel=2)
    t = np.array([r.t for r in trajectory])
    lp = np.array([r.lp_u for r in trajectory])
    basis = np.array([r.phi_inv_moment for r in trajectory])
    lhs = np.gradient(lp, t, edge_order=2) + lp

    c0 = c1 = None
    fit_ok = False
    if np.all(np.isfinite(lhs)) and np.all(np.isfinite(basis)):
        a_ub = -np.column_stack([np.ones_like(basis), basis])
        bounds = [(0, max_coefficient)] * 2
        cost = np.array([len(t), basis.sum()])
        first = linprog(cost, A_ub=a_ub, b_ub=-lhs, bounds=bounds, method="highs")
        if first.status == 0:
            budget = first.fun + 1e-9 * max(1.0, abs(first.fun))
            second = linprog(
                [0.0, 1.0], A_ub=np.vstack([a_ub, cost]), b_ub=np.append(-lhs, budget),
                bounds=bounds, method="highs",
            )
            sol = second.x if second.status == 0 else first.x
            c0, c1 = float(sol[0]), float(sol[1])
            fit_ok = True
    return PeiReport(p, t, lhs, basis, c0, c1, fit_ok, admissible, max_coefficient)
