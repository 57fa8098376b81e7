"""Keller-Segel laboratory: signal-dependent motility, finite volumes, steady states."""

from .elliptic import EllipticOperator, exp_moment, min_signal, solve_v
from .evolve import RunConfig, SimState, flux_divergence, monitor_pei, run, stable_dt, step
from .grid import Domain, Field, Grid, build_grid, face_gradient, integrate, read_snapshot, write_snapshot
from .motility import (
    MotilityPair,
    algebraic,
    check_hypotheses,
    custom,
    evaluate,
    exponential,
    h3_functional,
    ks_algebraic,
    ks_exponential,
    phi_inverse_moment,
)
from .steady import (
    SteadyProblem,
    SteadySolution,
    continuation,
    rescale_to_nonlocal,
    solve_local,
    solve_nonlocal_exponential,
)

__all__ = [
    "Domain", "Field", "Grid", "build_grid", "face_gradient", "integrate", "read_snapshot", "write_snapshot",
    "EllipticOperator", "solve_v", "min_signal", "exp_moment",
    "MotilityPair", "algebraic", "exponential", "ks_algebraic", "ks_exponential", "custom",
    "evaluate", "h3_functional", "check_hypotheses", "phi_inverse_moment",
    "RunConfig", "SimState", "flux_divergence", "step", "stable_dt", "run", "monitor_pei",
    "SteadyProblem", "SteadySolution", "solve_local", "rescale_to_nonlocal",
    "solve_nonlocal_exponential", "continuation",
]
