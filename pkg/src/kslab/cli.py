"""Command-line front end: ``simulate``, ``check``, ``steady`` and ``sweep``.

Every command reads one YAML scenario file. Missing keys take the defaults of
:data:`DEFAULTS` (``kslab reference-config`` prints them all), and any key can
be overridden from the environment as ``KSLAB_<KEY>`` with ``__`` separating
nesting levels, e.g. ``KSLAB_RUN__CADENCE=0.5``; values are parsed as YAML
scalars.

Exit codes: 0 success, 1 usage or configuration error, 2 the scientific
outcome asked about did not hold (suspected blowup, a failed hypothesis,
Newton failure at the first branch point, no completed sweep point),
3 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml
from scipy.special import j0, jn_zeros

from . import motility
from .evolve import PositivityError, RunConfig, monitor_pei, run, write_trajectory
from .grid import Domain, Field, Grid, build_grid, write_snapshot
from .motility import MotilityPair, check_hypotheses
from .steady import NewtonError, SteadyProblem, continuation, write_branch

logger = logging.getLogger(__name__)

ENV_PREFIX = "KSLAB_"

DEFAULTS: dict[str, Any] = {
    "domain": {"shape": "rectangle", "lengths": [10.0, 10.0]},
    "resolution": 64,
    "motility": {"family": "ks_exponential", "chi": 1.0, "alpha": 0.5},
    "d": 1.0,
    "initial": {
        "kind": "constant",
        "mass": 1.0,
        "modes": [],
        "center": None,
        "width": 1.0,
        "background": 0.0,
        "noise": 0.0,
    },
    "horizon": 10.0,
    "run": {
        "cadence": 0.1,
        "p": 2.0,
        "exp_rate": None,
        "blowup_factor": 1e4,
        "dt_floor": 1e-12,
        "safety": 0.4,
        "scheme": "euler",
        "advection": "upwind",
        "snapshot_cadence": None,
        "max_steps": None,
    },
    "check": {"n": 2, "eta": 1.0, "eta_mode": "user", "v_max": 1e3},
    "steady": {
        "kind": None,
        "k": None,
        "m": None,
        "scale": 1.0,
        "parameter": {"start": None, "stop": None, "points": 11},
        "refine": 0,
        "tol": 1e-10,
        "min_resolved_cells": 5,
    },
    "sweep": {"axes": {}},
    "output": {"dir": "out"},
    "seed": 0,
}

INITIAL_KINDS = ("constant", "cosine", "gaussian")
CUSTOM_KEYS = ("gamma", "dgamma", "phi", "dphi")
# names available to custom motility expressions
_EXPR_NAMES = {
    name: getattr(np, name)
    for name in ("exp", "log", "sqrt", "sin", "cos", "tanh", "cosh", "sinh", "abs", "power", "pi", "e")
}


class ConfigError(ValueError):
    """The scenario file is unreadable or describes an invalid scenario."""


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        # a different motility family brings its own parameter set
        family_changed = key == "motility" and isinstance(value, dict) and \
            value.get("family", out[key].get("family")) != out[key].get("family")
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "axes" and not family_changed:
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def apply_env(raw: dict, environ: dict[str, str] | None = None) -> dict:
    """Overlay ``KSLAB_A__B=value`` variables onto a config mapping."""
    environ = os.environ if environ is None else environ
    out = copy.deepcopy(raw)
    for name, text in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in name[len(ENV_PREFIX):].split("__") if p]
        if not path:
            continue
        node = out
        for key in path[:-1]:
            if not isinstance(node.get(key), dict):
                node[key] = {}
            node = node[key]
        node[path[-1]] = yaml.safe_load(text)
    return out


@dataclass
class ScenarioConfig:
    """A parsed scenario; ``raw`` is the full mapping with defaults filled in."""

    raw: dict

    @classmethod
    def from_dict(cls, data: dict | None) -> ScenarioConfig:
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError("the configuration must be a mapping")
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
        cfg = cls(_merge(DEFAULTS, data))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path, environ: dict[str, str] | None = None) -> ScenarioConfig:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh)
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        return cls.from_dict(apply_env(data or {}, environ))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def dump(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=False)

    def __getitem__(self, key):
        return self.raw[key]

    # -- builders --

    def validate(self):
        try:
            self.grid()
            self.pair()
            self.run_config().validate()
            self.initial_field()
        except ConfigError:
            raise
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        if not float(self.raw["d"]) > 0:
            raise ConfigError("d must be positive")
        if not float(self.raw["horizon"]) > 0:
            raise ConfigError("horizon must be positive")

    def domain(self) -> Domain:
        spec = self.raw["domain"]
        return Domain(spec["shape"], tuple(spec["lengths"]))

    def grid(self) -> Grid:
        return build_grid(self.domain(), self.raw["resolution"])

    def pair(self) -> MotilityPair:
        return pair_from_dict(self.raw["motility"])

    def run_config(self) -> RunConfig:
        return RunConfig(**self.raw["run"])

    @property
    def d(self) -> float:
        return float(self.raw["d"])

    @property
    def horizon(self) -> float:
        return float(self.raw["horizon"])

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def initial_field(self, grid: Grid | None = None) -> Field:
        return initial_condition(grid or self.grid(), self.raw["initial"], self.seed)


def pair_from_dict(spec: dict) -> MotilityPair:
    spec = dict(spec)
    family = spec.pop("family", None)
    if family == "custom":
        missing = [k for k in CUSTOM_KEYS if not spec.get(k)]
        if missing:
            raise ConfigError(f"custom motility needs expressions for {', '.join(missing)}")
        funcs = [_expression(spec[k]) for k in CUSTOM_KEYS]
        return motility.custom(*funcs, singular_at_zero=bool(spec.get("singular_at_zero", False)))
    factories = {
        "algebraic": ("sigma1", "sigma2", "lambda1", "lambda2"),
        "exponential": ("chi1", "chi2", "delta"),
        "ks_algebraic": ("sigma", "lambda", "alpha"),
        "ks_exponential": ("chi", "alpha"),
    }
    if family not in factories:
        raise ConfigError(f"unknown motility family {family!r}")
    names = factories[family]
    extra = set(spec) - set(names)
    if extra:
        raise ConfigError(f"{family} motility does not take {', '.join(sorted(extra))}")
    try:
        return MotilityPair(family, {k: float(spec[k]) for k in names})
    except KeyError as exc:
        raise ConfigError(f"{family} motility needs parameter {exc.args[0]}") from exc


def _expression(text: str):
    """Compile a numpy expression in ``v`` (no builtins) into a function."""
    code = compile(str(text), "<motility>", "eval")
    bad = set(code.co_names) - set(_EXPR_NAMES) - {"v"}
    if bad:
        raise ConfigError(f"unknown names in motility expression {text!r}: {', '.join(sorted(bad))}")

    def func(v):
        value = eval(code, {"__builtins__": {}}, {**_EXPR_NAMES, "v": v})
        return np.broadcast_to(np.asarray(value, dtype=float), np.shape(v)) + 0.0

    func.expression = str(text)
    return func


def initial_condition(grid: Grid, spec: dict, seed: int = 0) -> Field:
    """Smooth generator for ``u0`` scaled to ``spec["mass"]``.

    ``constant``: uniform; ``cosine``: ``1 + sum a cos(k pi x / L)`` over
    ``modes`` entries ``[k, a]`` (``[kx, ky, a]`` on rectangles); ``gaussian``:
    ``background + exp(-|x - center|^2 / (2 width^2))``. ``noise`` adds a
    relative uniform perturbation drawn from ``seed``.
    """
    kind = spec.get("kind", "constant")
    if kind not in INITIAL_KINDS:
        raise ConfigError(f"unknown initial condition kind {kind!r}")
    mass = float(spec.get("mass", 1.0))
    if not mass > 0:
        raise ConfigError("initial mass must be positive")
    coords = grid.cell_coords()
    lengths = grid.domain.lengths
    profile = np.ones(grid.shape)
    if kind == "cosine":
        for mode in spec.get("modes") or []:
            *ks, amp = mode
            if len(ks) != grid.ndim:
                raise ConfigError(f"cosine mode {mode} needs {grid.ndim} wave number(s) and an amplitude")
            if grid.is_radial:
                zero = float(jn_zeros(1, int(ks[0]))[-1]) if ks[0] > 0 else 0.0
                term = j0(zero * coords[0] / lengths[0])
            else:
                term = np.ones(grid.shape)
                for k, x, length in zip(ks, coords, lengths):
                    term = term * np.cos(k * np.pi * x / length)
            profile = profile + float(amp) * term
    elif kind == "gaussian":
        center = spec.get("center")
        if center is None:
            center = [0.0] if grid.is_radial else [0.5 * length for length in lengths]
        if len(center) != grid.ndim:
            raise ConfigError(f"gaussian center needs {grid.ndim} coordinate(s)")
        width = float(spec.get("width", 1.0))
        if not width > 0:
            raise ConfigError("gaussian width must be positive")
        r2 = sum((x - c) ** 2 for x, c in zip(coords, center))
        profile = float(spec.get("background", 0.0)) + np.exp(-r2 / (2 * width**2))
    noise = float(spec.get("noise", 0.0) or 0.0)
    if noise:
        rng = np.random.default_rng(seed)
        profile = profile * (1 + noise * rng.uniform(-1.0, 1.0, grid.shape))
    if np.any(profile < 0) or not np.any(profile > 0):
        raise ConfigError("initial condition must be non-negative and not identically zero")
    u = Field(grid, profile)
    return u * (mass / u.integral())


# -- commands ----------------------------------------------------------------


def _out_dir(cfg: ScenarioConfig, override: str | None) -> Path:
    path = Path(override or cfg["output"]["dir"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=False, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _finite(x: float | None):
    if x is None or not math.isfinite(x):
        return None if x is None or math.isnan(x) else ("inf" if x > 0 else "-inf")
    return float(x)


def linf_plateau(linf: np.ndarray) -> float:
    """Median of ``max u`` over the second half of the records."""
    tail = linf[len(linf) // 2:]
    return float(np.median(tail)) if len(tail) else math.nan


def simulate(cfg: ScenarioConfig, out: Path, pei_p: float | None = None) -> dict:
    """Run one scenario, write its trajectory and snapshots, return the summary."""
    grid = cfg.grid()
    pair = cfg.pair()
    u0 = cfg.initial_field(grid)
    result = run(u0, pair, cfg.d, cfg.horizon, cfg.run_config())
    write_trajectory(result.trajectory, out / "trajectory.csv")
    if result.snapshots:
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        for i, (t, u, v) in enumerate(result.snapshots):
            write_snapshot(u, snap_dir / f"u_{i:05d}.csv")
            write_snapshot(v, snap_dir / f"v_{i:05d}.csv")
    write_snapshot(result.final.u, out / "u_final.csv")
    write_snapshot(result.final.v, out / "v_final.csv")
    linf = result.column("linf_u")
    summary = {
        "outcome": result.outcome.status,
        "t_star": result.outcome.t_star,
        "reason": result.outcome.reason,
        "t_final": result.final.t,
        "steps": result.final.step_index,
        "initial_mass": result.final.mass0,
        "final_mass": result.final.u.integral(),
        "measured_eta": result.final.measured_eta,
        "linf_plateau": linf_plateau(linf),
        "positivity_clipped_count": result.final.positivity_clipped_count,
    }
    if pei_p is not None and len(result.trajectory) >= 3:
        report = monitor_pei(result.trajectory, pei_p)
        summary["pei"] = {"p": pei_p, "fit_ok": report.fit_ok, "c0": report.c0, "c1": report.c1}
    return summary


def cmd_simulate(cfg: ScenarioConfig, out: Path) -> int:
    (out / "resolved_config.yaml").write_text(cfg.dump())
    summary = simulate(cfg, out, pei_p=float(cfg["run"]["p"]))
    _write_json(out / "summary.json", summary)
    print(json.dumps({k: summary[k] for k in ("outcome", "t_star", "final_mass", "measured_eta", "linf_plateau")}))
    return 0 if summary["outcome"] == "completed" else 2


def cmd_check(cfg: ScenarioConfig, out: Path, n: int | None = None, eta_mode: str | None = None) -> int:
    spec = cfg["check"]
    n = int(spec["n"] if n is None else n)
    eta_mode = eta_mode or spec["eta_mode"]
    pair = cfg.pair()
    m = float(cfg["initial"]["mass"])
    if eta_mode == "measured":
        grid = cfg.grid()
        result = run(cfg.initial_field(grid), pair, cfg.d, cfg.horizon, cfg.run_config())
        eta = float(result.final.measured_eta)
    elif eta_mode == "user":
        eta = float(spec["eta"])
    else:
        raise ConfigError(f"unknown eta_mode {eta_mode!r}")
    report = check_hypotheses(pair, n, eta, cfg.d, m, eta_mode=eta_mode, v_max=float(spec["v_max"]))
    text = report.to_json(indent=2)
    (out / "hypothesis_report.json").write_text(text + "\n")
    print(text)
    for c in report.conditions.values():
        if c.applicable and not c.passed:
            print(f"FAIL {c.name}: {c.witness_lhs} vs {c.witness_rhs} {c.note}".rstrip())
    return 0 if report.all_applicable_pass else 2


def steady_problem(cfg: ScenarioConfig) -> tuple[SteadyProblem, np.ndarray]:
    spec = cfg["steady"]
    grid = cfg.grid()
    m = float(spec["m"] if spec["m"] is not None else cfg["initial"]["mass"])
    kind = spec["kind"]
    if kind is None:
        try:
            problem = SteadyProblem.from_pair(cfg.pair(), cfg.d, m, grid)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        try:
            problem = SteadyProblem(kind, cfg.d, m, grid, k=spec["k"], scale=float(spec["scale"]))
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
    par = spec["parameter"]
    if par["start"] is None or par["stop"] is None:
        raise ConfigError("steady.parameter needs start and stop")
    points = int(par["points"])
    if points < 1:
        raise ConfigError("steady.parameter.points must be at least 1")
    values = np.linspace(float(par["start"]), float(par["stop"]), points)
    return problem, values


def cmd_steady(cfg: ScenarioConfig, out: Path) -> int:
    problem, values = steady_problem(cfg)
    spec = cfg["steady"]
    try:
        branch = continuation(
            problem, values, refine=int(spec["refine"]), tol=float(spec["tol"]),
            min_resolved_cells=int(spec["min_resolved_cells"]),
        )
    except NewtonError as exc:
        print(f"Newton failed at the first branch point: {exc}", file=sys.stderr)
        return 2
    write_branch(branch, out / "branch.csv")
    last = branch.points[-1].solution
    write_snapshot(last.v, out / "steady_v.csv")
    write_snapshot(last.u, out / "steady_u.csv")
    summary = {
        "parameter": branch.parameter_name,
        "threshold": None if branch.threshold is None else list(branch.threshold),
        "points": len(branch.points),
        "terminations": branch.terminations,
    }
    _write_json(out / "steady_summary.json", summary)
    print(json.dumps(summary))
    return 0


def _set_key(raw: dict, dotted: str, value) -> dict:
    node = raw
    keys = dotted.split(".")
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value
    return raw


def cmd_sweep(cfg: ScenarioConfig, out: Path, threads: int = 1) -> int:
    """Run the scenario at every point of the ``sweep.axes`` lattice.

    Axis names are dotted config keys (``d``, ``initial.mass``,
    ``motility.chi``); the short name ``mass`` means ``initial.mass``.
    """
    axes = cfg["sweep"]["axes"] or {}
    names = list(axes)
    if not names or any(not axes[n] for n in names):
        raise ConfigError("sweep needs at least one non-empty axis")
    lattice = list(itertools.product(*(axes[n] for n in names)))

    def one(index_point):
        index, point = index_point
        raw = cfg.to_dict()
        raw["sweep"] = {"axes": {}}
        for name, value in zip(names, point):
            _set_key(raw, "initial.mass" if name == "mass" else name, value)
        row = dict(zip(names, point))
        try:
            sub = ScenarioConfig.from_dict(raw)
            point_dir = out / f"point_{index:04d}"
            point_dir.mkdir(exist_ok=True)
            summary = simulate(sub, point_dir)
            row.update(outcome=summary["outcome"], t_star=summary["t_star"], linf_plateau=summary["linf_plateau"])
        except (ConfigError, PositivityError, ArithmeticError, RuntimeError, ValueError) as exc:
            logger.warning("sweep point %s failed: %s", row, exc)
            row.update(outcome="error", t_star=None, linf_plateau=None)
        return row

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(one, enumerate(lattice)))
    columns = names + ["outcome", "t_star", "linf_plateau"]
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(["" if row[c] is None else repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])
    completed = sum(r["outcome"] == "completed" for r in rows)
    print(json.dumps({"points": len(rows), "completed": completed}))
    return 0 if completed else 2


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kslab", description="Keller-Segel motility laboratory")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="scenario YAML file")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="seed for randomized initial perturbations")
        p.add_argument("--threads", type=int, default=1, help="worker threads (sweep)")

    common(sub.add_parser("simulate", help="run the evolution system"))
    check = sub.add_parser("check", help="evaluate hypotheses and theorem conditions")
    common(check)
    check.add_argument("--n", type=int, help="space dimension (overrides check.n)")
    check.add_argument("--eta-mode", choices=("user", "measured"), help="overrides check.eta_mode")
    common(sub.add_parser("steady", help="continuation of steady states"))
    common(sub.add_parser("sweep", help="simulate over a parameter lattice"))
    sub.add_parser("reference-config", help="print the reference configuration with all defaults")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "reference-config":
        print(yaml.safe_dump(DEFAULTS, sort_keys=False), end="")
        return 0
    try:
        cfg = ScenarioConfig.load(args.config)
        if args.seed is not None:
            cfg = ScenarioConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        out = _out_dir(cfg, args.out)
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        if args.command == "check":
            return cmd_check(cfg, out, args.n, args.eta_mode)
        if args.command == "steady":
            return cmd_steady(cfg, out)
        return cmd_sweep(cfg, out, args.threads)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (PositivityError, NewtonError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
