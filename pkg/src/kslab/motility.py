"""Signal-dependent motility pairs and the boundedness conditions they must meet.

A pair is the diffusive motility ``gamma(v) > 0`` together with the
chemotactic motility ``phi(v) >= 0``. Built-in families:

* ``algebraic``: ``gamma = s1 / v**l1``, ``phi = s2 / v**l2``
* ``exponential``: ``gamma = exp(-c1 v)``, ``phi = delta exp(-c2 v)``
* ``ks_algebraic`` / ``ks_exponential``: ``gamma`` as above with
  ``phi = (alpha - 1) gamma'`` (the Keller-Segel relation)
* ``custom``: user callables for ``gamma, gamma', phi, phi'``

:func:`check_hypotheses` evaluates every structural hypothesis and the
family-specific global-boundedness conditions in closed form and records
the numbers behind each verdict.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .grid import Field

logger = logging.getLogger(__name__)

FAMILIES = ("algebraic", "exponential", "ks_algebraic", "ks_exponential", "custom")
DEFAULT_V_MAX = 1e3
_SAMPLES = 4001


@dataclass(frozen=True)
class MotilityPair:
    """Parametrized ``(gamma, phi)`` pair; build one with the factory functions."""

    family: str
    params: Mapping[str, float] = field(default_factory=dict)
    functions: tuple[Callable, ...] | None = None  # custom only: gamma, dgamma, phi, dphi
    singular_at_zero: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown motility family {self.family!r}")
        params = {k: float(v) for k, v in self.params.items()}
        object.__setattr__(self, "params", params)
        p = params
        if self.family == "algebraic":
            _require(p, "sigma1", "sigma2", "lambda1", "lambda2")
            if not (p["sigma1"] > 0 and p["sigma2"] > 0 and p["lambda1"] > 0 and p["lambda2"] > 1):
                raise ValueError("algebraic pair needs sigma1, sigma2 > 0, lambda1 > 0, lambda2 > 1")
        elif self.family == "exponential":
            _require(p, "chi1", "chi2", "delta")
            if not (p["chi1"] > 0 and p["chi2"] > 0 and p["delta"] > 0):
                raise ValueError("exponential pair needs chi1, chi2, delta > 0")
        elif self.family == "ks_algebraic":
            _require(p, "sigma", "lambda", "alpha")
            if not (p["sigma"] > 0 and p["lambda"] > 0 and p["alpha"] < 1):
                raise ValueError("ks_algebraic pair needs sigma, lambda > 0 and alpha < 1")
        elif self.family == "ks_exponential":
            _require(p, "chi", "alpha")
            if not (p["chi"] > 0 and p["alpha"] < 1):
                raise ValueError("ks_exponential pair needs chi > 0 and alpha < 1")
        else:
            if self.functions is None or len(self.functions) != 4 or not all(
                callable(f) for f in self.functions
            ):
                raise ValueError("custom pair needs four callables: gamma, gamma', phi, phi'")
        if self.family in ("algebraic", "ks_algebraic"):
            object.__setattr__(self, "singular_at_zero", True)

    def algebraic_params(self) -> tuple[float, float, float, float]:
        """``(sigma1, sigma2, lambda1, lambda2)`` for either algebraic family."""
        p = self.params
        if self.family == "algebraic":
            return p["sigma1"], p["sigma2"], p["lambda1"], p["lambda2"]
        if self.family == "ks_algebraic":
            s, lam, a = p["sigma"], p["lambda"], p["alpha"]
            return s, (1 - a) * s * lam, lam, lam + 1
        raise ValueError(f"{self.family} pair has no algebraic form")

    def exponential_params(self) -> tuple[float, float, float]:
        """``(chi1, chi2, delta)`` for either exponential family."""
        p = self.params
        if self.family == "exponential":
            return p["chi1"], p["chi2"], p["delta"]
        if self.family == "ks_exponential":
            return p["chi"], p["chi"], (1 - p["alpha"]) * p["chi"]
        raise ValueError(f"{self.family} pair has no exponential form")

    @property
    def kind(self) -> str:
        if self.family in ("algebraic", "ks_algebraic"):
            return "algebraic"
        if self.family in ("exponential", "ks_exponential"):
            return "exponential"
        return "custom"

    # vectorized evaluation, no argument checks (used inside time stepping)

    def gamma(self, v):
        if self.kind == "algebraic":
            s1, _, l1, _ = self.algebraic_params()
            return s1 * v ** (-l1)
        if self.kind == "exponential":
            c1, _, _ = self.exponential_params()
            return np.exp(-c1 * v)
        return self.functions[0](v)

    def dgamma(self, v):
        if self.kind == "algebraic":
            s1, _, l1, _ = self.algebraic_params()
            return -l1 * s1 * v ** (-l1 - 1)
        if self.kind == "exponential":
            c1, _, _ = self.exponential_params()
            return -c1 * np.exp(-c1 * v)
        return self.functions[1](v)

    def phi(self, v):
        if self.kind == "algebraic":
            _, s2, _, l2 = self.algebraic_params()
            return s2 * v ** (-l2)
        if self.kind == "exponential":
            _, c2, delta = self.exponential_params()
            return delta * np.exp(-c2 * v)
        return self.functions[2](v)

    def dphi(self, v):
        if self.kind == "algebraic":
            _, s2, _, l2 = self.algebraic_params()
            return -l2 * s2 * v ** (-l2 - 1)
        if self.kind == "exponential":
            _, c2, delta = self.exponential_params()
            return -c2 * delta * np.exp(-c2 * v)
        return self.functions[3](v)

    def to_dict(self) -> dict:
        return {"family": self.family, **self.params}


def _require(params, *names):
    missing = [n for n in names if n not in params]
    if missing:
        raise ValueError(f"missing motility parameters: {', '.join(missing)}")


def algebraic(sigma1: float, sigma2: float, lambda1: float, lambda2: float) -> MotilityPair:
    return MotilityPair("algebraic", dict(sigma1=sigma1, sigma2=sigma2, lambda1=lambda1, lambda2=lambda2))


def exponential(chi1: float, chi2: float, delta: float) -> MotilityPair:
    return MotilityPair("exponential", dict(chi1=chi1, chi2=chi2, delta=delta))


def ks_algebraic(sigma: float, lam: float, alpha: float) -> MotilityPair:
    return MotilityPair("ks_algebraic", {"sigma": sigma, "lambda": lam, "alpha": alpha})


def ks_exponential(chi: float, alpha: float) -> MotilityPair:
    return MotilityPair("ks_exponential", dict(chi=chi, alpha=alpha))


def custom(gamma, dgamma, phi, dphi, singular_at_zero: bool = False) -> MotilityPair:
    return MotilityPair("custom", {}, (gamma, dgamma, phi, dphi), singular_at_zero)


def _check_argument(pair: MotilityPair, v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("motility argument must be finite")
    if pair.singular_at_zero and np.any(arr <= 0):
        raise ValueError(f"{pair.family} motilities are singular at v <= 0")
    if np.any(arr < 0):
        raise ValueError("motility argument must be non-negative")
    return arr


def evaluate(pair: MotilityPair, v):
    """Return ``(gamma, gamma', phi, phi')`` at ``v`` (scalar or array)."""
    x = _check_argument(pair, v)
    out = (pair.gamma(x), pair.dgamma(x), pair.phi(x), pair.dphi(x))
    if np.ndim(v) == 0:
        return tuple(float(o) for o in out)
    return out


def h3_functional(pair: MotilityPair, v):
    """``gamma(v) |phi'(v)| / phi(v)**2``, closed form for the built-in families."""
    x = _check_argument(pair, v)
    if pair.kind == "algebraic":
        s1, s2, l1, l2 = pair.algebraic_params()
        out = s1 * l2 / s2 * x ** (l2 - l1 - 1)
    elif pair.kind == "exponential":
        c1, c2, delta = pair.exponential_params()
        out = c2 / delta * np.exp((c2 - c1) * x)
    else:
        phi = np.asarray(pair.phi(x), dtype=float)
        if np.any(phi == 0):
            raise ZeroDivisionError("phi(v) = 0: the quotient is undefined")
        out = pair.gamma(x) * np.abs(pair.dphi(x)) / phi**2
    return float(out) if np.ndim(v) == 0 else out


def _power_inf(coef: float, exponent: float, lo: float) -> float:
    """Infimum of ``coef * v**exponent`` over ``[lo, inf)`` (``lo = 0`` allowed)."""
    if exponent > 0:
        return coef * lo**exponent
    return coef if exponent == 0 else 0.0


def _exp_inf(coef: float, rate: float, lo: float) -> float:
    """Infimum of ``coef * exp(rate v)`` over ``[lo, inf)``."""
    return coef * math.exp(rate * lo) if rate >= 0 else 0.0


def h3_infimum(pair: MotilityPair, lower: float, v_max: float = DEFAULT_V_MAX) -> tuple[float, bool]:
    """Infimum of :func:`h3_functional` over ``[lower, inf)``.

    Returns ``(value, approximate)``. Built-in families are exact; custom
    pairs are sampled on ``[lower, v_max]`` and flagged approximate.
    """
    if pair.kind == "algebraic":
        s1, s2, l1, l2 = pair.algebraic_params()
        return _power_inf(s1 * l2 / s2, l2 - l1 - 1, lower), False
    if pair.kind == "exponential":
        c1, c2, delta = pair.exponential_params()
        return _exp_inf(c2 / delta, c2 - c1, lower), False
    lo = max(lower, 1e-12) if pair.singular_at_zero else lower
    grid = np.geomspace(max(lo, 1e-9), v_max, _SAMPLES) if lo > 0 else np.linspace(0, v_max, _SAMPLES)
    grid = np.unique(np.concatenate([[lo], grid]))
    with np.errstate(all="ignore"):
        phi = np.asarray(pair.phi(grid), dtype=float)
        values = pair.gamma(grid) * np.abs(pair.dphi(grid)) / phi / phi
    # where phi underflows the quotient is lost to roundoff; those samples are dropped
    values = values[np.isfinite(values) & (phi > 1e-150)]
    if values.size == 0:
        raise ZeroDivisionError("phi vanishes on the whole sampling range")
    return float(values.min()), True


@dataclass
class ConditionResult:
    name: str
    applicable: bool
    passed: bool | None
    witness_lhs: float | None = None
    witness_rhs: float | None = None
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "applicable": self.applicable,
            "pass": self.passed,
            "witness_lhs": _json_number(self.witness_lhs),
            "witness_rhs": _json_number(self.witness_rhs),
            "note": self.note,
        }


def _json_number(x):
    if x is None:
        return None
    x = float(x)
    if math.isfinite(x):
        return x
    return "inf" if x > 0 else "-inf" if x < 0 else "nan"


def _not_applicable(name: str, note: str) -> ConditionResult:
    return ConditionResult(name, False, None, note=note)


@dataclass
class HypothesisReport:
    """Verdicts with witness numbers for every hypothesis and theorem condition.

    ``h3_inf`` is the infimum over ``[eta, inf)``; ``h3_inf_from_zero`` the
    infimum over ``[0, inf)`` (``(0, inf)`` for singular families).
    """

    family: str
    n: int
    eta: float
    d: float
    m: float
    eta_mode: str
    h3_inf: float
    h3_inf_from_zero: float
    h3_approximate: bool
    admissible_p_range: tuple[float, float] | None
    conditions: dict[str, ConditionResult]

    def __getattr__(self, name):
        conditions = self.__dict__.get("conditions", {})
        if name in conditions:
            return conditions[name]
        raise AttributeError(name)

    @property
    def all_applicable_pass(self) -> bool:
        return all(c.passed for c in self.conditions.values() if c.applicable)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "inputs": {"n": self.n, "eta": self.eta, "d": self.d, "m": self.m, "eta_mode": self.eta_mode},
            "h3_inf": _json_number(self.h3_inf),
            "h3_inf_from_zero": _json_number(self.h3_inf_from_zero),
            "h3_approximate": self.h3_approximate,
            "admissible_p_range": None if self.admissible_p_range is None
            else [_json_number(x) for x in self.admissible_p_range],
            "conditions": [c.to_dict() for c in self.conditions.values()],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def check_hypotheses(
    pair: MotilityPair,
    n: int,
    eta: float,
    d: float,
    m: float,
    *,
    eta_mode: str = "user",
    v_max: float = DEFAULT_V_MAX,
) -> HypothesisReport:
    """Evaluate the structural hypotheses and the boundedness conditions.

    Args:
        pair: motility pair under test
        n: space dimension
        eta: positive lower bound of the signal; every infimum over ``v`` is
            taken on ``[eta, inf)``
        d: chemical diffusion rate
        m: cell mass
        eta_mode: how ``eta`` was obtained (``"user"`` or ``"measured"``),
            echoed in the report
        v_max: sampling cutoff for custom pairs
    """
    n = int(n)
    if n < 1:
        raise ValueError("dimension n must be >= 1")
    for name, value in (("eta", eta), ("d", d), ("m", m)):
        if not (math.isfinite(value) and value > 0):
            raise ValueError(f"{name} must be positive, got {value}")

    half_n = n / 2
    cond: dict[str, ConditionResult] = {}
    approximate = pair.kind == "custom"

    # (H1) gamma > 0 and (H2a) phi >= 0, phi' < 0 on [eta, inf)
    if pair.kind == "algebraic":
        s1, s2, l1, l2 = pair.algebraic_params()
        cond["h1"] = ConditionResult("h1", True, True, s1 * eta ** (-l1), 0.0, "gamma(eta) > 0; positive for all v > 0")
        cond["h2a"] = ConditionResult("h2a", True, True, -l2 * s2 * eta ** (-l2 - 1), 0.0,
                                      "phi' is negative for all v > 0 (sup attained at infinity)")
    elif pair.kind == "exponential":
        c1, c2, delta = pair.exponential_params()
        cond["h1"] = ConditionResult("h1", True, True, math.exp(-c1 * eta), 0.0, "gamma(eta) > 0; positive for all v")
        cond["h2a"] = ConditionResult("h2a", True, True, -c2 * delta * math.exp(-c2 * eta), 0.0,
                                      "phi' is negative for all v (sup attained at infinity)")
    else:
        vs = np.geomspace(eta, v_max, _SAMPLES)
        g = np.asarray(pair.gamma(vs), dtype=float)
        ph = np.asarray(pair.phi(vs), dtype=float)
        dph = np.asarray(pair.dphi(vs), dtype=float)
        cond["h1"] = ConditionResult("h1", True, bool(np.all(g > 0)), float(g.min()), 0.0,
                                     f"sampled on [eta, {v_max:g}]")
        cond["h2a"] = ConditionResult(
            "h2a", True, bool(np.all(ph >= 0) and np.all(dph < 0)), float(dph.max()), 0.0,
            f"sampled on [eta, {v_max:g}]; min phi = {ph.min():.6g}",
        )

    # (H2b) lim v phi(v) < inf when n > 3
    if n <= 3:
        cond["h2b"] = _not_applicable("h2b", "only required for n > 3")
    elif pair.kind == "algebraic":
        _, s2, _, l2 = pair.algebraic_params()
        cond["h2b"] = ConditionResult("h2b", True, l2 >= 1, 1 - l2, 0.0,
                                      "v phi(v) = sigma2 v^(1 - lambda2); lhs is the exponent")
    elif pair.kind == "exponential":
        cond["h2b"] = ConditionResult("h2b", True, True, 0.0, math.inf, "v phi(v) -> 0 for exponential decay")
    else:
        warnings.warn("h2b limit is not checked for custom motility pairs", stacklevel=2)
        cond["h2b"] = _not_applicable("h2b", "limit not checked for custom pairs")

    # (H3)
    h3_inf, approx = h3_infimum(pair, eta, v_max)
    if pair.kind == "custom":
        h3_zero, _ = h3_infimum(pair, 0.0, v_max)
    else:
        h3_zero, _ = h3_infimum(pair, 0.0)
    cond["h3"] = ConditionResult("h3", True, h3_inf > half_n, h3_inf, half_n,
                                 "inf over [eta, inf)" + (" (sampled)" if approx else ""))
    p_range = (half_n, h3_inf) if h3_inf > half_n else None

    # thm22_con1, algebraic: lambda2 >= lambda1 + 1 and min{...} > n/2
    if pair.kind != "algebraic":
        cond["thm22_con1"] = _not_applicable("thm22_con1", "algebraic families only")
    elif n < 2:
        cond["thm22_con1"] = _not_applicable("thm22_con1", "stated for n >= 2")
    else:
        s1, s2, l1, l2 = pair.algebraic_params()
        ordered = l2 >= l1 + 1
        lhs = min(l2 / (l2 - 1), s1 * l2 / s2 * eta ** (l2 - l1 - 1))
        note = "min{l2/(l2-1), s1 l2/s2 eta^(l2-l1-1)} > n/2"
        if not ordered:
            note += "; fails lambda2 >= lambda1 + 1"
        cond["thm22_con1"] = ConditionResult("thm22_con1", True, ordered and lhs > half_n, lhs, half_n, note)

    # thm22_con2, exponential, n = 2: chi2 >= chi1 and n delta/2 e^{(chi1-chi2) eta} < chi2 < 4 pi d / m
    if pair.kind != "exponential":
        cond["thm22_con2"] = _not_applicable("thm22_con2", "exponential families only")
    elif n != 2:
        cond["thm22_con2"] = _not_applicable("thm22_con2", "stated for n = 2")
    else:
        c1, c2, delta = pair.exponential_params()
        lhs = n * delta / 2 * math.exp((c1 - c2) * eta)
        rhs = 4 * math.pi * d / m
        ok = c2 >= c1 and lhs < c2 < rhs
        note = f"lhs < chi2 = {c2:.6g} < rhs"
        if c2 < c1:
            note += "; fails chi2 >= chi1"
        cond["thm22_con2"] = ConditionResult("thm22_con2", True, ok, lhs, rhs, note)

    # thm23_i: ks_algebraic, 0 < lambda < bound(n, alpha)
    if pair.family != "ks_algebraic":
        cond["thm23_i"] = _not_applicable("thm23_i", "ks_algebraic pairs only")
    elif n < 2:
        cond["thm23_i"] = _not_applicable("thm23_i", "stated for n >= 2")
    else:
        lam, alpha = pair.params["lambda"], pair.params["alpha"]
        denom = n - 2 if alpha >= 0 else n * (1 - alpha) - 2
        bound = 2 / denom if denom > 0 else math.inf
        cond["thm23_i"] = ConditionResult("thm23_i", True, 0 < lam < bound, lam, bound,
                                          f"requires lambda < {bound:.6g}")

    # thm23_ii: ks_exponential, n = 2, chi < 4 pi d / m and 0 < alpha < 1
    if pair.family != "ks_exponential":
        cond["thm23_ii"] = _not_applicable("thm23_ii", "ks_exponential pairs only")
    elif n != 2:
        cond["thm23_ii"] = _not_applicable("thm23_ii", "stated for n = 2")
    else:
        chi, alpha = pair.params["chi"], pair.params["alpha"]
        rhs = 4 * math.pi * d / m
        ok = chi < rhs and 0 < alpha < 1
        note = "chi < 4 pi d / m and 0 < alpha < 1"
        if not 0 < alpha < 1:
            note += f"; alpha = {alpha:g} outside (0, 1)"
        cond["thm23_ii"] = ConditionResult("thm23_ii", True, ok, chi, rhs, note)

    return HypothesisReport(
        family=pair.family, n=n, eta=float(eta), d=float(d), m=float(m), eta_mode=eta_mode,
        h3_inf=h3_inf, h3_inf_from_zero=h3_zero, h3_approximate=approximate,
        admissible_p_range=p_range, conditions=cond,
    )


def phi_inverse_moment(pair: MotilityPair, v: Field, p: float) -> float:
    """``∫ phi(v)**(-p) dx`` on the grid of ``v``."""
    if p < 0:
        raise ValueError("p must be non-negative")
    phi = np.asarray(pair.phi(_check_argument(pair, v.data)), dtype=float)
    if np.any(phi == 0):
        raise ZeroDivisionError("phi(v) vanishes in some cell")
    with np.errstate(over="ignore"):
        return float(np.sum(v.grid.weights * phi ** (-p)))
