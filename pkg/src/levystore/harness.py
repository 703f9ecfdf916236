"""Run configuration, built-in scenarios, replication and report checking."""

from __future__ import annotations

import copy
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import decomposition as dc
from . import estimators as est
from .levy_models import (
    DownProcessSpec,
    UpProcessSpec,
    eta_eval,
    eta_prime0,
    jump_dist_from_dict,
    phi_eval,
    phi_prime0,
    pk_lst,
    spec_from_dict,
    spec_to_dict,
)
from .storage_sim import (
    ExhaustiveUp,
    RenewalAlternation,
    Scenario,
    ScheduleTable,
    SimulationError,
    simulate,
)

log = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "Tolerances",
    "RunConfig",
    "CheckResult",
    "RunResult",
    "parse_config",
    "config_to_dict",
    "registry",
    "replicate",
    "run",
    "write_outputs",
    "verify",
    "VerifyError",
]

DEFAULT_ALPHAS = (0.0, 0.25, 0.5, 1.0, 2.0)


class ConfigError(ValueError):
    """Invalid run configuration; ``code`` identifies the rule that failed."""

    def __init__(self, code: str, path: str, message: str):
        self.code, self.path = code, path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class Tolerances:
    se_multiplier: float = 3.0
    abs_floor: float = 1e-3

    def limit(self, se: float) -> float:
        return max(self.se_multiplier * se, self.abs_floor)


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario
    replicas: int = 1
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHAS
    burn_in_fraction: float = est.BURN_IN
    tolerances: Tolerances = Tolerances()
    output_dir: str = "out"
    name: str = ""


# ----------------------------------------------------------------------
# parsing
# ----------------------------------------------------------------------


def _fields(obj, path, required, optional):
    if not isinstance(obj, dict):
        raise ConfigError("E_TYPE", path, "must be an object")
    unknown = sorted(set(obj) - set(required) - set(optional))
    if unknown:
        raise ConfigError("E_UNKNOWN_FIELD", path, f"unknown field(s) {unknown}")
    for key in required:
        if key not in obj:
            raise ConfigError("E_MISSING_FIELD", _join(path, key), "required field is missing")


def _join(path, key):
    return f"{path}.{key}" if path else key


def _number(obj, key, path, default=None, *, minimum=None, strict=False, integer=False):
    if key not in obj:
        return default
    p = _join(path, key)
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError("E_TYPE", p, "must be a number")
    if integer and int(v) != v:
        raise ConfigError("E_TYPE", p, "must be an integer")
    if not math.isfinite(v):
        raise ConfigError("E_VALUE", p, "must be finite")
    if minimum is not None and (v <= minimum if strict else v < minimum):
        raise ConfigError("E_VALUE", p, f"must be {'>' if strict else '≥'} {minimum:g}")
    return int(v) if integer else float(v)


def _jump(obj, path):
    if not isinstance(obj, dict):
        raise ConfigError("E_TYPE", path, "must be an object")
    if "family" not in obj:
        raise ConfigError("E_MISSING_FIELD", _join(path, "family"), "required field is missing")
    fam = {"exponential": ("mean",), "deterministic": ("value",), "erlang": ("shape", "mean"), "uniform": ("lo", "hi")}
    if obj["family"] not in fam:
        raise ConfigError("E_VALUE", _join(path, "family"), f"unknown family {obj['family']!r}")
    _fields(obj, path, ("family",) + fam[obj["family"]], ())
    for k in fam[obj["family"]]:
        _number(obj, k, path, integer=(k == "shape"), minimum=0, strict=(k != "lo"))
    try:
        return jump_dist_from_dict(obj)
    except ValueError as exc:
        raise ConfigError("E_VALUE", path, str(exc)) from None


def _process(obj, path, kind):
    optional = ("brownian_var", "jump_rate", "jump_dist") if kind == "up" else ("jump_rate", "jump_dist")
    _fields(obj, path, ("drift",), optional)
    drift = _number(obj, "drift", path, minimum=0 if kind == "down" else None)
    _number(obj, "brownian_var", path, minimum=0)
    rate = _number(obj, "jump_rate", path, 0.0, minimum=0)
    if rate > 0 and obj.get("jump_dist") is None:
        raise ConfigError("E_MISSING_FIELD", _join(path, "jump_dist"), "required when jump_rate > 0")
    if obj.get("jump_dist") is not None:
        _jump(obj["jump_dist"], _join(path, "jump_dist"))
    if kind == "up" and not (drift > 0 or obj.get("brownian_var", 0) > 0):
        raise ConfigError("E_VALUE", path, "up process must not be a subordinator (need drift > 0 or brownian_var > 0)")
    try:
        return spec_from_dict(obj, kind)
    except ValueError as exc:
        raise ConfigError("E_VALUE", path, str(exc)) from None


def _policy(obj, path):
    if not isinstance(obj, dict):
        raise ConfigError("E_TYPE", path, "must be an object")
    kind = obj.get("type")
    if kind == "renewal":
        _fields(obj, path, ("type", "down_dist", "up_dist"), ())
        return RenewalAlternation(_jump(obj["down_dist"], _join(path, "down_dist")), _jump(obj["up_dist"], _join(path, "up_dist")))
    if kind == "exhaustive":
        _fields(obj, path, ("type", "down_dist"), ())
        return ExhaustiveUp(_jump(obj["down_dist"], _join(path, "down_dist")))
    if kind == "schedule":
        _fields(obj, path, ("type", "epochs"), ("cycle",))
        epochs = obj["epochs"]
        if not isinstance(epochs, list):
            raise ConfigError("E_TYPE", _join(path, "epochs"), "must be a list of [S, T] pairs")
        pairs = []
        for i, pair in enumerate(epochs):
            p = f"{path}.epochs[{i}]"
            if not (isinstance(pair, list) and len(pair) == 2):
                raise ConfigError("E_TYPE", p, "must be a pair [S, T]")
            s, t = pair
            t = math.inf if t is None else t
            if isinstance(s, bool) or not isinstance(s, (int, float)) or isinstance(t, bool) or not isinstance(t, (int, float)):
                raise ConfigError("E_TYPE", p, "entries must be numbers (T may be null for 'never')")
            pairs.append((float(s), float(t)))
        cycle = _number(obj, "cycle", path, minimum=0, strict=True)
        try:
            return ScheduleTable(tuple(pairs), cycle)
        except ValueError as exc:
            raise ConfigError("E_VALUE", _join(path, "epochs"), str(exc)) from None
    raise ConfigError("E_VALUE", _join(path, "type"), "must be one of renewal, exhaustive, schedule")


def expected_occupancy(policy, horizon: float) -> float | None:
    """Long-run down fraction implied by the policy alone (None if state dependent)."""
    if isinstance(policy, RenewalAlternation):
        m_d, m_u = policy.down_dist.first_moment(), policy.up_dist.first_moment()
        return m_d / (m_d + m_u)
    if isinstance(policy, ScheduleTable):
        prev, down = 0.0, 0.0
        for s, t in policy.epochs:
            down += s - prev
            prev = t
        if policy.cycle is not None:
            return (down + policy.cycle - prev) / policy.cycle
        if not math.isfinite(prev):
            return down / horizon if horizon > 0 else 0.0
        return (down + max(horizon - prev, 0.0)) / horizon if horizon > 0 else 0.0
    return None


def parse_config(text: str | dict) -> RunConfig:
    """Validate a JSON run configuration and apply defaults."""
    if isinstance(text, dict):
        doc = copy.deepcopy(text)
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("E_JSON", "", f"malformed JSON: {exc}") from None
    _fields(doc, "", ("scenario",), ("replicas", "alpha_grid", "burn_in_fraction", "tolerances", "output_dir", "name"))
    sc = doc["scenario"]
    _fields(sc, "scenario", ("up", "policy", "horizon"), ("down", "w0", "seed", "grid_step", "mode"))
    up = _process(sc["up"], "scenario.up", "up")
    down = _process(sc.get("down", {"drift": 0.0}), "scenario.down", "down")
    policy = _policy(sc["policy"], "scenario.policy")
    horizon = _number(sc, "horizon", "scenario", minimum=0, strict=True)
    w0 = _number(sc, "w0", "scenario", 0.0, minimum=0)
    seed = _number(sc, "seed", "scenario", 0, minimum=0, integer=True)
    grid_step = _number(sc, "grid_step", "scenario", 1e-3, minimum=0, strict=True)
    mode = sc.get("mode", "auto")
    if mode not in ("auto", "exact", "grid"):
        raise ConfigError("E_VALUE", "scenario.mode", "must be one of auto, exact, grid")
    if mode == "exact" and up.brownian_var > 0:
        raise ConfigError("E_VALUE", "scenario.mode", "exact mode needs brownian_var = 0")

    phi_d, eta_d = phi_prime0(up), eta_prime0(down)
    if not phi_d > 0:
        raise ConfigError(
            "E_STABILITY", "scenario.up",
            f"phi'(0) = {phi_d:g} must be > 0; the occupancy bound p_d <= phi'(0)/(eta'(0)+phi'(0)) = "
            f"{dc.occupancy_bound(phi_d, eta_d) if eta_d + phi_d > 0 else float('nan'):g} admits no positive down fraction",
        )
    if isinstance(policy, ExhaustiveUp):
        if up.brownian_var > 0:
            raise ConfigError("E_VALUE", "scenario.policy", "exhaustive policy needs brownian_var = 0")
        if eta_d == 0:
            raise ConfigError("E_VALUE", "scenario.down", "exhaustive policy needs a non-zero down process")

    replicas = _number(doc, "replicas", "", 1, minimum=1, integer=True)
    grid = doc.get("alpha_grid", list(DEFAULT_ALPHAS))
    if not isinstance(grid, list) or not grid:
        raise ConfigError("E_TYPE", "alpha_grid", "must be a non-empty list of numbers")
    for i, a in enumerate(grid):
        if isinstance(a, bool) or not isinstance(a, (int, float)) or not math.isfinite(a) or a < 0:
            raise ConfigError("E_VALUE", f"alpha_grid[{i}]", "must be a finite number ≥ 0")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("E_VALUE", "alpha_grid", "must be strictly increasing")
    if grid[0] != 0:
        raise ConfigError("E_VALUE", "alpha_grid", "must contain 0")
    burn = _number(doc, "burn_in_fraction", "", est.BURN_IN, minimum=0)
    if burn > 0.5:
        raise ConfigError("E_VALUE", "burn_in_fraction", "must be ≤ 0.5")
    tol_doc = doc.get("tolerances", {})
    _fields(tol_doc, "tolerances", (), ("se_multiplier", "abs_floor"))
    tol = Tolerances(
        _number(tol_doc, "se_multiplier", "tolerances", 3.0, minimum=0, strict=True),
        _number(tol_doc, "abs_floor", "tolerances", 1e-3, minimum=0),
    )
    out = doc.get("output_dir", "out")
    if not isinstance(out, str):
        raise ConfigError("E_TYPE", "output_dir", "must be a string")
    name = doc.get("name", "")
    scenario = Scenario(up, down, policy, w0, horizon, seed, grid_step, mode)
    return RunConfig(scenario, replicas, tuple(float(a) for a in grid), burn, tol, out, str(name))


def _policy_to_dict(policy) -> dict:
    if isinstance(policy, RenewalAlternation):
        return {"type": "renewal", "down_dist": policy.down_dist.to_dict(), "up_dist": policy.up_dist.to_dict()}
    if isinstance(policy, ExhaustiveUp):
        return {"type": "exhaustive", "down_dist": policy.down_dist.to_dict()}
    out = {"type": "schedule", "epochs": [[s, None if math.isinf(t) else t] for s, t in policy.epochs]}
    if policy.cycle is not None:
        out["cycle"] = policy.cycle
    return out


def config_to_dict(cfg: RunConfig) -> dict:
    sc = cfg.scenario
    return {
        "name": cfg.name,
        "scenario": {
            "up": spec_to_dict(sc.up),
            "down": spec_to_dict(sc.down),
            "policy": _policy_to_dict(sc.policy),
            "w0": sc.w0,
            "horizon": sc.horizon,
            "seed": sc.seed,
            "grid_step": sc.grid_step,
            "mode": sc.mode,
        },
        "replicas": cfg.replicas,
        "alpha_grid": list(cfg.alpha_grid),
        "burn_in_fraction": cfg.burn_in_fraction,
        "tolerances": {"se_multiplier": cfg.tolerances.se_multiplier, "abs_floor": cfg.tolerances.abs_floor},
        "output_dir": cfg.output_dir,
    }


# ----------------------------------------------------------------------
# built-in scenarios
# ----------------------------------------------------------------------

_EXP1 = {"family": "exponential", "mean": 1.0}
_REF_UP = {"drift": 1.0, "brownian_var": 0.0, "jump_rate": 0.5, "jump_dist": _EXP1}
_REF_DOWN = {"drift": 0.0, "jump_rate": 0.5, "jump_dist": _EXP1}


def _doc(name, scenario, replicas=20, **extra):
    return {"name": name, "scenario": scenario, "replicas": replicas, "alpha_grid": list(DEFAULT_ALPHAS), **extra}


_REGISTRY: dict[str, tuple[str, dict]] = {
    "A": (
        "M/G/1-type workload without down periods; time-average transform vs the Pollaczek-Khinchin formula",
        _doc(
            "A",
            {"up": _REF_UP, "down": _REF_DOWN, "policy": {"type": "schedule", "epochs": [[0.0, None]]},
             "horizon": 2e5, "seed": 101},
            tolerances={"se_multiplier": 3.0, "abs_floor": 0.003},
        ),
    ),
    "B": (
        "renewal alternation (down ~ Exp(1), up ~ Exp(3)); same input in both regimes, output rate 1",
        _doc(
            "B",
            {"up": _REF_UP, "down": _REF_DOWN,
             "policy": {"type": "renewal", "down_dist": _EXP1, "up_dist": {"family": "exponential", "mean": 3.0}},
             "horizon": 1e5, "seed": 202},
        ),
    ),
    "C": (
        "vacation queue: exhaustive service, vacations ~ Exp(1), extended to the first arrival when empty",
        _doc(
            "C",
            {"up": _REF_UP, "down": _REF_DOWN, "policy": {"type": "exhaustive", "down_dist": _EXP1},
             "horizon": 1e5, "seed": 303},
        ),
    ),
    "D": (
        "polling-style cyclic schedule: switchover 0.5 then visit 1.5, Erlang-2 batch input",
        _doc(
            "D",
            {"up": {"drift": 1.0, "brownian_var": 0.0, "jump_rate": 0.4, "jump_dist": {"family": "erlang", "shape": 2, "mean": 1.0}},
             "down": {"drift": 0.0, "jump_rate": 0.4, "jump_dist": {"family": "erlang", "shape": 2, "mean": 1.0}},
             "policy": {"type": "schedule", "epochs": [[0.5, 2.0]], "cycle": 2.0},
             "horizon": 1e5, "seed": 404},
        ),
    ),
    "E": (
        "overloaded alternation (down ~ Exp(3), up ~ Exp(1)); occupancy exceeds the stability bound",
        _doc(
            "E",
            {"up": _REF_UP, "down": _REF_DOWN,
             "policy": {"type": "renewal", "down_dist": {"family": "exponential", "mean": 3.0}, "up_dist": _EXP1},
             "horizon": 1e5, "seed": 505},
        ),
    ),
}


def registry() -> dict[str, tuple[str, dict]]:
    """Built-in scenarios: name -> (description, config document)."""
    return copy.deepcopy(_REGISTRY)


# ----------------------------------------------------------------------
# replication
# ----------------------------------------------------------------------


def _corollary_case(up: UpProcessSpec, down: DownProcessSpec) -> bool:
    """True when phi(a) = a r - eta(a) for some r (checked on a grid)."""
    r = up.drift + down.drift
    grid = np.linspace(0.05, 5.0, 25)
    return all(abs(phi_eval(up, a) - (a * r - eta_eval(down, a))) <= 1e-12 * max(1.0, a * r) for a in grid)


def replicate(cfg: RunConfig, replica: int, emit_dir: str | None = None) -> dict[str, Any]:
    """Simulate one replica and reduce it to the per-replica statistics."""
    sc = replace(cfg.scenario, replica=replica)
    try:
        path = simulate(sc)
    except SimulationError as exc:
        raise SimulationError(f"replica {replica}: {exc}") from exc
    if emit_dir is not None:
        Path(emit_dir).mkdir(parents=True, exist_ok=True)
        path.to_csv(Path(emit_dir) / f"path_{replica:03d}.csv")
        path.boundaries_to_csv(Path(emit_dir) / f"boundaries_{replica:03d}.csv")

    alphas = np.array(cfg.alpha_grid)
    pos = alphas[alphas > 0]
    burn = cfg.burn_in_fraction
    h = path.horizon
    t0 = burn * h
    out: dict[str, Any] = {"replica": replica}

    tw = est.time_avg_lst(path, alphas, burn)
    out["lst_w"], out["lst_w_se"] = tw.values.tolist(), tw.std_errors.tolist()

    W_end, L_end = path.state_at([t0, h])
    out["W_rate"] = float(path.W_left[-1] / h)
    out["L_rate"] = float(path.L[-1] / h)
    out["L_rate_window"] = float((L_end[1] - L_end[0]) / (h - t0))
    out["p_d_full"] = float(est.occupancy_fraction(path))

    try:
        wd, p_d = est.down_conditional_lst(path, alphas, burn)
        out["lst_wd"], out["lst_wd_se"], out["p_d"] = wd.values.tolist(), wd.std_errors.tolist(), p_d
    except est.EstimationError:
        out["lst_wd"], out["lst_wd_se"], out["p_d"] = None, None, 0.0

    m = path.completed & (path.T_prev >= t0)
    out["n_periods"] = int(m.sum())
    if out["n_periods"] >= 5 and out["lst_wd"] is not None:
        wp = est.embedded_lst(path, alphas, "at_S", burn)
        wm = est.embedded_lst(path, alphas, "at_T", burn)
        out["lst_wplus"], out["lst_wminus"] = wp.values.tolist(), wm.values.tolist()
        out["lst_wplus_se"], out["lst_wminus_se"] = wp.std_errors.tolist(), wm.std_errors.tolist()
        out["ew_plus"], out["ew_plus_se"] = est.embedded_mean(path, "at_S", burn)
        out["ew_minus"], out["ew_minus_se"] = est.embedded_mean(path, "at_T", burn)
    mart, mart_se, delta, delta_se = [], [], [], []
    for a in pos:
        r = est.martingale_residual(path, a, sc.up, sc.down, burn)
        mart.append(r.value)
        mart_se.append(r.std_error)
        try:
            d = est.delta_residual(path, a, sc.down)
            delta.append(d.value)
            delta_se.append(d.std_error)
        except est.EstimationError:
            delta.append(None)
            delta_se.append(None)
    out["martingale"], out["martingale_se"] = mart, mart_se
    out["delta"], out["delta_se"] = delta, delta_se
    return out


def _replicate_star(args):
    return replicate(*args)


# ----------------------------------------------------------------------
# aggregation
# ----------------------------------------------------------------------


@dataclass
class CheckResult:
    criterion: str
    alpha: float | None
    value: float
    target: float
    se: float
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "alpha": self.alpha,
            "value": _round(self.value),
            "target": _round(self.target),
            "se": _round(self.se),
            "tolerance": _round(self.tolerance),
            "pass": bool(self.passed),
        }


def _round(x):
    if x is None:
        return None
    return float(format(float(x), ".12g"))


@dataclass
class RunResult:
    config: RunConfig
    replicas: list[dict]
    checks: list[CheckResult]
    report: dc.DecompositionReport | None
    estimates: dict[str, est.LstEstimate] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, criterion: str, alpha: float | None = None) -> CheckResult:
        for c in self.checks:
            if c.criterion == criterion and (alpha is None or c.alpha == alpha):
                return c
        raise KeyError((criterion, alpha))


def _stack(reps, key):
    return np.array([r[key] for r in reps], dtype=float)


def _composite_se(fn: Callable[[dict], np.ndarray], means: dict, reps: list[dict], keys, se_keys) -> np.ndarray:
    """SE of ``fn(pooled means)``: jackknife over replicas, or first-order deltas for one replica."""
    R = len(reps)
    if R >= 2:
        stacks = {k: _stack(reps, k) for k in keys}
        loo = []
        for i in range(R):
            sub = {k: (v.sum(axis=0) - v[i]) / (R - 1) for k, v in stacks.items()}
            loo.append(fn(sub))
        return est.jackknife_se(np.array(loo))
    base = np.asarray(fn(means), dtype=float)
    var = np.zeros_like(base)
    for k, sk in zip(keys, se_keys):
        if sk is None:
            continue
        x = np.asarray(means[k], dtype=float)
        s = np.asarray(reps[0][sk], dtype=float)
        for j in np.ndindex(x.shape):
            if not s[j] > 0:
                continue
            bumped = {kk: np.array(v, dtype=float, copy=True) for kk, v in means.items()}
            step = 1e-6 * max(1.0, abs(x[j]))
            bumped[k][j] += step
            grad = (np.asarray(fn(bumped), dtype=float) - base) / step
            var += (grad * s[j]) ** 2
    return np.sqrt(var)


def aggregate(cfg: RunConfig, reps: list[dict]) -> RunResult:
    sc = cfg.scenario
    up, down = sc.up, sc.down
    tol = cfg.tolerances
    alphas = np.array(cfg.alpha_grid)
    pos_mask = alphas > 0
    pos = alphas[pos_mask]
    R = len(reps)
    phi_d, eta_d = phi_prime0(up), eta_prime0(down)
    checks: list[CheckResult] = []

    def add(name, alpha, value, target, se):
        limit = tol.limit(se)
        checks.append(CheckResult(name, None if alpha is None else float(alpha), float(value), float(target),
                                  float(se), limit, bool(abs(value - target) <= limit)))

    lst_w = _stack(reps, "lst_w").mean(axis=0)
    # pooled batch-means SE of the replica average
    lst_w_bse = np.sqrt((_stack(reps, "lst_w_se") ** 2).sum(axis=0)) / R
    estimates = {"time-average": est.LstEstimate(alphas, lst_w, lst_w_bse, "time-average")}

    p_hat = float(np.mean([r["p_d"] for r in reps]))
    expected_pd = expected_occupancy(sc.policy, sc.horizon)
    bound = dc.occupancy_bound(phi_d, eta_d)
    has_down = all(r["lst_wd"] is not None for r in reps) and eta_d > 0
    overloaded = expected_pd is not None and expected_pd > bound

    if overloaded:
        growth = expected_pd * eta_d - (1 - expected_pd) * phi_d
        w_rates, l_rates = _stack(reps, "W_rate"), _stack(reps, "L_rate")
        se_w = w_rates.std(ddof=1) / math.sqrt(R) if R > 1 else 0.0
        se_l = l_rates.std(ddof=1) / math.sqrt(R) if R > 1 else 0.0
        add("growth_rate", None, w_rates.mean(), growth, se_w)
        add("regulator_vanishes", None, l_rates.mean(), 0.0, se_l)
        return RunResult(cfg, reps, checks, None, estimates)

    # regulator drift, using each replica's own occupancy over the same window
    drift_res = np.array([r["L_rate_window"] - ((1 - r["p_d"]) * phi_d - r["p_d"] * eta_d) for r in reps])
    add("regulator_drift", None, drift_res.mean(), 0.0, drift_res.std(ddof=1) / math.sqrt(R) if R > 1 else 0.0)

    mart = _stack(reps, "martingale")
    mart_se = mart.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else _stack(reps, "martingale_se")[0]
    for a, v, s in zip(pos, mart.mean(axis=0), mart_se):
        add("martingale", a, v, 0.0, s)

    if not has_down:
        for a, v, s in zip(alphas, lst_w, lst_w_bse):
            add("pk_match", a, v, pk_lst(up, a), s)
        empty = np.full(alphas.size, np.nan)
        pred = np.array([pk_lst(up, a) for a in alphas])
        ident = np.array([phi_eval(up, a) * w - a * phi_d for a, w in zip(alphas, lst_w)])
        flags = np.array([c.passed for c in checks if c.criterion == "pk_match"])
        report = dc.DecompositionReport(alphas, lst_w, pred, ident, empty, lst_w_bse, flags)
        return RunResult(cfg, reps, checks, report, estimates)

    lst_wd = _stack(reps, "lst_wd").mean(axis=0)
    wd_se = _composite_se(lambda m: m["lst_wd"], {"lst_wd": lst_wd}, reps, ["lst_wd"], ["lst_wd_se"])
    estimates["down-conditional"] = est.LstEstimate(alphas, lst_wd, wd_se, "down-conditional")
    means = {"lst_w": lst_w, "lst_wd": lst_wd, "p_d": np.array(p_hat)}
    keys, se_keys = ["lst_w", "lst_wd", "p_d"], ["lst_w_se", "lst_wd_se", None]
    p_se = float(np.std([r["p_d"] for r in reps], ddof=1) / math.sqrt(R)) if R > 1 else 0.0

    def inputs(m):
        table = dict(zip(alphas.tolist(), np.asarray(m["lst_wd"]).tolist()))
        return dc.DecompositionInputs(up, down, float(m["p_d"]), table, p_se, tol.se_multiplier)

    try:
        inputs(means)
    except dc.DecompositionError as exc:
        add("occupancy_bound", None, p_hat, bound, p_se)
        log.warning("%s", exc)
        return RunResult(cfg, reps, checks, None, estimates)

    def ident_fn(m):
        inp = inputs(m)
        return np.array([dc.identity_residual(a, inp, w) for a, w in zip(alphas, np.asarray(m["lst_w"]))])

    def pred_fn(m):
        inp = inputs(m)
        return np.array([dc.decomp_rhs(a, inp) for a in alphas])

    def rv_fn(m):
        inp = inputs(m)
        return np.array([dc.rv_form_check(a, inp, w) for a, w in zip(alphas, np.asarray(m["lst_w"]))])

    ident, ident_se = ident_fn(means), _composite_se(ident_fn, means, reps, keys, se_keys)
    rv, rv_se = rv_fn(means), _composite_se(rv_fn, means, reps, keys, se_keys)
    pred = pred_fn(means)
    for a, v, s in zip(alphas[pos_mask], ident[pos_mask], ident_se[pos_mask]):
        add("identity", a, v, 0.0, s)
    for a, v, s in zip(alphas[pos_mask], rv[pos_mask], rv_se[pos_mask]):
        add("rv_form", a, v, 0.0, s)

    if _corollary_case(up, down):
        def cor_fn(m):
            inp = inputs(m)
            return np.array([w - dc.corollary_rhs(a, inp) for a, w in zip(alphas, np.asarray(m["lst_w"]))])

        cor, cor_se = cor_fn(means), _composite_se(cor_fn, means, reps, keys, se_keys)
        for a, v, s in zip(alphas[pos_mask], cor[pos_mask], cor_se[pos_mask]):
            add("corollary", a, v, 0.0, s)

    pm = np.full(alphas.size, np.nan)
    pm_ok = np.ones(alphas.size, dtype=bool)
    if all("lst_wplus" in r for r in reps):
        pm_keys = ["lst_wminus", "lst_wplus", "ew_minus", "ew_plus", "lst_wd"]
        pm_se_keys = ["lst_wminus_se", "lst_wplus_se", "ew_minus_se", "ew_plus_se", "lst_wd_se"]
        pm_means = {k: _stack(reps, k).mean(axis=0) for k in pm_keys}

        def pm_fn(m):
            return np.array([
                dc.pm_residual(a, down, m["lst_wminus"][i], m["lst_wplus"][i], float(m["ew_minus"]),
                               float(m["ew_plus"]), m["lst_wd"][i])
                for i, a in enumerate(alphas) if a > 0
            ])

        pm_pos, pm_se = pm_fn(pm_means), _composite_se(pm_fn, pm_means, reps, pm_keys, pm_se_keys)
        pm[pos_mask] = pm_pos
        for a, v, s in zip(pos, pm_pos, pm_se):
            add("pm", a, v, 0.0, s)
        estimates["embedded-S"] = est.LstEstimate(alphas, pm_means["lst_wplus"], _stack(reps, "lst_wplus_se").mean(axis=0) / math.sqrt(R), "embedded-S")
        estimates["embedded-T"] = est.LstEstimate(alphas, pm_means["lst_wminus"], _stack(reps, "lst_wminus_se").mean(axis=0) / math.sqrt(R), "embedded-T")
        pm_ok[pos_mask] = [checks[-len(pos) + i].passed for i in range(len(pos))]

    if all(v is not None for r in reps for v in r["delta"]):
        delta = _stack(reps, "delta")
        d_se = delta.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else _stack(reps, "delta_se")[0]
        for a, v, s in zip(pos, delta.mean(axis=0), d_se):
            add("delta", a, v, 0.0, s)

    ident_ok = np.array([True if a == 0 else abs(v) <= tol.limit(s) for a, v, s in zip(alphas, ident, ident_se)])
    report = dc.DecompositionReport(alphas, lst_w, pred, ident, pm, ident_se, ident_ok & pm_ok)
    return RunResult(cfg, reps, checks, report, estimates)


def run(cfg: RunConfig, workers: int = 1, emit_paths: bool = False) -> RunResult:
    """Simulate all replicas and evaluate every applicable criterion."""
    if not cfg.scenario.horizon > 0:
        raise ConfigError("E_VALUE", "scenario.horizon", "must be > 0")
    emit = str(Path(cfg.output_dir) / "paths") if emit_paths else None
    jobs = [(cfg, i, emit) for i in range(cfg.replicas)]
    if workers > 1 and cfg.replicas > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(_replicate_star, jobs))
    else:
        reps = [_replicate_star(j) for j in jobs]
    return aggregate(cfg, reps)


# ----------------------------------------------------------------------
# output and verification
# ----------------------------------------------------------------------


def write_outputs(result: RunResult, out_dir: str | os.PathLike | None = None) -> Path:
    out = Path(out_dir or result.config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if result.report is not None:
        result.report.to_csv(out / "decomposition.csv")
    for basis, e in result.estimates.items():
        e.to_csv(out / f"lst_{basis}.csv")
    summary = {
        "config": config_to_dict(result.config),
        "alpha_grid": list(result.config.alpha_grid),
        "tolerances": {"se_multiplier": result.config.tolerances.se_multiplier,
                       "abs_floor": result.config.tolerances.abs_floor},
        "checks": [c.to_dict() for c in result.checks],
        "passed": result.passed,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return out


class VerifyError(ValueError):
    pass


def _read_csv_rows(path: Path):
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise VerifyError(f"{path.name}: empty file")
    return rows[0], rows[1:]


def verify(report_path: str | os.PathLike) -> tuple[int, list[str]]:
    """Re-evaluate pass flags from a written report.

    Returns ``(exit_code, messages)``: 0 when every criterion passes, 1 when
    some fail, 2 when the report is malformed.
    """
    p = Path(report_path)
    summary_path = p / "summary.json" if p.is_dir() else p
    try:
        summary = json.loads(summary_path.read_text())
        tol = Tolerances(**summary["tolerances"])
        grid = [float(a) for a in summary["alpha_grid"]]
        checks = summary["checks"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        return 2, [f"malformed report: {exc}"]

    messages, failed = [], False
    for c in checks:
        try:
            ok = abs(float(c["value"]) - float(c["target"])) <= tol.limit(float(c["se"]))
        except (KeyError, TypeError, ValueError) as exc:
            return 2, [f"malformed check entry {c!r}: {exc}"]
        where = "" if c.get("alpha") is None else f" at alpha={c['alpha']:g}"
        if not ok:
            failed = True
            messages.append(f"FAIL {c['criterion']}{where}: |{c['value']:.6g} - {c['target']:.6g}| > {tol.limit(float(c['se'])):.3g}")
        if ok != bool(c.get("pass")):
            messages.append(f"note: stored flag for {c['criterion']}{where} disagrees with recomputation")

    csv_path = summary_path.parent / "decomposition.csv"
    if csv_path.exists():
        try:
            header, rows = _read_csv_rows(csv_path)
            expected = ["alpha", "empirical", "predicted", "identity_residual", "pm_residual", "se", "pass"]
            if header != expected:
                raise VerifyError(f"decomposition.csv: header {header} != {expected}")
            alphas = [float(r[0]) for r in rows]
            if len(alphas) != len(grid) or any(abs(a - b) > 1e-12 for a, b in zip(alphas, grid)):
                raise VerifyError("decomposition.csv: alpha grid does not match the summary")
            for r in rows:
                if len(r) != len(expected):
                    raise VerifyError(f"decomposition.csv: row {r} has {len(r)} columns")
        except (VerifyError, ValueError) as exc:
            return 2, [f"structural error: {exc}"]
    return (1 if failed else 0), messages
