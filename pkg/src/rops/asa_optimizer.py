"""Outer shell: adaptive simulated annealing over bounded plan parameters.

Per-dimension temperatures follow T_i(k) = T0 exp(-c k_i^(1/D)); candidate
steps are ASA variates scaled by the box width; acceptance is Metropolis at a
separately annealed acceptance temperature. Reannealing rescales parameter
temperatures by finite-difference sensitivities at the best point, and a
list of distinct low minima is kept alongside the best state.
"""

from __future__ import annotations

import ast
import logging
import math
import operator
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .distributions import asa_inverse
from .plan_model import Plan, apply_parameters, parameter_box
from .rng import derived_seed

log = logging.getLogger(__name__)


class AnnealError(RuntimeError):
    pass


@dataclass(frozen=True)
class AnnealConfig:
    t0_param: float = 1.0
    t0_accept: float | None = None  # None: |objective at the starting point|
    c: float | None = None  # None: -ln(ratio_scale) * anneal_scale^(-1/D)
    max_evals: int = 2000
    reanneal_every: int = 100
    multi_min_k: int = 5
    multi_min_tol: float = 0.05
    seed: int = 0
    ratio_scale: float = 1e-5
    anneal_scale: float = 100.0

    def problems(self) -> list[str]:
        out = []
        for name in ("t0_param", "max_evals", "reanneal_every", "multi_min_k", "multi_min_tol", "ratio_scale", "anneal_scale"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be positive")
        for name in ("t0_accept", "c"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                out.append(f"{name} must be positive")
        return out

    def anneal_constant(self, dim: int) -> float:
        if self.c is not None:
            return self.c
        return -math.log(self.ratio_scale) * math.exp(-math.log(self.anneal_scale) / dim)


def anneal_temperature(k, T0: float, c: float, D: int):
    return T0 * np.exp(-c * np.power(k, 1.0 / D))


def propose(current, temps, lower, upper, rng: np.random.Generator, max_tries: int = 100) -> np.ndarray:
    """ASA step in every dimension; out-of-box coordinates are re-drawn, then clipped."""
    current = np.asarray(current, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    width = upper - lower
    cand = np.empty_like(current)
    for i in range(current.size):
        for _ in range(max_tries):
            x = current[i] + asa_inverse(rng.random(), temps[i]) * width[i]
            if lower[i] <= x <= upper[i]:
                break
        cand[i] = min(max(x, lower[i]), upper[i])
    return cand


def accept(delta: float, T_accept: float, u: float) -> bool:
    if delta <= 0:
        return True
    return bool(u < math.exp(-delta / T_accept))


@dataclass
class TraceRow:
    index: int
    params: np.ndarray
    value: float
    accepted: bool
    temps: np.ndarray
    t_accept: float
    kind: str  # initial, candidate or reanneal


@dataclass
class AnnealResult:
    best_params: np.ndarray
    best_value: float
    multi_min: list[tuple[np.ndarray, float]]
    evals: int
    trace: list[TraceRow]
    failures: int = 0
    names: list[str] = field(default_factory=list)

    @property
    def best_trace(self) -> np.ndarray:
        """Running best value after each evaluation."""
        return np.minimum.accumulate([r.value for r in self.trace])


class _MultiMin:
    """Up to k lowest states, pairwise separated by tol in box-scaled distance."""

    def __init__(self, k, tol, width):
        self.k, self.tol, self.width = k, tol, width
        self.items: list[tuple[np.ndarray, float]] = []

    def offer(self, x, v):
        if not np.isfinite(v):
            return
        near = [i for i, (y, _) in enumerate(self.items) if np.linalg.norm((x - y) / self.width) < self.tol]
        if any(self.items[i][1] <= v for i in near):
            return
        self.items = [it for i, it in enumerate(self.items) if i not in near]
        self.items.append((x.copy(), float(v)))
        self.items.sort(key=lambda it: it[1])
        del self.items[self.k :]


def anneal(func: Callable[[np.ndarray], float], lower, upper, config: AnnealConfig, x0=None) -> AnnealResult:
    """Minimize ``func`` over the box [lower, upper]."""
    issues = config.problems()
    if issues:
        raise ValueError("invalid AnnealConfig: " + "; ".join(issues))
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if lower.size == 0 or np.any(~(upper > lower)):
        raise ValueError("need a nonempty box with upper > lower")
    D = lower.size
    width = upper - lower
    c = config.anneal_constant(D)
    rng = np.random.default_rng(config.seed)
    failures = 0

    def evaluate(x):
        nonlocal failures
        try:
            v = float(func(x))
        except Exception as exc:  # objective failures map to +inf
            log.debug("objective failed at %s: %s", x, exc)
            v = math.inf
        if not math.isfinite(v):
            failures += 1
            v = math.inf
        return v

    x = np.clip((lower + upper) / 2 if x0 is None else np.asarray(x0, dtype=float), lower, upper)
    fx = evaluate(x)
    t0_acc = config.t0_accept if config.t0_accept is not None else (max(abs(fx), 1e-10) if math.isfinite(fx) else 1.0)
    t0_par = np.full(D, config.t0_param)
    k_par = np.zeros(D)
    k_acc = 0
    temps = anneal_temperature(k_par, t0_par, c, D)
    trace = [TraceRow(0, x.copy(), fx, True, temps.copy(), t0_acc, "initial")]
    best_x, best_v = x.copy(), fx
    mm = _MultiMin(config.multi_min_k, config.multi_min_tol, width)
    mm.offer(x, fx)
    n_accepted = 0

    def record(p, v, accepted, t_acc, kind):
        nonlocal best_x, best_v
        trace.append(TraceRow(len(trace), p.copy(), v, accepted, temps.copy(), t_acc, kind))
        if v < best_v:
            best_x, best_v = p.copy(), v
        mm.offer(p, v)

    while len(trace) < config.max_evals:
        temps = anneal_temperature(k_par, t0_par, c, D)
        t_acc = float(anneal_temperature(k_acc, t0_acc, c, D))
        cand = propose(x, temps, lower, upper, rng)
        fc = evaluate(cand)
        u = rng.random()
        if math.isinf(fc):
            ok = False
        elif math.isinf(fx):
            ok = True
        else:
            ok = accept(fc - fx, t_acc, u)
        k_par += 1
        k_acc += 1
        record(cand, fc, ok, t_acc, "candidate")
        if not ok:
            continue
        x, fx = cand, fc
        n_accepted += 1
        if n_accepted % config.reanneal_every == 0 and math.isfinite(best_v):
            sens = np.zeros(D)
            for i in range(D):
                if len(trace) >= config.max_evals:
                    break
                h = 1e-3 * width[i]
                probe = best_x.copy()
                probe[i] = probe[i] + h if probe[i] + h <= upper[i] else probe[i] - h
                fv = evaluate(probe)
                record(probe, fv, False, t_acc, "reanneal")
                sens[i] = abs(fv - best_v) / h if math.isfinite(fv) else 0.0
            if sens.max() > 0:
                # larger sensitivity -> lower temperature
                cur = anneal_temperature(k_par, t0_par, c, D)
                new = np.where(sens > 0, cur * sens.max() / np.where(sens > 0, sens, 1.0), cur)
                new = np.minimum(new, t0_par)
                k_par = np.power(np.log(t0_par / new) / c, D)

    if failures == len(trace):
        raise AnnealError(f"all {failures} objective evaluations failed")
    return AnnealResult(best_x, best_v, mm.items, len(trace), trace, failures)


# objective construction for plan parameters

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {"sqrt": math.sqrt, "log": math.log, "exp": math.exp, "abs": abs, "min": min, "max": max}

OUTPUT_NAMES = ("mean_cost", "std_cost", "p95_cost", "initial_cost", "overrun", "horizon_T", "option_value")


def expression_names(expr: str) -> set[str]:
    return {n.id for n in ast.walk(ast.parse(expr, mode="eval")) if isinstance(n, ast.Name)}


def evaluate_expression(expr: str, env: dict[str, float]) -> float:
    """Arithmetic over named pipeline outputs; nothing else is evaluable."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id not in env:
                raise ValueError(f"unknown name {node.id!r} in objective expression")
            return float(env[node.id])
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](ev(node.operand))
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS and not node.keywords:
            return _FUNCS[node.func.id](*[ev(a) for a in node.args])
        raise ValueError(f"unsupported syntax in objective expression: {ast.dump(node)}")

    return ev(ast.parse(expr, mode="eval"))


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str = "cost_over_T"  # cost_over_T, overrun_over_T or custom
    expression: str | None = None
    n_middle: int = 100
    n_inner: int = 5
    orders: tuple[int, int] = (1, 1)
    strike: float | None = None  # option_value strike; default the initial allocated cost
    threads: int = 1

    def __post_init__(self):
        if self.kind not in ("cost_over_T", "overrun_over_T", "custom"):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.kind == "custom":
            if not self.expression:
                raise ValueError("custom objective needs an expression")
            unknown = expression_names(self.expression) - set(OUTPUT_NAMES) - set(_FUNCS)
            if unknown:
                raise ValueError(f"unknown names in objective expression: {sorted(unknown)}")


def pipeline_outputs(plan: Plan, objective: ObjectiveSpec, sim_seed: int, initial_cost: float) -> dict[str, float]:
    from .cpd_fit import fit_cpd
    from .pathtree import (
        OptionSpec,
        build_tree,
        call_payoff,
        diffusion_from_cpd,
        price_option,
    )
    from .shells import run_simulation

    ens = run_simulation(plan, objective.n_middle, objective.n_inner, sim_seed, threads=objective.threads)
    final = ens.plan_S[:, -1]
    T = plan.grid.horizon_T
    out = {
        "mean_cost": float(final.mean()),
        "std_cost": float(final.std()),
        "p95_cost": float(np.quantile(final, 0.95)),
        "initial_cost": initial_cost,
        "overrun": float(final.mean()) - initial_cost,
        "horizon_T": T,
    }
    if objective.kind == "custom" and "option_value" in expression_names(objective.expression):
        cpd = fit_cpd(ens, objective.orders)
        strike = initial_cost if objective.strike is None else objective.strike
        tree = build_tree(diffusion_from_cpd(cpd), 0.0, plan.grid)
        out["option_value"] = price_option(tree, OptionSpec(call_payoff(strike)))
    return out


def plan_objective(objective: ObjectiveSpec, plan: Plan, seed: int) -> Callable[[np.ndarray], float]:
    """Objective over the plan's parameter vector with common random numbers."""
    sim_seed = derived_seed(seed, 1)
    initial_cost = plan.total_allocated

    def func(params: np.ndarray) -> float:
        p = apply_parameters(plan, params)
        out = pipeline_outputs(p, objective, sim_seed, initial_cost)
        if objective.kind == "cost_over_T":
            return out["mean_cost"] / out["horizon_T"]
        if objective.kind == "overrun_over_T":
            return out["overrun"] / out["horizon_T"]
        return evaluate_expression(objective.expression, out)

    return func


def optimize(objective: ObjectiveSpec, plan: Plan, config: AnnealConfig) -> AnnealResult:
    if not plan.parameters:
        raise ValueError("plan declares no parameters to optimize")
    x0, lower, upper = parameter_box(plan)
    result = anneal(plan_objective(objective, plan, config.seed), lower, upper, config, x0=x0)
    result.names = [p.name for p in plan.parameters]
    return result
