"""Middle and inner Monte Carlo shells.

The middle shell draws one duration per task, schedules the plan and books the
mean disbursement of every task on the grid. The inner shell perturbs each
task's per-node increment by a multiplicative two-sided draw and aggregates
increments by project and plan. Every middle state is expanded into exactly
``n_inner`` inner replicates; replicate ``r`` belongs to middle state
``r // n_inner``.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .distributions import duration_sample, two_sided_arrays
from .plan_model import (
    Plan,
    PlanError,
    ScheduleRealization,
    TimeGrid,
    disbursement_profile,
    schedule_realization,
    topo_order,
    validate_plan,
)
from .rng import stream

log = logging.getLogger(__name__)


class SimulationAborted(RuntimeError):
    def __init__(self, overflow: int, total: int):
        super().__init__(f"{overflow} of {total} middle states overran the plan horizon (> 50%)")
        self.overflow = overflow
        self.total = total


@dataclass(frozen=True)
class MiddleState:
    durations: dict[str, float]
    schedule: ScheduleRealization
    mean_disbursements: dict[str, np.ndarray]
    overflow: bool = False


@dataclass(frozen=True)
class InnerDraws:
    plan_dS: np.ndarray  # [inner replicate, node]
    project_dS: dict[str, np.ndarray]


@dataclass
class PathEnsemble:
    grid: TimeGrid
    project_ids: tuple[str, ...]
    plan_dS: np.ndarray
    project_dS: dict[str, np.ndarray]
    seed: int | None = None
    n_middle: int = 0
    n_inner: int = 1
    overflow: np.ndarray | None = None  # per replicate
    plan_S: np.ndarray = field(init=False)

    def __post_init__(self):
        self.plan_S = np.cumsum(self.plan_dS, axis=1)

    @property
    def n_replicates(self) -> int:
        return self.plan_dS.shape[0]

    def project_S(self, project_id: str) -> np.ndarray:
        return np.cumsum(self.project_dS[project_id], axis=1)

    @property
    def overflow_count(self) -> int:
        return 0 if self.overflow is None else int(self.overflow.sum())


class _Layout:
    """Per-plan arrays shared by every replicate."""

    def __init__(self, plan: Plan):
        self.plan = plan
        self.order = topo_order(plan)
        self.stream_keys = sorted({t.stream_key for t in plan.tasks})
        key_index = {k: i for i, k in enumerate(self.stream_keys)}
        self.task_stream = np.array([key_index[t.stream_key] for t in plan.tasks])
        specs = [t.cost_spec for t in plan.tasks]
        col = lambda name: np.array([getattr(s, name) for s in specs], dtype=float)[None, :, None]
        self.c_mean, self.c_lower, self.c_upper = col("mean"), col("lower"), col("upper")
        self.c_qlow, self.c_qhigh, self.c_plow = col("q_low"), col("q_high"), col("p_low")
        self.project_tasks = [
            [i for i, t in enumerate(plan.tasks) if t.project_id == p] for p in plan.projects
        ]


def _draw_middle(plan: Plan, rng: np.random.Generator, layout: _Layout, allow_overflow: bool) -> MiddleState:
    u = rng.random((len(layout.stream_keys), 2))
    durations = {}
    for t, k in zip(plan.tasks, layout.task_stream):
        durations[t.id] = float(duration_sample(t.duration_spec, u[k, 1], u_side=u[k, 0]))
    schedule = schedule_realization(plan, durations, layout.order)
    overflow = max(schedule.finish.values()) > plan.grid.horizon_T
    truncate = plan.truncate_overflow or (overflow and allow_overflow)
    disb = disbursement_profile(plan, schedule, truncate=truncate)
    return MiddleState(durations, schedule, disb, overflow)


def middle_shell_state(plan: Plan, rng: np.random.Generator) -> MiddleState:
    """One middle-shell state; raises HorizonOverflow in strict horizon mode."""
    return _draw_middle(plan, rng, _Layout(plan), allow_overflow=False)


def _inner(state: MiddleState, plan: Plan, n_inner: int, rng: np.random.Generator, layout: _Layout) -> InnerDraws:
    means = np.stack([state.mean_disbursements[t.id] for t in plan.tasks])  # [task, node]
    u = rng.random((n_inner, len(layout.stream_keys), means.shape[1], 2))[:, layout.task_stream]
    draw = two_sided_arrays(
        layout.c_mean, layout.c_lower, layout.c_upper,
        layout.c_qlow, layout.c_qhigh, layout.c_plow,
        u[..., 0], u[..., 1],
    )
    inc = means[None] * (draw / layout.c_mean)  # [inner, task, node]
    project_dS = {}
    plan_dS = None
    for pid, idx in zip(plan.projects, layout.project_tasks):
        acc = np.zeros((n_inner, means.shape[1]))
        for i in idx:
            acc = acc + inc[:, i]
        project_dS[pid] = acc
        plan_dS = acc.copy() if plan_dS is None else plan_dS + acc
    return InnerDraws(plan_dS, project_dS)


def inner_shell_costs(state: MiddleState, plan: Plan, n_inner: int, rng: np.random.Generator) -> InnerDraws:
    """``n_inner`` stochastic cost paths around one middle state's mean disbursements."""
    if n_inner < 1:
        raise ValueError("n_inner must be >= 1")
    return _inner(state, plan, n_inner, rng, _Layout(plan))


def run_simulation(plan: Plan, n_middle: int, n_inner: int, seed: int, threads: int = 1) -> PathEnsemble:
    """Full middle x inner ensemble; a pure function of (plan, sizes, seed)."""
    report = validate_plan(plan)
    if not report.ok:
        raise PlanError("invalid plan:\n" + str(report))
    if n_middle < 1 or n_inner < 1:
        raise ValueError("shell sizes must be positive")
    if n_middle * n_inner < 100:
        warnings.warn(f"only {n_middle * n_inner} path replicates; histograms and fits will be noisy", stacklevel=2)
    layout = _Layout(plan)

    def one(m: int) -> tuple[InnerDraws, bool]:
        rng = stream(seed, m)
        state = _draw_middle(plan, rng, layout, allow_overflow=True)
        return _inner(state, plan, n_inner, rng, layout), state.overflow

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(n_middle)))
    else:
        results = [one(m) for m in range(n_middle)]

    overflow_states = sum(o for _, o in results)
    if overflow_states:
        log.warning("%d of %d middle states overran the horizon", overflow_states, n_middle)
        if not plan.truncate_overflow and overflow_states > 0.5 * n_middle:
            raise SimulationAborted(overflow_states, n_middle)
    plan_dS = np.concatenate([r.plan_dS for r, _ in results])
    project_dS = {p: np.concatenate([r.project_dS[p] for r, _ in results]) for p in plan.projects}
    overflow = np.repeat(np.array([o for _, o in results], dtype=bool), n_inner)
    return PathEnsemble(
        grid=plan.grid,
        project_ids=tuple(plan.projects),
        plan_dS=plan_dS,
        project_dS=project_dS,
        seed=seed,
        n_middle=n_middle,
        n_inner=n_inner,
        overflow=overflow,
    )
