"""Plans, projects and precedence-ordered tasks.

Scheduling is finish-to-start only: a task starts at the latest finish of its
predecessors (or at the plan start). Allocated cost is spent at a uniform rate
over the realized duration and booked on the time grid node by node.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field, replace

import networkx as nx
import numpy as np

from .distributions import DurationSpec, TwoSidedAsaSpec


class PlanError(ValueError):
    """A plan or schedule violates a structural requirement."""


class HorizonOverflow(PlanError):
    """A realized schedule finishes after the plan horizon."""

    def __init__(self, task_id: str, finish: float, horizon: float):
        super().__init__(f"task {task_id!r} finishes at {finish:g}, after horizon {horizon:g}")
        self.task_id = task_id
        self.finish = finish
        self.horizon = horizon


@dataclass(frozen=True)
class TimeGrid:
    """Nodes t_n = t0 + n*dt for n = 0..n_nodes."""

    t0: float
    horizon_T: float
    n_nodes: int

    def problems(self) -> list[str]:
        out = []
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 2:
            out.append(f"grid needs at least 2 nodes, got {self.n_nodes}")
        if not self.horizon_T > self.t0:
            out.append(f"grid horizon {self.horizon_T} must exceed t0 {self.t0}")
        return out

    @property
    def dt(self) -> float:
        return (self.horizon_T - self.t0) / self.n_nodes

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_nodes + 1)


@dataclass(frozen=True)
class TaskSpec:
    id: str
    project_id: str
    allocated_cost: float
    scheduled_duration: float
    cost_spec: TwoSidedAsaSpec
    duration_spec: DurationSpec
    predecessors: tuple[str, ...] = ()
    # tasks sharing a stream key consume identical random draws
    stream: str | None = None

    @property
    def stream_key(self) -> str:
        return self.stream if self.stream is not None else self.id


@dataclass(frozen=True)
class Parameter:
    name: str
    value: float
    lower: float
    upper: float


@dataclass(frozen=True)
class Binding:
    """Parameter ``parameter`` multiplies ``target`` on ``tasks`` (all tasks if empty).

    Targets: ``allocated_cost``, ``duration`` (scheduled duration and the whole
    duration law), ``cost_spread``, ``duration_spread`` and ``horizon``.
    """

    parameter: str
    target: str
    tasks: tuple[str, ...] = ()


BINDING_TARGETS = ("allocated_cost", "duration", "cost_spread", "duration_spread", "horizon")


@dataclass(frozen=True)
class Plan:
    projects: tuple[str, ...]
    tasks: tuple[TaskSpec, ...]
    grid: TimeGrid
    parameters: tuple[Parameter, ...] = ()
    bindings: tuple[Binding, ...] = ()
    truncate_overflow: bool = False

    def task(self, task_id: str) -> TaskSpec:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(task_id)

    @property
    def task_ids(self) -> list[str]:
        return [t.id for t in self.tasks]

    @property
    def total_allocated(self) -> float:
        return float(sum(t.allocated_cost for t in self.tasks))


@dataclass(frozen=True)
class ScheduleRealization:
    start: Mapping[str, float]
    finish: Mapping[str, float]


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        return "OK" if self.ok else "\n".join(f"- {v}" for v in self.violations)


def _graph(plan: Plan, strict: bool = False) -> nx.DiGraph:
    g = nx.DiGraph()
    ids = set(plan.task_ids)
    g.add_nodes_from(plan.task_ids)
    for t in plan.tasks:
        for p in t.predecessors:
            if p in ids:
                g.add_edge(p, t.id)
            elif strict:
                raise PlanError(f"task {t.id!r} references missing predecessor {p!r}")
    return g


def _cycle_members(g: nx.DiGraph) -> list[list[str]]:
    return [sorted(c) for c in nx.strongly_connected_components(g) if len(c) > 1 or g.has_edge(*(list(c) * 2))]


def validate_plan(plan: Plan) -> ValidationReport:
    """Collect every structural violation in ``plan``; never raises."""
    report = ValidationReport()
    v = report.violations
    v.extend(f"grid: {p}" for p in plan.grid.problems())
    if not plan.tasks:
        v.append("empty plan: no tasks")
    if not plan.projects:
        v.append("empty plan: no projects")
    if len(set(plan.projects)) != len(plan.projects):
        v.append("duplicate project ids")
    seen: set[str] = set()
    ids = set(plan.task_ids)
    projects = set(plan.projects)
    for t in plan.tasks:
        if t.id in seen:
            v.append(f"duplicate task id {t.id!r}")
        seen.add(t.id)
        if t.project_id not in projects:
            v.append(f"task {t.id!r} belongs to unknown project {t.project_id!r}")
        if not (np.isfinite(t.allocated_cost) and t.allocated_cost >= 0):
            v.append(f"task {t.id!r} has negative or non-finite allocated cost {t.allocated_cost}")
        if not (np.isfinite(t.scheduled_duration) and t.scheduled_duration > 0):
            v.append(f"task {t.id!r} has nonpositive duration {t.scheduled_duration}")
        for p in t.predecessors:
            if p not in ids:
                v.append(f"task {t.id!r} references missing predecessor {p!r} (dangling reference)")
        v.extend(f"task {t.id!r} cost spec: {p}" for p in t.cost_spec.problems())
        if not t.cost_spec.mean > 0:
            v.append(f"task {t.id!r} cost spec is multiplicative and needs a positive mean factor")
        v.extend(f"task {t.id!r} duration spec: {p}" for p in t.duration_spec.problems())
    for cyc in _cycle_members(_graph(plan)):
        v.append("cycle among tasks {" + ", ".join(cyc) + "}")
    names = [p.name for p in plan.parameters]
    if len(set(names)) != len(names):
        v.append("duplicate parameter names")
    for p in plan.parameters:
        if not p.lower < p.upper or not p.lower <= p.value <= p.upper:
            v.append(f"parameter {p.name!r} needs lower < upper and value inside bounds")
    for b in plan.bindings:
        if b.parameter not in names:
            v.append(f"binding references unknown parameter {b.parameter!r}")
        if b.target not in BINDING_TARGETS:
            v.append(f"binding target {b.target!r} not one of {BINDING_TARGETS}")
        for tid in b.tasks:
            if tid not in ids:
                v.append(f"binding references unknown task {tid!r}")
        if b.target == "duration_spread":
            for t in plan.tasks:
                if (not b.tasks or t.id in b.tasks) and t.duration_spec.kind != "two_sided_asa":
                    v.append(f"duration_spread binding needs a two_sided_asa duration on task {t.id!r}")
    return report


def topo_order(plan: Plan) -> list[str]:
    """Topological order with ties broken by ascending task id."""
    g = _graph(plan, strict=True)
    cycles = _cycle_members(g)
    if cycles:
        raise PlanError("cycle among tasks {" + ", ".join(cycles[0]) + "}")
    return list(nx.lexicographical_topological_sort(g))


def schedule_realization(
    plan: Plan, durations: Mapping[str, float], order: list[str] | None = None
) -> ScheduleRealization:
    """Earliest-start schedule for one duration realization."""
    order = topo_order(plan) if order is None else order
    t0 = plan.grid.t0
    start: dict[str, float] = {}
    finish: dict[str, float] = {}
    preds = {t.id: t.predecessors for t in plan.tasks}
    for tid in order:
        if tid not in durations:
            raise PlanError(f"missing duration for task {tid!r}")
        d = float(durations[tid])
        if not (np.isfinite(d) and d > 0):
            raise PlanError(f"task {tid!r} has nonpositive duration {d}")
        s = max([t0] + [finish[p] for p in preds[tid]])
        start[tid] = s
        finish[tid] = s + d
    return ScheduleRealization(start=start, finish=finish)


def task_disbursement(
    cost: float, start: float, finish: float, grid: TimeGrid, truncate: bool = False, task_id: str = "?"
) -> np.ndarray:
    """Per-node spend of one task; entry n covers (t_{n-1}, t_n], entry 0 is zero."""
    times = grid.times
    out = np.zeros(grid.n_nodes + 1)
    if cost == 0:
        return out
    if finish > grid.horizon_T and not truncate:
        raise HorizonOverflow(task_id, finish, grid.horizon_T)
    duration = finish - start
    lo = np.maximum(times[:-1], start)
    hi = np.minimum(times[1:], finish)
    overlap = np.maximum(hi - lo, 0.0)
    out[1:] = cost * (overlap / duration)
    active = np.nonzero(out)[0]
    if finish > grid.horizon_T or active.size == 0:
        # spend past the horizon is booked at the final node
        out[-1] += cost - out.sum()
    else:
        last = active[-1]
        out[last] = cost - (out[:last].sum() + out[last + 1 :].sum())
    return out


def disbursement_profile(
    plan: Plan, schedule: ScheduleRealization, grid: TimeGrid | None = None, truncate: bool | None = None
) -> dict[str, np.ndarray]:
    """Mean disbursement per task and node; each row sums to the allocated cost."""
    grid = plan.grid if grid is None else grid
    truncate = plan.truncate_overflow if truncate is None else truncate
    return {
        t.id: task_disbursement(
            t.allocated_cost, schedule.start[t.id], schedule.finish[t.id], grid, truncate, t.id
        )
        for t in plan.tasks
    }


def parameter_box(plan: Plan) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(values, lower, upper) arrays in declaration order."""
    p = plan.parameters
    return (
        np.array([x.value for x in p], dtype=float),
        np.array([x.lower for x in p], dtype=float),
        np.array([x.upper for x in p], dtype=float),
    )


def apply_parameters(plan: Plan, values: Mapping[str, float] | np.ndarray) -> Plan:
    """Return a plan with every binding applied at the given parameter values."""
    if not isinstance(values, Mapping):
        values = {p.name: float(v) for p, v in zip(plan.parameters, values)}
    tasks = {t.id: t for t in plan.tasks}
    grid = plan.grid
    for b in plan.bindings:
        factor = float(values[b.parameter])
        if b.target == "horizon":
            grid = replace(grid, horizon_T=grid.t0 + factor * (grid.horizon_T - grid.t0))
            continue
        for tid in b.tasks or list(tasks):
            t = tasks[tid]
            if b.target == "allocated_cost":
                t = replace(t, allocated_cost=t.allocated_cost * factor)
            elif b.target == "duration":
                t = replace(
                    t,
                    scheduled_duration=t.scheduled_duration * factor,
                    duration_spec=t.duration_spec.scaled(factor),
                )
            elif b.target == "cost_spread":
                t = replace(t, cost_spec=t.cost_spec.widened(factor))
            elif b.target == "duration_spread":
                t = replace(t, duration_spec=t.duration_spec.widened(factor))
            tasks[tid] = t
    new_params = tuple(replace(p, value=float(values.get(p.name, p.value))) for p in plan.parameters)
    return replace(plan, tasks=tuple(tasks[t.id] for t in plan.tasks), grid=grid, parameters=new_params)
