from __future__ import annotations

from importlib import resources
from pathlib import Path

import pytest

from rops.distributions import DurationSpec, TwoSidedAsaSpec
from rops.plan_io import load_plan
from rops.plan_model import Plan, TaskSpec, TimeGrid

FLAT = TwoSidedAsaSpec(1.0, 1.0, 1.0, p_low=0.5)


def task(tid, project="P", cost=100.0, duration=2.0, preds=(), cost_spec=None, duration_spec=None, stream=None):
    if duration_spec is None:
        duration_spec = DurationSpec.asa(duration, duration, duration)
    return TaskSpec(
        id=tid,
        project_id=project,
        allocated_cost=cost,
        scheduled_duration=duration,
        cost_spec=FLAT if cost_spec is None else cost_spec,
        duration_spec=duration_spec,
        predecessors=tuple(preds),
        stream=stream,
    )


def plan_of(*tasks, grid=None, projects=None, **kw) -> Plan:
    projects = projects or tuple(dict.fromkeys(t.project_id for t in tasks))
    return Plan(projects=tuple(projects), tasks=tuple(tasks), grid=grid or TimeGrid(0.0, 20.0, 10), **kw)


def diamond() -> Plan:
    return plan_of(
        task("A", duration=2.0),
        task("B", duration=3.0, preds=["A"]),
        task("C", duration=7.0, preds=["A"]),
        task("D", duration=1.0, preds=["B", "C"]),
    )


def two_projects(shared: bool) -> Plan:
    """Two projects of two chained tasks each; ``shared`` makes them draw identically."""
    cost = TwoSidedAsaSpec(1.0, 0.7, 1.6, q_low=0.2, q_high=0.1, p_low=0.5)
    dur = DurationSpec.asa(3.0, 2.0, 5.0)
    tasks = []
    for p in ("P1", "P2"):
        tasks.append(task(f"{p}-a", p, 100.0, 3.0, (), cost, dur, stream="a" if shared else None))
        tasks.append(task(f"{p}-b", p, 80.0, 3.0, [f"{p}-a"], cost, dur, stream="b" if shared else None))
    return plan_of(*tasks, grid=TimeGrid(0.0, 12.0, 6))


@pytest.fixture
def synthetic_plan_path() -> Path:
    return Path(str(resources.files("rops") / "data" / "synthetic_plan.json"))


@pytest.fixture
def synthetic_plan(synthetic_plan_path) -> Plan:
    return load_plan(synthetic_plan_path)
