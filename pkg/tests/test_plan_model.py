from __future__ import annotations

import itertools

import numpy as np
import pytest
from conftest import diamond, plan_of, task
from hypothesis import given, settings
from hypothesis import strategies as st

from rops.plan_model import (
    Binding,
    HorizonOverflow,
    Parameter,
    PlanError,
    TimeGrid,
    apply_parameters,
    disbursement_profile,
    schedule_realization,
    task_disbursement,
    topo_order,
    validate_plan,
)


def longest_path_start(preds, durations, target):
    """Enumerate every chain ending before ``target`` and keep the longest."""
    best = 0.0

    def walk(node, acc):
        nonlocal best
        if not preds[node]:
            best = max(best, acc)
        for p in preds[node]:
            walk(p, acc + durations[p])

    walk(target, 0.0)
    return best


def test_grid_basics():
    g = TimeGrid(1.0, 11.0, 5)
    assert g.dt == 2.0
    assert np.allclose(g.times, [1, 3, 5, 7, 9, 11])
    assert TimeGrid(0, 1, 1).problems()
    assert TimeGrid(2, 1, 4).problems()


def test_single_task_plan_is_valid():
    assert validate_plan(plan_of(task("A"))).ok


def test_cycle_is_named():
    rep = validate_plan(plan_of(task("A", preds=["B"]), task("B", preds=["A"])))
    assert not rep.ok
    assert any("cycle" in v and "{A, B}" in v for v in rep.violations)


def test_dangling_predecessor():
    rep = validate_plan(plan_of(task("A", preds=["Z"])))
    assert any("'Z'" in v and "dangling" in v for v in rep.violations)


def test_violations_are_collected_together():
    bad = plan_of(task("A", duration=-1.0, preds=["Z"]), task("A"), grid=TimeGrid(0, 0, 1))
    text = str(validate_plan(bad))
    for word in ("grid", "duplicate task", "nonpositive duration", "dangling"):
        assert word in text


def test_empty_plan_reported():
    assert "empty plan" in str(validate_plan(plan_of(projects=("P",))))


def test_topo_orders():
    chain = plan_of(task("C", preds=["B"]), task("B", preds=["A"]), task("A"))
    assert topo_order(chain) == ["A", "B", "C"]
    assert topo_order(plan_of(task("B"), task("A"))) == ["A", "B"]
    assert topo_order(diamond()) == ["A", "B", "C", "D"]


def test_topo_order_rejects_cycle():
    with pytest.raises(PlanError, match="cycle"):
        topo_order(plan_of(task("A", preds=["B"]), task("B", preds=["A"])))


def test_chain_and_parallel_schedules():
    chain = plan_of(task("A"), task("B", preds=["A"]))
    s = schedule_realization(chain, {"A": 3.0, "B": 4.0})
    assert s.finish["B"] == 7.0
    par = plan_of(task("A"), task("B"))
    s = schedule_realization(par, {"A": 3.0, "B": 5.0})
    assert s.start == {"A": 0.0, "B": 0.0}
    assert s.finish == {"A": 3.0, "B": 5.0}


def test_diamond_matches_longest_path_oracle():
    d = {"A": 2.0, "B": 3.0, "C": 7.0, "D": 1.0}
    plan = diamond()
    s = schedule_realization(plan, d)
    preds = {t.id: t.predecessors for t in plan.tasks}
    assert s.start["D"] == longest_path_start(preds, d, "D") == 9.0
    assert s.finish["D"] == 10.0


def test_schedule_errors_name_task():
    plan = plan_of(task("A"), task("B"))
    with pytest.raises(PlanError, match="'B'"):
        schedule_realization(plan, {"A": 1.0})
    with pytest.raises(PlanError, match="'A'"):
        schedule_realization(plan, {"A": 0.0, "B": 1.0})


def random_dag(rng, n):
    tasks = []
    for i in range(n):
        preds = [f"T{j:02d}" for j in range(i) if rng.random() < 0.3]
        tasks.append(task(f"T{i:02d}", project=f"P{i % 3}", cost=float(rng.uniform(0, 500)), preds=preds))
    return plan_of(*tasks, grid=TimeGrid(0.0, 1000.0, 25), truncate_overflow=True)


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 9))
@settings(max_examples=60, deadline=None)
def test_schedule_matches_fixed_point_and_longest_paths(seed, n):
    rng = np.random.default_rng(seed)
    plan = random_dag(rng, n)
    d = {t.id: float(rng.uniform(0.1, 10)) for t in plan.tasks}
    s = schedule_realization(plan, d)
    preds = {t.id: t.predecessors for t in plan.tasks}
    for tid in d:
        assert s.start[tid] == pytest.approx(longest_path_start(preds, d, tid), abs=1e-12)
        assert s.finish[tid] == s.start[tid] + d[tid]
    # fixed-point iteration in arbitrary order converges to the same schedule
    start = {k: 0.0 for k in d}
    for _ in range(n + 1):
        for tid in sorted(d, reverse=True):
            start[tid] = max([0.0] + [start[p] + d[p] for p in preds[tid]])
    assert start == s.start


@given(seed=st.integers(0, 2**32 - 1), bump=st.floats(0.0, 5.0))
@settings(max_examples=40, deadline=None)
def test_monotone_precedence(seed, bump):
    rng = np.random.default_rng(seed)
    plan = random_dag(rng, 7)
    d = {t.id: float(rng.uniform(0.1, 10)) for t in plan.tasks}
    base = schedule_realization(plan, d)
    k = plan.tasks[int(rng.integers(len(plan.tasks)))].id
    s = schedule_realization(plan, {**d, k: d[k] + bump})
    assert all(s.start[t] >= base.start[t] for t in d)


def test_disbursement_full_nodes():
    g = TimeGrid(0.0, 10.0, 10)
    out = task_disbursement(100.0, 2.0, 6.0, g)
    assert np.allclose(out[3:7], 25.0)
    assert out.sum() == pytest.approx(100.0, abs=1e-12)
    assert out[0] == 0.0 and out[2] == 0.0 and out[7] == 0.0


def test_disbursement_mid_node_start():
    # overlap fractions {0.5, 1, 1} of a 2.5-node task
    g = TimeGrid(0.0, 10.0, 10)
    out = task_disbursement(100.0, 1.5, 4.0, g)
    assert np.allclose(out[2:5], [20.0, 40.0, 40.0], atol=1e-12)
    assert np.count_nonzero(out) == 3


def test_disbursement_touching_boundary_gets_zero():
    g = TimeGrid(0.0, 10.0, 10)
    out = task_disbursement(50.0, 3.0, 5.0, g)
    assert out[3] == 0.0 and out[6] == 0.0


def test_horizon_overflow_and_truncation():
    g = TimeGrid(0.0, 10.0, 5)
    with pytest.raises(HorizonOverflow):
        task_disbursement(100.0, 8.0, 12.0, g, task_id="X")
    out = task_disbursement(100.0, 8.0, 12.0, g, truncate=True)
    assert out[-1] == pytest.approx(100.0)
    assert out.sum() == pytest.approx(100.0, abs=1e-12)


def test_disbursement_conservation_on_random_plans():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        plan = random_dag(rng, int(rng.integers(1, 8)))
        d = {t.id: float(rng.uniform(0.05, 150)) for t in plan.tasks}
        prof = disbursement_profile(plan, schedule_realization(plan, d))
        total = sum(v.sum() for v in prof.values())
        alloc = plan.total_allocated
        if alloc > 0:
            worst = max(worst, abs(total - alloc) / alloc)
        for t in plan.tasks:
            assert np.all(prof[t.id] >= -1e-9)
    assert worst <= 1e-9


def test_apply_parameters_bindings():
    plan = plan_of(
        task("A", cost=100.0, duration=2.0),
        task("B", cost=50.0, duration=4.0),
        parameters=(Parameter("budget", 1.0, 0.5, 2.0), Parameter("T", 1.0, 0.5, 2.0)),
        bindings=(Binding("budget", "allocated_cost", ("A",)), Binding("T", "horizon")),
    )
    p = apply_parameters(plan, np.array([1.5, 2.0]))
    assert p.task("A").allocated_cost == 150.0
    assert p.task("B").allocated_cost == 50.0
    assert p.grid.horizon_T == 40.0
    assert validate_plan(p).ok


def test_unknown_binding_reported():
    plan = plan_of(task("A"), bindings=(Binding("nope", "wings"),))
    text = str(validate_plan(plan))
    assert "unknown parameter" in text and "binding target" in text


def test_permuted_task_lists_schedule_identically():
    tasks = list(diamond().tasks)
    d = {"A": 2.0, "B": 3.0, "C": 7.0, "D": 1.0}
    ref = schedule_realization(diamond(), d)
    for perm in itertools.permutations(tasks):
        assert schedule_realization(plan_of(*perm), d) == ref
