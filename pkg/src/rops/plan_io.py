"""Plan specification files (JSON).

Structure is checked against :data:`PLAN_SCHEMA` (unknown fields rejected);
semantic checks such as cycles or dangling predecessors are left to
:func:`rops.plan_model.validate_plan` so they can be reported all at once.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

import jsonschema

from .distributions import DurationSpec, TwoSidedAsaSpec
from .plan_model import Binding, Parameter, Plan, TaskSpec, TimeGrid


class PlanFormatError(ValueError):
    pass


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_prob = {"type": "number", "minimum": 0, "maximum": 1}

_two_sided_fields = {
    "mean": _num,
    "lower": _num,
    "upper": _num,
    "q_low": _pos,
    "q_high": _pos,
    "p_low": _prob,
}

PLAN_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "rops plan",
    "type": "object",
    "additionalProperties": False,
    "required": ["grid", "projects", "tasks"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["t0", "horizon_T", "n_nodes"],
            "properties": {"t0": _num, "horizon_T": _num, "n_nodes": {"type": "integer"}},
        },
        "projects": {"type": "array", "items": {"type": "string"}},
        "tasks": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "project_id", "allocated_cost", "scheduled_duration", "cost_spec", "duration_spec"],
                "properties": {
                    "id": {"type": "string"},
                    "project_id": {"type": "string"},
                    "allocated_cost": _num,
                    "scheduled_duration": _num,
                    "predecessors": {"type": "array", "items": {"type": "string"}},
                    "stream": {"type": "string"},
                    "cost_spec": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["lower", "upper"],
                        "properties": _two_sided_fields,
                    },
                    "duration_spec": {
                        "oneOf": [
                            {
                                "type": "object",
                                "additionalProperties": False,
                                "required": ["kind", "lower", "upper"],
                                "properties": {"kind": {"const": "two_sided_asa"}, **_two_sided_fields},
                            },
                            {
                                "type": "object",
                                "additionalProperties": False,
                                "required": ["kind", "shape", "scale", "lo", "hi"],
                                "properties": {
                                    "kind": {"const": "truncated_weibull"},
                                    "shape": _num,
                                    "scale": _num,
                                    "lo": _num,
                                    "hi": _num,
                                },
                            },
                        ]
                    },
                },
            },
        },
        "parameters": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "value", "lower", "upper"],
                "properties": {"name": {"type": "string"}, "value": _num, "lower": _num, "upper": _num},
            },
        },
        "bindings": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["parameter", "target"],
                "properties": {
                    "parameter": {"type": "string"},
                    "target": {"type": "string"},
                    "tasks": {"type": "array", "items": {"type": "string"}},
                },
            },
        },
        "truncate_overflow": {"type": "boolean"},
    },
}


def _two_sided(d: dict, default_mean: float) -> TwoSidedAsaSpec:
    return TwoSidedAsaSpec(
        mean=float(d.get("mean", default_mean)),
        lower=float(d["lower"]),
        upper=float(d["upper"]),
        q_low=float(d.get("q_low", 0.1)),
        q_high=float(d.get("q_high", 0.1)),
        p_low=float(d.get("p_low", 0.5)),
    )


def plan_from_dict(doc: dict) -> Plan:
    try:
        jsonschema.validate(doc, PLAN_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise PlanFormatError(f"plan schema violation at {where}: {exc.message}") from None
    tasks = []
    for t in doc["tasks"]:
        ds = t["duration_spec"]
        if ds["kind"] == "two_sided_asa":
            dur = DurationSpec("two_sided_asa", two_sided=_two_sided(ds, t["scheduled_duration"]))
        else:
            dur = DurationSpec.weibull(float(ds["shape"]), float(ds["scale"]), float(ds["lo"]), float(ds["hi"]))
        tasks.append(
            TaskSpec(
                id=t["id"],
                project_id=t["project_id"],
                allocated_cost=float(t["allocated_cost"]),
                scheduled_duration=float(t["scheduled_duration"]),
                cost_spec=_two_sided(t["cost_spec"], 1.0),
                duration_spec=dur,
                predecessors=tuple(t.get("predecessors", ())),
                stream=t.get("stream"),
            )
        )
    g = doc["grid"]
    return Plan(
        projects=tuple(doc["projects"]),
        tasks=tuple(tasks),
        grid=TimeGrid(float(g["t0"]), float(g["horizon_T"]), int(g["n_nodes"])),
        parameters=tuple(Parameter(p["name"], float(p["value"]), float(p["lower"]), float(p["upper"])) for p in doc.get("parameters", ())),
        bindings=tuple(Binding(b["parameter"], b["target"], tuple(b.get("tasks", ()))) for b in doc.get("bindings", ())),
        truncate_overflow=bool(doc.get("truncate_overflow", False)),
    )


def _two_sided_dict(s: TwoSidedAsaSpec) -> dict:
    return {"mean": s.mean, "lower": s.lower, "upper": s.upper, "q_low": s.q_low, "q_high": s.q_high, "p_low": s.p_low}


def plan_to_dict(plan: Plan) -> dict:
    tasks = []
    for t in plan.tasks:
        ds = t.duration_spec
        if ds.kind == "two_sided_asa":
            dur = {"kind": "two_sided_asa", **_two_sided_dict(ds.two_sided)}
        else:
            dur = {"kind": "truncated_weibull", "shape": ds.shape, "scale": ds.scale, "lo": ds.lo, "hi": ds.hi}
        entry = {
            "id": t.id,
            "project_id": t.project_id,
            "allocated_cost": t.allocated_cost,
            "scheduled_duration": t.scheduled_duration,
            "cost_spec": _two_sided_dict(t.cost_spec),
            "duration_spec": dur,
            "predecessors": list(t.predecessors),
        }
        if t.stream is not None:
            entry["stream"] = t.stream
        tasks.append(entry)
    return {
        "grid": {"t0": plan.grid.t0, "horizon_T": plan.grid.horizon_T, "n_nodes": plan.grid.n_nodes},
        "projects": list(plan.projects),
        "tasks": tasks,
        "parameters": [{"name": p.name, "value": p.value, "lower": p.lower, "upper": p.upper} for p in plan.parameters],
        "bindings": [{"parameter": b.parameter, "target": b.target, "tasks": list(b.tasks)} for b in plan.bindings],
        "truncate_overflow": plan.truncate_overflow,
    }


def load_plan(path: str | Path) -> Plan:
    """Read and schema-check a plan file. Raises OSError or PlanFormatError."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PlanFormatError(f"{path}: not valid JSON ({exc})") from None
    return plan_from_dict(doc)


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
