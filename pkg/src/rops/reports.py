"""Tidy CSV / JSON writers and readers for every pipeline artifact.

Floats are written with 17 significant digits so files round-trip exactly;
reruns with the same manifest therefore produce byte-identical tables.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .cpd_fit import PlanCpd, SliceHistogram
from .plan_model import TimeGrid
from .shells import PathEnsemble


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def write_rows(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return path


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, doc) -> Path:
    Path(path).write_text(json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n")
    return path


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    plan_digest: str | None = None
    seed: int | None = None
    n_middle: int | None = None
    n_inner: int | None = None
    orders: tuple[int, int] | None = None
    option: dict | None = None
    settings: dict = field(default_factory=dict)
    tool_version: str = __version__
    created: str = ""
    outputs: dict[str, str] = field(default_factory=dict)

    def write(self, out_dir: Path, files: list[Path]) -> Path:
        self.created = datetime.now(timezone.utc).isoformat(timespec="seconds")
        self.outputs = {Path(f).name: sha256(f) for f in files}
        return write_json(Path(out_dir) / "manifest.json", asdict(self))


# ensembles

def write_ensemble(ensemble: PathEnsemble, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    t = ensemble.grid.times
    R, K = ensemble.plan_dS.shape
    rep = np.repeat(np.arange(R), K)
    node = np.tile(np.arange(K), R)
    tt = np.tile(t, R)

    path = out_dir / "plan_ensemble.csv"
    with open(path, "w", newline="") as fh:
        fh.write("replicate,node,t,dS,S\n")
        fh.writelines(f"{r},{n},{fmt(ti)},{fmt(a)},{fmt(b)}\n" for r, n, ti, a, b in zip(rep, node, tt, ensemble.plan_dS.ravel(), ensemble.plan_S.ravel()))
    files = [path]
    path = out_dir / "project_ensemble.csv"
    with open(path, "w", newline="") as fh:
        fh.write("project,replicate,node,t,dS,S\n")
        for p in ensemble.project_ids:
            dS = ensemble.project_dS[p]
            S = ensemble.project_S(p)
            fh.writelines(f"{p},{r},{n},{fmt(ti)},{fmt(a)},{fmt(b)}\n" for r, n, ti, a, b in zip(rep, node, tt, dS.ravel(), S.ravel()))
    files.append(path)
    meta = {
        "grid": {"t0": ensemble.grid.t0, "horizon_T": ensemble.grid.horizon_T, "n_nodes": ensemble.grid.n_nodes},
        "projects": list(ensemble.project_ids),
        "seed": ensemble.seed,
        "n_middle": ensemble.n_middle,
        "n_inner": ensemble.n_inner,
        "n_replicates": R,
        "overflow_replicates": [] if ensemble.overflow is None else np.nonzero(ensemble.overflow)[0].tolist(),
    }
    files.append(write_json(out_dir / "ensemble.json", meta))
    return files


def read_ensemble(src: Path) -> PathEnsemble:
    """Load an ensemble directory written by :func:`write_ensemble`."""
    src = Path(src)
    meta = json.loads((src / "ensemble.json").read_text())
    g = meta["grid"]
    grid = TimeGrid(g["t0"], g["horizon_T"], g["n_nodes"])
    R, K = meta["n_replicates"], grid.n_nodes + 1
    plan = np.loadtxt(src / "plan_ensemble.csv", delimiter=",", skiprows=1, usecols=(3,), ndmin=1).reshape(R, K)
    project_dS = {p: np.zeros((R, K)) for p in meta["projects"]}
    with open(src / "project_ensemble.csv") as fh:
        next(fh)
        for line in fh:
            p, r, n, _, dS, _ = line.rstrip("\n").split(",")
            project_dS[p][int(r), int(n)] = float(dS)
    overflow = np.zeros(R, dtype=bool)
    overflow[meta["overflow_replicates"]] = True
    return PathEnsemble(
        grid=grid,
        project_ids=tuple(meta["projects"]),
        plan_dS=plan,
        project_dS=project_dS,
        seed=meta["seed"],
        n_middle=meta["n_middle"],
        n_inner=meta["n_inner"],
        overflow=overflow,
    )


def write_histograms(hists: list[SliceHistogram], path: Path) -> Path:
    rows = []
    for h in hists:
        for lo, hi, m in zip(h.bin_edges[:-1], h.bin_edges[1:], h.mass):
            rows.append([h.node, h.t, lo, hi, m, h.n_samples, h.excluded, h.flag])
    return write_rows(path, ["node", "t", "bin_lo", "bin_hi", "mass", "n_samples", "excluded", "flag"], rows)


# fitted densities

def write_cpd(cpd: PlanCpd, path: Path) -> Path:
    kf, kg = cpd.f_coeffs.shape[1], cpd.g_coeffs.shape[1]
    header = (
        ["node", "t", "dt", "order"]
        + [f"x_f{i}" for i in range(kf)]
        + [f"x_g{i}" for i in range(kg)]
        + ["loglik", "n_samples", "g_floor", "s_min", "s_max", "s_mean", "deterministic", "t0", "horizon_T"]
    )
    times = cpd.grid.times
    rows = []
    for i in range(cpd.n_nodes):
        ef, eg = cpd.effective_orders[i]
        rows.append(
            [i + 1, times[i + 1], cpd.dt, f"{ef}/{eg}", *cpd.f_coeffs[i], *cpd.g_coeffs[i],
             cpd.loglik[i], int(cpd.n_samples[i]), cpd.g_floor[i], cpd.s_min[i], cpd.s_max[i], cpd.s_mean[i],
             bool(cpd.deterministic[i]), cpd.grid.t0, cpd.grid.horizon_T]
        )
    return write_rows(path, header, rows)


def read_cpd(path: Path) -> PlanCpd:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no CPD rows")
    f_cols = sorted((k for k in rows[0] if k.startswith("x_f")), key=lambda k: int(k[3:]))
    g_cols = sorted((k for k in rows[0] if k.startswith("x_g")), key=lambda k: int(k[3:]))
    col = lambda name, typ=float: np.array([typ(r[name]) for r in rows])
    grid = TimeGrid(float(rows[0]["t0"]), float(rows[0]["horizon_T"]), len(rows))
    return PlanCpd(
        grid=grid,
        orders=(len(f_cols) - 1, len(g_cols) - 1),
        f_coeffs=np.array([[float(r[c]) for c in f_cols] for r in rows]),
        g_coeffs=np.array([[float(r[c]) for c in g_cols] for r in rows]),
        g_floor=col("g_floor"),
        s_min=col("s_min"),
        s_max=col("s_max"),
        s_mean=col("s_mean"),
        loglik=col("loglik"),
        n_samples=col("n_samples", int),
        effective_orders=[tuple(int(x) for x in r["order"].split("/")) for r in rows],
        deterministic=col("deterministic", lambda s: bool(int(s))),
    )
