"""Relative risk among projects through a Gaussian copula.

Each project's windowed cost increment is mapped to normal scores through its
empirical CDF (ranks / (n + 1)); correlations are measured in that space and
tail statistics are reported back in money units with the replicates that
realize them.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .shells import PathEnsemble

log = logging.getLogger(__name__)

MIN_SAMPLES = 20


class RiskError(ValueError):
    pass


def rank_to_uniform(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or x.size < MIN_SAMPLES:
        raise RiskError(f"need at least {MIN_SAMPLES} samples for an empirical marginal, got {x.size}")
    return rankdata(x, method="average") / (x.size + 1)


def gaussian_scores(uniforms) -> np.ndarray:
    u = np.asarray(uniforms, dtype=float)
    if np.any((u <= 0) | (u >= 1)) or np.any(np.isnan(u)):
        raise RiskError("uniforms must lie strictly inside (0, 1)")
    return ndtri(u)


def correlation_matrix(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(covariance, correlation) of the columns of ``z``.

    Pairwise dot products keep identical columns exactly perfectly correlated.
    """
    zc = z - z.mean(axis=0)
    k = z.shape[1]
    cov = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            cov[i, j] = cov[j, i] = float(np.dot(zc[:, i], zc[:, j])) / (z.shape[0] - 1)
    # sqrt(v * v) == v exactly, so duplicated columns give exactly 1
    var = np.diag(cov)
    corr = np.clip(cov / np.sqrt(np.outer(var, var)), -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return cov, corr


def repair_psd(corr: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Clip negative eigenvalues and renormalize the diagonal; identity on PSD input."""
    corr = np.asarray(corr, dtype=float)
    w, v = np.linalg.eigh(corr)
    if w.min() >= -tol * max(1.0, abs(w).max()):
        return corr
    fixed = (v * np.clip(w, 0.0, None)) @ v.T
    d = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(d, d)
    fixed = (fixed + fixed.T) / 2
    np.fill_diagonal(fixed, 1.0)
    return fixed


@dataclass
class TailEntry:
    project: str
    quantile: float
    threshold: float  # money
    replicates: np.ndarray  # indices at or beyond the threshold
    co_exceedance: dict[str, float]


@dataclass
class RiskReport:
    projects: list[str]
    correlation: np.ndarray
    covariance: np.ndarray
    z: np.ndarray
    statistics: np.ndarray  # windowed statistic per replicate and retained project
    replicate_index: np.ndarray  # original replicate ids of the rows above
    tail_table: list[TailEntry]
    window: tuple[int, int]
    mode: str
    excluded_projects: list[str] = field(default_factory=list)
    excluded_replicates: int = 0
    node_correlations: dict[int, np.ndarray] | None = None

    def as_dict(self) -> dict:
        return {
            "projects": self.projects,
            "window": list(self.window),
            "mode": self.mode,
            "n_replicates": int(self.statistics.shape[0]),
            "correlation": self.correlation.tolist(),
            "covariance": self.covariance.tolist(),
            "excluded_projects": self.excluded_projects,
            "excluded_replicates": self.excluded_replicates,
            "tail_table": [
                {
                    "project": e.project,
                    "quantile": e.quantile,
                    "threshold": e.threshold,
                    "n_tail": int(e.replicates.size),
                    "co_exceedance": e.co_exceedance,
                }
                for e in self.tail_table
            ],
            "node_correlations": None
            if self.node_correlations is None
            else {str(n): c.tolist() for n, c in self.node_correlations.items()},
        }


def windowed_statistic(ensemble: PathEnsemble, project: str, window: tuple[int, int], mode: str = "absolute"):
    """Per-replicate sum over nodes a..b of dS_i (or of dS_i / S_i(t-dt)).

    Returns (values, keep mask); relative mode drops replicates with a
    non-positive prior level anywhere in the window.
    """
    a, b = window
    dS = ensemble.project_dS[project][:, a : b + 1]
    if mode == "absolute":
        return dS.sum(axis=1), np.ones(dS.shape[0], dtype=bool)
    prev = ensemble.project_S(project)[:, a - 1 : b]
    keep = np.all(prev > 0, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(prev > 0, dS / np.where(prev > 0, prev, 1.0), 0.0)
    return rel.sum(axis=1), keep


def tail_threshold(x: np.ndarray, q: float) -> float:
    """Empirical q-quantile taken as an order statistic (always a sample value)."""
    return float(np.quantile(x, q, method="inverted_cdf"))


def project_risk(
    ensemble: PathEnsemble,
    window: tuple[int, int] | None = None,
    quantiles=(0.95,),
    mode: str = "absolute",
    per_node: bool = False,
) -> RiskReport:
    if len(ensemble.project_ids) < 2:
        raise RiskError("project risk needs >= 2 projects")
    N = ensemble.grid.n_nodes
    window = (1, N) if window is None else (int(window[0]), int(window[1]))
    if not 1 <= window[0] <= window[1] <= N:
        raise RiskError(f"window {window} outside nodes 1..{N}")
    if ensemble.n_replicates < 100:
        raise RiskError(f"need >= 100 replicates, got {ensemble.n_replicates}")
    if mode not in ("absolute", "relative"):
        raise RiskError(f"unknown mode {mode!r}")

    columns, keep = {}, np.ones(ensemble.n_replicates, dtype=bool)
    for p in ensemble.project_ids:
        x, k = windowed_statistic(ensemble, p, window, mode)
        columns[p] = x
        keep &= k
    excluded_reps = int((~keep).sum())
    retained, excluded = [], []
    for p in ensemble.project_ids:
        x = columns[p][keep]
        if x.size == 0 or np.all(x == x[0]):
            log.warning("project %s has zero variance in window %s; excluded", p, window)
            excluded.append(p)
        else:
            retained.append(p)
    if len(retained) < 2:
        raise RiskError(f"fewer than 2 projects with variance in window {window} (excluded: {excluded})")

    idx = np.nonzero(keep)[0]
    stats = np.column_stack([columns[p][keep] for p in retained])
    z = np.column_stack([gaussian_scores(rank_to_uniform(stats[:, j])) for j in range(stats.shape[1])])
    cov, corr = correlation_matrix(z)
    corr = repair_psd(corr)

    tail_sets = {}
    table = []
    for q in quantiles:
        for j, p in enumerate(retained):
            thr = tail_threshold(stats[:, j], q)
            tail_sets[p, q] = (thr, np.nonzero(stats[:, j] >= thr)[0])
        for p in retained:
            thr, rows = tail_sets[p, q]
            co = {}
            for other in retained:
                other_rows = tail_sets[other, q][1]
                co[other] = 1.0 if other == p else float(np.isin(rows, other_rows).sum()) / rows.size
            table.append(TailEntry(p, float(q), thr, idx[rows], co))

    node_corr = None
    if per_node:
        node_corr = {}
        for n in range(window[0], window[1] + 1):
            cols = [ensemble.project_dS[p][keep, n] for p in retained]
            if any(np.all(c == c[0]) for c in cols):
                continue
            zn = np.column_stack([gaussian_scores(rank_to_uniform(c)) for c in cols])
            node_corr[n] = repair_psd(correlation_matrix(zn)[1])

    return RiskReport(
        projects=retained,
        correlation=corr,
        covariance=cov,
        z=z,
        statistics=stats,
        replicate_index=idx,
        tail_table=table,
        window=window,
        mode=mode,
        excluded_projects=excluded,
        excluded_replicates=excluded_reps,
        node_correlations=node_corr,
    )


def audit_threshold(ensemble: PathEnsemble, entry: TailEntry, window, mode: str = "absolute") -> float:
    """Re-evaluate a tail entry directly from the ensemble: min statistic over its replicates."""
    x, _ = windowed_statistic(ensemble, entry.project, window, mode)
    return float(x[entry.replicates].min()) if entry.replicates.size else math.nan
