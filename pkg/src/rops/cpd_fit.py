"""Per-node drift/diffusion fits of the plan's cost increments.

At node n the increment dS over (t_{n-1}, t_n] given the level S = S(t_{n-1})
is modelled as Normal(f(S) dt, g(S)^2 dt) with polynomial f and g. The fit is
a moment initialization over quantile buckets of S followed by exact
Gaussian log-likelihood maximization.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import polynomial as P
from scipy.optimize import minimize

from .plan_model import TimeGrid
from .shells import PathEnsemble

log = logging.getLogger(__name__)

MIN_SAMPLES = 30


@dataclass(frozen=True)
class SliceHistogram:
    node: int
    t: float
    bin_edges: np.ndarray
    mass: np.ndarray
    n_samples: int
    excluded: int = 0
    flag: str = ""  # "", "deterministic" or "empty"


def slice_histogram(values: np.ndarray, bins: int, node: int = 0, t: float = 0.0, excluded: int = 0) -> SliceHistogram:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return SliceHistogram(node, t, np.array([0.0, 1.0]), np.array([0.0]), 0, excluded, "empty")
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        w = 1e-9 * max(abs(lo), 1.0)
        return SliceHistogram(node, t, np.array([lo - w, lo + w]), np.array([1.0]), values.size, excluded, "deterministic")
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return SliceHistogram(node, t, edges, counts / values.size, values.size, excluded)


def build_histograms(ensemble: PathEnsemble, bins: int = 50, mode: str = "absolute") -> list[SliceHistogram]:
    """One normalized histogram per node n >= 1 of dS (or dS / S(t_{n-1}))."""
    if bins < 5:
        raise ValueError("need at least 5 bins")
    if ensemble.n_replicates == 0:
        raise ValueError("empty ensemble")
    if mode not in ("absolute", "relative"):
        raise ValueError(f"unknown histogram mode {mode!r}")
    times = ensemble.grid.times
    out = []
    for n in range(1, ensemble.grid.n_nodes + 1):
        dS = ensemble.plan_dS[:, n]
        excluded = 0
        if mode == "relative":
            prev = ensemble.plan_S[:, n - 1]
            keep = prev > 0
            excluded = int((~keep).sum())
            dS = dS[keep] / prev[keep]
        out.append(slice_histogram(dS, bins, n, float(times[n]), excluded))
    return out


def _poly_in_S(coef_x: np.ndarray, center: float, width: float, scale: float, order: int) -> np.ndarray:
    """Coefficients in S of ``scale * p((S - center) / width)``."""
    comp = Polynomial(coef_x)(Polynomial([-center / width, 1.0 / width])) * scale
    out = np.zeros(order + 1)
    c = comp.coef[: order + 1]
    out[: c.size] = c
    return out


def slice_loglik(f_coeffs, g_coeffs, dS, s_prev, dt: float, g_floor: float = 0.0) -> float:
    f = P.polyval(s_prev, f_coeffs)
    g = np.maximum(P.polyval(s_prev, g_coeffs), g_floor)
    var = g * g * dt
    return float(np.sum(-0.5 * np.log(2 * np.pi * var) - (dS - f * dt) ** 2 / (2 * var)))


@dataclass
class SliceFit:
    f_coeffs: np.ndarray
    g_coeffs: np.ndarray
    loglik: float
    loglik_stage1: float
    n_samples: int
    g_floor: float
    orders: tuple[int, int]
    s_min: float
    s_max: float
    s_mean: float
    deterministic: bool = False
    warnings: list[str] = field(default_factory=list)


def _stage1(dS, x, dt, order_f, order_g):
    """Bucket moments of dS over quantile buckets of the (normalized) level x."""
    if order_f == 0 and order_g == 0:
        groups = [np.arange(dS.size)]
    else:
        n_buckets = max(order_g + 2, order_f + 1)
        groups = np.array_split(np.argsort(x, kind="stable"), n_buckets)
    centers = np.array([x[g].mean() for g in groups])
    f_hat = np.array([dS[g].mean() / dt for g in groups])
    g_hat = np.array([math.sqrt(dS[g].var() / dt) for g in groups])
    if len(groups) == 1:
        return f_hat[:1].copy(), g_hat[:1].copy()
    return P.polyfit(centers, f_hat, order_f), P.polyfit(centers, g_hat, order_g)


def fit_slice(dS, s_prev, orders: tuple[int, int] = (1, 1), dt: float = 1.0) -> SliceFit:
    """Fit f and g for one node from increments ``dS`` and prior levels ``s_prev``."""
    dS = np.asarray(dS, dtype=float)
    s_prev = np.asarray(s_prev, dtype=float)
    if dS.size < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples per slice, got {dS.size}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    order_f, order_g = orders
    notes: list[str] = []
    n = dS.size
    sd = float(dS.std())
    support = (float(s_prev.min()), float(s_prev.max()), float(s_prev.mean()))

    if sd == 0.0:
        g_floor = 1e-9 * max(abs(float(dS.mean())), 1.0)
        f = np.zeros(order_f + 1)
        f[0] = dS.mean() / dt
        g = np.zeros(order_g + 1)
        g[0] = g_floor
        ll = slice_loglik(f, g, dS, s_prev, dt, g_floor)
        return SliceFit(f, g, ll, ll, n, g_floor, (0, 0), *support, deterministic=True, warnings=["deterministic slice"])

    g_floor = 1e-9 * sd
    n_needed = 1 if order_f == order_g == 0 else max(order_g + 2, order_f + 1)
    if np.unique(s_prev).size < n_needed:
        if (order_f, order_g) != (0, 0):
            levels = np.unique(s_prev).size
            notes.append(f"only {levels} distinct levels; fell back to order 0")
            # a single level is the usual first node, where every path starts at S0
            log.log(logging.INFO if levels == 1 else logging.WARNING, notes[-1])
        eff_f, eff_g = 0, 0
    else:
        eff_f, eff_g = order_f, order_g

    center = support[2]
    width = float(s_prev.std()) or 1.0
    x = (s_prev - center) / width
    y = dS / sd
    a0, b0 = _stage1(y, x, dt, eff_f, eff_g)
    if not np.all(np.isfinite(a0)) or not np.all(np.isfinite(b0)):
        notes.append("singular stage-1 design; fell back to order 0")
        eff_f, eff_g = 0, 0
        a0 = np.array([y.mean() / dt])
        b0 = np.array([math.sqrt(y.var() / dt)])
    if P.polyval(x, b0).min() <= 0:
        b0 = np.zeros(eff_g + 1)
        b0[0] = math.sqrt(y.var() / dt)
    floor_n = 1e-9
    xp_f = np.vander(x, eff_f + 1, increasing=True)
    xp_g = np.vander(x, eff_g + 1, increasing=True)
    kf = eff_f + 1

    def nll(theta):
        f = xp_f @ theta[:kf]
        graw = xp_g @ theta[kf:]
        g = np.maximum(graw, floor_n)
        r = y - f * dt
        inv_g2 = 1.0 / (g * g)
        val = np.sum(np.log(g) + 0.5 * r * r * inv_g2 / dt) + 0.5 * n * math.log(2 * math.pi * dt)
        d_f = -r * inv_g2
        d_g = (1.0 / g - r * r * inv_g2 / (g * dt)) * (graw > floor_n)
        grad = np.concatenate([xp_f.T @ d_f, xp_g.T @ d_g])
        return val, grad

    theta0 = np.concatenate([a0, b0])
    nll0 = nll(theta0)[0]
    res = minimize(nll, theta0, jac=True, method="L-BFGS-B", options={"maxiter": 500})
    theta = res.x if np.isfinite(res.fun) and res.fun <= nll0 else theta0
    if theta is theta0:
        notes.append("stage 2 did not improve on stage 1")

    f_S = _poly_in_S(theta[:kf], center, width, sd, order_f)
    g_S = _poly_in_S(theta[kf:], center, width, sd, order_g)
    f1 = _poly_in_S(a0, center, width, sd, order_f)
    g1 = _poly_in_S(b0, center, width, sd, order_g)
    ll = slice_loglik(f_S, g_S, dS, s_prev, dt, g_floor)
    ll1 = slice_loglik(f1, g1, dS, s_prev, dt, g_floor)
    if ll < ll1:
        # coefficient conversion can cost a few ulps; never report a worse fit than stage 1
        f_S, g_S, ll = f1, g1, ll1
    return SliceFit(f_S, g_S, ll, ll1, n, g_floor, (eff_f, eff_g), *support, warnings=notes)


@dataclass
class PlanCpd:
    """Node-indexed polynomial drift and diffusion; row ``n - 1`` holds node ``n``."""

    grid: TimeGrid
    orders: tuple[int, int]
    f_coeffs: np.ndarray
    g_coeffs: np.ndarray
    g_floor: np.ndarray
    s_min: np.ndarray
    s_max: np.ndarray
    s_mean: np.ndarray
    loglik: np.ndarray
    n_samples: np.ndarray
    effective_orders: list[tuple[int, int]]
    deterministic: np.ndarray

    @property
    def dt(self) -> float:
        return self.grid.dt

    @property
    def n_nodes(self) -> int:
        return self.f_coeffs.shape[0]

    def _row(self, n: int) -> int:
        if not 1 <= n <= self.n_nodes:
            raise IndexError(f"node {n} outside 1..{self.n_nodes}")
        return n - 1

    def f(self, S, n: int):
        return P.polyval(S, self.f_coeffs[self._row(n)])

    def g(self, S, n: int):
        i = self._row(n)
        return np.maximum(P.polyval(S, self.g_coeffs[i]), self.g_floor[i])

    def in_support(self, S, n: int, rel_tol: float = 1e-9):
        i = self._row(n)
        pad = rel_tol * max(abs(self.s_min[i]), abs(self.s_max[i]), 1.0)
        S = np.asarray(S)
        return (S >= self.s_min[i] - pad) & (S <= self.s_max[i] + pad)


def fit_cpd(ensemble: PathEnsemble, orders: tuple[int, int] = (1, 1), threads: int = 1) -> PlanCpd:
    """Independent fits at every node n = 1..N."""
    grid = ensemble.grid
    dt = grid.dt
    nodes = range(1, grid.n_nodes + 1)

    def one(n):
        return fit_slice(ensemble.plan_dS[:, n], ensemble.plan_S[:, n - 1], orders, dt)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fits = list(pool.map(one, nodes))
    else:
        fits = [one(n) for n in nodes]
    return PlanCpd(
        grid=grid,
        orders=tuple(orders),
        f_coeffs=np.array([s.f_coeffs for s in fits]),
        g_coeffs=np.array([s.g_coeffs for s in fits]),
        g_floor=np.array([s.g_floor for s in fits]),
        s_min=np.array([s.s_min for s in fits]),
        s_max=np.array([s.s_max for s in fits]),
        s_mean=np.array([s.s_mean for s in fits]),
        loglik=np.array([s.loglik for s in fits]),
        n_samples=np.array([s.n_samples for s in fits]),
        effective_orders=[s.orders for s in fits],
        deterministic=np.array([s.deterministic for s in fits]),
    )


class CpdDomainError(ValueError):
    pass


def eval_cpd(cpd: PlanCpd, n: int, S, dS):
    """(2 pi g^2 dt)^(-1/2) exp(-(dS - f dt)^2 / (2 g^2 dt)) at node n."""
    f = cpd.f(S, n)
    g = cpd.g(S, n)
    if np.any(g <= 0):
        raise CpdDomainError(f"non-positive diffusion at node {n}")
    dt = cpd.dt
    var = g * g * dt
    return np.exp(-((dS - f * dt) ** 2) / (2 * var)) / np.sqrt(2 * np.pi * var)
