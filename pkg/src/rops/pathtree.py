"""Binomial probability tree for a general one-factor diffusion.

States follow dS = f(S, n) dt + g(S, n) dW. For the step leaving level ``n``
the tree works in the coordinate y = int dS' / g(S', n), where the diffusion
is unit and a lattice with spacing sqrt(dt) recombines. Level ``n + 1`` holds
states S_n(k sqrt(dt)) obtained by integrating dS/dy = g(S, n) from an anchor:
S0 when g does not depend on the level, otherwise the tree's mean at that
level. Each parent's one-step mean S + f dt is snapped to the nearest lattice
coordinate c and the parent branches to c +/- 1, with the up probability
solved so the mean is exact. The lattice widens as needed, so a strong drift
moves the branches instead of clamping them.

With constant g the states are S0 + j g sqrt(dt); with g = sigma S and no
drift the lattice is the Cox-Ross-Rubinstein one.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import ndtr

from .plan_model import TimeGrid

Coef = Callable[[np.ndarray, int], np.ndarray]


class TreeError(ValueError):
    pass


@dataclass(frozen=True)
class DiffusionSpec:
    """Drift ``f(S, n)`` (money/time) and diffusion ``g(S, n)`` (money/sqrt(time)).

    ``n`` is the tree level the step starts from. ``time_homogeneous`` lets the
    tree reuse one coordinate transform for every level; ``deterministic(n)``
    marks zero-variance levels, which shift every state by f dt.
    """

    f: Coef
    g: Coef
    time_homogeneous: bool = False
    g_scale: float = 1.0
    in_support: Callable[[np.ndarray, int], np.ndarray] | None = None
    deterministic: Callable[[int], bool] | None = None
    source: str = "analytic"

    def is_deterministic(self, n: int) -> bool:
        return bool(self.deterministic(n)) if self.deterministic is not None else False

    def drift(self, S, n):
        return np.broadcast_to(np.asarray(self.f(S, n), dtype=float), np.shape(S))

    def diffusion(self, S, n):
        return self.g_scale * np.broadcast_to(np.asarray(self.g(S, n), dtype=float), np.shape(S))


def constant_diffusion(f: float, g: float) -> DiffusionSpec:
    return DiffusionSpec(lambda S, n: f + 0 * S, lambda S, n: g + 0 * S, time_homogeneous=True)


def proportional_diffusion(mu: float, sigma: float) -> DiffusionSpec:
    """f = mu S, g = sigma S (geometric Brownian motion)."""
    return DiffusionSpec(lambda S, n: mu * S, lambda S, n: sigma * S, time_homogeneous=True)


def diffusion_from_cpd(cpd, substeps: int = 1) -> DiffusionSpec:
    """Bridge fitted node polynomials into a tree spec.

    Tree level ``n`` on a grid refined ``substeps`` times lies inside cpd node
    ``n // substeps + 1`` (the node covering the following interval).
    """
    last = cpd.n_nodes

    def node(n):
        return min(n // substeps + 1, last)

    return DiffusionSpec(
        f=lambda S, n: cpd.f(S, node(n)),
        g=lambda S, n: cpd.g(S, node(n)),
        time_homogeneous=False,
        in_support=lambda S, n: cpd.in_support(S, node(n)),
        deterministic=lambda n: cpd.deterministic[node(n) - 1],
        source="cpd",
    )


@dataclass(frozen=True)
class OptionSpec:
    payoff: Callable[[np.ndarray], np.ndarray]
    exercise: str = "european"
    early_value: Callable[[np.ndarray, int], np.ndarray] | None = None
    discount_rate: float = 0.0

    def __post_init__(self):
        if self.exercise not in ("european", "american"):
            raise ValueError(f"exercise must be european or american, got {self.exercise!r}")


def call_payoff(K: float):
    return lambda S: np.maximum(S - K, 0.0)


def put_payoff(K: float):
    return lambda S: np.maximum(K - S, 0.0)


def constant_payoff(c: float):
    return lambda S: np.full(np.shape(S), float(c))


@dataclass
class Tree:
    grid: TimeGrid
    states: list[np.ndarray]  # reachable span of each level's lattice
    p_up: list[np.ndarray]
    up: list[np.ndarray]  # child positions in level n + 1
    dn: list[np.ndarray]
    reachable: list[np.ndarray]
    clamp_count: int = 0
    extrapolation_count: int = 0
    max_variance_error: float = 0.0

    @property
    def n_steps(self) -> int:
        return len(self.p_up)


def _lattice(spec: DiffusionSpec, anchor: float, n: int, k_max: int, sq: float) -> np.ndarray:
    """S_n(k sqrt(dt)) for k = -k_max..k_max by integrating dS/dy = g(S, n) from the anchor."""

    def rhs(y, s):
        return spec.diffusion(s, n)

    out = np.full(2 * k_max + 1, np.nan)
    out[k_max] = anchor
    atol = 1e-12 * max(1.0, abs(anchor))
    for sign in (1.0, -1.0):
        ys = sign * sq * np.arange(1, k_max + 1)
        with np.errstate(invalid="ignore", over="ignore"):
            sol = solve_ivp(rhs, (0.0, ys[-1]), [anchor], t_eval=ys, method="DOP853", rtol=1e-11, atol=atol)
        vals = np.full(k_max, np.nan)
        vals[: sol.y.shape[1]] = sol.y[0]
        if sign > 0:
            out[k_max + 1 :] = vals
        else:
            out[:k_max] = vals[::-1]
    return out


MAX_HALF_WIDTH = 1 << 14


def build_tree(spec: DiffusionSpec, S0: float, grid: TimeGrid) -> Tree:
    N = grid.n_nodes
    dt = grid.dt
    sq = math.sqrt(dt)
    g0 = float(spec.diffusion(np.array([S0]), 0)[0])
    if not (np.isfinite(g0) and g0 > 0) and not spec.is_deterministic(0):
        raise TreeError(f"diffusion must be positive at S0={S0}, got {g0}")

    shared, k_shared = None, 0
    states = [np.array([float(S0)])]
    reach = [np.ones(1, dtype=bool)]
    mass = np.ones(1)
    p_up, ups, dns = [], [], []
    clamps = extrap = 0
    var_err = 0.0
    for n in range(N):
        S, r = states[n], reach[n]
        f = spec.drift(S, n)
        if not np.all(np.isfinite(f[r])):
            i = int(np.argmax(r & ~np.isfinite(f)))
            raise TreeError(f"invalid drift at S={S[i]!r}, level {n}")
        if spec.in_support is not None:
            extrap += int((r & ~np.asarray(spec.in_support(S, n), dtype=bool)).sum())
        mean = np.where(r, S + f * dt, S[r][0])

        if spec.is_deterministic(n):
            # zero-variance slice: every parent moves to its mean with certainty
            idx = np.arange(len(S))
            states.append(mean)
            p_up.append(np.ones(len(S)))
            ups.append(idx)
            dns.append(idx)
            reach.append(r.copy())
            continue

        g = spec.diffusion(S, n)
        bad = r & ~(np.isfinite(g) & (g > 0))
        if bad.any():
            i = int(np.argmax(bad))
            raise TreeError(f"invalid diffusion g={g[i]!r} at S={S[i]!r}, level {n}")

        lo, hi = mean[r].min(), mean[r].max()
        k, span = n + 1, -np.inf
        while True:
            if spec.time_homogeneous:
                if shared is None or k_shared < k:
                    shared, k_shared = _lattice(spec, S0, 0, k, sq), k
                table = shared[k_shared - k : k_shared + k + 1]
            else:
                table = _lattice(spec, float(mass @ mean), n, k, sq)
            good = np.flatnonzero(np.isfinite(table))
            if len(good) < 3:
                raise TreeError(f"lattice construction failed at level {n}")
            covered = table[good[1]] <= lo and hi <= table[good[-2]]
            width = table[good[-1]] - table[good[0]]
            # a lattice that stops widening means g collapses there; the
            # remaining parents snap to the edge and are counted as clamps
            if covered or k >= MAX_HALF_WIDTH or width <= span * (1 + 1e-9):
                break
            k, span = 2 * k, width
        y = np.interp(mean, table[good], (good - k) * sq)
        c = np.clip(np.rint(y / sq).astype(int) + k, good[1], good[-2])
        up, dn = c + 1, c - 1
        s_up, s_dn = table[up], table[dn]
        with np.errstate(invalid="ignore", divide="ignore"):
            p = (mean - s_dn) / (s_up - s_dn)
            ve = np.abs((s_up - mean) * (mean - s_dn) / (g * g * dt) - 1.0)
        if not np.all(np.isfinite(p[r])):
            i = int(np.argmax(r & ~np.isfinite(p)))
            raise TreeError(f"invalid child state at S={S[i]!r}, level {n}")
        clamps += int((r & ((p < 0) | (p > 1))).sum())
        p = np.clip(np.where(r, p, 0.5), 0.0, 1.0)
        var_err = max(var_err, float(np.max(np.where(r, ve, 0.0))))

        nxt = np.zeros(len(table), dtype=bool)
        nxt[up[r & (p > 0)]] = True
        nxt[dn[r & (p < 1)]] = True
        m = np.bincount(up, mass * p, len(table)) + np.bincount(dn, mass * (1 - p), len(table))
        # trim to the reachable span so later levels stay compact
        keep = np.flatnonzero(nxt)
        a, b = keep[0], keep[-1] + 1
        states.append(table[a:b])
        reach.append(nxt[a:b])
        mass = m[a:b]
        p_up.append(p)
        ups.append(up - a)
        dns.append(dn - a)
    if not np.all(np.isfinite(states[N][reach[N]])):
        raise TreeError(f"non-finite terminal state at level {N}")
    return Tree(grid, states, p_up, ups, dns, reach, clamps, extrap, var_err)


def price_option(tree: Tree, opt: OptionSpec) -> float:
    """Backward induction from the terminal payoff to the root value."""
    disc = math.exp(-opt.discount_rate * tree.grid.dt)
    N = tree.n_steps
    S_T = tree.states[N]
    V = np.where(tree.reachable[N], np.asarray(opt.payoff(np.where(tree.reachable[N], S_T, 0.0)), dtype=float), 0.0)
    early = opt.early_value
    if early is None and opt.exercise == "american":
        early = lambda S, n: opt.payoff(S)
    for n in range(N - 1, -1, -1):
        p = tree.p_up[n]
        V = disc * (p * V[tree.up[n]] + (1.0 - p) * V[tree.dn[n]])
        if early is not None:
            V = np.maximum(V, np.asarray(early(tree.states[n], n), dtype=float))
        V = np.where(tree.reachable[n], V, 0.0)
    return float(V[0])


@dataclass
class GreeksReport:
    value: float
    delta: float
    gamma: float
    theta: float
    vega: float
    rho: float
    n_steps: int = 0
    clamp_count: int = 0
    extrapolation_count: int = 0
    bumps: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "greeks": {k: getattr(self, k) for k in ("delta", "gamma", "theta", "vega", "rho")},
            "N": self.n_steps,
            "clamp_count": self.clamp_count,
            "extrapolation_count": self.extrapolation_count,
            "bumps": self.bumps,
        }


def _price(spec, S0, grid, opt) -> tuple[float, Tree]:
    tree = build_tree(spec, S0, grid)
    return price_option(tree, opt), tree


def _aligned_bumps(spec, S0, grid, h_s) -> tuple[float, float]:
    """S0 bumps on the base tree's root lattice, an even number of steps away.

    A tree rebuilt from such a point has terminal nodes aligned with the base
    tree, so the strike keeps its place between nodes and the sawtooth of tree
    value in S0 cancels out of delta and gamma.
    """
    if spec.is_deterministic(0):
        return S0 + h_s, S0 - h_s
    sq = math.sqrt(grid.dt)
    g0 = float(spec.diffusion(np.array([S0]), 0)[0])
    k = 2 * max(1, math.ceil(h_s / (2.0 * g0 * sq)))
    table = _lattice(spec, S0, 0, k, sq)
    s_up, s_dn = float(table[-1]), float(table[0])
    if not (np.isfinite(s_up) and np.isfinite(s_dn) and s_dn < S0 < s_up):
        return S0 + h_s, S0 - h_s
    return s_up, s_dn


def greeks(
    spec: DiffusionSpec,
    S0: float,
    grid: TimeGrid,
    opt: OptionSpec,
    rel_bump: float = 1e-2,
    abs_floor: float = 1e-4,
) -> GreeksReport:
    """Value and finite-difference Greeks; each Greek re-prices on rebuilt trees.

    S0 bumps sit on the base lattice at least the default bump away, so delta
    and gamma use a non-uniform central difference.
    """
    value, base = _price(spec, S0, grid, opt)
    h_s = max(rel_bump * abs(S0), abs_floor)
    h_t = max(rel_bump * (grid.horizon_T - grid.t0), abs_floor)
    h_v = max(rel_bump * spec.g_scale, abs_floor)
    h_r = max(rel_bump * abs(opt.discount_rate), abs_floor)

    def bumped(name, **kw):
        try:
            return _price(kw.get("spec", spec), kw.get("S0", S0), kw.get("grid", grid), kw.get("opt", opt))[0]
        except (TreeError, ValueError, FloatingPointError) as exc:
            raise TreeError(f"{name} bump failed: {exc}") from exc

    s_up, s_dn = _aligned_bumps(spec, S0, grid, h_s)
    up = bumped("delta", S0=s_up)
    dn = bumped("delta", S0=s_dn)
    hu, hd = s_up - S0, S0 - s_dn
    later = bumped("theta", grid=replace(grid, t0=grid.t0 + h_t))
    v_up = bumped("vega", spec=replace(spec, g_scale=spec.g_scale + h_v))
    v_dn = bumped("vega", spec=replace(spec, g_scale=spec.g_scale - h_v))
    r_up = bumped("rho", opt=replace(opt, discount_rate=opt.discount_rate + h_r))
    r_dn = bumped("rho", opt=replace(opt, discount_rate=opt.discount_rate - h_r))
    return GreeksReport(
        value=value,
        delta=(up - dn) / (hu + hd),
        gamma=2.0 * ((up - value) / hu - (value - dn) / hd) / (hu + hd),
        theta=(later - value) / h_t,
        vega=(v_up - v_dn) / (2 * h_v),
        rho=(r_up - r_dn) / (2 * h_r),
        n_steps=grid.n_nodes,
        clamp_count=base.clamp_count,
        extrapolation_count=base.extrapolation_count,
        bumps={"S0_up": hu, "S0_down": hd, "t0": h_t, "g_scale": h_v, "rate": h_r},
    )


def bachelier_call(S0: float, K: float, g: float, T: float) -> float:
    s = g * math.sqrt(T)
    d = (S0 - K) / s
    return (S0 - K) * float(ndtr(d)) + s * math.exp(-0.5 * d * d) / math.sqrt(2 * math.pi)


def black_scholes_call(S0: float, K: float, sigma: float, T: float, r: float = 0.0) -> tuple[float, float]:
    """(value, delta)."""
    v = sigma * math.sqrt(T)
    d1 = (math.log(S0 / K) + (r + 0.5 * sigma * sigma) * T) / v
    d2 = d1 - v
    return S0 * float(ndtr(d1)) - K * math.exp(-r * T) * float(ndtr(d2)), float(ndtr(d1))
