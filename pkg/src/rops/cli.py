"""Command-line front end: simulate, fit, price, optimize, risk.

Exit codes: 0 success, 1 invalid plan or arguments, 2 I/O failure,
3 simulation aborted (horizon overflow), 4 pricing failure, 5 every
optimizer evaluation failed.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .asa_optimizer import AnnealConfig, AnnealError, ObjectiveSpec, anneal, optimize
from .copula_risk import RiskError, project_risk
from .cpd_fit import build_histograms, fit_cpd
from .pathtree import (
    OptionSpec,
    TreeError,
    bachelier_call,
    build_tree,
    call_payoff,
    constant_diffusion,
    constant_payoff,
    diffusion_from_cpd,
    greeks,
    price_option,
    put_payoff,
)
from .plan_io import PlanFormatError, file_digest, load_plan
from .plan_model import Plan, TimeGrid, validate_plan
from .reports import (
    RunManifest,
    read_cpd,
    read_ensemble,
    sha256,
    write_cpd,
    write_ensemble,
    write_histograms,
    write_json,
    write_rows,
)
from .shells import SimulationAborted, run_simulation

log = logging.getLogger("rops")

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_ABORT, EXIT_PRICING, EXIT_OPTIMIZE = range(6)


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _plan(path: str) -> Plan:
    try:
        plan = load_plan(path)
    except PlanFormatError as exc:
        raise CliError(EXIT_INVALID, str(exc)) from None
    report = validate_plan(plan)
    if not report.ok:
        raise CliError(EXIT_INVALID, f"invalid plan {path}:\n{report}")
    return plan


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _simulate(plan: Plan, args) -> object:
    try:
        return run_simulation(plan, args.n_middle, args.n_inner, args.seed, threads=args.threads)
    except SimulationAborted as exc:
        raise CliError(EXIT_ABORT, str(exc)) from None


def _ensemble_source(args):
    """(ensemble, plan or None, provenance dict) from --ensemble or --plan."""
    if getattr(args, "ensemble", None):
        src = Path(args.ensemble)
        try:
            ens = read_ensemble(src)
        except FileNotFoundError as exc:
            raise CliError(EXIT_IO, f"cannot read ensemble {exc.filename}") from None
        return ens, None, {"ensemble": str(src), "ensemble_digest": sha256(src / "ensemble.json")}
    if not args.plan:
        raise CliError(EXIT_INVALID, "need --plan or --ensemble")
    plan = _plan(args.plan)
    return _simulate(plan, args), plan, {}


def _manifest(args, command, **kw) -> RunManifest:
    digest = file_digest(args.plan) if getattr(args, "plan", None) else None
    return RunManifest(command=command, plan_digest=digest, seed=args.seed, **kw)


def cmd_simulate(args) -> int:
    plan = _plan(args.plan)
    ens = _simulate(plan, args)
    out = _out_dir(args.out)
    files = write_ensemble(ens, out)
    for mode in ("absolute", "relative"):
        files.append(write_histograms(build_histograms(ens, args.bins, mode), out / f"histograms_{mode}.csv"))
    if not args.no_figures:
        from . import plotting

        plotting.plot_cost_fan(ens, out / "fig_cost_paths.png")
        plotting.plot_histograms(build_histograms(ens, args.bins), out / "fig_histograms.png")
    _manifest(args, "simulate", n_middle=args.n_middle, n_inner=args.n_inner,
              settings={"bins": args.bins, "overflow_replicates": ens.overflow_count}).write(out, files)
    print(f"simulated {ens.n_replicates} replicates over {ens.grid.n_nodes} nodes -> {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    ens, _, provenance = _ensemble_source(args)
    orders = (args.order_f, args.order_g)
    cpd = fit_cpd(ens, orders, threads=args.threads)
    out = _out_dir(args.out)
    files = [write_cpd(cpd, out / "cpd.csv")]
    if not args.no_figures:
        from . import plotting

        plotting.plot_cpd_coefficients(cpd, out / "fig_cpd_coefficients.png")
    _manifest(args, "fit", n_middle=ens.n_middle, n_inner=ens.n_inner, orders=orders,
              settings=provenance).write(out, files)
    print(f"fitted {cpd.n_nodes} nodes at orders {orders} -> {out / 'cpd.csv'}")
    return EXIT_OK


def _option(args, default_strike: float) -> tuple[OptionSpec, dict]:
    strike = default_strike if args.strike is None else args.strike
    if args.payoff == "call":
        payoff = call_payoff(strike)
    elif args.payoff == "put":
        payoff = put_payoff(strike)
    else:
        payoff = constant_payoff(args.constant)
    desc = {"payoff": args.payoff, "strike": strike, "constant": args.constant,
            "exercise": args.exercise, "discount_rate": args.rate}
    return OptionSpec(payoff, exercise=args.exercise, discount_rate=args.rate), desc


def cmd_price(args) -> int:
    reference = None
    if args.test_bachelier:
        spec = constant_diffusion(0.0, 1.0)
        steps = args.steps or 500
        grid = TimeGrid(0.0, 1.0, steps)
        S0, default_strike = 0.0, 0.0
        if args.payoff == "call" and (args.strike or 0.0) == 0.0:
            reference = bachelier_call(0.0, 0.0, 1.0, 1.0)
        make = lambda m: (spec, TimeGrid(0.0, 1.0, steps * m))
        source = {"source": "test-bachelier"}
    else:
        plan = None
        if args.cpd:
            try:
                cpd = read_cpd(args.cpd)
            except FileNotFoundError:
                raise CliError(EXIT_IO, f"CPD file not found: {args.cpd}") from None
            source = {"source": "cpd", "cpd": str(args.cpd), "cpd_digest": sha256(args.cpd)}
        else:
            ens, plan, source = _ensemble_source(args)
            cpd = fit_cpd(ens, (args.order_f, args.order_g), threads=args.threads)
            source = {"source": "plan", **source}
        S0 = args.S0
        if plan is not None:
            default_strike = plan.total_allocated
        else:
            n = cpd.n_nodes
            default_strike = float(cpd.s_mean[-1] + cpd.f(cpd.s_mean[-1], n) * cpd.dt)

        def make(m):
            g = cpd.grid
            return diffusion_from_cpd(cpd, substeps=m), TimeGrid(g.t0, g.horizon_T, g.n_nodes * m)

        spec, grid = make(args.substeps)
    opt, desc = _option(args, default_strike)

    try:
        rep = greeks(spec, S0, grid, opt)
        mults = [int(x) for x in args.convergence.split(",") if x]
        conv = []
        for m in mults:
            s, g = make(m)
            conv.append((g.n_nodes, price_option(build_tree(s, S0, g), opt)))
    except TreeError as exc:
        raise CliError(EXIT_PRICING, f"pricing failed: {exc}") from None

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    doc = rep.as_dict()
    # input paths stay in the manifest; the report carries only content digests
    doc.update({"option": desc, "S0": S0, "reference": reference,
                **{k: v for k, v in source.items() if k not in ("cpd", "ensemble")}})
    files = [write_json(out, doc)]
    conv_path = out.with_name(out.stem + "_convergence.csv")
    files.append(write_rows(conv_path, ["N", "value"], conv))
    if not args.no_figures:
        from . import plotting

        plotting.plot_option_convergence([c[0] for c in conv], [c[1] for c in conv],
                                         out.with_name(out.stem + "_convergence.png"), reference)
    man = _manifest(args, "price", option=desc, settings={"substeps": args.substeps, **source})
    man.write(out.parent, files)
    print(f"value {rep.value:.10g}  delta {rep.delta:.6g}  gamma {rep.gamma:.6g}  "
          f"theta {rep.theta:.6g}  vega {rep.vega:.6g}  rho {rep.rho:.6g}  (N={rep.n_steps}, clamps={rep.clamp_count})")
    return EXIT_OK


def cmd_optimize(args) -> int:
    config = AnnealConfig(
        t0_param=args.t0_param, t0_accept=args.t0_accept, c=args.c, max_evals=args.max_evals,
        reanneal_every=args.reanneal_every, multi_min_k=args.multi_min_k,
        multi_min_tol=args.multi_min_tol, seed=args.seed,
    )
    if config.problems():
        raise CliError(EXIT_INVALID, "; ".join(config.problems()))
    try:
        if args.test_quadratic:
            names = ["x"]
            result = anneal(lambda x: float((x[0] - 2.0) ** 2), [-10.0], [10.0], config)
        else:
            if not args.plan:
                raise CliError(EXIT_INVALID, "need --plan or --test-quadratic")
            plan = _plan(args.plan)
            if not plan.parameters:
                raise CliError(EXIT_INVALID, "plan declares no parameters to optimize")
            objective = ObjectiveSpec(kind=args.objective, expression=args.expr, n_middle=args.n_middle,
                                      n_inner=args.n_inner, threads=args.threads)
            names = [p.name for p in plan.parameters]
            result = optimize(objective, plan, config)
    except AnnealError as exc:
        raise CliError(EXIT_OPTIMIZE, str(exc)) from None
    except ValueError as exc:
        raise CliError(EXIT_INVALID, str(exc)) from None

    out = _out_dir(args.out)
    best = {"params": dict(zip(names, result.best_params.tolist())), "value": result.best_value,
            "evals": result.evals, "failures": result.failures}
    files = [write_json(out / "best.json", best)]
    files.append(write_rows(out / "multi_min.csv", ["rank", *names, "value"],
                            [[i + 1, *x, v] for i, (x, v) in enumerate(result.multi_min)]))
    files.append(write_rows(
        out / "trace.csv",
        ["eval", "kind", *names, "value", "accepted", "t_accept", *[f"temp_{n}" for n in names]],
        [[r.index, r.kind, *r.params, r.value, r.accepted, r.t_accept, *r.temps] for r in result.trace],
    ))
    if not args.no_figures:
        from . import plotting

        plotting.plot_anneal_trace(np.array([r.value for r in result.trace]), result.best_trace,
                                   out / "fig_anneal_trace.png")
    _manifest(args, "optimize", n_middle=args.n_middle, n_inner=args.n_inner,
              settings={"objective": "test-quadratic" if args.test_quadratic else args.objective,
                        "expression": args.expr, "config": config.__dict__}).write(out, files)
    print(f"best {best['params']} value {result.best_value:.10g} after {result.evals} evaluations")
    return EXIT_OK


def _window(text):
    if text is None:
        return None
    a, _, b = text.partition(":")
    return int(a), int(b)


def cmd_risk(args) -> int:
    if args.plan and not args.ensemble:
        plan = _plan(args.plan)
        if len(plan.projects) < 2:
            raise CliError(EXIT_INVALID, "risk analysis needs >= 2 projects")
    ens, _, provenance = _ensemble_source(args)
    quantiles = [float(q) for q in args.quantiles.split(",") if q]
    try:
        rep = project_risk(ens, _window(args.window), quantiles, mode=args.mode, per_node=args.per_node)
    except RiskError as exc:
        raise CliError(EXIT_INVALID, str(exc)) from None
    out = _out_dir(args.out)
    files = [write_json(out / "risk.json", rep.as_dict())]
    k = len(rep.projects)
    files.append(write_rows(
        out / "correlation.csv", ["row", "col", "correlation", "covariance"],
        [[rep.projects[i], rep.projects[j], rep.correlation[i, j], rep.covariance[i, j]]
         for i in range(k) for j in range(k)],
    ))
    col = {p: j for j, p in enumerate(rep.projects)}
    rows = []
    for e in rep.tail_table:
        pos = np.searchsorted(rep.replicate_index, e.replicates)
        for r, x in zip(e.replicates, rep.statistics[pos, col[e.project]]):
            rows.append([e.project, e.quantile, e.threshold, int(r), x])
    files.append(write_rows(out / "audit.csv", ["project", "quantile", "threshold", "replicate", "statistic"], rows))
    if not args.no_figures:
        from . import plotting

        plotting.plot_correlation(rep.correlation, rep.projects, out / "fig_correlation.png")
    _manifest(args, "risk", n_middle=ens.n_middle, n_inner=ens.n_inner,
              settings={"window": list(rep.window), "quantiles": quantiles, "mode": args.mode, **provenance}
              ).write(out, files)
    print("normal-score correlation:")
    for p, row in zip(rep.projects, rep.correlation):
        print(f"  {p:>12s} " + " ".join(f"{v:+.3f}" for v in row))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rops", description="Option pricing and risk for project cost schedules")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help="output directory"):
        p.add_argument("--plan", help="plan specification (JSON)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help=out_help)
        p.add_argument("--threads", type=int, default=int(os.environ.get("ROPS_THREADS", "1")),
                       help="worker cap (default: $ROPS_THREADS or 1); results do not depend on it")
        p.add_argument("--no-figures", action="store_true", help="write tables only")

    def shells(p):
        p.add_argument("--n-middle", type=int, default=200)
        p.add_argument("--n-inner", type=int, default=10)

    def orders(p):
        p.add_argument("--order-f", type=int, default=1)
        p.add_argument("--order-g", type=int, default=1)

    p = sub.add_parser("simulate", help="run the duration and cost shells")
    common(p)
    shells(p)
    p.add_argument("--bins", type=int, default=50)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit per-node drift and diffusion polynomials")
    common(p)
    shells(p)
    orders(p)
    p.add_argument("--ensemble", help="directory written by 'simulate'")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("price", help="price an option on plan cost with Greeks")
    common(p, out_help="option report path (JSON)")
    shells(p)
    orders(p)
    p.add_argument("--ensemble", help="directory written by 'simulate'")
    p.add_argument("--cpd", help="cpd.csv written by 'fit'")
    p.add_argument("--test-bachelier", action="store_true", help="f=0, g=1, S0=K=0, T=1 oracle case")
    p.add_argument("--steps", type=int, help="tree steps for --test-bachelier (default 500)")
    p.add_argument("--payoff", choices=("call", "put", "constant"), default="call")
    p.add_argument("--strike", type=float)
    p.add_argument("--constant", type=float, default=0.0, help="value of a constant payoff")
    p.add_argument("--exercise", choices=("european", "american"), default="european")
    p.add_argument("--rate", type=float, default=0.0)
    p.add_argument("--S0", type=float, default=0.0, help="cost already spent at t0")
    p.add_argument("--substeps", type=int, default=1, help="tree steps per grid node")
    p.add_argument("--convergence", default="1,2,4", help="step multipliers for the value-vs-N table")
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("optimize", help="anneal plan parameters")
    common(p)
    shells(p)
    p.add_argument("--objective", choices=("cost_over_T", "overrun_over_T", "custom"), default="cost_over_T")
    p.add_argument("--expr", help="custom objective over mean_cost, std_cost, p95_cost, initial_cost, overrun, horizon_T, option_value")
    p.add_argument("--test-quadratic", action="store_true", help="minimize (x-2)^2 on [-10, 10]")
    p.add_argument("--max-evals", type=int, default=2000)
    p.add_argument("--reanneal-every", type=int, default=100)
    p.add_argument("--multi-min-k", type=int, default=5)
    p.add_argument("--multi-min-tol", type=float, default=0.05)
    p.add_argument("--t0-param", type=float, default=1.0)
    p.add_argument("--t0-accept", type=float)
    p.add_argument("--c", type=float)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("risk", help="copula risk among projects")
    common(p)
    shells(p)
    p.add_argument("--ensemble", help="directory written by 'simulate'")
    p.add_argument("--window", help="node window a:b (default 1:N)")
    p.add_argument("--quantiles", default="0.95")
    p.add_argument("--mode", choices=("absolute", "relative"), default="absolute")
    p.add_argument("--per-node", action="store_true")
    p.set_defaults(func=cmd_risk)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
