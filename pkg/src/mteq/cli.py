"""Command-line surface.

Subcommands: ``solve`` one scheme to equilibrium plus metrics, ``sweep`` a
price grid, ``pareto`` post-process a results directory, ``simulate`` Monte
Carlo on a stored solution, ``generate`` synthetic instances, ``validate``
an instance file.  Exit codes: 0 success, 1 validation/usage error,
2 solver non-convergence (outputs are still written).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import synthgen
from .equilibrium import (
    SolverOptions,
    solve_equilibrium,
    solution_from_dict,
    solution_to_dict,
)
from .experiments import (
    ResultSchemaError,
    SweepConfig,
    load_results,
    run_sweep,
    write_frontier_csv,
)
from .instance import InstanceError, assign_areas, load_instance, save_instance
from .metrics import (baseline_trip_stats, compute_metrics, simulate_trips,
                      write_metrics_csvs)
from .network import NetworkError, strongly_connected
from .pricing import PER_AREA, PER_STRATUM, UNIFORM, SchemeSpec, expand_scheme

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NOT_CONVERGED = 2


def _parse_rates(text: str) -> dict[str, float]:
    out = {}
    for part in text.split(","):
        if "=" not in part:
            raise InstanceError(f"bad rate entry {part!r}; expected name=value")
        name, val = part.split("=", 1)
        out[name.strip()] = float(val)
    return out


def _scheme_from_args(args) -> SchemeSpec:
    if args.scheme == "uniform":
        if args.rate is None:
            raise InstanceError("--scheme uniform needs --rate")
        return SchemeSpec(family=UNIFORM, rate=args.rate)
    if args.rates is None:
        raise InstanceError(f"--scheme {args.scheme} needs --rates name=value,...")
    rates = tuple(sorted(_parse_rates(args.rates).items()))
    if args.scheme == "stratum":
        return SchemeSpec(family=PER_STRATUM, stratum_rates=rates)
    return SchemeSpec(family=PER_AREA, area_rates=rates)


def _solver_from_args(args, base: SolverOptions) -> SolverOptions:
    updates = {}
    if args.tol_inner is not None:
        updates["inner_tol"] = args.tol_inner
    if args.tol_outer is not None:
        updates["outer_tol"] = args.tol_outer
    if args.max_inner is not None:
        updates["inner_max_iters"] = args.max_inner
    if args.max_outer is not None:
        updates["outer_max_iters"] = args.max_outer
    return replace(base, **updates) if updates else base


def _area_shape(text: str) -> tuple[int, int]:
    rows, _, cols = text.partition("x")
    return int(rows), int(cols)


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _cmd_solve(args) -> int:
    instance = load_instance(args.instance)
    solver = _solver_from_args(args, instance.solver)
    scheme = _scheme_from_args(args)
    areas = None
    if scheme.family == PER_AREA:
        areas = assign_areas(instance, *_area_shape(args.areas))
    prices = expand_scheme(scheme, instance, areas)

    log_fn = None
    if args.verbose:
        log_fn = lambda rec: print(json.dumps(rec), file=sys.stderr)

    sol0 = solve_equilibrium(
        instance, np.zeros_like(prices.rates), solver,
        workers=args.workers, log_fn=log_fn)
    sol = solve_equilibrium(instance, prices, solver,
                            workers=args.workers, log_fn=log_fn)
    report = compute_metrics(instance, sol, baseline_trip_stats(instance, sol0),
                             prices, scheme_id=scheme.scheme_id)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "solution.json", solution_to_dict(sol, instance.network))
    _write_json(out / "metrics.json", report.to_dict())
    write_metrics_csvs(report, out)
    print(f"scheme {scheme.scheme_id}: converged={sol.converged} "
          f"residual={sol.outer_residual:.6g} -> {out}")
    return EXIT_OK if sol.converged and sol0.converged else EXIT_NOT_CONVERGED


def _parse_grid(text: str):
    lo, hi, step = (float(v) for v in text.split(":"))
    return lo, hi, step


def _cmd_sweep(args) -> int:
    if args.config is not None:
        config = SweepConfig.from_file(args.config)
    else:
        if args.instance is None or args.scheme is None or args.grid is None:
            raise InstanceError("sweep needs --config, or --instance with --scheme and --grid")
        from .experiments import SweepConfig as SC
        from .pricing import PriceGrid
        family = {"uniform": UNIFORM, "stratum": PER_STRATUM, "area": PER_AREA}[args.scheme]
        lo, hi, step = _parse_grid(args.grid)
        rows_, cols_ = _area_shape(args.areas)
        config = SC(instance=args.instance,
                    grid=PriceGrid(family=family, lo=lo, hi=hi, step=step),
                    output=args.out or "sweep_out",
                    area_rows=rows_, area_cols=cols_,
                    seed=args.seed)
    if args.workers is not None:
        config.workers = args.workers
    if args.out is not None:
        config.output = args.out
    rows = run_sweep(config)
    bad = [r for r in rows if r.error]
    unconverged = [r for r in rows if not r.error and not r.converged]
    print(f"sweep: {len(rows)} schemes -> {config.output} "
          f"({len(bad)} failed, {len(unconverged)} not converged)")
    return EXIT_NOT_CONVERGED if (bad or unconverged) else EXIT_OK


def _cmd_pareto(args) -> int:
    rows = load_results(args.results)
    if not rows:
        print("no results found", file=sys.stderr)
        return EXIT_INVALID
    path = write_frontier_csv(rows, args.x, args.y, args.results)
    print(f"frontier ({args.x} vs {args.y}): {path}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    instance = load_instance(args.instance)
    with open(args.solution) as fh:
        sol = solution_from_dict(json.load(fh), instance.network)
    report = simulate_trips(instance, sol, runs_per_unit=args.runs, seed=args.seed,
                            keep_paths=args.keep_paths)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "seed": report.seed,
        "runs_per_unit": report.runs_per_unit,
        "step_cap": report.step_cap,
        "truncated": report.truncated_count,
        "per_stratum": {
            s: {
                "trips": len(report.by_stratum(s)),
                "started_proportion": report.started_proportion(s),
                "mean_time": report.mean_time(s),
                "primary_share": report.primary_share(s),
                "avg_speed": report.avg_speed(s),
            }
            for s in instance.stratum_names
        },
    }
    _write_json(out / "simulation.json", doc)
    if args.keep_paths:
        trips = [
            {"stratum": t.stratum, "origin": t.origin, "destination": t.destination,
             "started": t.started, "arcs": t.arcs, "time": t.time, "money": t.money,
             "distance": t.distance, "truncated": t.truncated}
            for t in report.trips
        ]
        _write_json(out / "trips.json", trips)
    print(f"simulated {len(report.trips)} trips -> {out}")
    return EXIT_OK


def _cmd_generate(args) -> int:
    if args.kind == "single-od":
        instance = synthgen.gen_single_od()
    else:
        if args.spec is not None:
            with open(args.spec) as fh:
                spec = synthgen.GridGenSpec.from_dict(json.load(fh))
        else:
            spec = synthgen.GridGenSpec(rows=args.rows, cols=args.cols, seed=args.seed)
        instance = synthgen.gen_grid(spec)
    save_instance(instance, args.out)
    net = instance.network
    print(f"wrote {args.out}: {net.n_nodes} nodes, {net.n_arcs} arcs "
          f"({int(net.is_primary.sum())} primary), {len(instance.demand)} demand entries")
    return EXIT_OK


def _cmd_validate(args) -> int:
    instance = load_instance(args.instance)
    net = instance.network
    problems = []
    if not strongly_connected(net):
        problems.append("network is not strongly connected (run extract_core)")
    if int(net.out_degree.min()) < 1:
        problems.append("some node has no outgoing arc")
    if problems:
        for p in problems:
            print(f"INVALID: {p}", file=sys.stderr)
        return EXIT_INVALID
    print(f"ok: {net.n_nodes} nodes, {net.n_arcs} arcs, "
          f"{len(instance.strata)} strata, {len(instance.demand)} demand entries")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mteq",
                                description="Markovian traffic equilibria and congestion pricing")
    sub = p.add_subparsers(dest="command", required=True)

    sv = sub.add_parser("solve", help="solve one pricing scheme to equilibrium")
    sv.add_argument("--instance", required=True)
    sv.add_argument("--scheme", choices=["uniform", "stratum", "area"], required=True)
    sv.add_argument("--rate", type=float, help="uniform rate (money/km)")
    sv.add_argument("--rates", help="per-stratum or per-area rates: name=value,...")
    sv.add_argument("--areas", default="2x2", help="area grid RxC for --scheme area")
    sv.add_argument("--out", default="solve_out")
    sv.add_argument("--seed", type=int, default=0)
    sv.add_argument("--workers", type=int, default=1)
    sv.add_argument("--tol-inner", type=float, dest="tol_inner")
    sv.add_argument("--tol-outer", type=float, dest="tol_outer")
    sv.add_argument("--max-inner", type=int, dest="max_inner")
    sv.add_argument("--max-outer", type=int, dest="max_outer")
    sv.add_argument("--verbose", action="store_true",
                    help="stream iteration log as JSON lines on stderr")
    sv.set_defaults(fn=_cmd_solve)

    sw = sub.add_parser("sweep", help="grid-search pricing schemes")
    sw.add_argument("--config", help="sweep config JSON")
    sw.add_argument("--instance", help="instance path (config-free mode)")
    sw.add_argument("--scheme", choices=["uniform", "stratum", "area"])
    sw.add_argument("--grid", help="price grid LO:HI:STEP")
    sw.add_argument("--areas", default="2x2")
    sw.add_argument("--seed", type=int, default=0)
    sw.add_argument("--workers", type=int)
    sw.add_argument("--out")
    sw.set_defaults(fn=_cmd_sweep)

    pa = sub.add_parser("pareto", help="extract a Pareto frontier from sweep results")
    pa.add_argument("--results", required=True)
    pa.add_argument("--x", required=True, help="objective column, e.g. total_welfare")
    pa.add_argument("--y", required=True, help="objective column, e.g. welfare:low")
    pa.set_defaults(fn=_cmd_pareto)

    si = sub.add_parser("simulate", help="Monte Carlo trips on a stored solution")
    si.add_argument("--instance", required=True)
    si.add_argument("--solution", required=True, help="solution.json from solve")
    si.add_argument("--runs", type=int, default=10, help="runs per demand unit")
    si.add_argument("--seed", type=int, default=0)
    si.add_argument("--out", default="simulate_out")
    si.add_argument("--keep-paths", action="store_true", dest="keep_paths")
    si.set_defaults(fn=_cmd_simulate)

    ge = sub.add_parser("generate", help="emit a synthetic instance")
    ge.add_argument("kind", choices=["single-od", "grid"])
    ge.add_argument("--out", required=True)
    ge.add_argument("--rows", type=int, default=10)
    ge.add_argument("--cols", type=int, default=10)
    ge.add_argument("--seed", type=int, default=0)
    ge.add_argument("--spec", help="grid spec JSON file (overrides flags)")
    ge.set_defaults(fn=_cmd_generate)

    va = sub.add_parser("validate", help="check an instance file")
    va.add_argument("--instance", required=True)
    va.set_defaults(fn=_cmd_validate)
    return p


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INVALID if e.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except (InstanceError, NetworkError, ResultSchemaError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
