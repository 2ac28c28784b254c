"""``isoblock`` command line: fitting, simulation, rate tables and graph demos.

Exit codes: 0 success, 1 usage or parse error, 2 capacity guard, 3 search
exhaustion.  Numeric report columns are written with 6 significant digits;
fitted fields keep full precision so they read back bit for bit.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CapacityError, InvalidGraphError, SearchExhausted
from .estimators import (
    EstimatorKind, block_estimate, block_witness, branch_values_at,
)
from .graph import (
    amend_graph, block_classes, block_members, enumerate_lower_sets, enumerate_upper_sets,
    generalized_max_min, lse_minimax_bruteforce, point_cloud_dag, random_dag, read_dag,
)
from .kernels import lattice_branches
from .lattice import (
    Field, LatticeShape, build_compressed_grid, read_field_csv, read_point_cloud_csv,
    write_field_csv,
)
from .lse import SolveOptions, lse_dag, lse_lattice, projection_certificate
from .rates import (
    RateQuery, block_upper_rate, critical_index, lower_rate_breakpoints, match_factor,
    minimax_lower_rate,
)
from .simulation import (
    EXPERIMENTS, TABLE1, ExperimentSpec, NoiseModel, monte_carlo, with_dims,
)

EXIT_OK, EXIT_USAGE, EXIT_CAPACITY, EXIT_EXHAUSTED = 0, 1, 2, 3
SIG = 6


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def fmt(x) -> str:
    """Fixed 6-significant-digit rendering for report CSVs."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, f".{SIG}g")
    return str(x)


def write_rows(path: Path, rows: list, columns: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c, "")) for c in columns])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def write_json(path: Path, payload) -> None:
    Path(path).write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def _kinds(text: str) -> list:
    try:
        kinds = [EstimatorKind.parse(k) for k in text.split(",") if k.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not kinds:
        raise UsageError("no estimators given")
    return kinds


def _dims(text: str) -> tuple:
    try:
        return LatticeShape.parse(text).dims
    except ValueError as exc:
        raise UsageError(f"bad dims {text!r}: {exc}") from None


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _solve_opts(args) -> SolveOptions:
    return SolveOptions(tol=args.tol, max_sweeps=getattr(args, "max_sweeps", None))


# -- fit ----------------------------------------------------------------------------


def _is_field_file(path: Path) -> bool:
    with open(path) as fh:
        return fh.read(5) == "dims="


def cmd_fit(args) -> int:
    src = Path(args.input)
    if not src.is_file():
        raise UsageError(f"no such input file: {src}")
    kinds = _kinds(args.estimators)
    out = _out_dir(args)
    opts = _solve_opts(args)
    diag = dict(input=str(src), estimators={}, warning=False)
    if _is_field_file(src):
        y = read_field_csv(src)
        diag["dims"] = list(y.dims)
        for kind in kinds:
            t0 = time.perf_counter()
            info = {}
            if kind is EstimatorKind.Lse:
                res = lse_lattice(y, opts)
                fit = res.fit
                cert = projection_certificate(y, fit)
                info.update(converged=res.converged, sweeps=res.sweeps, change=res.change,
                            certificate=cert._asdict())
                diag["warning"] |= not res.converged
            else:
                fit = block_estimate(y, kind)
            info["runtime_s"] = time.perf_counter() - t0
            write_field_csv(out / f"fit_{kind.value}.csv", fit)
            diag["estimators"][kind.value] = info
    else:
        cloud = read_point_cloud_csv(src)
        diag["n_points"], diag["d"] = cloud.n, cloud.d
        columns = [f"x{j + 1}" for j in range(cloud.d)] + ["y"]
        table = np.column_stack([cloud.points, cloud.responses])
        for kind in kinds:
            t0 = time.perf_counter()
            info = {}
            if kind is EstimatorKind.Lse:
                dag, vertex = point_cloud_dag(cloud.points, cloud.responses)
                res = lse_dag(dag, opts)
                est = res.fit[vertex]
                info.update(converged=res.converged, sweeps=res.sweeps, change=res.change,
                            certificate=projection_certificate(dag, res.fit)._asdict())
                diag["warning"] |= not res.converged
            else:
                grid = build_compressed_grid(cloud)
                pairs = np.array([branch_values_at(p, grid) for p in cloud.points]).reshape(-1, 2)
                est = {EstimatorKind.MaxMin: pairs[:, 0], EstimatorKind.MinMax: pairs[:, 1]}.get(
                    kind, 0.5 * (pairs[:, 0] + pairs[:, 1]))
            info["runtime_s"] = time.perf_counter() - t0
            table = np.column_stack([table, est])
            columns.append(kind.value)
            diag["estimators"][kind.value] = info
        with open(out / "fit_points.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            w.writerows([[repr(float(v)) for v in row] for row in table])
    write_json(out / "fit_diagnostics.json", diag)
    if diag["warning"]:
        print("warning: least-squares solver did not converge", file=sys.stderr)
    return EXIT_OK


# -- simulate / reproduce -----------------------------------------------------------

SIM_COLUMNS = ["experiment", "est", "mean", "sd", "diff_mean", "diff_sd", "diff_se", "p", "p_table"]


def _spec(args, exp_id: str) -> ExperimentSpec:
    spec = ExperimentSpec.default(exp_id)
    if getattr(args, "dims", None):
        spec = with_dims(spec, _dims(args.dims))
    return spec


def _run(args, exp_id, kinds):
    return monte_carlo(
        _spec(args, exp_id), NoiseModel(args.sigma), kinds=[k.value for k in kinds], R=args.reps,
        seed=args.seed, jobs=args.jobs, solve=_solve_opts(args),
    )


def cmd_simulate(args) -> int:
    if args.experiment not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {args.experiment!r}")
    if args.reps < 2:
        raise UsageError("--reps must be at least 2")
    kinds = _kinds(args.estimators)
    out = _out_dir(args)
    report = _run(args, args.experiment, kinds)
    write_json(out / f"report_{args.experiment}.json", report.to_dict())
    paired = report.test().as_dict() if len(kinds) >= 2 else {}
    rows = []
    for i, kind in enumerate(report.kinds):
        row = dict(experiment=report.experiment, est=kind, mean=report.means[i], sd=report.sds[i])
        if paired:
            row.update(diff_mean=paired["mean"], diff_sd=paired["sd"], diff_se=paired["se"],
                       p=paired["p"], p_table=paired["p_table"])
        rows.append(row)
    if args.format == "csv":
        write_rows(out / f"simulate_{args.experiment}.csv", rows, SIM_COLUMNS)
    else:
        write_json(out / f"simulate_{args.experiment}.json", rows)
    if report.converged.size and not report.converged.all():
        print(f"warning: {int((~report.converged).sum())} replications did not converge",
              file=sys.stderr)
    return EXIT_OK


REPRO_COLUMNS = [
    "experiment", "lse_mean", "lse_sd", "block_mean", "block_sd", "diff_mean", "diff_sd",
    "diff_se", "p", "p_table", "ref_lse_mean", "ref_block_mean", "ref_diff_mean", "ref_p",
    "delta_lse", "delta_block", "sign_match", "significance_match",
]


def reproduce_row(report) -> dict:
    test = report.test()
    ref = TABLE1[report.experiment]
    row = dict(
        experiment=report.experiment,
        lse_mean=report.means[0], lse_sd=report.sds[0],
        block_mean=report.means[1], block_sd=report.sds[1],
        diff_mean=test.mean, diff_sd=test.sd, diff_se=test.se, p=test.p, p_table=test.p_table,
        ref_lse_mean=ref["lse_mean"], ref_block_mean=ref["block_mean"],
        ref_diff_mean=ref["diff_mean"], ref_p=ref["p"],
        delta_lse=report.means[0] - ref["lse_mean"],
        delta_block=report.means[1] - ref["block_mean"],
        sign_match=bool(np.sign(test.mean) == np.sign(ref["diff_mean"])),
        significance_match=bool((test.p_table < 0.05) == (ref["p"] < 0.05)),
    )
    return row


def cmd_reproduce(args) -> int:
    if args.reps < 100:
        raise UsageError("reproduce needs --reps >= 100")
    ids = args.experiment.split(",") if args.experiment else list(EXPERIMENTS)
    for e in ids:
        if e not in EXPERIMENTS:
            raise UsageError(f"unknown experiment {e!r}")
    out = _out_dir(args)
    rows, reports = [], {}
    kinds = [EstimatorKind.Lse, EstimatorKind.MaxMin]
    for e in ids:
        report = _run(args, e, kinds)
        reports[e] = report.to_dict(include_losses=False)
        rows.append(reproduce_row(report))
        print(f"{e}: lse {report.means[0]:.4f} block {report.means[1]:.4f} "
              f"({report.runtime:.1f}s)", file=sys.stderr)
    if args.format == "csv":
        write_rows(out / "table1.csv", rows, REPRO_COLUMNS)
    else:
        write_json(out / "table1.json", rows)
    write_json(out / "table1_reports.json", reports)
    return EXIT_OK


# -- rates --------------------------------------------------------------------------

RATE_COLUMNS = ["q", "dims", "delta_star", "lower", "upper", "regime", "lambda"]


def _delta_grid(rq: RateQuery, points: int) -> np.ndarray:
    bps = lower_rate_breakpoints(rq)
    lo, hi = min(bps) / 10, max(bps) * 10
    return np.geomspace(lo, hi, points)


def cmd_rates(args) -> int:
    dims = _dims(args.dims)
    out = _out_dir(args)
    rows = []
    for q in args.q:
        probe = RateQuery(q, dims, 1.0, args.sigma)
        if args.delta:
            deltas = [float(x) for x in args.delta.split(",")]
        else:
            deltas = _delta_grid(probe, args.points)
        for D in deltas:
            rq = RateQuery(q, dims, D, args.sigma)
            lo = minimax_lower_rate(rq)
            rows.append(dict(
                q=q, dims="x".join(map(str, rq.dims)), delta_star=D, lower=lo.value,
                upper=block_upper_rate(rq).value, regime=lo.regime, **{"lambda": match_factor(rq)},
            ))
        print(f"q={q}: s_q = {critical_index(q, len(dims))}", file=sys.stderr)
    if args.format == "csv":
        write_rows(out / "rates.csv", rows, RATE_COLUMNS)
    else:
        write_json(out / "rates.json", rows)
    return EXIT_OK


# -- graph demo ---------------------------------------------------------------------

GRAPH_COLUMNS = ["vertex", "n_obs", "mean", "lse_bruteforce", "lse_dykstra", "maxmin", "minmax"]


def cmd_graph_demo(args) -> int:
    if args.graph:
        dag = read_dag(args.graph)
    else:
        rng = np.random.default_rng(args.seed)
        dag = random_dag(args.vertices, rng)
    out = _out_dir(args)
    brute = lse_minimax_bruteforce(dag)
    fit = lse_dag(dag, _solve_opts(args)).fit
    up, lo = block_classes(dag)
    maxmin, minmax = generalized_max_min(dag, up, lo, validate=False)
    counts, sums = dag.counts(), dag.sums()
    rows = []
    for v in range(dag.n_vertices):
        rows.append(dict(
            vertex=v + 1, n_obs=int(counts[v]),
            mean=sums[v] / counts[v] if counts[v] else math.nan,
            lse_bruteforce=brute[v], lse_dykstra=fit[v], maxmin=maxmin[v], minmax=minmax[v],
        ))
    # amendment: proper upper and lower sets sharing the most design points
    full = (1 << dag.n_vertices) - 1
    uppers = enumerate_upper_sets(dag)
    lowers = enumerate_lower_sets(dag)
    design = sum(1 << v for v in dag.design_vertices())
    pairs = [(u, l) for u in uppers for l in lowers if u & l & design and full not in (u, l)]
    pairs = pairs or [(full, full)]
    u, l = max(pairs, key=lambda p: (bin(p[0] & p[1]).count("1"), -p[0], -p[1]))
    amended = amend_graph(dag, [u], [l])
    inside = block_members(amended.dag, amended.upper_nodes[0], amended.lower_nodes[0])
    summary = dict(
        n_vertices=dag.n_vertices, edges=[[a + 1, b + 1] for a, b in dag.edges],
        n_upper_sets=len(uppers), n_lower_sets=len(lowers),
        max_abs_lse_gap=float(np.nanmax(np.abs(brute - fit))) if design else 0.0,
        amendment=dict(
            upper_set=sorted(v + 1 for v in range(dag.n_vertices) if (u >> v) & 1),
            lower_set=sorted(v + 1 for v in range(dag.n_vertices) if (l >> v) & 1),
            block_design_points=sorted(v + 1 for v in range(dag.n_vertices) if (inside & design) >> v & 1),
            matches_intersection=(inside & design) == (u & l & design),
        ),
    )
    if args.format == "csv":
        write_rows(out / "graph_demo.csv", rows, GRAPH_COLUMNS)
    else:
        summary["vertices"] = rows
    write_json(out / "graph_demo.json", summary)
    return EXIT_OK


# -- counterexample search ----------------------------------------------------------


def search_counterexample(dims, budget: int, seed: int, gap: float = 1e-9):
    """Gaussian fields until max-min and min-max part somewhere; returns
    ``(draw, field, site)`` or raises :class:`SearchExhausted`."""
    rng = np.random.default_rng(seed)
    for draw in range(1, budget + 1):
        y = rng.standard_normal(dims)
        mm, xm = lattice_branches(y, which="both")
        sep = np.abs(mm - xm)
        if sep.max() > gap:
            site = np.unravel_index(int(np.argmax(sep)), dims)
            return draw, Field(dims, y), tuple(int(i) for i in site)
    raise SearchExhausted(f"no separating field in {budget} draws on {dims}")


def cmd_counterexample(args) -> int:
    dims = _dims(args.dims)
    if args.budget < 1:
        raise UsageError("--budget must be positive")
    out = _out_dir(args)
    draw, y, site = search_counterexample(dims, args.budget, args.seed)
    wit = block_witness(y, site)
    shape = LatticeShape(dims)
    ext = lambda idx: list(shape.to_external(idx))  # noqa: E731
    payload = dict(
        dims=list(dims), seed=args.seed, draw=draw, site=ext(site),
        maxmin=wit["maxmin"], minmax=wit["minmax"],
        maxmin_block=[ext(c) for c in wit["maxmin_block"]],
        minmax_block=[ext(c) for c in wit["minmax_block"]],
        field_file="witness_field.csv",
    )
    write_field_csv(out / "witness_field.csv", y)
    write_json(out / "witness.json", payload)
    print(f"witness after {draw} draws at {ext(site)}: max-min {fmt(wit['maxmin'])} "
          f"vs min-max {fmt(wit['minmax'])}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out-dir", default=".", help="directory for output files")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tol", type=float, default=1e-10, help="LSE stopping tolerance")
    common.add_argument("--format", choices=("csv", "json"), default="csv")

    p = _Parser(prog="isoblock", description="Block and least-squares isotonic regression.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", parents=[common], help="fit estimators to a field or point cloud")
    f.add_argument("input", help="field CSV (dims= header) or point cloud CSV")
    f.add_argument("--estimators", default="lse,maxmin,minmax,mid")
    f.add_argument("--max-sweeps", type=int, default=None)

    mc = _Parser(add_help=False)
    mc.add_argument("--reps", type=int, default=500)
    mc.add_argument("--jobs", type=int, default=1)
    mc.add_argument("--sigma", type=float, default=1.0)
    mc.add_argument("--dims", default=None, help="override lattice sides, e.g. 10x10x10")

    s = sub.add_parser("simulate", parents=[common, mc], help="Monte Carlo risk for one experiment")
    s.add_argument("--experiment", required=True, choices=EXPERIMENTS)
    s.add_argument("--estimators", default="lse,maxmin")

    r = sub.add_parser("reproduce", parents=[common, mc], help="all experiments, table layout")
    r.add_argument("--experiment", default=None, help="comma list; default all")

    rt = sub.add_parser("rates", parents=[common], help="lower and upper rate curves")
    rt.add_argument("--q", type=float, nargs="+", default=[2.0])
    rt.add_argument("--dims", default="50x20")
    rt.add_argument("--delta", default=None, help="comma list of Delta* values")
    rt.add_argument("--points", type=int, default=30, help="grid size when --delta is absent")
    rt.add_argument("--sigma", type=float, default=1.0)

    g = sub.add_parser("graph-demo", parents=[common], help="brute force vs solver on a DAG")
    g.add_argument("--graph", default=None, help="graph text file; random DAG when absent")
    g.add_argument("--vertices", type=int, default=7)

    c = sub.add_parser("counterexample-search", parents=[common],
                       help="find a field where max-min and min-max differ")
    c.add_argument("--dims", default="4x2")
    c.add_argument("--budget", type=int, default=100_000)
    return p


COMMANDS = {
    "fit": cmd_fit, "simulate": cmd_simulate, "reproduce": cmd_reproduce, "rates": cmd_rates,
    "graph-demo": cmd_graph_demo, "counterexample-search": cmd_counterexample,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CapacityError as exc:
        print(f"isoblock: capacity: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except SearchExhausted as exc:
        print(f"isoblock: {exc}", file=sys.stderr)
        return EXIT_EXHAUSTED
    except (UsageError, InvalidGraphError, ValueError, OSError) as exc:
        print(f"isoblock: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
