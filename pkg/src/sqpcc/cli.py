"""Command-line front end: ``sqpcc solve``, ``sqpcc classify`` and ``sqpcc bench``.

Exit codes: 0 converged / success, 1 usage or input error, 2 maximum
iterations reached, 3 subproblem failure, 4 infeasible point (classify),
5 benchmark criteria failed.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import bench
from .analysis import (
    InfeasiblePointError,
    check_mpcc_licq,
    check_mpcc_ssosc,
    check_ulsc_pulsc,
    classify_stationarity,
    estimate_order,
    fit_contraction,
    stabilization_report,
)
from .expr import ExprDomainError, ExprSyntaxError
from .model import ModelSyntaxError, PrimalDualPoint, nlp_reformulation
from .qpcc import EnumerationCapError
from .registry import REGISTRY_SOURCES, get_problem, load_problem
from .solver import SolveOptions, SolveTrace, sqp_solve, sqpcc_solve
from .traceio import write_json, write_trace_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MAX_ITER = 2
EXIT_SUBPROBLEM = 3
EXIT_INFEASIBLE = 4
EXIT_CRITERIA = 5

STATUS_EXIT = {"converged": EXIT_OK, "max-iterations": EXIT_MAX_ITER, "subproblem-failure": EXIT_SUBPROBLEM}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()], float)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sqpcc", description="Full-step SQPCC for MPCCs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log warnings from the solvers")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    solve = sub.add_parser("solve", help="run SQPCC (or SQP on the NLP reformulation)")
    solve.add_argument("model", help="registry name or model file")
    solve.add_argument("--x0", type=_vector, help="start point, comma-separated")
    solve.add_argument("--hessian",
                       help="exact | exact-raw | perturbed | bfgs | gn | const:v1,v2,... "
                            "(default: exact for sqpcc, exact-raw for sqp)")
    solve.add_argument("--policy", default="min-obj", help="min-obj | warm | force:<G/H string>")
    solve.add_argument("--tol", type=float, default=1e-10)
    solve.add_argument("--max-iter", type=int, default=50)
    solve.add_argument("--activity-tol", type=float, default=1e-8)
    solve.add_argument("--method", choices=("sqpcc", "sqp"), default="sqpcc")
    solve.add_argument("--trace", metavar="PATH", help="write the iteration trace as CSV")
    solve.add_argument("--json", nargs="?", const="-", metavar="PATH",
                       help="write the JSON summary to PATH (standard output without PATH)")

    classify = sub.add_parser("classify", help="stationarity report for a point")
    classify.add_argument("model")
    classify.add_argument("--point", type=_vector, required=True)
    classify.add_argument("--tol", type=float, default=1e-8)

    bench_p = sub.add_parser("bench", help="run the benchmark suite and acceptance checks")
    bench_p.add_argument("--suite", required=True)
    bench_p.add_argument("--out", default="bench-out", help="output directory")
    bench_p.add_argument("--only", nargs="+", metavar="RUN", help="restrict to these named runs")
    return parser


# ---------------------------------------------------------------------------
# solve


def _reference(name: str, method: str, p):
    if name not in REGISTRY_SOURCES:
        return None
    ref = get_problem(name).reference
    if method == "sqp" and p.m > 0:
        return None  # the NLP reformulation has different multipliers
    return ref


def solve_summary(trace: SolveTrace, p, w_ref=None, reference: PrimalDualPoint | None = None,
                  tol: float = 1e-8) -> dict:
    """JSON-ready summary: status, final point, limit classification, order and stabilization."""
    fin = trace.final.z
    out = {
        "problem": trace.problem_name,
        "method": trace.method,
        "status": trace.status,
        "message": trace.message,
        "iterations": trace.iterations,
        "final": {"w": fin.w, "lambda": fin.lam, "mu": fin.mu, "xi": fin.xi, "nu": fin.nu,
                  "kkt_residual": trace.final.kkt_residual},
    }
    try:
        w_class = np.where(np.abs(fin.w) <= tol, 0.0, fin.w)
        rep = classify_stationarity(p, w_class, tol)
        out["limit_classification"] = rep.cls
        out["limit_s_stationary"] = rep.cls == "S"
    except InfeasiblePointError as exc:
        out["limit_classification"] = f"infeasible ({exc.constraint})"
    except EnumerationCapError as exc:
        out["limit_classification"] = str(exc)
    if w_ref is None and trace.converged:
        w_ref, out["error_reference"] = fin.w, "final iterate"
    elif w_ref is not None:
        out["error_reference"] = "known solution"
    if w_ref is not None:
        err = trace.primal_errors(w_ref)
        out["errors"] = err
        pos = err[err > 1e-13]
        if pos.size >= 4:
            out["order"] = estimate_order(pos).to_dict()
        else:
            out["order"] = None
        try:
            out["contraction"] = fit_contraction(trace.errors() if reference is not None else err).to_dict()
        except ValueError:
            out["contraction"] = None
    if reference is not None:
        try:
            out["stabilization"] = stabilization_report(trace, p, reference, tol).to_dict()
        except ValueError as exc:
            out["stabilization"] = str(exc)
    return out


def cmd_solve(args) -> int:
    p = load_problem(args.model)
    if args.x0 is not None:
        x0 = args.x0
    elif args.model in REGISTRY_SOURCES:
        x0 = np.array(get_problem(args.model).starts[0], float)
    else:
        x0 = np.zeros(p.n)
    if x0.size != p.n:
        raise UsageError(f"--x0 has {x0.size} entries, the model has {p.n} variables")
    ref = _reference(args.model, args.method, p)
    hessian = args.hessian or ("exact-raw" if args.method == "sqp" else "exact")
    opts = SolveOptions(tol=args.tol, max_iter=args.max_iter, activity_tol=args.activity_tol,
                        hessian=hessian, policy=args.policy, reference=ref)
    if args.method == "sqp":
        nlp = p.as_nlp() if p.m == 0 else nlp_reformulation(p)
        trace = sqp_solve(nlp, x0, opts)
    else:
        trace = sqpcc_solve(p, x0, opts)
    if args.trace:
        write_trace_csv(trace, args.trace)
    w_ref = get_problem(args.model).reference.w if args.model in REGISTRY_SOURCES else None
    summary = solve_summary(trace, p, w_ref, ref, args.activity_tol)
    if args.json == "-":
        sys.stdout.write(write_json(summary))
    elif args.json:
        write_json(summary, args.json)
    w = ", ".join(f"{v:.12g}" for v in trace.final.z.w)
    print(f"{trace.status} after {trace.iterations} iterations at w = ({w}); "
          f"limit class {summary.get('limit_classification')}", file=sys.stderr)
    if trace.message:
        print(trace.message, file=sys.stderr)
    return STATUS_EXIT[trace.status]


# ---------------------------------------------------------------------------
# classify


def classify_report(p, w, tol: float) -> dict:
    rep = classify_stationarity(p, w, tol)
    out = rep.to_dict()
    lic = check_mpcc_licq(p, w, tol)
    out["licq"] = {"holds": lic.holds, "rank": lic.rank, "columns": lic.columns}
    if rep.cls == "S":
        ss = check_mpcc_ssosc(p, rep.multipliers(w), tol)
        out["ssosc"] = ss.holds
        out["ssosc_reduced_min_eigenvalues"] = ss.reduced_min_eigenvalues
        u = check_ulsc_pulsc(rep, tol=tol)
        out.update(ulsc=u.ulsc, pulsc=u.pulsc, i00_plus=list(u.i00_plus), i00_zero=list(u.i00_zero))
    return out


def cmd_classify(args) -> int:
    p = load_problem(args.model)
    if args.point.size != p.n:
        raise UsageError(f"--point has {args.point.size} entries, the model has {p.n} variables")
    try:
        report = classify_report(p, args.point, args.tol)
    except InfeasiblePointError as exc:
        print(f"infeasible point: {exc} (constraint {exc.constraint})", file=sys.stderr)
        return EXIT_INFEASIBLE
    sys.stdout.write(write_json(report))
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    if args.suite != "paper":
        raise UsageError(f"unknown suite {args.suite!r}; the only suite is 'paper'")
    try:
        results, _ = bench.run_example_suite(args.out, args.only)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from exc
    for r in results:
        print(r.line())
    print(f"outputs written to {args.out}", file=sys.stderr)
    return EXIT_OK if all(r.passed for r in results) else EXIT_CRITERIA


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command is None:
            raise UsageError("a command is required: solve, classify or bench")
        handler = {"solve": cmd_solve, "classify": cmd_classify, "bench": cmd_bench}[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"sqpcc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelSyntaxError, ExprSyntaxError, ExprDomainError, OSError, ValueError) as exc:
        print(f"sqpcc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
