"""Print iteration tables for the registry problems under each Hessian variant.

Usage: python demos/iteration_tables.py [problem]
"""

import sys

from sqpcc import SolveOptions, get_problem, sqpcc_solve
from sqpcc.analysis import estimate_order


def show(name: str, hessian: str) -> None:
    entry = get_problem(name)
    x0 = entry.starts[0]
    trace = sqpcc_solve(entry.problem, x0, SolveOptions(hessian=hessian, reference=entry.reference, max_iter=200))
    err = trace.primal_errors(entry.reference.w)
    print(f"\n{name}, Hessian {hessian}, start {tuple(x0)}: {trace.status} after {trace.iterations} iterations")
    print(f"{'k':>3}  {'w':>28}  {'error':>10}  {'branch':>6}  candidates")
    for rec, e in zip(trace.records, err):
        w = ", ".join(f"{v:11.4e}" for v in rec.z.w)
        print(f"{rec.k:3d}  {w:>28}  {e:10.3e}  {rec.branch or '-':>6}  {rec.num_candidates}")
    pos = err[err > 1e-13]
    if pos.size >= 4:
        est = estimate_order(pos)
        rate = f", rate {est.rate:.3f}" if est.rate is not None else ""
        print(f"order: {est.classification}{rate}")


def main(argv):
    names = argv[1:] or ["example51", "leyffer", "example54"]
    for name in names:
        for hessian in ("exact", "bfgs", "perturbed"):
            show(name, hessian)


if __name__ == "__main__":
    main(sys.argv)
