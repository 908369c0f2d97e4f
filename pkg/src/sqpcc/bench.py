"""Benchmark suite: named runs on the registry problems and the acceptance checks over them."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .analysis import (
    check_ulsc_pulsc,
    classify_stationarity,
    estimate_order,
    fit_contraction,
    stabilization_report,
)
from .denseqp import QpData, solve_qp
from .model import complementarity_partition, nlp_reformulation
from .oracles import central_gradient, central_hessian, enumerate_qp, enumerate_qpcc
from .qpcc import QpccData, solve_qpcc_enumerate
from .registry import get_problem, problem_names
from .solver import SolveOptions, SolveTrace, sqp_solve, sqpcc_solve
from .traceio import path_data, plot_data, trace_to_csv, write_json, write_text_atomic

__all__ = [
    "BenchRun",
    "CriterionResult",
    "BenchContext",
    "NAMED_RUNS",
    "grid_runs",
    "all_runs",
    "CRITERIA",
    "run_criteria",
    "run_example_suite",
    "random_qp",
    "random_qpcc",
    "example51_discrepancy",
]

MATCH_TOL = 1e-12


@dataclass(frozen=True)
class BenchRun:
    name: str
    problem: str
    x0: tuple[float, ...]
    method: str = "sqpcc"  # sqpcc | sqp
    hessian: str = "exact"
    policy: str = "min-obj"
    max_iter: int = 50
    use_reference: bool = True

    def execute(self) -> tuple[SolveTrace, float]:
        entry = get_problem(self.problem)
        ref = entry.reference if self.use_reference else None
        opts = SolveOptions(max_iter=self.max_iter, hessian=self.hessian, policy=self.policy, reference=ref)
        start = time.perf_counter()
        if self.method == "sqp":
            nlp = entry.nlp if entry.is_nlp else nlp_reformulation(entry.problem)
            trace = sqp_solve(nlp, self.x0, opts)
        else:
            trace = sqpcc_solve(entry.problem, self.x0, opts)
        return trace, time.perf_counter() - start


NAMED_RUNS = {
    r.name: r
    for r in (
        BenchRun("example51-exact", "example51", (2.0, 0.0), max_iter=200),
        BenchRun("example51-bfgs", "example51", (2.0, 0.0), hessian="bfgs", max_iter=200),
        BenchRun("example51-perturbed", "example51", (2.0, 0.0), hessian="perturbed", max_iter=200),
        BenchRun("example51-const", "example51", (2.0, 0.0), hessian="const:5,10", max_iter=200),
        BenchRun("leyffer-sqp", "leyffer", (0.0, 2.0), method="sqp", hessian="exact-raw", use_reference=False),
        BenchRun("leyffer-sqpcc", "leyffer", (0.0, 2.0)),
        BenchRun("leyffer-spurious", "leyffer", (0.0, 0.5), policy="force:G"),
        BenchRun("sqp-weak", "sqp-weak", (0.4,), method="sqp"),
        BenchRun("sqp-strict", "sqp-strict", (0.4,), method="sqp"),
        BenchRun("example54-a", "example54", (0.3, 0.0)),
        BenchRun("example54-b", "example54", (0.0, 0.3)),
    )
}

GRID_HESSIANS = ("exact", "exact-raw", "perturbed", "bfgs")
GRID_POLICIES = ("min-obj", "warm")


def grid_runs() -> list[BenchRun]:
    """Every MPCC registry problem and start under each Hessian variant and selection policy."""
    runs = []
    for name in problem_names():
        entry = get_problem(name)
        if entry.is_nlp:
            continue
        for j, x0 in enumerate(entry.starts):
            for hess in GRID_HESSIANS:
                for pol in GRID_POLICIES:
                    runs.append(BenchRun(f"grid-{name}-x{j}-{hess}-{pol}", name, tuple(x0), hessian=hess,
                                         policy=pol, max_iter=200))
    return runs


def all_runs() -> dict[str, BenchRun]:
    runs = dict(NAMED_RUNS)
    runs.update({r.name: r for r in grid_runs()})
    return runs


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] criterion {self.number}: {self.title} -- {self.detail}"


class BenchContext:
    """Runs benchmark solves on demand and caches the traces."""

    def __init__(self, runs: dict[str, BenchRun] | None = None):
        self.runs = runs if runs is not None else all_runs()
        self.traces: dict[str, SolveTrace] = {}
        self.times: dict[str, float] = {}

    def trace(self, name: str) -> SolveTrace:
        if name not in self.traces:
            self.traces[name], self.times[name] = self.runs[name].execute()
        return self.traces[name]


def _primal_errors(trace: SolveTrace, w_ref) -> np.ndarray:
    return trace.primal_errors(w_ref)


def _positive(errors) -> np.ndarray:
    e = np.asarray(errors, float)
    return e[e > 1e-13]


# ---------------------------------------------------------------------------
# criteria


def criterion_1(ctx: BenchContext) -> CriterionResult:
    t = ctx.trace("example51-exact")
    err = _primal_errors(t, (0.0, 1.0))
    est = estimate_order(_positive(err))
    turn = next((r.k for r in t.records if abs(r.z.w[1]) > 1e-12), None)
    axis = [r.k for r in t.records if turn is not None and r.k < turn]
    checks = {
        "converged": t.converged,
        "error<=1e-10": err[-1] <= 1e-10,
        "iterations<=15": t.iterations <= 15,
        "quadratic": est.classification == "quadratic",
        "axis iterates before turn": turn is not None and len(axis) >= 2,
        "runtime<1s": ctx.times["example51-exact"] < 1.0,
    }
    detail = (f"{t.iterations} iterations, final error {err[-1]:.3g}, order {est.classification}, "
              f"{len(axis)} iterates on w2=0 before the turn, {ctx.times['example51-exact']:.3f} s; "
              + _failed(checks))
    return CriterionResult(1, "example51 exact Hessian", all(checks.values()), detail)


def _failed(checks: dict) -> str:
    bad = [k for k, v in checks.items() if not v]
    return "all checks hold" if not bad else "failed: " + ", ".join(bad)


def criterion_2(ctx: BenchContext) -> CriterionResult:
    out = {}
    for variant in ("bfgs", "perturbed", "const"):
        t = ctx.trace(f"example51-{variant}")
        err = _primal_errors(t, (0.0, 1.0))
        out[variant] = (t, estimate_order(_positive(err)), fit_contraction(err))
    checks = {
        "bfgs superlinear": out["bfgs"][1].classification == "superlinear",
        "perturbed linear": out["perturbed"][1].classification == "linear",
        "const linear": out["const"][1].classification == "linear",
        "alpha const > alpha perturbed": out["const"][2].alpha > out["perturbed"][2].alpha,
    }
    parts = [f"{v}: {o[1].classification} ({o[0].iterations} it, fitted alpha {o[2].alpha:.3g})" for v, o in out.items()]
    tail = [round(row[3], 3) for row in out["bfgs"][1].table if row[3] is not None][-4:]
    detail = "; ".join(parts) + f"; bfgs tail e_(k+1)/e_k^2 {tail}; " + _failed(checks)
    return CriterionResult(2, "example51 Hessian variants", all(checks.values()), detail)


def criterion_3(ctx: BenchContext) -> CriterionResult:
    base = ctx.trace("leyffer-sqp")
    w_base = base.final.z.w
    p = get_problem("leyffer").problem
    rep = classify_stationarity(p, np.where(np.abs(w_base) <= 1e-8, 0.0, w_base))
    t = ctx.trace("leyffer-sqpcc")
    first_h = next((r.k for r in t.records if r.branch == "H"), None)
    err = float(np.max(np.abs(t.final.z.w - np.array([1.0, 0.0]))))
    checks = {
        "baseline within 1e-8 of (0,0)": float(np.max(np.abs(w_base))) <= 1e-8,
        "baseline limit class M": rep.cls == "M",
        "sqpcc converged": t.converged,
        "sqpcc within 1e-10 of (1,0)": err <= 1e-10,
        "one iteration after first H step": first_h is not None and t.iterations - (first_h + 1) == 1,
    }
    detail = (f"SQP ends at {w_base.tolist()} ({base.status}, class {rep.cls}); SQPCC {t.iterations} it to "
              f"{t.final.z.w.tolist()}, first H step at k={first_h}; " + _failed(checks))
    return CriterionResult(3, "Leyffer SQP baseline vs SQPCC", all(checks.values()), detail)


def leyffer_forced_map(w2: float) -> float:
    return 3.0 * w2 * w2 / (6.0 * w2 + 2.0)


def criterion_4(ctx: BenchContext) -> CriterionResult:
    t = ctx.trace("leyffer-spurious")
    good = 0
    worst = 0.0
    for a, b in zip(t.records, t.records[1:]):
        dev = max(abs(b.z.w[1] - leyffer_forced_map(a.z.w[1])), abs(b.z.w[0]))
        if dev > MATCH_TOL or not a.s_stationary:
            break
        worst = max(worst, dev)
        good += 1
    detail = f"{good} consecutive steps on the map with S-stationary subproblem points (max deviation {worst:.2g})"
    return CriterionResult(4, "Leyffer forced G-branch spurious sequence", good >= 6, detail)


def sqp_weak_map(w: float) -> float:
    return 4.0 * w ** 3 / (6.0 * w * w + 1.0)


def criterion_5(ctx: BenchContext) -> CriterionResult:
    t = ctx.trace("sqp-weak")
    worst = max((abs(b.z.w[0] - sqp_weak_map(a.z.w[0])) for a, b in zip(t.records, t.records[1:])), default=0.0)
    empty = all(len(r.active) == 0 for r in t.records)
    strict = ctx.trace("sqp-strict")
    entry = get_problem("sqp-strict")
    stab = stabilization_report(strict, entry.problem, entry.reference)
    ident = stab.inequality_identification.get(0)
    checks = {
        "weak map to 1e-12": worst <= MATCH_TOL and t.iterations >= 1,
        "weak active set empty": empty,
        "strict finite identification": isinstance(ident, int),
    }
    detail = (f"weak: {t.iterations} steps, max map deviation {worst:.2g}, active sets empty={empty}; "
              f"strict: constraint identified from k={ident}; " + _failed(checks))
    return CriterionResult(5, "SQP iterate map and active-set identification", all(checks.values()), detail)


EXAMPLE51_REPORTED = {"xi": -1.0, "class": "C"}


def example51_discrepancy() -> dict:
    """Solved multipliers at the origin of example51 against the previously reported ones."""
    rep = classify_stationarity(get_problem("example51").problem, (0.0, 0.0))
    return {
        "point": [0.0, 0.0],
        "reported": {"xi": EXAMPLE51_REPORTED["xi"], "class": EXAMPLE51_REPORTED["class"]},
        "solved": {"xi": float(rep.xi[0]), "nu": float(rep.nu[0]), "class": rep.cls},
        "reason": "df/dw1 = 1 at the origin, so the stationarity system forces xi = 1; "
                  "df/dw2 = -4(w2-1)^3 - 2(w2-1) = 6 at w2 = 0 forces nu = -6",
    }


def criterion_6(ctx: BenchContext) -> CriterionResult:
    ley = get_problem("leyffer").problem
    r1 = classify_stationarity(ley, (1.0, 0.0))
    r0 = classify_stationarity(ley, (0.0, 0.0))
    e54 = classify_stationarity(get_problem("example54").problem, (0.0, 0.0))
    u54 = check_ulsc_pulsc(e54)
    e51 = classify_stationarity(get_problem("example51").problem, (0.0, 0.0))
    disc = example51_discrepancy()
    checks = {
        "leyffer (1,0) S, nu=0": r1.cls == "S" and abs(r1.nu[0]) <= 1e-10,
        "leyffer (0,0) M, (-2,0)": r0.cls == "M" and abs(r0.xi[0] + 2) <= 1e-10 and abs(r0.nu[0]) <= 1e-10,
        "example54 S, xi=nu=0, pulsc false": e54.cls == "S" and abs(e54.xi[0]) <= 1e-10
        and abs(e54.nu[0]) <= 1e-10 and not u54.pulsc,
        "example51 origin (1,-6)": abs(e51.xi[0] - 1) <= 1e-10 and abs(e51.nu[0] + 6) <= 1e-10,
    }
    detail = (f"example51 origin solved xi={disc['solved']['xi']:g}, nu={disc['solved']['nu']:g}, "
              f"class {disc['solved']['class']} (reported xi={disc['reported']['xi']:g}, class "
              f"{disc['reported']['class']}); " + _failed(checks))
    return CriterionResult(6, "Classifier table", all(checks.values()), detail)


# random instances for the oracle comparison


def random_qp(rng: np.random.Generator) -> QpData:
    n = int(rng.integers(1, 5))
    m_in = int(rng.integers(0, 5))
    m_eq = int(rng.integers(0, n))  # fewer equalities than variables
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    return QpData(H, rng.normal(size=n), rng.normal(size=(m_eq, n)), rng.normal(size=m_eq),
                  rng.normal(size=(m_in, n)), rng.normal(size=m_in))


def random_qpcc(rng: np.random.Generator) -> QpccData:
    n = int(rng.integers(2, 5))
    m = int(rng.integers(1, min(3, n) + 1))
    m_eq = int(rng.integers(0, n - m + 1))
    m_in = int(rng.integers(0, 3))
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    return QpccData(H, rng.normal(size=n), rng.normal(size=(m_eq, n)), rng.normal(size=m_eq),
                    rng.normal(size=(m_in, n)), rng.normal(size=m_in),
                    rng.normal(size=(m, n)), rng.normal(size=m), rng.normal(size=(m, n)), rng.normal(size=m))


def compare_qp(q: QpData) -> str | None:
    """None when solve_qp agrees with the enumeration oracle, else a description."""
    ref = enumerate_qp(q.hessian, q.gradient, q.a_eq, q.b_eq, q.a_in, q.b_in)
    sol = solve_qp(q)
    if ref is None:
        return None if not sol.ok else f"oracle infeasible, solver {sol.status}"
    if not sol.ok:
        return f"solver {sol.status}, oracle objective {ref[1]:.6g}"
    if abs(sol.objective - ref[1]) > 1e-8 * max(1.0, abs(ref[1])):
        return f"objective {sol.objective:.12g} vs oracle {ref[1]:.12g}"
    return None


def compare_qpcc(d: QpccData) -> str | None:
    ref = enumerate_qpcc(d.hessian, d.gradient, d.a_eq, d.b_eq, d.a_in, d.b_in,
                         d.g_rows, d.g_const, d.h_rows, d.h_const)
    try:
        cands = solve_qpcc_enumerate(d)
    except Exception as exc:  # all branches infeasible
        return None if not ref else f"solver raised {exc}"
    if len(cands) != len(ref):
        return f"{len(cands)} candidates vs {len(ref)} from the oracle"
    for c in cands:
        scale = max(1.0, float(np.max(np.abs(c.step))))
        match = [r for r in ref if np.max(np.abs(r[0] - c.step)) <= 1e-7 * scale]
        if len(match) != 1:
            return f"candidate {c.step} has {len(match)} oracle matches"
        if bool(match[0][2]) != bool(c.s_stationary):
            return f"candidate {c.step}: s_stationary {c.s_stationary} vs oracle {match[0][2]}"
    return None


def criterion_7(ctx: BenchContext, seed: int = 20240611) -> CriterionResult:
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    qp_bad = [msg for msg in (compare_qp(random_qp(rng)) for _ in range(500)) if msg]
    qpcc_bad = [msg for msg in (compare_qpcc(random_qpcc(rng)) for _ in range(200)) if msg]
    elapsed = time.perf_counter() - start
    passed = not qp_bad and not qpcc_bad and elapsed < 30.0
    detail = f"500 QPs: {len(qp_bad)} mismatches; 200 QPCCs: {len(qpcc_bad)} mismatches; {elapsed:.2f} s"
    if qp_bad or qpcc_bad:
        detail += "; first: " + (qp_bad + qpcc_bad)[0]
    return CriterionResult(7, "Oracle equivalence", passed, detail)


def derivative_errors(name: str, rng: np.random.Generator, points: int = 100) -> float:
    """Largest relative deviation of symbolic first and second derivatives from central differences."""
    p = get_problem(name).problem
    worst = 0.0
    vectors = [("f", None)] + [(lab, vec) for lab, vec in (("h", p.h), ("g", p.g), ("G", p.G), ("H", p.H))]
    for _ in range(points):
        w = rng.uniform(-2.0, 2.0, size=p.n)
        for label, vec in vectors:
            count = 1 if vec is None else len(vec.exprs)
            for i in range(count):
                if vec is None:
                    func = p.objective_value
                    grad = p.objective_gradient
                    hess = p.f.hessian(0, w)
                else:
                    func = lambda x, i=i, vec=vec: float(vec.values(x)[i])
                    grad = lambda x, i=i, vec=vec: vec.jacobian(x)[i]
                    hess = vec.hessian(i, w)
                g_sym = grad(w)
                g_fd = central_gradient(func, w, 1e-6)
                h_fd = central_hessian(grad, w, 1e-6)
                worst = max(worst, float(np.max(np.abs(g_sym - g_fd) / np.maximum(1.0, np.abs(g_sym)))))
                worst = max(worst, float(np.max(np.abs(hess - h_fd) / np.maximum(1.0, np.abs(hess)))))
    return worst


def criterion_8(ctx: BenchContext, seed: int = 7) -> CriterionResult:
    rng = np.random.default_rng(seed)
    errs = {name: derivative_errors(name, rng) for name in problem_names()}
    passed = all(e <= 1e-6 for e in errs.values())
    detail = ", ".join(f"{k} {v:.2g}" for k, v in errs.items()) + " (max relative deviation, 100 points each)"
    return CriterionResult(8, "Derivative correctness", passed, detail)


def example54_map(v: float) -> float:
    return 4.0 * v ** 3 / (6.0 * v * v + 1.0)


def criterion_9(ctx: BenchContext) -> CriterionResult:
    entry = get_problem("example54")
    checks = {}
    notes = []
    for name, axis in (("example54-a", 0), ("example54-b", 1)):
        t = ctx.trace(name)
        worst = 0.0
        for a, b in zip(t.records, t.records[1:]):
            other = 1 - axis
            worst = max(worst, abs(b.z.w[axis] - example54_map(a.z.w[axis])), abs(b.z.w[other]))
        stab = stabilization_report(t, entry.problem, entry.reference)
        checks[f"{name} converged"] = t.converged and np.max(np.abs(t.final.z.w)) <= 1e-10
        checks[f"{name} map to 1e-12"] = worst <= MATCH_TOL
        checks[f"{name} pair asymptotic-only"] = stab.pair_identification.get(0) == "asymptotic-only"
        notes.append(f"{name}: {t.iterations} it, max map deviation {worst:.2g}, pair {stab.pair_identification}")
    ref_bi = complementarity_partition(entry.problem, entry.reference.w).i_zero_zero
    checks["reference I00 = {pair 0}"] = ref_bi == (0,)
    return CriterionResult(9, "example54 nonuniqueness", all(checks.values()), "; ".join(notes) + "; " + _failed(checks))


def criterion_10(ctx: BenchContext) -> CriterionResult:
    fits = []
    skipped = []
    for name, run in ctx.runs.items():
        if run.hessian not in ("exact", "exact-raw") or not run.use_reference:
            continue
        t = ctx.trace(name)
        err = t.errors()
        if not t.converged or not np.isfinite(err[-1]) or err[-1] > 1e-8:
            skipped.append(name)
            continue
        if np.count_nonzero(err > 1e-13) < 1 or len(err) < 2:
            skipped.append(name)
            continue
        fits.append((name, fit_contraction(err)))
    worst = max(fits, key=lambda f: f[1].alpha) if fits else None
    passed = bool(fits) and all(f.alpha <= 0.1 for _, f in fits)
    detail = f"{len(fits)} converging exact-Hessian runs fitted"
    if worst:
        detail += f", largest alpha {worst[1].alpha:.3g} ({worst[0]})"
    if skipped:
        detail += f"; not converging to the reference: {', '.join(skipped)}"
    return CriterionResult(10, "Contraction fit alpha <= 0.1", passed, detail)


CRITERIA: dict[int, tuple[Callable[[BenchContext], CriterionResult], tuple[str, ...]]] = {
    1: (criterion_1, ("example51-exact",)),
    2: (criterion_2, ("example51-bfgs", "example51-perturbed", "example51-const")),
    3: (criterion_3, ("leyffer-sqp", "leyffer-sqpcc")),
    4: (criterion_4, ("leyffer-spurious",)),
    5: (criterion_5, ("sqp-weak", "sqp-strict")),
    6: (criterion_6, ()),
    7: (criterion_7, ()),
    8: (criterion_8, ()),
    9: (criterion_9, ("example54-a", "example54-b")),
    10: (criterion_10, ()),  # uses every run in the context
}


def run_criteria(ctx: BenchContext | None = None, numbers=None) -> list[CriterionResult]:
    ctx = ctx or BenchContext()
    numbers = sorted(CRITERIA) if numbers is None else numbers
    return [CRITERIA[n][0](ctx) for n in numbers]


# ---------------------------------------------------------------------------
# suite driver


def _run_summary(name: str, run: BenchRun, t: SolveTrace, seconds: float) -> dict:
    out = {
        "run": name, "problem": run.problem, "method": run.method, "hessian": run.hessian,
        "policy": run.policy, "x0": list(run.x0), "status": t.status, "message": t.message,
        "iterations": t.iterations, "final_w": t.final.z.w.tolist(), "seconds": seconds,
    }
    entry = get_problem(run.problem)
    err = t.primal_errors(entry.reference.w) if run.use_reference else None
    if err is not None:
        out["final_error"] = float(err[-1])
        pos = _positive(err)
        if pos.size >= 4:
            out["order"] = estimate_order(pos).to_dict()
    return out


def run_example_suite(outdir: str, only=None) -> tuple[list[CriterionResult], dict]:
    """Run the suite, write traces and plot data under ``outdir``, return criteria results and the summary.

    ``only`` restricts the run to the named runs and the criteria that need nothing else.
    """
    runs = all_runs()
    if only:
        unknown = [n for n in only if n not in runs]
        if unknown:
            raise KeyError(f"unknown runs: {', '.join(unknown)}")
        runs = {n: runs[n] for n in only}
    ctx = BenchContext(runs)
    os.makedirs(outdir, exist_ok=True)
    summaries = []
    for name, run in runs.items():
        t = ctx.trace(name)
        write_text_atomic(os.path.join(outdir, f"{name}.csv"), trace_to_csv(t))
        summaries.append(_run_summary(name, run, t, ctx.times[name]))
    for name in runs:
        if name.startswith("grid-"):
            continue
        run, t = runs[name], ctx.traces[name]
        w_ref = get_problem(run.problem).reference.w if run.use_reference else np.zeros(len(run.x0))
        write_text_atomic(os.path.join(outdir, f"{name}-error.dat"), plot_data(t.primal_errors(w_ref)))
        if len(run.x0) == 2:
            write_text_atomic(os.path.join(outdir, f"{name}-path.dat"), path_data(t))
    if only:
        numbers = [n for n, (_, need) in CRITERIA.items() if need and set(need) <= set(runs)]
    else:
        numbers = sorted(CRITERIA)
    results = run_criteria(ctx, numbers)
    summary = {
        "runs": summaries,
        "criteria": [r.__dict__ for r in results],
        "example51_origin": example51_discrepancy() if not only else None,
    }
    write_json(summary, os.path.join(outdir, "summary.json"))
    table = "\n".join(r.line() for r in results) + "\n"
    if not only:
        d = summary["example51_origin"]
        table += (f"\nexample51 origin multipliers: solved xi={d['solved']['xi']:g}, nu={d['solved']['nu']:g} "
                  f"(class {d['solved']['class']}); previously reported xi={d['reported']['xi']:g} "
                  f"(class {d['reported']['class']}). {d['reason']}.\n")
    write_text_atomic(os.path.join(outdir, "summary.txt"), table)
    return results, summary
