"""Full-step SQPCC and the classical SQP baseline, with per-iteration diagnostics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .denseqp import nearest_pd
from .model import (
    DEFAULT_ACTIVITY_TOL,
    MpccProblem,
    NlpProblem,
    PartitionInfeasibleError,
    PrimalDualPoint,
    _as_mpcc,
    active_sets,
    complementarity_partition,
    mpcc_kkt_residual,
    mpcc_lagrangian_gradient,
    mpcc_lagrangian_hessian,
)
from .qpcc import (
    StepPolicy,
    SubproblemFailure,
    linearize,
    select_step,
    solve_qpcc_enumerate,
)

__all__ = [
    "HessianStrategy",
    "SolveOptions",
    "TraceRecord",
    "SolveTrace",
    "sqpcc_solve",
    "sqp_solve",
    "next_hessian",
    "initial_hessian",
    "problem_map",
    "perturbation_rk",
    "kappa_estimate",
]

log = logging.getLogger(__name__)

HESSIAN_KINDS = ("exact", "exact-raw", "perturbed", "constant", "bfgs", "gauss-newton")


class HessianStrategy:
    """How H^k is produced.

    kinds: ``exact`` (∇²𝓛 shifted to λ_min >= floor), ``exact-raw`` (∇²𝓛 as is),
    ``perturbed`` (∇²𝓛 + I), ``constant`` (a fixed matrix), ``bfgs`` (damped
    updates from ``initial``, by default the convexified exact Hessian at the
    start point) and ``gauss-newton`` (2JᵀJ + floor·I from the residual block).
    A strategy holds BFGS state, so use a fresh one per solve (see :meth:`fresh`).
    """

    def __init__(self, kind: str = "exact", matrix=None, floor: float = 1e-6, initial=None):
        if kind not in HESSIAN_KINDS:
            raise ValueError(f"unknown Hessian strategy {kind!r}")
        if kind == "constant" and matrix is None:
            raise ValueError("constant strategy needs a matrix")
        self.kind = kind
        self.floor = floor
        self.matrix = None if matrix is None else np.atleast_2d(np.asarray(matrix, float))
        if self.matrix is not None and self.matrix.shape[0] != self.matrix.shape[1]:
            self.matrix = np.diag(np.ravel(self.matrix))
        self.initial = None if initial is None else np.asarray(initial, float)
        self.current: np.ndarray | None = None
        self.skipped_updates = 0

    def fresh(self) -> "HessianStrategy":
        return HessianStrategy(self.kind, self.matrix, self.floor, self.initial)

    @property
    def raw(self) -> bool:
        return self.kind == "exact-raw"

    @classmethod
    def parse(cls, text: str) -> "HessianStrategy":
        text = text.strip()
        if text.startswith("const:"):
            vals = [float(v) for v in text[6:].split(",") if v.strip()]
            return cls("constant", np.diag(vals))
        alias = {"gn": "gauss-newton", "perturbed-identity": "perturbed"}
        return cls(alias.get(text, text))

    def __repr__(self):
        return f"HessianStrategy({self.kind!r})"


def _symmetric(M):
    return 0.5 * (M + M.T)


def initial_hessian(s: HessianStrategy, p, z: PrimalDualPoint) -> np.ndarray:
    """H^0 for the strategy; resets BFGS state."""
    p = _as_mpcc(p)
    if s.kind == "bfgs":
        B = s.initial if s.initial is not None else nearest_pd(mpcc_lagrangian_hessian(p, z), s.floor)
        s.current = _symmetric(np.array(B, float))
        s.skipped_updates = 0
        return s.current.copy()
    return _fixed_hessian(s, p, z)


def _fixed_hessian(s: HessianStrategy, p: MpccProblem, z: PrimalDualPoint) -> np.ndarray:
    if s.kind == "constant":
        return s.matrix.copy()
    if s.kind == "gauss-newton":
        if p.r is None:
            raise ValueError("gauss-newton strategy needs a residual block")
        J = p.r.jacobian(z.w)
        return _symmetric(2.0 * J.T @ J) + s.floor * np.eye(p.n)
    hess = mpcc_lagrangian_hessian(p, z)
    if s.kind == "exact":
        return nearest_pd(hess, s.floor)
    if s.kind == "exact-raw":
        return hess
    # perturbed: the +I shift is the point of this variant, so no further convexification
    # unless the result is still not positive definite
    return nearest_pd(hess + np.eye(p.n), s.floor)


def next_hessian(s: HessianStrategy, p, z_new: PrimalDualPoint, z_old: PrimalDualPoint) -> np.ndarray:
    """H^{k+1}.  For BFGS this updates ``s.current`` in place."""
    p = _as_mpcc(p)
    if s.kind != "bfgs":
        return _fixed_hessian(s, p, z_new)
    if s.current is None:
        initial_hessian(s, p, z_old)
    B = s.current
    step = z_new.w - z_old.w
    y = mpcc_lagrangian_gradient(p, z_new) - mpcc_lagrangian_gradient(p, z_old.__class__(
        z_old.w, z_new.lam, z_new.mu, z_new.xi, z_new.nu))
    ns, ny = np.linalg.norm(step), np.linalg.norm(y)
    sy = float(step @ y)
    if ns == 0.0 or sy <= 1e-12 * ns * ny:
        s.skipped_updates += 1
        return B.copy()
    Bs = B @ step
    sBs = float(step @ Bs)
    if sy < 0.2 * sBs:
        theta = 0.8 * sBs / (sBs - sy)
        y = theta * y + (1.0 - theta) * Bs
        sy = float(step @ y)
    B = B - np.outer(Bs, Bs) / sBs + np.outer(y, y) / sy
    s.current = _symmetric(B)
    return s.current.copy()


# ---------------------------------------------------------------------------
# perturbation and kappa


def problem_map(p, z: PrimalDualPoint) -> np.ndarray:
    """Ψ(z) = (∇𝓛, h, −g, G, H); for an NLP this is (∇L, h, −g)."""
    p = _as_mpcc(p)
    w = z.w
    return np.concatenate([
        mpcc_lagrangian_gradient(p, z),
        p.h.values(w),
        -p.g.values(w),
        p.G.values(w),
        p.H.values(w),
    ])


def _approx_jacobian_times(p: MpccProblem, z: PrimalDualPoint, hessian, dz: PrimalDualPoint) -> np.ndarray:
    w = z.w
    Jh, Jg, JG, JH = p.h.jacobian(w), p.g.jacobian(w), p.G.jacobian(w), p.H.jacobian(w)
    top = hessian @ dz.w + Jh.T @ dz.lam + Jg.T @ dz.mu - JG.T @ dz.xi - JH.T @ dz.nu
    return np.concatenate([top, Jh @ dz.w, -Jg @ dz.w, JG @ dz.w, JH @ dz.w])


def perturbation_rk(p, z_old: PrimalDualPoint, z_new: PrimalDualPoint, used_hessian) -> np.ndarray:
    """r^k = Ψ(z^{k+1}) − Ψ(z^k) − ∇Ψ̃(z^k)ᵀ(z^{k+1} − z^k), H^k in the Hessian block."""
    p = _as_mpcc(p)
    dz = PrimalDualPoint(z_new.w - z_old.w, z_new.lam - z_old.lam, z_new.mu - z_old.mu,
                         z_new.xi - z_old.xi, z_new.nu - z_old.nu)
    return problem_map(p, z_new) - problem_map(p, z_old) - _approx_jacobian_times(p, z_old, used_hessian, dz)


def kappa_estimate(p, z: PrimalDualPoint, used_hessian) -> float:
    """||∇²𝓛(z) − H||₂: the only block where the approximate Jacobian differs."""
    p = _as_mpcc(p)
    diff = mpcc_lagrangian_hessian(p, z) - np.asarray(used_hessian, float)
    return float(np.linalg.norm(diff, 2)) if diff.size else 0.0


# ---------------------------------------------------------------------------
# options and trace


@dataclass
class SolveOptions:
    tol: float = 1e-10
    max_iter: int = 50
    activity_tol: float = DEFAULT_ACTIVITY_TOL
    hessian: HessianStrategy = field(default_factory=HessianStrategy)
    policy: StepPolicy = field(default_factory=StepPolicy)
    reference: PrimalDualPoint | None = None

    def __post_init__(self):
        if not self.tol > 0 or not self.activity_tol > 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if isinstance(self.hessian, str):
            self.hessian = HessianStrategy.parse(self.hessian)
        if isinstance(self.policy, str):
            self.policy = StepPolicy.parse(self.policy)


@dataclass(frozen=True, eq=False)
class TraceRecord:
    """Everything known about iterate k.

    ``step`` and the fields after it describe the step taken *from* z^k
    (absent on the last record).  ``partition`` and ``active`` are the sets of
    the subproblem that produced z^k (activity-tolerance sets for k = 0).
    """

    k: int
    z: PrimalDualPoint
    kkt_residual: float
    err_to_ref: float | None = None
    partition: tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]] | None = None
    active: tuple[int, ...] = ()
    step: np.ndarray | None = None
    num_candidates: int = 0
    branch: str = ""
    s_stationary: bool | None = None
    fallback: bool = False
    r_norm: float | None = None
    kappa: float | None = None
    hessian: np.ndarray | None = None

    @property
    def step_norm(self) -> float | None:
        return None if self.step is None else float(np.linalg.norm(self.step, np.inf))


@dataclass
class SolveTrace:
    records: list[TraceRecord]
    status: str  # converged | max-iterations | subproblem-failure
    message: str = ""
    method: str = "sqpcc"
    problem_name: str = ""

    @property
    def iterations(self) -> int:
        return len(self.records) - 1

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def iterates(self) -> np.ndarray:
        return np.array([r.z.w for r in self.records])

    def errors(self) -> np.ndarray:
        return np.array([np.nan if r.err_to_ref is None else r.err_to_ref for r in self.records])

    def primal_errors(self, w_ref) -> np.ndarray:
        w_ref = np.asarray(w_ref, float)
        return np.array([float(np.max(np.abs(r.z.w - w_ref))) for r in self.records])


def _err(z: PrimalDualPoint, ref: PrimalDualPoint | None) -> float | None:
    if ref is None:
        return None
    return float(np.max(np.abs(z.stacked() - ref.stacked()), initial=0.0))


def _initial_sets(p: MpccProblem, z: PrimalDualPoint, tol: float):
    try:
        part = complementarity_partition(p, z.w, tol)
        parts = (part.i_zero_plus, part.i_plus_zero, part.i_zero_zero)
    except PartitionInfeasibleError:
        parts = None
    return parts, active_sets(p, z.w, z.mu, tol).active


def _coerce_start(p: MpccProblem, z0) -> PrimalDualPoint:
    if isinstance(z0, PrimalDualPoint):
        z0.check_dims(p)
        return z0
    w = np.asarray(z0, float).reshape(-1)
    if w.size != p.n:
        raise ValueError(f"start point has {w.size} entries, problem has {p.n} variables")
    return PrimalDualPoint.primal(p, w)


def _check_linearization(p: MpccProblem, d, tol: float) -> None:
    """Refuse a subproblem in which an active constraint linearizes to ``0 <= 0`` or ``0 = 0``.

    Such a constraint vanishes from the QP, so the step no longer models the
    feasible set near the iterate (the bilinear form of a complementarity
    pair does this at a biactive point).
    """
    blocks = (("equality", d.a_eq, d.b_eq), ("inequality", d.a_in, d.b_in))
    for label, rows, const in blocks:
        for i in range(const.size):
            if abs(const[i]) <= tol and not np.any(rows[i]):
                raise SubproblemFailure(f"degenerate linearization: active {label} {i} has a zero gradient")


def _finite(*arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


def _run(p: MpccProblem, z0, opts: SolveOptions, method: str) -> SolveTrace:
    z = _coerce_start(p, z0)
    strategy = opts.hessian.fresh()
    ref = opts.reference
    tol_act = opts.activity_tol
    records: list[TraceRecord] = []
    parts, act = _initial_sets(p, z, tol_act)
    previous_branch = opts.policy.branch
    status, message = "max-iterations", ""
    H = None
    for k in range(opts.max_iter + 1):
        res = mpcc_kkt_residual(p, z, tol_act)
        base = dict(k=k, z=z, kkt_residual=res, err_to_ref=_err(z, ref), partition=parts, active=act)
        if res <= opts.tol:
            records.append(TraceRecord(**base))
            status = "converged"
            break
        if k == opts.max_iter:
            records.append(TraceRecord(**base))
            break
        try:
            H = initial_hessian(strategy, p, z) if H is None else H
            if not _finite(H, z.stacked()):
                raise SubproblemFailure("non-finite iterate or Hessian")
            d = linearize(p, z, H)
            if not _finite(d.gradient, d.a_eq, d.b_eq, d.a_in, d.b_in, d.g_rows, d.g_const, d.h_rows, d.h_const):
                raise SubproblemFailure("non-finite problem data")
            _check_linearization(p, d, tol_act)
            cands = solve_qpcc_enumerate(d, tol_act, allow_indefinite=strategy.raw)
            sel = select_step(cands, opts.policy, previous_branch)
        except (SubproblemFailure, np.linalg.LinAlgError) as exc:
            records.append(TraceRecord(**base))
            status, message = "subproblem-failure", f"iteration {k}: {exc}"
            break
        z_new = PrimalDualPoint(z.w + sel.step, sel.lam, sel.mu, sel.xi, sel.nu)
        r = perturbation_rk(p, z, z_new, H)
        records.append(TraceRecord(
            **base,
            step=sel.step,
            num_candidates=len(cands),
            branch=sel.signature,
            s_stationary=sel.s_stationary,
            fallback=sel.fallback,
            r_norm=float(np.linalg.norm(r)),
            kappa=kappa_estimate(p, z, H),
            hessian=H,
        ))
        previous_branch = sel.branch
        parts = (sel.i_zero_plus, sel.i_plus_zero, sel.i_zero_zero)
        act = sel.qp_active_set
        H_next = next_hessian(strategy, p, z_new, z)
        z = z_new
        H = H_next
    return SolveTrace(records, status, message, method, p.name)


def sqpcc_solve(p: MpccProblem, z0, opts: SolveOptions | None = None) -> SolveTrace:
    """Full-step SQPCC: w^{k+1} = w^k + Δw^k with the QPCC multipliers taken over."""
    return _run(p, z0, opts or SolveOptions(), "sqpcc")


def sqp_solve(nlp: NlpProblem, z0, opts: SolveOptions | None = None) -> SolveTrace:
    """Classical full-step SQP on an NLP (no complementarity pairs)."""
    p = nlp.to_mpcc() if isinstance(nlp, NlpProblem) else nlp
    if p.m:
        raise ValueError("sqp_solve expects an NLP; use nlp_reformulation first")
    return _run(p, z0, opts or SolveOptions(), "sqp")
