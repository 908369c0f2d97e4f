"""Linearized QPCC subproblems solved by enumerating all branch QPs."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from itertools import product

import numpy as np

from .denseqp import QpData, solve_qp
from .model import (
    DEFAULT_ACTIVITY_TOL,
    BranchAssignment,
    PrimalDualPoint,
    _as_mpcc,
)

__all__ = [
    "ENUMERATION_CAP",
    "DEDUP_TOL",
    "QpccData",
    "QpccSolution",
    "StepPolicy",
    "EnumerationCapError",
    "SubproblemFailure",
    "linearize",
    "solve_qpcc_enumerate",
    "select_step",
    "branch_qp",
]

log = logging.getLogger(__name__)

ENUMERATION_CAP = 16
DEDUP_TOL = 1e-9


class EnumerationCapError(ValueError):
    def __init__(self, m: int, cap: int):
        self.m = m
        super().__init__(f"{m} complementarity pairs exceed the enumeration cap of {cap}")


class SubproblemFailure(RuntimeError):
    def __init__(self, message: str, statuses=None):
        self.statuses = statuses or {}
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class QpccData:
    hessian: np.ndarray
    gradient: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    a_in: np.ndarray
    b_in: np.ndarray
    g_rows: np.ndarray
    g_const: np.ndarray
    h_rows: np.ndarray
    h_const: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.gradient).size
        put = object.__setattr__
        put(self, "hessian", np.asarray(self.hessian, float).reshape(n, n))
        put(self, "gradient", np.asarray(self.gradient, float).reshape(n))
        for name in ("a_eq", "a_in", "g_rows", "h_rows"):
            put(self, name, np.asarray(getattr(self, name), float).reshape(-1, n))
        for name in ("b_eq", "b_in", "g_const", "h_const"):
            put(self, name, np.asarray(getattr(self, name), float).reshape(-1))
        if self.g_rows.shape[0] != self.h_rows.shape[0]:
            raise ValueError("complementarity sides have different lengths")

    @property
    def n(self) -> int:
        return self.gradient.size

    @property
    def m(self) -> int:
        return self.g_rows.shape[0]

    def objective(self, d) -> float:
        d = np.asarray(d, float)
        return float(self.gradient @ d + 0.5 * d @ self.hessian @ d)


@dataclass(frozen=True, eq=False)
class QpccSolution:
    step: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    xi: np.ndarray
    nu: np.ndarray
    branch: BranchAssignment
    qp_active_set: tuple[int, ...]
    i_zero_plus: tuple[int, ...]
    i_plus_zero: tuple[int, ...]
    i_zero_zero: tuple[int, ...]
    objective: float
    s_stationary: bool
    branches: tuple[BranchAssignment, ...] = ()
    fallback: bool = False
    variants: tuple["QpccSolution", ...] = ()

    def for_branch(self, a: BranchAssignment) -> "QpccSolution":
        """This candidate as produced by branch ``a`` (its own multipliers and partition)."""
        for v in self.variants:
            if v.branch == a:
                return replace(v, s_stationary=self.s_stationary, branches=self.branches, variants=self.variants)
        raise KeyError(a.signature)

    @property
    def signature(self) -> str:
        return self.branch.signature


@dataclass(frozen=True)
class StepPolicy:
    """Candidate selection rule: "min-objective", "warm-branch" or "forced-branch"."""

    kind: str = "min-objective"
    branch: BranchAssignment | None = None

    def __post_init__(self):
        if self.kind not in ("min-objective", "warm-branch", "forced-branch"):
            raise ValueError(f"unknown step policy {self.kind!r}")
        if self.kind == "forced-branch" and self.branch is None:
            raise ValueError("forced-branch policy needs a branch assignment")

    @classmethod
    def parse(cls, text: str) -> "StepPolicy":
        text = text.strip()
        if text in ("min-obj", "min-objective"):
            return cls("min-objective")
        if text in ("warm", "warm-branch"):
            return cls("warm-branch")
        if text.startswith("force:"):
            return cls("forced-branch", BranchAssignment.from_string(text[6:]))
        raise ValueError(f"unknown policy {text!r}; use min-obj, warm or force:<G/H string>")


def linearize(p, z: PrimalDualPoint, hessian) -> QpccData:
    p = _as_mpcc(p)
    w = z.w
    return QpccData(
        hessian=np.asarray(hessian, float),
        gradient=p.objective_gradient(w),
        a_eq=p.h.jacobian(w),
        b_eq=p.h.values(w),
        a_in=p.g.jacobian(w),
        b_in=p.g.values(w),
        g_rows=p.G.jacobian(w),
        g_const=p.G.values(w),
        h_rows=p.H.jacobian(w),
        h_const=p.H.values(w),
    )


def branch_qp(d: QpccData, a: BranchAssignment) -> QpData:
    """The QP obtained by fixing every linearized pair to the side given by ``a``.

    Equality rows: original equalities, then the fixed side of each pair in
    pair order.  Inequality rows: original inequalities, then the free side
    of each pair (negated, so that ``>= 0`` becomes ``<= 0``).
    """
    fixed_rows, fixed_const, free_rows, free_const = [], [], [], []
    for i, side in enumerate(a.sides):
        if side == "G":
            fixed_rows.append(d.g_rows[i]); fixed_const.append(d.g_const[i])
            free_rows.append(-d.h_rows[i]); free_const.append(-d.h_const[i])
        else:
            fixed_rows.append(d.h_rows[i]); fixed_const.append(d.h_const[i])
            free_rows.append(-d.g_rows[i]); free_const.append(-d.g_const[i])
    n = d.n
    a_eq = np.vstack([d.a_eq, np.reshape(fixed_rows, (-1, n))])
    b_eq = np.concatenate([d.b_eq, fixed_const])
    a_in = np.vstack([d.a_in, np.reshape(free_rows, (-1, n))])
    b_in = np.concatenate([d.b_in, free_const])
    return QpData(d.hessian, d.gradient, a_eq, b_eq, a_in, b_in)


def _is_zero(const: float, row: np.ndarray, step: np.ndarray) -> bool:
    """True when the free side of a pair, off the working set, still sits on its bound.

    The computed value is trusted as is: a tiny positive value counts as inactive.
    """
    return const + row @ step <= 0.0


def _solution_from_branch(d: QpccData, a: BranchAssignment, sol, tol: float) -> QpccSolution:
    m_h = d.b_eq.size
    m_g = d.b_in.size
    step = sol.x
    lam = sol.eq_multipliers[:m_h]
    mu = sol.in_multipliers[:m_g]
    fixed = sol.eq_multipliers[m_h:]
    free = sol.in_multipliers[m_g:]
    active = set(sol.active_set)
    xi = np.zeros(d.m)
    nu = np.zeros(d.m)
    z_plus, plus_z, z_z = [], [], []
    for i, side in enumerate(a.sides):
        if side == "G":
            # Lagrangian carries −ξ∇G, the QP carries +λ∇G: ξ = −λ; the free side −H ≤ 0 gives ν = μ
            xi[i] = -fixed[i]
            nu[i] = free[i]
            other_zero = (m_g + i) in active or _is_zero(d.h_const[i], d.h_rows[i], step)
            (z_z if other_zero else z_plus).append(i)
        else:
            nu[i] = -fixed[i]
            xi[i] = free[i]
            other_zero = (m_g + i) in active or _is_zero(d.g_const[i], d.g_rows[i], step)
            (z_z if other_zero else plus_z).append(i)
    s_flag = all(xi[i] >= -tol and nu[i] >= -tol for i in z_z)
    return QpccSolution(
        step=step,
        lam=lam,
        mu=mu,
        xi=xi,
        nu=nu,
        branch=a,
        qp_active_set=tuple(j for j in sol.active_set if j < m_g),
        i_zero_plus=tuple(z_plus),
        i_plus_zero=tuple(plus_z),
        i_zero_zero=tuple(z_z),
        objective=d.objective(step),
        s_stationary=s_flag,
        branches=(a,),
    )


def solve_qpcc_enumerate(
    d: QpccData,
    tol: float = DEFAULT_ACTIVITY_TOL,
    cap: int = ENUMERATION_CAP,
    allow_indefinite: bool = False,
    warm_active=None,
) -> list[QpccSolution]:
    """Solve every branch QP and return the distinct solutions.

    Sorted by objective, then lexicographically by step.  Branch QPs that are
    infeasible or unbounded are skipped; if all of them fail a
    :class:`SubproblemFailure` is raised.
    """
    if d.m > cap:
        raise EnumerationCapError(d.m, cap)
    found: list[QpccSolution] = []
    statuses = {}
    for sides in product("GH", repeat=d.m):
        a = BranchAssignment(sides)
        qp = branch_qp(d, a)
        warm = None
        if warm_active is not None:
            warm = list(warm_active)
        sol = solve_qp(qp, warm, allow_indefinite=allow_indefinite)
        statuses[a.signature] = sol.status
        if not sol.ok:
            continue
        cand = _solution_from_branch(d, a, sol, tol)
        for k, other in enumerate(found):
            if np.max(np.abs(other.step - cand.step), initial=0.0) <= DEDUP_TOL:
                _check_same_multipliers(other, cand)
                # a pair counts as biactive only if every coincident variant says so
                base = cand if len(cand.i_zero_zero) < len(other.i_zero_zero) else other
                found[k] = replace(
                    base,
                    branches=other.branches + (a,),
                    s_stationary=other.s_stationary or cand.s_stationary,
                    variants=other.variants + (cand,),
                )
                break
        else:
            found.append(replace(cand, variants=(cand,)))
    if not found:
        raise SubproblemFailure(f"all {len(statuses)} branch QPs failed: {statuses}", statuses)
    found.sort(key=lambda s: (s.objective, tuple(s.step)))
    return found


def _check_same_multipliers(a: QpccSolution, b: QpccSolution, tol: float = 1e-8):
    """Merged duplicates with the same active constraints must carry the same multipliers."""
    if a.qp_active_set != b.qp_active_set or a.i_zero_zero != b.i_zero_zero:
        return
    if a.i_zero_plus != b.i_zero_plus or a.i_plus_zero != b.i_plus_zero:
        return
    va = np.concatenate([a.lam, a.mu, a.xi, a.nu])
    vb = np.concatenate([b.lam, b.mu, b.xi, b.nu])
    scale = max(1.0, float(np.max(np.abs(va), initial=0.0)))
    if np.max(np.abs(va - vb), initial=0.0) > tol * scale:
        log.warning("duplicate QPCC steps carry different multipliers (max diff %.3g)",
                    float(np.max(np.abs(va - vb))))


def select_step(candidates: list[QpccSolution], policy: StepPolicy | None = None,
                previous: BranchAssignment | None = None) -> QpccSolution:
    """Pick one candidate.  A non-S fallback under min-objective is returned with ``fallback=True``."""
    if not candidates:
        raise ValueError("empty candidate list")
    policy = policy or StepPolicy()
    if policy.kind == "forced-branch":
        for c in candidates:
            if policy.branch in c.branches:
                return c.for_branch(policy.branch)
        raise SubproblemFailure(f"forced branch {policy.branch} produced no solution")
    s_cands = [c for c in candidates if c.s_stationary]
    if policy.kind == "warm-branch":
        ref = previous if previous is not None else policy.branch
        if ref is not None:
            for c in s_cands:
                if ref in c.branches:
                    return c.for_branch(ref)
    if s_cands:
        return s_cands[0]
    log.warning("no S-stationary QPCC candidate; falling back to the lowest objective")
    return replace(candidates[0], fallback=True)
