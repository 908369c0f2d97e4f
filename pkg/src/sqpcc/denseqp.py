"""Dense linear algebra helpers and a primal active-set QP solver.

The QP is::

    min  ½ xᵀHx + cᵀx
    s.t. A_eq x + b_eq = 0
         A_in x + b_in <= 0

with multipliers defined by ``Hx + c + A_eqᵀλ + A_inᵀμ = 0``, ``μ >= 0``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.optimize import linprog

__all__ = [
    "NotPositiveDefiniteError",
    "cholesky_solve",
    "nearest_pd",
    "QpData",
    "QpSolution",
    "solve_qp",
    "qp_kkt_residual",
    "KKT_TOL",
]

log = logging.getLogger(__name__)

KKT_TOL = 1e-10
_DEGENERATE_LIMIT = 10


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    def __init__(self, pivot: int, value: float):
        self.pivot = pivot
        self.value = value
        super().__init__(f"matrix is not positive definite: pivot {pivot} is {value:.3g}")


def cholesky_factor(M) -> np.ndarray:
    """Lower-triangular L with M = L Lᵀ (row-oriented Cholesky)."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    L = np.zeros_like(M)
    for j in range(n):
        d = M[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0.0:
            raise NotPositiveDefiniteError(j, float(d))
        L[j, j] = np.sqrt(d)
        if j + 1 < n:
            L[j + 1:, j] = (M[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def cholesky_solve(M, rhs) -> np.ndarray:
    L = cholesky_factor(M)
    b = np.asarray(rhs, dtype=float)
    n = b.size
    y = np.zeros(n)
    for i in range(n):
        y[i] = (b[i] - L[i, :i] @ y[:i]) / L[i, i]
    x = np.zeros(n)
    for i in reversed(range(n)):
        x[i] = (y[i] - L[i + 1:, i] @ x[i + 1:]) / L[i, i]
    return x


def nearest_pd(M, floor: float = 1e-6) -> np.ndarray:
    """Shift ``M`` by a multiple of the identity so its smallest eigenvalue is at least ``floor``."""
    M = np.asarray(M, dtype=float)
    M = 0.5 * (M + M.T)
    if M.size == 0:
        return M.copy()
    lam_min = float(np.linalg.eigvalsh(M)[0])
    sigma = max(0.0, floor - lam_min)
    return M + sigma * np.eye(M.shape[0])


@dataclass(frozen=True, eq=False)
class QpData:
    hessian: np.ndarray
    gradient: np.ndarray
    a_eq: np.ndarray = None
    b_eq: np.ndarray = None
    a_in: np.ndarray = None
    b_in: np.ndarray = None

    def __post_init__(self):
        put = object.__setattr__
        H = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        c = np.asarray(self.gradient, dtype=float).reshape(-1)
        n = c.size
        if H.shape != (n, n):
            raise ValueError(f"Hessian shape {H.shape} does not match gradient length {n}")
        if not np.allclose(H, H.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.max(np.abs(H))) if H.size else 1.0)):
            raise ValueError("Hessian is not symmetric")
        put(self, "hessian", H)
        put(self, "gradient", c)
        for a, b in (("a_eq", "b_eq"), ("a_in", "b_in")):
            A = getattr(self, a)
            A = np.zeros((0, n)) if A is None else np.asarray(A, dtype=float).reshape(-1, n)
            v = getattr(self, b)
            v = np.zeros(A.shape[0]) if v is None else np.asarray(v, dtype=float).reshape(-1)
            if v.size != A.shape[0]:
                raise ValueError(f"{a} has {A.shape[0]} rows but {b} has {v.size} entries")
            put(self, a, A)
            put(self, b, v)

    @property
    def n(self) -> int:
        return self.gradient.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.hessian @ x + self.gradient @ x)


@dataclass(frozen=True, eq=False)
class QpSolution:
    x: np.ndarray
    eq_multipliers: np.ndarray
    in_multipliers: np.ndarray
    active_set: tuple[int, ...]
    status: str  # optimal | infeasible | unbounded | degenerate-cycle
    objective: float = float("nan")
    iterations: int = 0
    kkt_residual: float = float("nan")
    working_set_changes: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def qp_kkt_residual(q: QpData, x, lam, mu) -> float:
    x = np.asarray(x, dtype=float)
    stat = q.hessian @ x + q.gradient + q.a_eq.T @ lam + q.a_in.T @ mu
    parts = [stat, q.a_eq @ x + q.b_eq]
    if q.b_in.size:
        s = q.a_in @ x + q.b_in
        parts += [np.maximum(0.0, s), np.maximum(0.0, -mu), mu * s]
    flat = np.concatenate([np.ravel(p) for p in parts])
    return float(np.max(np.abs(flat))) if flat.size else 0.0


def _scale(q: QpData, x=None) -> float:
    vals = [1.0]
    for M in (q.hessian, q.gradient, q.a_eq, q.b_eq, q.a_in, q.b_in):
        if M.size:
            vals.append(float(np.max(np.abs(M))))
    if x is not None and x.size:
        vals.append(float(np.max(np.abs(x))))
    return max(vals)


def _rank_tol(A: np.ndarray) -> float:
    return max(A.shape) * np.finfo(float).eps * 100.0


def _independent(rows: np.ndarray, candidate: np.ndarray) -> bool:
    if not np.linalg.norm(candidate) > 0.0:
        return False
    if rows.shape[0] == 0:
        return True
    stack = np.vstack([rows, candidate])
    s = np.linalg.svd(stack / np.linalg.norm(stack, axis=1, keepdims=True), compute_uv=False)
    return bool(s[-1] > 1e-10) and stack.shape[0] <= stack.shape[1]


class _Infeasible(Exception):
    pass


class _Solver:
    def __init__(self, q: QpData, allow_indefinite: bool):
        self.q = q
        self.n = q.n
        self.allow_indefinite = allow_indefinite
        self.scale = _scale(q)
        self.feas_tol = 1e-12 * self.scale
        # independent subset of the equality rows
        self.eq_rows: list[int] = []
        for i in range(q.a_eq.shape[0]):
            if _independent(q.a_eq[self.eq_rows], q.a_eq[i]):
                self.eq_rows.append(i)

    # -- working-set linear algebra -----------------------------------------
    def rows(self, W):
        q = self.q
        A = np.vstack([q.a_eq[self.eq_rows], q.a_in[list(W)]]) if W else q.a_eq[self.eq_rows]
        b = np.concatenate([q.b_eq[self.eq_rows], q.b_in[list(W)]]) if W else q.b_eq[self.eq_rows]
        return A.reshape(-1, self.n), b

    def subspace_minimizer(self, W, x):
        """Return (target point, direction kind).

        kind is "point" when the reduced Hessian is positive definite and the
        target is the minimizer on the working-set face; otherwise "ray" with a
        descent direction of non-positive curvature.
        """
        q = self.q
        A, b = self.rows(W)
        if A.shape[0]:
            U, s, Vt = np.linalg.svd(A)
            r = int(np.sum(s > _rank_tol(A) * (s[0] if s.size else 1.0)))
            x_p = Vt[:r].T @ ((U[:, :r].T @ (-b)) / s[:r])
            Z = Vt[r:].T
        else:
            x_p = np.zeros(self.n)
            Z = np.eye(self.n)
        if Z.shape[1] == 0:
            return x_p, "point"
        # move along the face from the current point when it lies on it; keeps steps small and exact
        base = x_p + Z @ (Z.T @ (x - x_p)) if x is not None else x_p
        grad = q.hessian @ base + q.gradient
        Hr = Z.T @ q.hessian @ Z
        Hr = 0.5 * (Hr + Hr.T)
        gr = Z.T @ grad
        evals, evecs = np.linalg.eigh(Hr)
        curv_tol = 1e-12 * max(1.0, float(np.max(np.abs(evals))))
        if evals[0] > curv_tol:
            u = -np.linalg.solve(Hr, gr)
            return base + Z @ u, "point"
        # singular or indefinite reduced Hessian
        neg = evals < -curv_tol
        if np.any(neg):
            if not self.allow_indefinite:
                raise np.linalg.LinAlgError("reduced Hessian is not positive definite")
            v = evecs[:, 0]
            if gr @ v > 0:
                v = -v
            return Z @ v, "ray"
        # positive semidefinite: minimise on the range, check slope on the kernel
        kern = evecs[:, evals <= curv_tol]
        slope = kern.T @ gr
        if np.max(np.abs(slope)) > 1e-12 * max(1.0, float(np.max(np.abs(gr)))):
            v = -kern @ slope
            return Z @ (v / np.linalg.norm(v)), "ray"
        u = -np.linalg.lstsq(Hr, gr, rcond=None)[0]
        return base + Z @ u, "point"

    def multipliers(self, W, x):
        q = self.q
        A, _ = self.rows(W)
        rhs = -(q.hessian @ x + q.gradient)
        if A.shape[0] == 0:
            return np.zeros(0)
        return np.linalg.lstsq(A.T, rhs, rcond=None)[0]

    # -- phase 1 ---------------------------------------------------------------
    def feasible(self, x) -> bool:
        q = self.q
        ok_eq = np.all(np.abs(q.a_eq @ x + q.b_eq) <= 1e-9 * self.scale) if q.b_eq.size else True
        ok_in = np.all(q.a_in @ x + q.b_in <= self.feas_tol * 100) if q.b_in.size else True
        return bool(ok_eq and ok_in)

    def phase_one(self):
        q = self.q
        if q.b_in.size == 0:
            x, _ = self.subspace_minimizer_safe(())
            if not self.feasible(x):
                raise _Infeasible()
            return x
        res = linprog(
            np.zeros(self.n),
            A_ub=q.a_in,
            b_ub=-q.b_in,
            A_eq=q.a_eq if q.b_eq.size else None,
            b_eq=-q.b_eq if q.b_eq.size else None,
            bounds=[(None, None)] * self.n,
            method="highs",
        )
        if res.status == 2:
            raise _Infeasible()
        if res.status != 0 or res.x is None:
            raise _Infeasible()
        return np.asarray(res.x, dtype=float)

    def subspace_minimizer_safe(self, W):
        A, b = self.rows(W)
        if A.shape[0]:
            x = np.linalg.lstsq(A, -b, rcond=None)[0]
        else:
            x = np.zeros(self.n)
        return x, "point"

    def active_at(self, x, base=()):
        q = self.q
        W = list(base)
        A, _ = self.rows(W)
        s = q.a_in @ x + q.b_in
        for i in range(q.b_in.size):
            if i in W:
                continue
            if abs(s[i]) <= 1e-9 * self.scale and _independent(A, q.a_in[i]):
                W.append(i)
                A = np.vstack([A, q.a_in[i]])
        return W

    # -- main loop -------------------------------------------------------------
    def start(self, warm):
        q = self.q
        if warm:
            W = []
            A, _ = self.rows(())
            for i in sorted(set(int(i) for i in warm)):
                if 0 <= i < q.b_in.size and _independent(A, q.a_in[i]):
                    W.append(i)
                    A = np.vstack([A, q.a_in[i]])
            try:
                x, kind = self.subspace_minimizer(W, None)
            except np.linalg.LinAlgError:
                kind = "ray"
            if kind == "point" and self.feasible(x):
                return x, W
        try:
            x, kind = self.subspace_minimizer([], None)
        except np.linalg.LinAlgError:
            kind = "ray"
        if kind == "point" and self.feasible(x):
            return x, []
        x = self.phase_one()
        return x, self.active_at(x)

    def run(self, warm):
        q = self.q
        mi = q.b_in.size
        cap = 50 * (self.n + mi)
        x, W = self.start(warm)
        changes = 0
        degenerate = 0
        bland = False
        for it in range(1, cap + 1):
            target, kind = self.subspace_minimizer(W, x)
            if kind == "point":
                p = target - x
                step_small = np.linalg.norm(p) <= 1e-13 * max(1.0, np.linalg.norm(x))
            else:
                p = target
                step_small = False
            if step_small:
                x = target
                mult = self.multipliers(W, x)
                mu_w = mult[len(self.eq_rows):]
                if mu_w.size == 0 or np.min(mu_w) >= -1e-12 * self.scale:
                    return self.finish(x, W, it, changes)
                if bland:
                    j = min((W[k], k) for k in range(len(W)) if mu_w[k] < -1e-12 * self.scale)[1]
                else:
                    j = int(np.argmin(mu_w))
                W = W[:j] + W[j + 1:]
                changes += 1
                continue
            # ratio test along p
            s = q.a_in @ x + q.b_in
            ap = q.a_in @ p
            alpha = 1.0 if kind == "point" else np.inf
            block = None
            for i in range(mi):
                if i in W or ap[i] <= 1e-14 * np.linalg.norm(q.a_in[i]) * np.linalg.norm(p):
                    continue
                a_i = max(0.0, -s[i]) / ap[i]
                if a_i < alpha:  # strict: lowest index wins ties
                    alpha, block = a_i, i
            if block is None and kind == "ray":
                return QpSolution(x, np.zeros(q.b_eq.size), np.zeros(mi), tuple(sorted(W)), "unbounded",
                                  iterations=it, working_set_changes=changes)
            x = x + alpha * p
            if block is not None:
                A, _ = self.rows(W)
                if _independent(A, q.a_in[block]):
                    W = W + [block]
                    changes += 1
                if alpha == 0.0:
                    degenerate += 1
                    if degenerate >= _DEGENERATE_LIMIT:
                        bland = True
                else:
                    degenerate = 0
        return QpSolution(x, np.zeros(q.b_eq.size), np.zeros(mi), tuple(sorted(W)), "degenerate-cycle",
                          iterations=cap, working_set_changes=changes)

    def finish(self, x, W, it, changes):
        q = self.q
        mult = self.multipliers(W, x)
        lam = np.zeros(q.b_eq.size)
        lam[self.eq_rows] = mult[: len(self.eq_rows)]
        mu = np.zeros(q.b_in.size)
        mu_w = np.maximum(mult[len(self.eq_rows):], 0.0)
        mu[list(W)] = mu_w
        res = qp_kkt_residual(q, x, lam, mu)
        if res > KKT_TOL * _scale(q, x):
            log.warning("QP KKT residual %.3g exceeds tolerance", res)
        return QpSolution(x, lam, mu, tuple(sorted(W)), "optimal", q.objective(x), it, res, changes)


def solve_qp(q: QpData, warm_active: Iterable[int] | None = None, allow_indefinite: bool = False) -> QpSolution:
    """Solve a dense QP with a primal active-set method.

    ``warm_active`` seeds the working set with inequality indices.  With
    ``allow_indefinite`` the Hessian only needs to be positive definite on the
    final working-set face; negative-curvature rays are followed until a
    constraint blocks, and the status is "unbounded" otherwise.
    """
    solver = _Solver(q, allow_indefinite)
    try:
        return solver.run(list(warm_active) if warm_active is not None else None)
    except _Infeasible:
        n = q.n
        return QpSolution(np.full(n, np.nan), np.zeros(q.b_eq.size), np.zeros(q.b_in.size), (), "infeasible")
