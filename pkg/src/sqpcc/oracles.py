"""Independent reference computations used to cross-check the solvers.

These deliberately avoid the active-set machinery: they enumerate active
sets and solve each equality-constrained KKT system directly.
"""

from __future__ import annotations

from itertools import combinations, product

import numpy as np

__all__ = ["enumerate_qp", "enumerate_qpcc", "central_gradient", "central_hessian"]


def _kkt_solve(H, c, A, b):
    """Solve [[H, Aᵀ], [A, 0]] [x; y] = [-c; -b]; None when singular."""
    n = c.size
    k = A.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = H
    K[:n, n:] = A.T
    K[n:, :n] = A
    rhs = np.concatenate([-c, -b])
    if k and np.linalg.matrix_rank(A) < k:
        return None
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return None
    return sol[:n], sol[n:]


def enumerate_qp(H, c, a_eq, b_eq, a_in, b_in, tol=1e-9):
    """Brute-force strictly convex QP: try every subset of inequalities as active.

    Returns (x, objective) of the best KKT-feasible subset, or None when infeasible.
    """
    H = np.asarray(H, float)
    c = np.asarray(c, float)
    n = c.size
    a_eq = np.asarray(a_eq, float).reshape(-1, n)
    b_eq = np.asarray(b_eq, float).reshape(-1)
    a_in = np.asarray(a_in, float).reshape(-1, n)
    b_in = np.asarray(b_in, float).reshape(-1)
    best = None
    me = a_eq.shape[0]
    for r in range(a_in.shape[0] + 1):
        for S in combinations(range(a_in.shape[0]), r):
            S = list(S)
            A = np.vstack([a_eq, a_in[S]])
            b = np.concatenate([b_eq, b_in[S]])
            out = _kkt_solve(H, c, A, b)
            if out is None:
                continue
            x, y = out
            tol_x = tol * max(1.0, float(np.max(np.abs(x), initial=0.0)))
            if np.any(y[me:] < -tol * max(1.0, float(np.max(np.abs(y), initial=0.0)))):
                continue
            if a_in.shape[0] and np.any(a_in @ x + b_in > tol_x):
                continue
            val = 0.5 * x @ H @ x + c @ x
            if best is None or val < best[1] - 1e-12:
                best = (x, val)
    return best


def enumerate_qpcc(H, c, a_eq, b_eq, a_in, b_in, g_rows, g_const, h_rows, h_const, tol=1e-9):
    """All S-stationary and piecewise-stationary points of a small QPCC.

    Every pair is assigned one of three states (G = 0 only, H = 0 only, both
    zero) and every subset of the ordinary inequalities is tried as active.
    A KKT point of the piece is kept when it is feasible for the QPCC and its
    multipliers have the signs the piece requires.  Returns a list of
    (x, objective, s_stationary) with duplicate steps merged.
    """
    H = np.asarray(H, float)
    c = np.asarray(c, float)
    n = c.size
    a_eq = np.asarray(a_eq, float).reshape(-1, n)
    b_eq = np.asarray(b_eq, float).reshape(-1)
    a_in = np.asarray(a_in, float).reshape(-1, n)
    b_in = np.asarray(b_in, float).reshape(-1)
    g_rows = np.asarray(g_rows, float).reshape(-1, n)
    h_rows = np.asarray(h_rows, float).reshape(-1, n)
    g_const = np.asarray(g_const, float).reshape(-1)
    h_const = np.asarray(h_const, float).reshape(-1)
    m = g_rows.shape[0]
    me = a_eq.shape[0]
    found: list[list] = []
    for states in product("GHB", repeat=m):
        for r in range(a_in.shape[0] + 1):
            for S in combinations(range(a_in.shape[0]), r):
                rows = [a_eq, a_in[list(S)]]
                consts = [b_eq, b_in[list(S)]]
                for i, st in enumerate(states):
                    if st in "GB":
                        rows.append(g_rows[i:i + 1])
                        consts.append(g_const[i:i + 1])
                    if st in "HB":
                        rows.append(h_rows[i:i + 1])
                        consts.append(h_const[i:i + 1])
                A = np.vstack(rows)
                b = np.concatenate(consts)
                out = _kkt_solve(H, c, A, b)
                if out is None:
                    continue
                x, y = out
                # feasibility is judged relative to the size of the solution
                tol_x = tol * max(1.0, float(np.max(np.abs(x), initial=0.0)))
                tol_y = tol * max(1.0, float(np.max(np.abs(y), initial=0.0)))
                mu = y[me:me + len(S)]
                if np.any(mu < -tol_y):
                    continue
                if a_in.shape[0] and np.any(a_in @ x + b_in > tol_x):
                    continue
                lg = g_rows @ x + g_const
                lh = h_rows @ x + h_const
                if np.any(lg < -tol_x) or np.any(lh < -tol_x) or np.any(np.minimum(np.abs(lg), np.abs(lh)) > tol_x):
                    continue
                # pair multipliers: Aᵀy enters with + sign; ξ, ν enter with − sign
                k = me + len(S)
                xi = np.zeros(m)
                nu = np.zeros(m)
                for i, st in enumerate(states):
                    if st in "GB":
                        xi[i] = -y[k]
                        k += 1
                    if st in "HB":
                        nu[i] = -y[k]
                        k += 1
                # piece sign requirements: the free side of a one-sided piece is an inequality
                ok = True
                s_flag = True
                for i, st in enumerate(states):
                    if st == "G" and abs(lh[i]) <= tol_x:
                        ok = False  # biactive points are covered by the "B" state
                    if st == "H" and abs(lg[i]) <= tol_x:
                        ok = False
                    if st == "B" and (xi[i] < -tol_y or nu[i] < -tol_y):
                        s_flag = False
                if not ok:
                    continue
                # a biactive point is a QPCC candidate when it is stationary for
                # some branch: G-branch needs ν >= 0, H-branch needs ξ >= 0
                if not s_flag:
                    bi = [i for i, st in enumerate(states) if st == "B"]
                    if not all(nu[i] >= -tol_y or xi[i] >= -tol_y for i in bi):
                        continue
                val = 0.5 * x @ H @ x + c @ x
                for entry in found:
                    if np.max(np.abs(entry[0] - x)) <= 1e-9:
                        entry[2] = entry[2] or s_flag
                        break
                else:
                    found.append([x, val, s_flag])
    return [tuple(e) for e in found]


def central_gradient(func, w, h=1e-6):
    w = np.asarray(w, float)
    out = np.zeros(w.size)
    for j in range(w.size):
        e = np.zeros(w.size)
        e[j] = h
        out[j] = (func(w + e) - func(w - e)) / (2 * h)
    return out


def central_hessian(grad_func, w, h=1e-6):
    """Central differences of a gradient function, symmetrised."""
    w = np.asarray(w, float)
    n = w.size
    out = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        out[:, j] = (np.asarray(grad_func(w + e)) - np.asarray(grad_func(w - e))) / (2 * h)
    return 0.5 * (out + out.T)
