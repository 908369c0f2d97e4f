"""Stationarity classification, regularity checks and convergence diagnostics."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from itertools import product
from typing import Sequence

import numpy as np
from scipy.optimize import lsq_linear, nnls

from .model import (
    DEFAULT_ACTIVITY_TOL,
    ComplementarityPartition,
    MpccProblem,
    PartitionInfeasibleError,
    PrimalDualPoint,
    _as_mpcc,
    active_sets,
    complementarity_partition,
    mpcc_lagrangian_hessian,
)
from .qpcc import ENUMERATION_CAP, EnumerationCapError

__all__ = [
    "CLASS_ORDER",
    "InfeasiblePointError",
    "BiactiveDiagnostic",
    "StationarityReport",
    "BranchCertificate",
    "BStationarityReport",
    "LicqReport",
    "SsoscReport",
    "UlscReport",
    "OrderEstimate",
    "ContractionFit",
    "StabilizationReport",
    "classify_stationarity",
    "check_b_stationarity",
    "check_mpcc_licq",
    "check_mpcc_ssosc",
    "check_ulsc_pulsc",
    "estimate_order",
    "fit_contraction",
    "stabilization_report",
]

CLASS_ORDER = ("S", "M", "C", "A", "W")


class InfeasiblePointError(ValueError):
    def __init__(self, message: str, constraint: str):
        self.constraint = constraint
        super().__init__(message)


# ---------------------------------------------------------------------------
# active-gradient systems


@dataclass(frozen=True)
class _ActiveSystem:
    matrix: np.ndarray  # columns: ∇h, ∇g_A, −∇G_act, −∇H_act
    rhs: np.ndarray  # −∇f
    g_active: tuple[int, ...]
    g_idx: tuple[int, ...]  # pairs whose G is in the system
    h_idx: tuple[int, ...]
    m_h: int


def _check_feasible(p: MpccProblem, w, tol: float) -> ComplementarityPartition:
    hv = p.h.values(w)
    for i, v in enumerate(hv):
        if abs(v) > tol:
            raise InfeasiblePointError(f"equality {i} violated: h={v:.6g}", f"h[{i}]")
    gv = p.g.values(w)
    for i, v in enumerate(gv):
        if v > tol:
            raise InfeasiblePointError(f"inequality {i} violated: g={v:.6g}", f"g[{i}]")
    try:
        return complementarity_partition(p, w, tol)
    except PartitionInfeasibleError as exc:
        raise InfeasiblePointError(str(exc), f"comp[{exc.index}]") from exc


def _system(p: MpccProblem, w, part: ComplementarityPartition, tol: float, g_idx=None, h_idx=None) -> _ActiveSystem:
    gv = p.g.values(w)
    g_active = tuple(i for i in range(p.m_g) if abs(gv[i]) <= tol)
    if g_idx is None:
        g_idx = tuple(sorted(part.i_zero_plus + part.i_zero_zero))
    if h_idx is None:
        h_idx = tuple(sorted(part.i_plus_zero + part.i_zero_zero))
    cols = []
    if p.m_h:
        cols.append(p.h.jacobian(w).T)
    if g_active:
        cols.append(p.g.jacobian(w)[list(g_active)].T)
    if g_idx:
        cols.append(-p.G.jacobian(w)[list(g_idx)].T)
    if h_idx:
        cols.append(-p.H.jacobian(w)[list(h_idx)].T)
    M = np.hstack(cols) if cols else np.zeros((p.n, 0))
    return _ActiveSystem(M, -p.objective_gradient(w), g_active, tuple(g_idx), tuple(h_idx), p.m_h)


def _unpack(p: MpccProblem, sys: _ActiveSystem, y: np.ndarray):
    lam = np.zeros(p.m_h)
    mu = np.zeros(p.m_g)
    xi = np.zeros(p.m)
    nu = np.zeros(p.m)
    k = 0
    lam[:] = y[k:k + p.m_h]
    k += p.m_h
    mu[list(sys.g_active)] = y[k:k + len(sys.g_active)]
    k += len(sys.g_active)
    xi[list(sys.g_idx)] = y[k:k + len(sys.g_idx)]
    k += len(sys.g_idx)
    nu[list(sys.h_idx)] = y[k:k + len(sys.h_idx)]
    return lam, mu, xi, nu


def _rank(M: np.ndarray, tol: float) -> tuple[int, np.ndarray]:
    if M.size == 0:
        return 0, np.zeros(0)
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0, s
    return int(np.sum(s > tol * s[0])), s


def _bounded_solve(M, rhs, lower, upper):
    """Least squares with bounds; works for any column count (including zero)."""
    if M.shape[1] == 0:
        return np.zeros(0), float(np.max(np.abs(rhs), initial=0.0))
    res = lsq_linear(M, rhs, bounds=(lower, upper), method="bvls", tol=1e-14, lsmr_tol="auto")
    y = res.x
    return y, float(np.max(np.abs(M @ y - rhs), initial=0.0))


# ---------------------------------------------------------------------------
# classification


@dataclass(frozen=True)
class BiactiveDiagnostic:
    index: int
    xi: float
    nu: float
    passes: dict


@dataclass(frozen=True, eq=False)
class StationarityReport:
    cls: str  # not-stationary | W | A | C | M | S
    lam: np.ndarray
    mu: np.ndarray
    xi: np.ndarray
    nu: np.ndarray
    biactive: tuple[BiactiveDiagnostic, ...]
    residual: float
    mpcc_licq: bool
    rank_deficient: bool
    partition: ComplementarityPartition
    b_stationary: bool | None = None

    def multipliers(self, w) -> PrimalDualPoint:
        return PrimalDualPoint(w, self.lam, self.mu, self.xi, self.nu)

    def to_dict(self) -> dict:
        return {
            "class": self.cls,
            "lambda": self.lam.tolist(),
            "mu": self.mu.tolist(),
            "xi": self.xi.tolist(),
            "nu": self.nu.tolist(),
            "biactive": [asdict(b) for b in self.biactive],
            "residual": self.residual,
            "mpcc_licq": self.mpcc_licq,
            "rank_deficient": self.rank_deficient,
            "partition": {
                "I0+": list(self.partition.i_zero_plus),
                "I+0": list(self.partition.i_plus_zero),
                "I00": list(self.partition.i_zero_zero),
            },
            "b_stationary": self.b_stationary,
        }


def _sign_tests(xi: float, nu: float, tol: float) -> dict:
    scale = max(1.0, abs(xi), abs(nu))
    return {
        "S": xi >= -tol and nu >= -tol,
        # a zero multiplier is judged on its own size, so that M keeps implying C and A
        "M": (xi > tol and nu > tol) or min(abs(xi), abs(nu)) <= tol,
        "C": xi * nu >= -tol * scale,
        "A": xi >= -tol or nu >= -tol,
    }


def classify_stationarity(p: MpccProblem, w, tol: float = DEFAULT_ACTIVITY_TOL,
                          with_b_stationarity: bool = True) -> StationarityReport:
    """Solve for MPCC multipliers at ``w`` and report the strongest class that holds.

    Classes are tested in the order S, M, C, A, W; C and A are not nested
    (two negative biactive multipliers pass C and fail A), so the report
    names the first test that passes.
    """
    p = _as_mpcc(p)
    w = np.asarray(w, float)
    part = _check_feasible(p, w, tol)
    sys = _system(p, w, part, tol)
    M, rhs = sys.matrix, sys.rhs
    rank, _ = _rank(M, 1e-10)
    deficient = rank < M.shape[1]
    licq = check_mpcc_licq(p, w, tol).holds
    y = np.linalg.lstsq(M, rhs, rcond=None)[0] if M.shape[1] else np.zeros(0)
    lam, mu, xi, nu = _unpack(p, sys, y)
    scale = max(1.0, float(np.max(np.abs(rhs), initial=0.0)))
    residual = float(np.max(np.abs(M @ y - rhs), initial=0.0))
    if deficient and mu.size and np.min(mu[list(sys.g_active)], initial=0.0) < -tol:
        # multipliers are not unique: look for a sign-feasible member of the solution set
        lower = np.full(M.shape[1], -np.inf)
        lower[p.m_h:p.m_h + len(sys.g_active)] = 0.0
        y2, res2 = _bounded_solve(M, rhs, lower, np.full(M.shape[1], np.inf))
        if res2 <= tol * scale:
            y, residual = y2, res2
            lam, mu, xi, nu = _unpack(p, sys, y)
    solvable = residual <= tol * scale and np.min(mu[list(sys.g_active)], initial=0.0) >= -tol
    diags = []
    for i in part.i_zero_zero:
        # signs are judged on the same scale as the residual, as in check_b_stationarity
        diags.append(BiactiveDiagnostic(i, float(xi[i]), float(nu[i]), _sign_tests(xi[i], nu[i], tol * scale)))
    if not solvable:
        cls = "not-stationary"
    else:
        cls = "W"
        for name in ("S", "M", "C", "A"):
            if all(d.passes[name] for d in diags):
                cls = name
                break
    if cls == "S":
        assert all(d.passes[k] for d in diags for k in ("M", "C", "A")), "S must imply M, C and A"
    if cls == "M":
        assert all(d.passes["C"] and d.passes["A"] for d in diags), "M must imply C and A"
    b_stat = None
    if with_b_stationarity and len(part.i_zero_zero) <= ENUMERATION_CAP:
        b_stat = check_b_stationarity(p, w, tol).holds
    return StationarityReport(cls, lam, mu, xi, nu, tuple(diags), residual, licq, deficient, part, b_stat)


# ---------------------------------------------------------------------------
# B-stationarity


@dataclass(frozen=True, eq=False)
class BranchCertificate:
    signature: str
    holds: bool
    residual: float
    xi: np.ndarray
    nu: np.ndarray


@dataclass(frozen=True, eq=False)
class BStationarityReport:
    holds: bool
    branches: tuple[BranchCertificate, ...]


def check_b_stationarity(p: MpccProblem, w, tol: float = DEFAULT_ACTIVITY_TOL,
                         cap: int = ENUMERATION_CAP) -> BStationarityReport:
    """Certify stationarity of every branch NLP through ``w``.

    Branch I fixes G_i = 0 for i in I (= I0+ plus a subset of I00) and H_i = 0
    otherwise.  Each branch solves its stationarity system with μ >= 0,
    ν_i >= 0 for i in I ∩ I00 and ξ_i >= 0 for i in I00 \\ I.
    """
    p = _as_mpcc(p)
    w = np.asarray(w, float)
    part = _check_feasible(p, w, tol)
    biactive = part.i_zero_zero
    if len(biactive) > cap:
        raise EnumerationCapError(len(biactive), cap)
    sys = _system(p, w, part, tol)
    M, rhs = sys.matrix, sys.rhs
    scale = max(1.0, float(np.max(np.abs(rhs), initial=0.0)))
    off_g = p.m_h + len(sys.g_active)
    off_h = off_g + len(sys.g_idx)
    certs = []
    for sides in product("GH", repeat=len(biactive)):
        lower = np.full(M.shape[1], -np.inf)
        lower[p.m_h:off_g] = 0.0
        sig = ["G" if i in part.i_zero_plus else "H" for i in range(p.m)]
        for i, side in zip(biactive, sides):
            sig[i] = side
            if side == "G":
                lower[off_h + sys.h_idx.index(i)] = 0.0  # H_i >= 0 is an inequality
            else:
                lower[off_g + sys.g_idx.index(i)] = 0.0
        y, res = _bounded_solve(M, rhs, lower, np.full(M.shape[1], np.inf))
        _, _, xi, nu = _unpack(p, sys, y)
        certs.append(BranchCertificate("".join(sig), res <= tol * scale, res, xi, nu))
    return BStationarityReport(all(c.holds for c in certs), tuple(certs))


# ---------------------------------------------------------------------------
# constraint qualification and second order


@dataclass(frozen=True, eq=False)
class LicqReport:
    holds: bool
    rank: int
    columns: int
    singular_values: np.ndarray


def check_mpcc_licq(p: MpccProblem, w, tol: float = DEFAULT_ACTIVITY_TOL) -> LicqReport:
    p = _as_mpcc(p)
    w = np.asarray(w, float)
    part = _check_feasible(p, w, tol)
    M = _system(p, w, part, tol).matrix
    rank, s = _rank(M, tol)
    return LicqReport(rank == M.shape[1], rank, M.shape[1], s)


@dataclass(frozen=True)
class SsoscReport:
    holds: bool
    reduced_min_eigenvalues: dict


def _null_space(A: np.ndarray, n: int) -> np.ndarray:
    if A.shape[0] == 0:
        return np.eye(n)
    _, s, Vt = np.linalg.svd(A)
    r = int(np.sum(s > 1e-10 * (s[0] if s.size and s[0] > 0 else 1.0)))
    return Vt[r:].T


def check_mpcc_ssosc(p: MpccProblem, z: PrimalDualPoint, tol: float = DEFAULT_ACTIVITY_TOL) -> SsoscReport:
    """Positive definiteness of ∇²𝓛 on the strong critical cone of every branch through w."""
    p = _as_mpcc(p)
    w = z.w
    part = _check_feasible(p, w, tol)
    hess = mpcc_lagrangian_hessian(p, z)
    scale = max(1.0, float(np.linalg.norm(hess, 2)))
    acts = active_sets(p, w, z.mu, tol)
    Jh, Jg, JG, JH = p.h.jacobian(w), p.g.jacobian(w), p.G.jacobian(w), p.H.jacobian(w)
    out = {}
    for sides in product("GH", repeat=len(part.i_zero_zero)):
        in_i = set(part.i_zero_plus) | {i for i, s in zip(part.i_zero_zero, sides) if s == "G"}
        rows = [Jh, Jg[list(acts.strictly_active)]]
        bi = set(part.i_zero_zero)
        # fixed sides always; the free side of a biactive pair only with a positive multiplier
        g_rows = [i for i in range(p.m) if i in in_i or (i in bi and z.xi[i] > tol)]
        h_rows = [i for i in range(p.m) if i not in in_i or (i in bi and z.nu[i] > tol)]
        rows += [JG[g_rows], JH[h_rows]]
        A = np.vstack([r.reshape(-1, p.n) for r in rows])
        Z = _null_space(A, p.n)
        sig = "".join("G" if i in in_i else "H" for i in range(p.m))
        if Z.shape[1] == 0:
            out[sig] = float("inf")
            continue
        out[sig] = float(np.linalg.eigvalsh(Z.T @ hess @ Z)[0])
    holds = all(v > tol * scale for v in out.values())
    return SsoscReport(holds, out)


@dataclass(frozen=True)
class UlscReport:
    ulsc: bool
    pulsc: bool
    i00_plus: tuple[int, ...]
    i00_zero: tuple[int, ...]


def check_ulsc_pulsc(report: StationarityReport, part: ComplementarityPartition | None = None,
                     tol: float = DEFAULT_ACTIVITY_TOL) -> UlscReport:
    part = part or report.partition
    xi, nu = report.xi, report.nu
    bi = part.i_zero_zero
    ulsc = all(xi[i] > tol and nu[i] > tol for i in bi)
    pulsc = all(xi[i] > tol or nu[i] > tol for i in bi)
    plus = tuple(i for i in bi if xi[i] > tol or nu[i] > tol)
    zero = tuple(i for i in bi if abs(xi[i]) <= tol and abs(nu[i]) <= tol)
    return UlscReport(ulsc, pulsc, plus, zero)


# ---------------------------------------------------------------------------
# convergence order


@dataclass(frozen=True)
class OrderEstimate:
    classification: str  # linear | superlinear | quadratic | inconclusive
    rate: float | None
    quadratic_constant: float | None
    table: tuple[tuple[int, float, float | None, float | None], ...]

    def to_dict(self) -> dict:
        return {
            "classification": self.classification,
            "rate": self.rate,
            "quadratic_constant": self.quadratic_constant,
            "table": [list(r) for r in self.table],
        }


LINEAR_BAND = 0.2
FAST_RATIO = 0.1
QUADRATIC_BAND = 10.0


def estimate_order(errors: Sequence[float], tail: int = 5) -> OrderEstimate:
    """Classify the convergence order of a positive error sequence.

    ρ_k = e_{k+1}/e_k, q_k = e_{k+1}/e_k².  Linear: the last ``tail`` ratios
    (at least three) lie in (0.01, 1) within ±20 % of their geometric mean,
    which is reported as the rate.  Otherwise take the longest final run of
    strictly decreasing ratios that are all <= 0.1 (at least two): quadratic
    when q_k over that run never grows beyond a factor 10 of an earlier value,
    superlinear when it does.  Anything else is inconclusive.
    """
    e = np.asarray(errors, float)
    if e.size < 4:
        raise ValueError("need at least four errors")
    if np.any(~np.isfinite(e)) or np.any(e <= 0):
        raise ValueError("errors must be finite and strictly positive")
    rho = e[1:] / e[:-1]
    q = e[1:] / e[:-1] ** 2
    table = tuple((k, float(e[k]), float(rho[k]) if k < rho.size else None,
                   float(q[k]) if k < q.size else None) for k in range(e.size))
    L = min(max(3, tail), rho.size)
    last = rho[-L:]
    geo = float(np.exp(np.mean(np.log(last))))
    if rho.size >= 3 and np.all((last > 0.01) & (last < 1.0)) and np.all(np.abs(last / geo - 1.0) <= LINEAR_BAND):
        return OrderEstimate("linear", geo, None, table)
    run = 0
    for k in range(rho.size - 1, -1, -1):
        if rho[k] > FAST_RATIO:
            break
        if run and rho[k] <= rho[k + 1]:
            break
        run += 1
    if run >= 2:
        qs = q[-run:]
        growth = max(qs[j] / qs[i] for i in range(run) for j in range(i + 1, run))
        if growth <= QUADRATIC_BAND:
            return OrderEstimate("quadratic", None, float(np.max(qs)), table)
        return OrderEstimate("superlinear", None, None, table)
    return OrderEstimate("inconclusive", None, None, table)


@dataclass(frozen=True)
class ContractionFit:
    alpha: float
    beta: float
    pairs: int

    def to_dict(self):
        return asdict(self)


def fit_contraction(errors: Sequence[float], floor: float = 1e-13, tail: int = 4) -> ContractionFit:
    """Fit e_{k+1} ≈ α e_k + β e_k² with α, β >= 0 over the tail of an error sequence.

    Errors at or below ``floor`` count as zero.  The tail is the last ``tail``
    pairs of the final strictly decreasing run; each pair contributes the
    ratio equation e_{k+1}/e_k = α + β e_k, solved by nonnegative least squares.
    """
    e = np.where(np.asarray(errors, float) <= floor, 0.0, np.asarray(errors, float))
    zeros = np.flatnonzero(e == 0.0)
    if zeros.size:
        e = e[:zeros[0] + 1]  # once converged exactly, later entries carry no information
    start = e.size - 1
    while start > 0 and e[start - 1] > e[start]:
        start -= 1
    pairs = [(e[k], e[k + 1]) for k in range(start, e.size - 1) if e[k] > 0.0]
    pairs = pairs[-tail:]
    if not pairs:
        raise ValueError("no decreasing error pairs to fit")
    A = np.array([[1.0, a] for a, _ in pairs])
    b = np.array([c / a for a, c in pairs])
    coef, _ = nnls(A, b)
    return ContractionFit(float(coef[0]), float(coef[1]), len(pairs))


# ---------------------------------------------------------------------------
# active-set stabilization


@dataclass(frozen=True)
class StabilizationReport:
    chains: dict  # chain name -> tuple of per-iteration booleans
    first_permanent: dict  # chain name -> first k from which the chain holds to the end, or None
    inequality_identification: dict  # index -> first k it is active from then on, or "asymptotic-only"
    pair_identification: dict  # biactive index -> first k it is biactive from then on, or "asymptotic-only"
    reference_sets: dict

    def to_dict(self) -> dict:
        return {
            "chains": {k: list(v) for k, v in self.chains.items()},
            "first_permanent": dict(self.first_permanent),
            "inequality_identification": {str(k): v for k, v in self.inequality_identification.items()},
            "pair_identification": {str(k): v for k, v in self.pair_identification.items()},
            "reference_sets": {k: list(v) for k, v in self.reference_sets.items()},
        }


def _first_permanent(flags: Sequence[bool]):
    k = len(flags)
    while k > 0 and flags[k - 1]:
        k -= 1
    return k if k < len(flags) else None


def stabilization_report(trace, p: MpccProblem, reference: PrimalDualPoint,
                         tol: float = DEFAULT_ACTIVITY_TOL) -> StabilizationReport:
    """Check the inequality and complementarity active-set chains at every iterate."""
    p = _as_mpcc(p)
    rep = classify_stationarity(p, reference.w, tol, with_b_stationarity=False)
    if rep.cls != "S":
        raise ValueError(f"reference point is {rep.cls}-stationary, not S-stationary")
    ref_act = active_sets(p, reference.w, reference.mu, tol)
    part = complementarity_partition(p, reference.w, tol)
    bi = part.i_zero_zero
    i00_plus = {i for i in bi if reference.xi[i] > tol or reference.nu[i] > tol}
    i00_zero = {i for i in bi if i not in i00_plus}
    a_plus, a_zero = set(ref_act.strictly_active), set(ref_act.weakly_active)
    z_plus, plus_z = set(part.i_zero_plus), set(part.i_plus_zero)
    chains = {"inequality": [], "comp_0+": [], "comp_+0": [], "comp_00": []}
    for rec in trace.records:
        act = set(rec.active)
        strict_k = {i for i in act if rec.z.mu[i] > tol}
        chains["inequality"].append(a_plus <= act <= (a_plus | a_zero) and strict_k == a_plus)
        if rec.partition is None:
            for key in ("comp_0+", "comp_+0", "comp_00"):
                chains[key].append(False)
            continue
        qz_plus, qplus_z, qzz = (set(s) for s in rec.partition)
        chains["comp_0+"].append(z_plus <= qz_plus <= (z_plus | i00_zero))
        chains["comp_+0"].append(plus_z <= qplus_z <= (plus_z | i00_zero))
        chains["comp_00"].append(i00_plus <= qzz <= (i00_plus | i00_zero))
    first = {k: _first_permanent(v) for k, v in chains.items()}
    ineq_id = {}
    for i in ref_act.active:
        flags = [i in rec.active for rec in trace.records]
        k = _first_permanent(flags)
        ineq_id[i] = "asymptotic-only" if k is None else k
    pair_id = {}
    for i in bi:
        flags = [rec.partition is not None and i in rec.partition[2] for rec in trace.records]
        k = _first_permanent(flags)
        pair_id[i] = "asymptotic-only" if k is None else k
    refs = {
        "A": tuple(ref_act.active), "A+": tuple(sorted(a_plus)), "A0": tuple(sorted(a_zero)),
        "I0+": tuple(sorted(z_plus)), "I+0": tuple(sorted(plus_z)),
        "I00+": tuple(sorted(i00_plus)), "I00_0": tuple(sorted(i00_zero)),
    }
    return StabilizationReport({k: tuple(v) for k, v in chains.items()}, first, ineq_id, pair_id, refs)
