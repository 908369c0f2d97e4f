"""MPCC data model, index sets, active sets and the derived NLPs.

Conventions used throughout the package:

* inequalities are stored as ``g(w) <= 0``;
* complementarity pairs are ``0 <= G_i(w) ⟂ H_i(w) >= 0``;
* the MPCC-Lagrangian is ``f + λᵀh + μᵀg − ξᵀG − νᵀH``;
* all index sets are 0-based.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .expr import (
    Const,
    Expr,
    ExprDomainError,
    ExprSyntaxError,
    Unary,
    Binary,
    differentiate,
    evaluate,
    parse_expr,
    simplify,
    variables_used,
)

__all__ = [
    "DEFAULT_ACTIVITY_TOL",
    "ExprVector",
    "MpccProblem",
    "NlpProblem",
    "PrimalDualPoint",
    "ComplementarityPartition",
    "BranchAssignment",
    "ActiveSets",
    "ModelSyntaxError",
    "PartitionInfeasibleError",
    "parse_model",
    "complementarity_partition",
    "active_sets",
    "nlp_reformulation",
    "branch_nlp",
    "relaxed_nlp",
    "mpcc_lagrangian_gradient",
    "mpcc_lagrangian_hessian",
    "mpcc_kkt_residual",
    "kkt_residual_components",
]

DEFAULT_ACTIVITY_TOL = 1e-8


class ModelSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class PartitionInfeasibleError(ValueError):
    """A complementarity pair is violated beyond tolerance."""

    def __init__(self, index: int, g_value: float, h_value: float, tol: float):
        self.index = index
        self.g_value = g_value
        self.h_value = h_value
        super().__init__(
            f"complementarity pair {index} infeasible: G={g_value:.6g}, H={h_value:.6g} (tol {tol:g})"
        )


# ---------------------------------------------------------------------------
# vectors of expressions with cached exact derivatives


class ExprVector:
    """An immutable tuple of scalar expressions plus their first and second derivatives.

    Derivative trees are built once at construction.
    """

    __slots__ = ("exprs", "n", "_grad", "_hess")

    def __init__(self, exprs: Iterable[Expr], n: int):
        self.exprs = tuple(exprs)
        self.n = n
        for e in self.exprs:
            bad = [i for i in variables_used(e) if not 0 <= i < n]
            if bad:
                raise ValueError(f"expression {e} references variable index {bad[0]} outside 0..{n - 1}")
        self._grad = tuple(tuple(differentiate(e, j) for j in range(n)) for e in self.exprs)
        self._hess = tuple(
            tuple(tuple(differentiate(gj, k) if k >= j else None for k in range(n)) for j, gj in enumerate(g))
            for g in self._grad
        )

    def __len__(self):
        return len(self.exprs)

    def __getitem__(self, i):
        return self.exprs[i]

    def values(self, w) -> np.ndarray:
        return np.array([evaluate(e, w) for e in self.exprs], dtype=float)

    def jacobian(self, w) -> np.ndarray:
        """Rows are gradients: shape (len, n)."""
        out = np.zeros((len(self.exprs), self.n))
        for i, g in enumerate(self._grad):
            for j, d in enumerate(g):
                if not (isinstance(d, Const) and d.value == 0.0):
                    out[i, j] = evaluate(d, w)
        return out

    def hessian(self, i: int, w) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        for j in range(self.n):
            for k in range(j, self.n):
                d = self._hess[i][j][k]
                if not (isinstance(d, Const) and d.value == 0.0):
                    out[j, k] = out[k, j] = evaluate(d, w)
        return out

    def weighted_hessian(self, weights, w) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        for i, c in enumerate(weights):
            if c != 0.0:
                out += c * self.hessian(i, w)
        return out

    def gradient_exprs(self, i: int) -> tuple[Expr, ...]:
        return self._grad[i]


# ---------------------------------------------------------------------------
# problems


@dataclass(frozen=True, eq=False)
class NlpProblem:
    """min f(w) s.t. equalities(w) = 0, inequalities(w) <= 0."""

    var_names: tuple[str, ...]
    objective: Expr
    equalities: tuple[Expr, ...] = ()
    inequalities: tuple[Expr, ...] = ()
    name: str = ""

    def to_mpcc(self) -> "MpccProblem":
        return MpccProblem(self.var_names, self.objective, self.equalities, self.inequalities, name=self.name)

    @property
    def n(self) -> int:
        return len(self.var_names)


@dataclass(frozen=True, eq=False)
class MpccProblem:
    """min f s.t. h = 0, g <= 0, 0 <= G ⟂ H >= 0 with optional least-squares residuals."""

    var_names: tuple[str, ...]
    objective: Expr
    equalities: tuple[Expr, ...] = ()
    inequalities: tuple[Expr, ...] = ()
    comp_g: tuple[Expr, ...] = ()
    comp_h: tuple[Expr, ...] = ()
    residuals: tuple[Expr, ...] | None = None
    name: str = ""
    f: ExprVector = field(init=False, repr=False)
    h: ExprVector = field(init=False, repr=False)
    g: ExprVector = field(init=False, repr=False)
    G: ExprVector = field(init=False, repr=False)
    H: ExprVector = field(init=False, repr=False)
    r: ExprVector | None = field(init=False, repr=False)

    def __post_init__(self):
        names = tuple(self.var_names)
        if len(names) < 1:
            raise ValueError("a problem needs at least one variable")
        if len(set(names)) != len(names):
            raise ValueError("duplicate variable names")
        if len(self.comp_g) != len(self.comp_h):
            raise ValueError("complementarity sides have different lengths")
        n = len(names)
        put = object.__setattr__
        put(self, "var_names", names)
        for attr in ("equalities", "inequalities", "comp_g", "comp_h"):
            put(self, attr, tuple(getattr(self, attr)))
        put(self, "f", ExprVector([self.objective], n))
        put(self, "h", ExprVector(self.equalities, n))
        put(self, "g", ExprVector(self.inequalities, n))
        put(self, "G", ExprVector(self.comp_g, n))
        put(self, "H", ExprVector(self.comp_h, n))
        if self.residuals is not None:
            put(self, "residuals", tuple(self.residuals))
            put(self, "r", ExprVector(self.residuals, n))
            _check_residuals(self)
        else:
            put(self, "r", None)

    @property
    def n(self) -> int:
        return len(self.var_names)

    @property
    def m(self) -> int:
        return len(self.comp_g)

    @property
    def m_h(self) -> int:
        return len(self.equalities)

    @property
    def m_g(self) -> int:
        return len(self.inequalities)

    def objective_value(self, w) -> float:
        return evaluate(self.objective, w)

    def objective_gradient(self, w) -> np.ndarray:
        return self.f.jacobian(w)[0]

    def as_nlp(self) -> NlpProblem:
        """The problem without its complementarity pairs (only meaningful when m = 0)."""
        if self.m:
            raise ValueError("problem has complementarity pairs; use nlp_reformulation")
        return NlpProblem(self.var_names, self.objective, self.equalities, self.inequalities, self.name)


def _check_residuals(p: MpccProblem, points: int = 100, tol: float = 1e-10):
    rng = np.random.default_rng(12345)
    checked = 0
    for _ in range(4 * points):
        w = rng.uniform(-2.0, 2.0, size=p.n)
        try:
            f = p.objective_value(w)
            rs = p.r.values(w)
        except ExprDomainError:
            continue
        if abs(f - float(rs @ rs)) > tol * max(1.0, abs(f)):
            raise ValueError(f"objective differs from the sum of squared residuals at w={w.tolist()}")
        checked += 1
        if checked == points:
            return
    if checked == 0:
        raise ValueError("could not evaluate the residual block at any sample point")


def _as_mpcc(p) -> MpccProblem:
    return p.to_mpcc() if isinstance(p, NlpProblem) else p


# ---------------------------------------------------------------------------
# primal-dual points and index sets


@dataclass(frozen=True, eq=False)
class PrimalDualPoint:
    w: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    xi: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        for name in ("w", "lam", "mu", "xi", "nu"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def primal(cls, p, w) -> "PrimalDualPoint":
        p = _as_mpcc(p)
        return cls(w, np.zeros(p.m_h), np.zeros(p.m_g), np.zeros(p.m), np.zeros(p.m))

    def check_dims(self, p) -> None:
        p = _as_mpcc(p)
        want = (p.n, p.m_h, p.m_g, p.m, p.m)
        have = (self.w.size, self.lam.size, self.mu.size, self.xi.size, self.nu.size)
        if want != have:
            raise ValueError(f"primal-dual dimensions {have} do not match problem {want}")

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.w, self.lam, self.mu, self.xi, self.nu])

    def with_w(self, w) -> "PrimalDualPoint":
        return PrimalDualPoint(w, self.lam, self.mu, self.xi, self.nu)

    def __eq__(self, other):
        if not isinstance(other, PrimalDualPoint):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("w", "lam", "mu", "xi", "nu")
        )

    __hash__ = None


@dataclass(frozen=True)
class ComplementarityPartition:
    i_zero_plus: tuple[int, ...]
    i_plus_zero: tuple[int, ...]
    i_zero_zero: tuple[int, ...]
    tol: float = DEFAULT_ACTIVITY_TOL

    @property
    def m(self) -> int:
        return len(self.i_zero_plus) + len(self.i_plus_zero) + len(self.i_zero_zero)


@dataclass(frozen=True)
class BranchAssignment:
    """``sides[i]`` is "G" (G_i = 0, H_i >= 0) or "H" (H_i = 0, G_i >= 0)."""

    sides: tuple[str, ...]

    def __post_init__(self):
        sides = tuple(self.sides)
        if any(s not in ("G", "H") for s in sides):
            raise ValueError(f"branch sides must be 'G' or 'H', got {sides!r}")
        object.__setattr__(self, "sides", sides)

    @classmethod
    def from_string(cls, text: str) -> "BranchAssignment":
        return cls(tuple(text.strip().upper()))

    @property
    def signature(self) -> str:
        return "".join(self.sides)

    def __str__(self):
        return self.signature

    def __len__(self):
        return len(self.sides)


@dataclass(frozen=True)
class ActiveSets:
    active: tuple[int, ...]
    strictly_active: tuple[int, ...]
    weakly_active: tuple[int, ...]
    inactive: tuple[int, ...]
    tol: float = DEFAULT_ACTIVITY_TOL


def complementarity_partition(p: MpccProblem, w, tol: float = DEFAULT_ACTIVITY_TOL) -> ComplementarityPartition:
    gv = p.G.values(w)
    hv = p.H.values(w)
    z_plus, plus_z, z_z = [], [], []
    for i, (a, b) in enumerate(zip(gv, hv)):
        if a < -tol or b < -tol or (a > tol and b > tol):
            raise PartitionInfeasibleError(i, float(a), float(b), tol)
        if a <= tol and b <= tol:
            z_z.append(i)
        elif a <= tol:
            z_plus.append(i)
        else:
            plus_z.append(i)
    return ComplementarityPartition(tuple(z_plus), tuple(plus_z), tuple(z_z), tol)


def active_sets(p, w, mu, tol: float = DEFAULT_ACTIVITY_TOL) -> ActiveSets:
    p = _as_mpcc(p)
    gv = p.g.values(w)
    mu = np.asarray(mu, dtype=float)
    act = [i for i in range(p.m_g) if abs(gv[i]) <= tol]
    strict = tuple(i for i in act if mu[i] > tol)
    weak = tuple(i for i in act if mu[i] <= tol)
    inactive = tuple(i for i in range(p.m_g) if i not in act)
    return ActiveSets(tuple(act), strict, weak, inactive, tol)


# ---------------------------------------------------------------------------
# derived problems


def _neg(e: Expr) -> Expr:
    return simplify(Unary("neg", e))


def nlp_reformulation(p: MpccProblem) -> NlpProblem:
    ineq = list(p.inequalities)
    ineq += [_neg(e) for e in p.comp_g]
    ineq += [_neg(e) for e in p.comp_h]
    ineq += [Binary("*", a, b) for a, b in zip(p.comp_g, p.comp_h)]
    return NlpProblem(p.var_names, p.objective, p.equalities, tuple(ineq), p.name)


def branch_nlp(p: MpccProblem, a: BranchAssignment) -> NlpProblem:
    if len(a) != p.m:
        raise ValueError(f"branch assignment has {len(a)} sides, problem has {p.m} pairs")
    eq = list(p.equalities)
    ineq = list(p.inequalities)
    for i, side in enumerate(a.sides):
        if side == "G":
            eq.append(p.comp_g[i])
            ineq.append(_neg(p.comp_h[i]))
        else:
            eq.append(p.comp_h[i])
            ineq.append(_neg(p.comp_g[i]))
    return NlpProblem(p.var_names, p.objective, tuple(eq), tuple(ineq), p.name)


def relaxed_nlp(p: MpccProblem, part: ComplementarityPartition) -> NlpProblem:
    eq = list(p.equalities)
    ineq = list(p.inequalities)
    zz = set(part.i_zero_zero)
    for i in range(p.m):
        if i in zz:
            ineq.append(_neg(p.comp_g[i]))
            ineq.append(_neg(p.comp_h[i]))
        elif i in part.i_zero_plus:
            eq.append(p.comp_g[i])
            ineq.append(_neg(p.comp_h[i]))
        else:
            eq.append(p.comp_h[i])
            ineq.append(_neg(p.comp_g[i]))
    return NlpProblem(p.var_names, p.objective, tuple(eq), tuple(ineq), p.name)


# ---------------------------------------------------------------------------
# Lagrangian and KKT residual


def mpcc_lagrangian_gradient(p, z: PrimalDualPoint) -> np.ndarray:
    p = _as_mpcc(p)
    w = z.w
    grad = p.objective_gradient(w)
    if p.m_h:
        grad = grad + p.h.jacobian(w).T @ z.lam
    if p.m_g:
        grad = grad + p.g.jacobian(w).T @ z.mu
    if p.m:
        grad = grad - p.G.jacobian(w).T @ z.xi - p.H.jacobian(w).T @ z.nu
    return grad


def mpcc_lagrangian_hessian(p, z: PrimalDualPoint) -> np.ndarray:
    p = _as_mpcc(p)
    w = z.w
    out = p.f.hessian(0, w)
    out += p.h.weighted_hessian(z.lam, w)
    out += p.g.weighted_hessian(z.mu, w)
    out -= p.G.weighted_hessian(z.xi, w)
    out -= p.H.weighted_hessian(z.nu, w)
    return 0.5 * (out + out.T)


def kkt_residual_components(p, z: PrimalDualPoint, tol: float = DEFAULT_ACTIVITY_TOL) -> dict[str, float]:
    """Infinity norms of each block of the S-stationarity residual."""
    p = _as_mpcc(p)
    w = z.w

    def inf(v):
        v = np.asarray(v, dtype=float)
        return float(np.max(np.abs(v))) if v.size else 0.0

    out = {"stationarity": inf(mpcc_lagrangian_gradient(p, z))}
    hv = p.h.values(w)
    gv = p.g.values(w)
    out["equality"] = inf(hv)
    out["inequality"] = inf(np.maximum(0.0, gv))
    out["inequality_complementarity"] = inf(np.minimum(z.mu, -gv))
    Gv = p.G.values(w)
    Hv = p.H.values(w)
    out["comp_g_sign"] = inf(np.maximum(0.0, -Gv))
    out["comp_h_sign"] = inf(np.maximum(0.0, -Hv))
    out["complementarity"] = inf(np.minimum(Gv, Hv))
    out["xi_inactive"] = inf(z.xi[Gv > tol])
    out["nu_inactive"] = inf(z.nu[Hv > tol])
    bi = (Gv <= tol) & (Hv <= tol)
    out["biactive_sign"] = inf(np.concatenate([np.maximum(0.0, -z.xi[bi]), np.maximum(0.0, -z.nu[bi])]))
    return out


def mpcc_kkt_residual(p, z: PrimalDualPoint, tol: float = DEFAULT_ACTIVITY_TOL) -> float:
    return max(kkt_residual_components(p, z, tol).values())


# ---------------------------------------------------------------------------
# model-file parser

_KEYWORDS = ("var", "minimize", "residuals", "comp")
_SUBJECT_TO = re.compile(r"^\s*subject\s+to\s*:?", re.IGNORECASE)
_RELOPS = ("==", "<=", ">=")


class _Stmt:
    __slots__ = ("text", "start")

    def __init__(self, text, start):
        self.text = text
        self.start = start


def _line_col(source: str, pos: int) -> tuple[int, int]:
    line = source.count("\n", 0, pos) + 1
    col = pos - (source.rfind("\n", 0, pos) + 1) + 1
    return line, col


def _strip_comments(source: str) -> str:
    # blank out comments but keep every character position intact
    return re.sub(r"#[^\n]*", lambda m: " " * len(m.group()), source)


def _split_statements(source: str) -> list[_Stmt]:
    clean = _strip_comments(source)
    stmts = []
    start = 0
    for k, ch in enumerate(clean):
        if ch == ";":
            stmts.append(_Stmt(clean[start:k], start))
            start = k + 1
    tail = clean[start:]
    if tail.strip():
        # a trailing statement without ';' is only accepted if it is the header alone
        if _SUBJECT_TO.sub("", tail).strip():
            raise ModelSyntaxError("missing ';' terminator", *_line_col(source, start + len(tail.rstrip())))
    return stmts


def _lead(stmt: _Stmt) -> tuple[str, int]:
    """Statement text with leading whitespace and any 'subject to:' header removed."""
    text = stmt.text
    m = _SUBJECT_TO.match(text)
    offset = m.end() if m else 0
    body = text[offset:]
    stripped = body.lstrip()
    offset += len(body) - len(stripped)
    return stripped.rstrip(), stmt.start + offset


def _first_word(text: str) -> str:
    m = re.match(r"[A-Za-z_][A-Za-z0-9_]*", text)
    return m.group() if m else ""


class _ModelParser:
    def __init__(self, source: str):
        self.source = source
        self.names: list[str] = []

    def fail(self, message, pos):
        raise ModelSyntaxError(message, *_line_col(self.source, pos))

    def expr(self, text: str, pos: int) -> Expr:
        if not text.strip():
            self.fail("empty expression", pos)
        try:
            return parse_expr(text, self.names)
        except ExprSyntaxError as exc:
            chars = len(text.encode("utf-8")[: exc.offset].decode("utf-8", errors="ignore"))
            self.fail(str(exc).rsplit(" (at offset", 1)[0], pos + chars)

    def parse(self, name: str = "") -> MpccProblem:
        objective = None
        residuals = None
        eq, ineq, cg, ch = [], [], [], []
        in_residuals = False
        for stmt in _split_statements(self.source):
            text, pos = _lead(stmt)
            word = _first_word(text)
            if not text:
                in_residuals = False
                continue
            if word == "var":
                in_residuals = False
                for m in re.finditer(r"[^,]+", text[3:]):
                    ident = m.group().strip()
                    at = pos + 3 + m.start() + (len(m.group()) - len(m.group().lstrip()))
                    if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", ident):
                        self.fail(f"bad variable name {ident!r}", at)
                    if ident in self.names:
                        self.fail(f"duplicate variable {ident!r}", at)
                    self.names.append(ident)
                continue
            if not self.names:
                self.fail("variables must be declared before use", pos)
            if word in ("minimize", "minimise"):
                in_residuals = False
                if objective is not None:
                    self.fail("objective given twice", pos)
                body = text[len(word):]
                if not body.strip():
                    self.fail("empty objective", pos)
                objective = self.expr(body, pos + len(word))
                continue
            if word == "residuals":
                if residuals is not None:
                    self.fail("residual block given twice", pos)
                residuals = []
                in_residuals = True
                body = text[len(word):]
                if body.strip():
                    residuals.append(self.expr(body, pos + len(word)))
                continue
            if word == "comp":
                in_residuals = False
                body = text[4:]
                split = _top_level_comma(body)
                if split is None:
                    self.fail("comp needs two expressions separated by ','", pos)
                cg.append(self.expr(body[:split], pos + 4))
                ch.append(self.expr(body[split + 1:], pos + 4 + split + 1))
                continue
            op = next((o for o in _RELOPS if o in text), None)
            if op is None:
                if in_residuals:
                    residuals.append(self.expr(text, pos))
                    continue
                self.fail(f"expected a constraint with one of {', '.join(_RELOPS)}", pos)
            in_residuals = False
            k = text.index(op)
            lhs = self.expr(text[:k], pos)
            rhs = self.expr(text[k + 2:], pos + k + 2)
            if any(o in text[k + 2:] for o in _RELOPS):
                self.fail("chained comparison", pos + k + 2)
            if op == ">=":
                e = _difference(rhs, lhs)
            else:
                e = _difference(lhs, rhs)
            (eq if op == "==" else ineq).append(e)
        if not self.names:
            self.fail("no variables declared", 0)
        if objective is None:
            self.fail("empty objective: no 'minimize' statement", len(self.source))
        try:
            return MpccProblem(
                tuple(self.names), objective, tuple(eq), tuple(ineq), tuple(cg), tuple(ch),
                None if residuals is None else tuple(residuals), name,
            )
        except ValueError as exc:
            raise ModelSyntaxError(str(exc), *_line_col(self.source, len(self.source))) from exc


def _difference(a: Expr, b: Expr) -> Expr:
    if isinstance(b, Const) and b.value == 0.0:
        return a
    if isinstance(a, Const) and a.value == 0.0:
        return simplify(Unary("neg", b))
    return Binary("-", a, b)


def _top_level_comma(text: str):
    depth = 0
    for k, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            return k
    return None


def parse_model(text: str, name: str = "") -> MpccProblem:
    """Parse the line-oriented model format into an :class:`MpccProblem`.

    Errors are reported as :class:`ModelSyntaxError` with 1-based line and column.
    """
    return _ModelParser(text).parse(name)
