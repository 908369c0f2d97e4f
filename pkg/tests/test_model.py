import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqpcc.analysis import classify_stationarity
from sqpcc.expr import evaluate
from sqpcc.model import (
    BranchAssignment,
    ModelSyntaxError,
    PartitionInfeasibleError,
    PrimalDualPoint,
    active_sets,
    branch_nlp,
    complementarity_partition,
    kkt_residual_components,
    mpcc_kkt_residual,
    mpcc_lagrangian_gradient,
    mpcc_lagrangian_hessian,
    nlp_reformulation,
    parse_model,
    relaxed_nlp,
)
from sqpcc.oracles import central_hessian
from sqpcc.registry import REGISTRY_SOURCES, get_problem, problem_names

LEYFFER = """
var w1, w2;
minimize (w1-1)^2 + w2^2 + w2^3;
subject to:
  comp w1 , w2;
"""


def _strs(exprs):
    return [str(e) for e in exprs]


def leyffer():
    return get_problem("leyffer").problem


def test_parse_leyffer_dimensions():
    p = parse_model(LEYFFER)
    assert (p.n, p.m, p.m_h, p.m_g) == (2, 1, 0, 0)
    assert p.var_names == ("w1", "w2")


def test_parse_unconstrained():
    p = parse_model("var x; minimize x^2;")
    assert (p.n, p.m, p.m_h, p.m_g) == (1, 0, 0, 0)


def test_parse_example54_dimensions():
    p = parse_model(REGISTRY_SOURCES["example54"])
    assert (p.n, p.m) == (2, 1)


def test_constraint_forms_use_le_zero_convention():
    p = parse_model("var x; minimize x; subject to: x >= 1; x == 2; x <= 3; comp x, x+1;")
    assert _strs(p.inequalities) == ["1 - x", "x - 3"]
    assert _strs(p.equalities) == ["x - 2"]
    assert _strs(p.comp_g) == ["x"] and _strs(p.comp_h) == ["x + 1"]


def test_comments_are_ignored():
    p = parse_model("# header\nvar x; # trailing\nminimize x^2; # objective\n")
    assert p.n == 1


@pytest.mark.parametrize("text, line, column, message", [
    ("var x, x; minimize x;", 1, 8, "duplicate variable"),
    ("var x;\nminimize ;", 2, 1, "empty objective"),
    ("var x;\nminimize x^2.5;", 2, 12, "non-integer exponent"),
    ("var x; minimize x; subject to: x != 2;", 1, 32, "==, <=, >="),
    ("var x;\nminimize y;", 2, 10, "unknown identifier"),
])
def test_syntax_errors_carry_line_and_column(text, line, column, message):
    with pytest.raises(ModelSyntaxError, match=message) as info:
        parse_model(text)
    assert (info.value.line, info.value.column) == (line, column)


def test_residual_block_validated():
    p = parse_model("var x, y; minimize (x-1)^2 + y^2; residuals x-1; y;")
    assert p.r is not None and len(p.r) == 2
    with pytest.raises(ModelSyntaxError, match="sum of squared residuals"):
        parse_model("var x, y; minimize x^2 + y^2; residuals x-1; y;")


def test_partition_examples():
    p = leyffer()
    part = complementarity_partition(p, [1.0, 0.0], 1e-8)
    assert (part.i_zero_plus, part.i_plus_zero, part.i_zero_zero) == ((), (0,), ())
    assert complementarity_partition(p, [0.0, 0.0]).i_zero_zero == (0,)
    assert complementarity_partition(p, [1e-12, 1.0]).i_zero_plus == (0,)


@pytest.mark.parametrize("w", [(1.0, 1.0), (-1e-3, 1.0), (0.5, -0.2)])
def test_partition_rejects_infeasible_points(w):
    with pytest.raises(PartitionInfeasibleError):
        complementarity_partition(leyffer(), w)


def test_active_set_examples():
    p = get_problem("sqp-strict").problem
    a = active_sets(p, [0.0], [6.0])
    assert (a.active, a.strictly_active, a.weakly_active) == ((0,), (0,), ())
    a = active_sets(p, [0.0], [0.0])
    assert (a.active, a.strictly_active, a.weakly_active) == ((0,), (), (0,))
    a = active_sets(p, [1.0], [0.0])
    assert a.active == () and a.inactive == (0,)


def test_nlp_reformulation():
    assert _strs(nlp_reformulation(leyffer()).inequalities) == ["-w1", "-w2", "w1 * w2"]
    assert nlp_reformulation(leyffer()).equalities == ()
    assert _strs(nlp_reformulation(get_problem("example51").problem).inequalities) == ["-w1", "-w2", "w1 * w2"]
    plain = get_problem("sqp-weak").problem
    assert _strs(nlp_reformulation(plain).inequalities) == _strs(plain.inequalities)


def test_branch_nlps():
    g = branch_nlp(leyffer(), BranchAssignment.from_string("G"))
    assert _strs(g.equalities) == ["w1"] and _strs(g.inequalities) == ["-w2"]
    h = branch_nlp(leyffer(), BranchAssignment.from_string("H"))
    assert _strs(h.equalities) == ["w2"] and _strs(h.inequalities) == ["-w1"]
    plain = get_problem("sqp-weak").problem
    same = branch_nlp(plain, BranchAssignment(()))
    assert _strs(same.inequalities) == _strs(plain.inequalities)


def test_relaxed_nlps():
    p = leyffer()
    r = relaxed_nlp(p, complementarity_partition(p, [0.0, 0.0]))
    assert r.equalities == () and _strs(r.inequalities) == ["-w1", "-w2"]
    r = relaxed_nlp(p, complementarity_partition(p, [1.0, 0.0]))
    assert _strs(r.equalities) == ["w2"] and _strs(r.inequalities) == ["-w1"]
    # without biactive pairs the relaxed NLP is the only branch NLP
    b = branch_nlp(p, BranchAssignment.from_string("H"))
    assert _strs(r.equalities) == _strs(b.equalities) and _strs(r.inequalities) == _strs(b.inequalities)


def _z(p, w, xi=None, nu=None):
    z = PrimalDualPoint.primal(p, w)
    if xi is not None:
        z = PrimalDualPoint(z.w, z.lam, z.mu, [xi], [nu])
    return z


def test_lagrangian_gradient_examples():
    ex51 = get_problem("example51").problem
    assert np.allclose(mpcc_lagrangian_gradient(ex51, _z(ex51, [0, 0], 1.0, -6.0)), 0.0, atol=1e-14)
    p = leyffer()
    assert np.allclose(mpcc_lagrangian_gradient(p, _z(p, [0, 0], -2.0, 0.0)), 0.0, atol=1e-14)
    w = np.array([0.3, 0.7])
    assert np.array_equal(mpcc_lagrangian_gradient(p, _z(p, w)), p.objective_gradient(w))


def test_lagrangian_hessian_examples():
    p = leyffer()
    for t in (0.0, 0.5, 2.0):
        assert np.allclose(mpcc_lagrangian_hessian(p, _z(p, [0, t])), np.diag([2.0, 2 + 6 * t]))
    ex51 = get_problem("example51").problem
    assert np.allclose(mpcc_lagrangian_hessian(ex51, _z(ex51, [0, 1])), np.diag([2.0, 2.0]))
    lin = parse_model("var x, y; minimize 2*x - y; subject to: x + y <= 1;")
    assert np.array_equal(mpcc_lagrangian_hessian(lin, _z(lin, [0.3, 0.2])), np.zeros((2, 2)))


def test_kkt_residual_examples():
    p = leyffer()
    assert mpcc_kkt_residual(p, _z(p, [1, 0], 0.0, 0.0)) == 0.0
    assert mpcc_kkt_residual(p, _z(p, [0, 0], -2.0, 0.0)) == 2.0
    assert mpcc_kkt_residual(p, _z(p, [1, 0], 3.0, -5.0)) > 0.0
    parts = kkt_residual_components(p, _z(p, [0, 0], -2.0, 0.0))
    assert max(parts.values()) == 2.0


# properties over the registry problems

mpcc_names = [n for n in problem_names() if get_problem(n).problem.m > 0]


def _feasible_point(p, rng):
    """Random point on the L-shaped set of the registry's pairs (G, H are coordinates there)."""
    w = rng.uniform(0.0, 2.0, size=p.n)
    for i in range(p.m):
        choice = rng.integers(0, 3)
        if choice == 0:
            w[i] = 0.0
        elif choice == 1:
            w[(i + 1) % p.n] = 0.0
        else:
            w[i] = w[(i + 1) % p.n] = 0.0
    return w


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(mpcc_names), st.integers(0, 2 ** 32 - 1))
def test_partition_disjoint_and_exhaustive(name, seed):
    p = get_problem(name).problem
    w = _feasible_point(p, np.random.default_rng(seed))
    part = complementarity_partition(p, w)
    sets = [set(part.i_zero_plus), set(part.i_plus_zero), set(part.i_zero_zero)]
    assert sets[0] | sets[1] | sets[2] == set(range(p.m))
    assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])


def _nlp_feasible(nlp, w, tol=1e-12):
    eq = all(abs(evaluate(e, w)) <= tol for e in nlp.equalities)
    ineq = all(evaluate(e, w) <= tol for e in nlp.inequalities)
    return eq and ineq


def _mpcc_feasible(p, w, tol=1e-12):
    G, H = p.G.values(w), p.H.values(w)
    return (np.all(G >= -tol) and np.all(H >= -tol) and np.all(np.minimum(G, H) <= tol)
            and np.all(np.abs(p.h.values(w)) <= tol) and np.all(p.g.values(w) <= tol))


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(mpcc_names), st.integers(0, 2 ** 32 - 1))
def test_branch_feasibility_covers_the_mpcc(name, seed):
    p = get_problem(name).problem
    rng = np.random.default_rng(seed)
    w = _feasible_point(p, rng) if rng.random() < 0.5 else rng.uniform(-1.0, 2.0, size=p.n)
    branches = [BranchAssignment(s) for s in ("G", "H")]
    in_branch = [_nlp_feasible(branch_nlp(p, a), w) for a in branches]
    if any(in_branch):
        assert _mpcc_feasible(p, w)
    if _mpcc_feasible(p, w):
        assert any(in_branch)
        part = complementarity_partition(p, w)
        assert _nlp_feasible(relaxed_nlp(p, part), w)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(problem_names()), st.integers(0, 2 ** 32 - 1))
def test_hessian_matches_difference_of_gradient(name, seed):
    p = get_problem(name).problem
    rng = np.random.default_rng(seed)
    z = PrimalDualPoint(rng.uniform(-2, 2, p.n), rng.normal(size=p.m_h), rng.normal(size=p.m_g),
                        rng.normal(size=p.m), rng.normal(size=p.m))
    exact = mpcc_lagrangian_hessian(p, z)
    fd = central_hessian(lambda w: mpcc_lagrangian_gradient(p, z.with_w(w)), z.w, 1e-6)
    assert np.all(np.abs(exact - fd) <= 1e-6 * np.maximum(1.0, np.abs(exact)))


@pytest.mark.parametrize("name, w", [("leyffer", (1, 0)), ("leyffer", (0, 0)), ("example54", (0, 0)),
                                     ("example51", (0, 1)), ("example51", (0, 0))])
def test_kkt_residual_agrees_with_classifier(name, w):
    p = get_problem(name).problem
    rep = classify_stationarity(p, w)
    res = mpcc_kkt_residual(p, rep.multipliers(np.array(w, float)))
    if rep.cls == "S":
        assert res <= 1e-12
    else:
        assert res > 1e-3


def test_primal_dual_point_is_read_only():
    z = PrimalDualPoint([1.0, 2.0], [], [], [0.0], [0.0])
    with pytest.raises(ValueError):
        z.w[0] = 3.0
    with pytest.raises(ValueError, match="dimensions"):
        PrimalDualPoint([1.0], [], [], [0.0], [0.0]).check_dims(leyffer())
