import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from sqpcc.expr import (
    Binary,
    Const,
    ExprDomainError,
    ExprSyntaxError,
    Pow,
    Unary,
    Var,
    differentiate,
    evaluate,
    parse_expr,
    simplify,
    variables_used,
)
from sqpcc.oracles import central_gradient

EX51 = "w1 + w1^2 + w1^3 + (w2-1)^4 + (w2-1)^2"
LEYFFER = "(w1-1)^2 + w2^2 + w2^3"


def _sum_terms(e):
    if isinstance(e, Binary) and e.op == "+":
        return _sum_terms(e.left) + _sum_terms(e.right)
    return [e]


def test_parse_example51_objective_has_five_terms():
    e = parse_expr(EX51, ["w1", "w2"])
    assert len(_sum_terms(e)) == 5


def test_parse_leyffer_objective_has_three_terms():
    e = parse_expr(LEYFFER, ["w1", "w2"])
    assert len(_sum_terms(e)) == 3


def test_parse_constant_without_variables():
    e = parse_expr("0", [])
    assert isinstance(e, Const) and e.value == 0.0


def test_precedence_and_associativity():
    v = ["a", "b", "c"]
    w = [2.0, 3.0, 4.0]
    assert evaluate(parse_expr("a + b * c", v), w) == 14.0
    assert evaluate(parse_expr("a - b - c", v), w) == -5.0
    assert evaluate(parse_expr("c / a / a", v), w) == 1.0
    assert evaluate(parse_expr("-a^2", v), w) == -4.0
    assert evaluate(parse_expr("a^-1", v), w) == 0.5
    assert evaluate(parse_expr("2^3^2", []), []) == 512.0
    assert evaluate(parse_expr("-(a - b)^3", v), w) == 1.0
    assert evaluate(parse_expr("1.5e1 * a", v), w) == 30.0


def test_functions():
    v = ["x"]
    for name, fn in (("sin", math.sin), ("cos", math.cos), ("exp", math.exp), ("log", math.log),
                     ("sqrt", math.sqrt)):
        assert evaluate(parse_expr(f"{name}(x)", v), [0.7]) == pytest.approx(fn(0.7), rel=1e-15)


@pytest.mark.parametrize("text, offset", [("w1 +", 4), ("w1 $ 2", 3), ("(w1", 3), ("w1 w2", 3)])
def test_syntax_errors_report_byte_offset(text, offset):
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr(text, ["w1", "w2"])
    assert info.value.offset == offset


def test_unknown_identifier():
    with pytest.raises(ExprSyntaxError, match="unknown identifier"):
        parse_expr("w1 + z", ["w1"])


@pytest.mark.parametrize("text", ["w^2.5", "w^w", "w^(1/2)"])
def test_non_integer_exponent_rejected(text):
    with pytest.raises(ExprSyntaxError, match="exponent"):
        parse_expr(text, ["w"])


def test_parenthesised_integer_exponent_accepted():
    assert evaluate(parse_expr("w^(4/2)", ["w"]), [3.0]) == 9.0


def test_byte_offset_counts_utf8_bytes():
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr("w + é", ["w"])
    assert info.value.offset == 4


def test_evaluate_examples():
    v = ["w1", "w2"]
    f = parse_expr(EX51, v)
    assert evaluate(f, [0.0, 1.0]) == 0.0
    assert evaluate(f, [0.0, 0.0]) == 2.0
    assert evaluate(parse_expr("w1*w2", v), [3.0, 4.0]) == 12.0


@pytest.mark.parametrize("text, point", [("log(x)", 0.0), ("log(x)", -1.0), ("sqrt(x)", -1e-3),
                                          ("1/x", 0.0), ("x^-2", 0.0)])
def test_domain_errors_are_raised(text, point):
    with pytest.raises(ExprDomainError):
        evaluate(parse_expr(text, ["x"]), [point])


def test_power_rule():
    e = parse_expr("w^2 + w^4", ["w"])
    d = differentiate(e, 0)
    for t in (-1.3, 0.0, 0.4, 2.0):
        assert evaluate(d, [t]) == pytest.approx(2 * t + 4 * t ** 3, abs=1e-14)


def test_example51_partial_w1():
    f = parse_expr(EX51, ["w1", "w2"])
    d = differentiate(f, 0)
    assert evaluate(d, [0.0, 0.0]) == 1.0
    fd = central_gradient(lambda w: evaluate(f, w), np.array([0.0, 0.0]))
    assert fd[0] == pytest.approx(1.0, abs=1e-8)


def test_leyffer_partial_w2():
    f = parse_expr(LEYFFER, ["w1", "w2"])
    d = differentiate(f, 1)
    for t in (0.0, 0.5, 2.0):
        assert evaluate(d, [0.3, t]) == pytest.approx(2 * t + 3 * t * t, abs=1e-14)


def test_simplification_rules():
    x = Var(0, "x")
    assert simplify(Binary("*", Const(0.0), x)) == Const(0.0)
    assert simplify(Binary("+", x, Const(0.0))) == x
    assert simplify(Binary("+", Const(2.0), Const(3.0))) == Const(5.0)
    assert differentiate(Const(4.0), 0) == Const(0.0)
    assert variables_used(parse_expr("a*c + 1", ["a", "b", "c"])) == {0, 2}


def test_operator_sugar():
    x = Var(0, "x")
    e = (x + 1) * x - x ** 3 / 2
    assert evaluate(e, [2.0]) == 2.0


# random polynomial trees


N_VARS = 3


def _trees():
    leaves = st.one_of(
        st.builds(Const, st.floats(-2.0, 2.0, allow_nan=False).map(lambda v: round(v, 3))),
        st.integers(0, N_VARS - 1).map(lambda i: Var(i, f"x{i}")),
    )

    def extend(children):
        return st.one_of(
            st.builds(Binary, st.sampled_from("+-*"), children, children),
            st.builds(Pow, children, st.integers(0, 3)),
            st.builds(lambda a: Unary("neg", a), children),
        )

    return st.recursive(leaves, extend, max_leaves=12)


def _depth(e):
    kids = getattr(e, "children", ())
    return 1 + max((_depth(c) for c in kids), default=0)


points = st.lists(st.floats(-1.5, 1.5, allow_nan=False), min_size=N_VARS, max_size=N_VARS)


@settings(max_examples=1000, deadline=None)
@given(_trees(), points, st.integers(0, N_VARS - 1))
def test_derivative_matches_central_difference(e, w, i):
    assume(_depth(e) <= 6)
    w = np.array(w)
    value = evaluate(e, w)
    assume(abs(value) < 1e4)
    sym = evaluate(differentiate(e, i), w)
    fd = central_gradient(lambda x: evaluate(e, x), w, 1e-6)[i]
    assert abs(sym - fd) / max(1.0, abs(fd)) <= 1e-6


@settings(max_examples=200, deadline=None)
@given(_trees(), points)
def test_constant_derivative_is_zero(e, w):
    c = Const(evaluate(e, np.array(w)))
    assert evaluate(differentiate(c, 0), w) == 0.0


@settings(max_examples=300, deadline=None)
@given(_trees(), points, st.integers(0, N_VARS - 1), st.integers(0, N_VARS - 1))
def test_mixed_partials_commute(e, w, i, j):
    dij = evaluate(differentiate(differentiate(e, i), j), w)
    dji = evaluate(differentiate(differentiate(e, j), i), w)
    assert abs(dij - dji) <= 1e-12 * max(1.0, abs(dij))


@settings(max_examples=300, deadline=None)
@given(_trees(), points)
def test_simplify_preserves_value(e, w):
    a = evaluate(e, w)
    b = evaluate(simplify(e), w)
    assert abs(a - b) <= 1e-9 * max(1.0, abs(a))


@settings(max_examples=300, deadline=None)
@given(_trees(), points)
def test_printed_tree_parses_back(e, w):
    names = [f"x{i}" for i in range(N_VARS)]
    again = parse_expr(str(e), names)
    a = evaluate(e, w)
    assert abs(evaluate(again, w) - a) <= 1e-9 * max(1.0, abs(a))
