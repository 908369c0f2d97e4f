import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqpcc.analysis import (
    InfeasiblePointError,
    check_b_stationarity,
    check_mpcc_licq,
    check_mpcc_ssosc,
    check_ulsc_pulsc,
    classify_stationarity,
    estimate_order,
    fit_contraction,
    stabilization_report,
)
from sqpcc.model import PrimalDualPoint, parse_model
from sqpcc.registry import get_problem
from sqpcc.solver import SolveOptions, sqpcc_solve


def linear_pair(a, b):
    """min a·x + b·y over 0 <= x ⟂ y >= 0: at the origin ξ = a and ν = b."""
    return parse_model(f"var x, y; minimize ({a!r})*x + ({b!r})*y; subject to: comp x, y;")


@pytest.mark.parametrize("a, b, cls", [(1.0, 1.0, "S"), (1.0, 0.0, "S"), (-1.0, 0.0, "M"),
                                       (-1.0, -1.0, "C"), (1.0, -1.0, "A"), (-2.0, 3.0, "A")])
def test_classes_from_biactive_signs(a, b, cls):
    rep = classify_stationarity(linear_pair(a, b), [0.0, 0.0])
    assert rep.cls == cls
    assert rep.xi[0] == pytest.approx(a) and rep.nu[0] == pytest.approx(b)


def test_weak_when_pairs_fail_c_and_a_separately():
    p = parse_model("var a, b, c, d; minimize -a - b + c - d; subject to: comp a, b; comp c, d;")
    rep = classify_stationarity(p, np.zeros(4))
    assert rep.cls == "W"
    assert [d.passes["C"] for d in rep.biactive] == [True, False]
    assert [d.passes["A"] for d in rep.biactive] == [False, True]


def test_not_stationary():
    p = parse_model("var x; minimize x; subject to: x <= 1;")
    assert classify_stationarity(p, [0.0]).cls == "not-stationary"


def test_registry_points():
    ley = get_problem("leyffer").problem
    rep = classify_stationarity(ley, [0.0, 0.0])
    assert rep.cls == "M" and rep.xi[0] == pytest.approx(-2.0) and rep.b_stationary is False
    rep = classify_stationarity(ley, [1.0, 0.0])
    assert rep.cls == "S" and rep.b_stationary
    ex51 = classify_stationarity(get_problem("example51").problem, [0.0, 0.0])
    assert ex51.cls == "A"
    assert (ex51.xi[0], ex51.nu[0]) == (pytest.approx(1.0), pytest.approx(-6.0))
    assert classify_stationarity(get_problem("sqp-strict").problem, [0.0]).mu[0] == pytest.approx(6.0)


def test_infeasible_point_names_constraint():
    with pytest.raises(InfeasiblePointError) as info:
        classify_stationarity(get_problem("leyffer").problem, [1.0, 1.0])
    assert "comp" in info.value.constraint


def test_rank_deficient_system_finds_sign_feasible_multipliers():
    # x + y <= 0 written twice: the multipliers are not unique
    p = parse_model("var x, y; minimize (x-1)^2 + y^2; subject to: x + y <= 0; 2*x + 2*y <= 0;")
    rep = classify_stationarity(p, [0.5, -0.5])
    assert rep.cls == "S" and rep.rank_deficient and not rep.mpcc_licq
    assert np.all(rep.mu >= 0.0)
    assert rep.mu[0] + 2 * rep.mu[1] == pytest.approx(1.0)


def test_licq():
    lic = check_mpcc_licq(get_problem("leyffer").problem, [0.0, 0.0])
    assert lic.holds and (lic.rank, lic.columns) == (2, 2)
    p = parse_model("var x, y; minimize x^2 + y^2; subject to: x + y <= 0; -x - y <= 0;")
    lic = check_mpcc_licq(p, [0.0, 0.0])
    assert not lic.holds and (lic.rank, lic.columns) == (1, 2)


def test_b_stationarity_certificates():
    rep = check_b_stationarity(get_problem("leyffer").problem, [0.0, 0.0])
    assert not rep.holds
    assert {c.signature: c.holds for c in rep.branches} == {"G": True, "H": False}
    assert check_b_stationarity(get_problem("leyffer").problem, [1.0, 0.0]).holds


@settings(max_examples=200, deadline=None)
@given(st.floats(-3, 3, allow_nan=False), st.floats(-3, 3, allow_nan=False))
def test_b_stationarity_equals_s_under_licq(a, b):
    p = linear_pair(a, b)
    rep = classify_stationarity(p, [0.0, 0.0])
    assert rep.mpcc_licq
    assert rep.b_stationary == (rep.cls == "S")


def test_ssosc():
    ley = get_problem("leyffer").problem
    rep = classify_stationarity(ley, [1.0, 0.0])
    assert check_mpcc_ssosc(ley, rep.multipliers(np.array([1.0, 0.0]))).holds
    for sign, holds in (("+", True), ("-", False)):
        p = parse_model(f"var x, y, z; minimize x + y {sign} z^2; subject to: comp x, y;")
        rep = classify_stationarity(p, np.zeros(3))
        ss = check_mpcc_ssosc(p, rep.multipliers(np.zeros(3)))
        assert ss.holds is holds
        assert ss.reduced_min_eigenvalues["G"] == pytest.approx(2.0 if holds else -2.0)


def test_ulsc_and_pulsc():
    cases = {(1.0, 1.0): (True, True, (0,), ()), (1.0, 0.0): (False, True, (0,), ()),
             (0.0, 0.0): (False, False, (), (0,))}
    for (a, b), expect in cases.items():
        rep = classify_stationarity(linear_pair(a, b), [0.0, 0.0])
        u = check_ulsc_pulsc(rep)
        assert (u.ulsc, u.pulsc, u.i00_plus, u.i00_zero) == expect
    ex54 = classify_stationarity(get_problem("example54").problem, [0.0, 0.0])
    u = check_ulsc_pulsc(ex54)
    assert ex54.cls == "S" and not u.ulsc and not u.pulsc


def test_multipliers_do_not_depend_on_pair_order():
    one = parse_model("var a, b, c, d; minimize 2*a + 3*b + (c-1)^2 + d; subject to: comp a, b; comp c, d;")
    two = parse_model("var a, b, c, d; minimize 2*a + 3*b + (c-1)^2 + d; subject to: comp c, d; comp a, b;")
    w = [0.0, 0.0, 1.0, 0.0]
    r1, r2 = classify_stationarity(one, w), classify_stationarity(two, w)
    assert r1.cls == r2.cls == "S"
    assert np.allclose(r1.xi, r2.xi[::-1]) and np.allclose(r1.nu, r2.nu[::-1])


# convergence order


def test_linear_order():
    est = estimate_order(0.5 ** np.arange(10))
    assert est.classification == "linear" and est.rate == pytest.approx(0.5)


def test_quadratic_order():
    est = estimate_order([0.1, 1e-2, 1e-4, 1e-8])
    assert est.classification == "quadratic" and est.quadratic_constant == pytest.approx(1.0)


def test_superlinear_order():
    e = [0.1]
    for _ in range(5):
        e.append(e[-1] ** 1.5)
    assert estimate_order(e).classification == "superlinear"


def test_order_needs_positive_errors():
    with pytest.raises(ValueError):
        estimate_order([1.0, 0.5, 0.25])
    with pytest.raises(ValueError):
        estimate_order([1.0, 0.5, 0.0, 0.0])


@settings(max_examples=200, deadline=None)
@given(st.sampled_from([0.2, 0.5, 0.9]), st.floats(1e-3, 1e3), st.integers(6, 30),
       st.integers(0, 2 ** 32 - 1))
def test_geometric_sequences_are_linear(alpha, c, length, seed):
    rng = np.random.default_rng(seed)
    noise = 1.0 + 0.01 * rng.uniform(-1, 1, size=length)
    est = estimate_order(c * alpha ** np.arange(length) * noise)
    assert est.classification == "linear"
    assert abs(est.rate - alpha) <= 0.05 * alpha


def test_contraction_fit_recovers_coefficients():
    e = [0.1]
    for _ in range(6):
        e.append(0.5 * e[-1] + 2.0 * e[-1] ** 2)
    fit = fit_contraction(e)
    assert fit.alpha == pytest.approx(0.5, abs=1e-10) and fit.beta == pytest.approx(2.0, rel=1e-8)
    assert fit.pairs == 4


def test_contraction_fit_stops_at_exact_zero():
    fit = fit_contraction([2.0, 1.0, 0.0, 0.0])
    assert fit.pairs == 2 and fit.alpha >= 0.0 and fit.beta >= 0.0
    with pytest.raises(ValueError):
        fit_contraction([0.0, 0.0])


# active-set stabilization


def _solve_with_reference(name, x0, hessian="exact", policy="min-obj"):
    prob = get_problem(name)
    opts = SolveOptions(hessian=hessian, policy=policy, reference=prob.reference, max_iter=200)
    return sqpcc_solve(prob.problem, x0, opts), prob


def test_stabilization_on_leyffer():
    tr, prob = _solve_with_reference("leyffer", (0.0, 2.0))
    rep = stabilization_report(tr, prob.problem, prob.reference)
    assert rep.reference_sets["I+0"] == (0,)
    assert rep.first_permanent == {"inequality": 0, "comp_0+": 2, "comp_+0": 2, "comp_00": 0}


@pytest.mark.parametrize("x0", [(0.3, 0.0), (0.0, 0.3)])
def test_degenerate_pair_is_only_identified_asymptotically(x0):
    tr, prob = _solve_with_reference("example54", x0)
    assert tr.converged
    rep = stabilization_report(tr, prob.problem, prob.reference)
    assert rep.pair_identification == {0: "asymptotic-only"}
    assert all(rec.partition[2] == () for rec in tr.records)


@pytest.mark.parametrize("hessian", ["exact", "bfgs", "perturbed"])
@pytest.mark.parametrize("policy", ["min-obj", "warm"])
def test_no_spurious_biactive_pairs(hessian, policy):
    tr, prob = _solve_with_reference("example51", (2.0, 0.0), hessian, policy)
    assert tr.converged
    assert all(rec.partition is None or rec.partition[2] == () for rec in tr.records[1:])


def test_stabilization_needs_s_stationary_reference():
    p = get_problem("leyffer").problem
    tr = sqpcc_solve(p, [0.0, 2.0])
    bad = PrimalDualPoint(np.zeros(2), [], [], [-2.0], [0.0])
    with pytest.raises(ValueError, match="not S-stationary"):
        stabilization_report(tr, p, bad)
