import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqpcc.bench import compare_qp, random_qp
from sqpcc.denseqp import (
    NotPositiveDefiniteError,
    QpData,
    cholesky_factor,
    cholesky_solve,
    nearest_pd,
    qp_kkt_residual,
    solve_qp,
)
from sqpcc.oracles import enumerate_qp


def test_cholesky_factor_reconstructs():
    M = np.array([[4.0, 2.0, 0.4], [2.0, 5.0, 1.0], [0.4, 1.0, 3.0]])
    L = cholesky_factor(M)
    assert np.allclose(L @ L.T, M, atol=1e-14)
    assert np.allclose(L, np.tril(L))


def test_cholesky_solve_matches_numpy():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(5, 5))
    M = A @ A.T + np.eye(5)
    b = rng.normal(size=5)
    assert np.allclose(cholesky_solve(M, b), np.linalg.solve(M, b), atol=1e-12)


def test_cholesky_reports_failing_pivot():
    with pytest.raises(NotPositiveDefiniteError) as info:
        cholesky_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert info.value.pivot == 1 and info.value.value == pytest.approx(-3.0)


def test_nearest_pd():
    M = np.diag([2.0, -1.0])
    P = nearest_pd(M, 1e-6)
    assert np.linalg.eigvalsh(P)[0] == pytest.approx(1e-6)
    assert np.array_equal(nearest_pd(np.eye(2)), np.eye(2))


def test_unconstrained_minimum():
    sol = solve_qp(QpData(2 * np.eye(2), [2.0, 0.0]))
    assert sol.ok and np.allclose(sol.x, [-1.0, 0.0])
    assert sol.active_set == () and sol.objective == pytest.approx(-1.0)


def test_inequality_becomes_active():
    # min (x-1)^2 + (y-1)^2 s.t. x + y <= 1
    q = QpData(2 * np.eye(2), [-2.0, -2.0], a_in=[[1.0, 1.0]], b_in=[-1.0])
    sol = solve_qp(q)
    assert sol.ok and np.allclose(sol.x, [0.5, 0.5])
    assert sol.active_set == (0,) and sol.in_multipliers[0] == pytest.approx(1.0)


def test_equality_multiplier_sign():
    # min ½x² s.t. x - 1 = 0: x = 1, Hx + c + λ = 0 gives λ = -1
    sol = solve_qp(QpData([[1.0]], [0.0], a_eq=[[1.0]], b_eq=[-1.0]))
    assert sol.ok and sol.x[0] == pytest.approx(1.0) and sol.eq_multipliers[0] == pytest.approx(-1.0)


def test_infeasible_constraints():
    q = QpData(np.eye(1), [0.0], a_in=[[1.0], [-1.0]], b_in=[1.0, 1.0])  # x <= -1 and x >= 1
    sol = solve_qp(q)
    assert sol.status == "infeasible" and not sol.ok


def test_indefinite_hessian_needs_permission():
    q = QpData(np.diag([1.0, -1.0]), [0.0, 0.0], a_in=[[0.0, 1.0], [0.0, -1.0]], b_in=[-1.0, -1.0])
    sol = solve_qp(q, allow_indefinite=True)
    assert sol.ok and abs(sol.x[1]) == pytest.approx(1.0)
    ray = solve_qp(QpData(np.diag([1.0, -1.0]), [0.0, 0.1]), allow_indefinite=True)
    assert ray.status == "unbounded"


def test_rejects_malformed_data():
    with pytest.raises(ValueError, match="symmetric"):
        QpData([[1.0, 1.0], [0.0, 1.0]], [0.0, 0.0])
    with pytest.raises(ValueError, match="rows"):
        QpData(np.eye(2), [0.0, 0.0], a_in=[[1.0, 0.0]], b_in=[1.0, 2.0])


def test_random_qps_agree_with_enumeration():
    rng = np.random.default_rng(11)
    bad = [msg for msg in (compare_qp(random_qp(rng)) for _ in range(500)) if msg]
    assert bad == []


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_solution_satisfies_kkt_conditions(seed):
    q = random_qp(np.random.default_rng(seed))
    sol = solve_qp(q)
    if not sol.ok:
        assert enumerate_qp(q.hessian, q.gradient, q.a_eq, q.b_eq, q.a_in, q.b_in) is None
        return
    mu = sol.in_multipliers
    s = q.a_in @ sol.x + q.b_in
    scale = max(1.0, float(np.max(np.abs(sol.x))), float(np.max(np.abs(mu), initial=0.0)))
    assert np.all(mu >= 0.0)
    assert np.all(np.abs(mu * s) <= 1e-8 * scale)
    assert qp_kkt_residual(q, sol.x, sol.eq_multipliers, mu) <= 1e-8 * scale
    inactive = [i for i in range(mu.size) if i not in sol.active_set]
    assert np.all(mu[inactive] == 0.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_warm_start_from_neighbouring_solution(seed):
    rng = np.random.default_rng(seed)
    q = random_qp(rng)
    first = solve_qp(q)
    if not first.ok:
        return
    near = QpData(q.hessian, q.gradient + 1e-10 * rng.normal(size=q.n), q.a_eq, q.b_eq, q.a_in, q.b_in)
    again = solve_qp(near, warm_active=first.active_set)
    assert again.ok
    assert again.working_set_changes <= 1
    assert np.allclose(again.x, first.x, atol=1e-7 * max(1.0, float(np.max(np.abs(first.x)))))

