import hypothesis.strategies as st
import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings

from qsrnet.errors import InvalidArgument
from qsrnet.lmi import (
    FEASIBLE,
    INFEASIBLE,
    UNDECIDED,
    AffineMatrixExpr,
    LmiProblem,
    assemble_agent_kyp,
    assemble_static_gain,
    default_margin,
    solve_feasibility,
    verify_assignment,
)


def lyapunov_problem(A, margin=1e-3, box=1e3, cap=None):
    n = A.shape[0]
    prob = LmiProblem()
    prob.variable("P", (n, n), symmetric=True, box_bound=box)
    prob.add(AffineMatrixExpr.zeros(n).add("P", A.T, np.eye(n), transpose=True), margin, "lyap")
    prob.add_psd("P", margin)
    if cap is not None:
        prob.add(AffineMatrixExpr(-cap * np.eye(n)).add("P", np.eye(n), np.eye(n)), 0.0, "cap")
    return prob


def test_lyapunov_example_against_closed_form():
    A = np.array([[0.0, 1.0], [-1.0, -1.0]])
    prob = LmiProblem()
    prob.variable("P", (2, 2), symmetric=True)
    prob.add(AffineMatrixExpr(np.eye(2)).add("P", A.T, np.eye(2), transpose=True), 0.0, "lyap")
    prob.add(AffineMatrixExpr(-3 * np.eye(2)).add("P", np.eye(2), np.eye(2)), 0.0, "cap")
    P0 = sla.solve_continuous_lyapunov(A.T, -np.eye(2))
    assert np.allclose(P0, [[1.5, 0.5], [0.5, 1.0]])
    assert max(verify_assignment(prob, {"P": P0})) <= 1e-12
    res = solve_feasibility(prob)
    assert res.status == FEASIBLE
    P = res.assignment["P"]
    assert np.linalg.eigvalsh(A.T @ P + P @ A + np.eye(2))[-1] <= 1e-12
    assert np.linalg.eigvalsh(P)[-1] <= 3.0 + 1e-12


def test_unstable_scalar_infeasible():
    res = solve_feasibility(lyapunov_problem(np.array([[1.0]]), margin=1e-3))
    assert res.status == INFEASIBLE
    assert res.lower_bound > 0


def test_verify_assignment_examples():
    A = np.array([[0.0, 1.0], [-1.0, -1.0]])
    prob = lyapunov_problem(A, margin=1e-2)
    m = verify_assignment(prob, {"P": np.zeros((2, 2))})
    assert max(m) == pytest.approx(1e-2)
    res = solve_feasibility(prob)
    assert res.status == FEASIBLE and max(res.margins) <= 0
    P = res.assignment["P"].copy()
    # push the tightest constraint over the edge
    P_bad = P.copy()
    P_bad[0, 0] = -0.1 - np.abs(P).max() * 10
    assert max(verify_assignment(prob, {"P": P_bad})) > 0


def test_kyp_scalar_example():
    prob = LmiProblem()
    for v in "PQR":
        prob.variable(v, (1, 1), symmetric=True)
    prob.variable("S", (1, 1))
    prob.extend(assemble_agent_kyp([[-1.0]], [[1.0]], "P", "Q", "S", "R"))
    vals = {"P": np.array([[1.0]]), "Q": np.array([[-1.0]]), "S": np.zeros((1, 1)), "R": np.array([[1.0]])}
    kyp = prob.constraints[0].expr.evaluate(vals)
    assert np.allclose(kyp, [[-1.0, 1.0], [1.0, -1.0]])
    assert max(verify_assignment(prob, vals)) <= 1e-12
    # det = -(p - 1)^2: p = 1 is the only feasible storage, so no strict margin exists
    for p in (0.9, 0.99, 1.01):
        vals["P"] = np.array([[p]])
        assert max(verify_assignment(prob, vals)) > 0


def test_kyp_with_zero_input_decouples():
    A = np.array([[-1.0, 0.0], [2.0, -3.0]])
    prob = LmiProblem()
    prob.variable("P", (2, 2), True)
    prob.variable("Q", (2, 2), True)
    prob.variable("S", (2, 1))
    prob.variable("R", (1, 1), True)
    kyp, psd = assemble_agent_kyp(A, np.zeros((2, 1)), "P", "Q", "S", "R")
    r = np.random.default_rng(0)
    M = r.normal(size=(2, 2))
    vals = {"P": M + M.T, "Q": np.eye(2), "S": np.zeros((2, 1)), "R": np.array([[2.0]])}
    F = kyp.expr.evaluate(vals)
    P = vals["P"]
    assert np.allclose(F[:2, :2], A.T @ P + P @ A - np.eye(2))
    assert np.allclose(F[:2, 2:], 0.0)
    assert np.allclose(F[2:, 2:], -2.0)


def test_static_gain_examples():
    def value(K, Q, S, R):
        prob = LmiProblem()
        n, m = K.shape[1], K.shape[0]
        prob.variable("Q", (m, m), True)
        prob.variable("S", (m, n))
        prob.variable("R", (n, n), True)
        (c,) = assemble_static_gain(K, "Q", "S", "R")
        return c.expr.evaluate({"Q": Q, "S": S, "R": R})

    I = np.eye(2)
    assert np.allclose(value(np.zeros((2, 2)), I, I, 3 * I), -3 * I)
    assert np.allclose(value(I, -I, I, 0 * I), -I)
    K = np.random.default_rng(1).normal(size=(3, 2))
    assert np.allclose(value(K, np.zeros((3, 3)), np.zeros((3, 2)), I), -I)


def test_problem_validation():
    prob = LmiProblem()
    prob.variable("P", (2, 2), True)
    with pytest.raises(InvalidArgument):
        prob.variable("P", (2, 2), True)
    with pytest.raises(InvalidArgument):
        prob.add(AffineMatrixExpr.zeros(2).add("X", np.eye(2), np.eye(2)))
    with pytest.raises(InvalidArgument):
        AffineMatrixExpr.zeros(2).add("P", np.eye(3), np.eye(2))
    with pytest.raises(InvalidArgument):
        prob.add(AffineMatrixExpr.zeros(2).add("P", np.eye(2), np.eye(2)), margin=-1.0)
    with pytest.raises(InvalidArgument):
        solve_feasibility(LmiProblem())


def test_evaluation_is_symmetric():
    r = np.random.default_rng(2)
    prob = LmiProblem()
    prob.variable("S", (3, 2))
    L, R = r.normal(size=(4, 3)), r.normal(size=(2, 4))
    prob.add(AffineMatrixExpr.zeros(4).add("S", L, R, transpose=True))
    F = prob.constraints[0].expr.evaluate({"S": r.normal(size=(3, 2))})
    assert np.abs(F - F.T).max() <= 1e-12 * (1 + np.abs(F).max())


def test_default_margin():
    assert default_margin(np.zeros((3, 3))) == pytest.approx(1e-6)
    assert default_margin(np.eye(4)) == pytest.approx(1e-6 * 3)


def _random_problem(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(1, 4))
    A = r.normal(size=(n, n))
    if r.random() < 0.5:
        A -= (np.linalg.eigvals(A).real.max() + r.uniform(0.2, 1.0)) * np.eye(n)
    else:
        A += (r.uniform(0.2, 1.0) - np.linalg.eigvals(A).real.max()) * np.eye(n)
    return A


@settings(deadline=None, max_examples=20)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.1, 10.0]))
def test_box_and_margin_scaling_preserves_verdict(seed, c):
    A = _random_problem(seed)
    base = solve_feasibility(lyapunov_problem(A, margin=1e-2, box=10.0))
    scaled = solve_feasibility(lyapunov_problem(A, margin=1e-2 * c, box=10.0 * c))
    if UNDECIDED not in (base.status, scaled.status):
        assert base.status == scaled.status


@settings(deadline=None, max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_larger_box_never_loses_feasibility(seed):
    A = _random_problem(seed)
    small = solve_feasibility(lyapunov_problem(A, margin=1e-2, box=1.0))
    big = solve_feasibility(lyapunov_problem(A, margin=1e-2, box=100.0))
    if small.status == FEASIBLE:
        assert big.status == FEASIBLE


def test_iteration_cap_is_undecided():
    A = np.array([[0.0, 1.0], [-1.0, -1.0]])
    res = solve_feasibility(lyapunov_problem(A, margin=1e-2), iter_cap=1)
    assert res.status in (UNDECIDED, FEASIBLE)
    if res.status == FEASIBLE:
        assert max(res.margins) <= 0
