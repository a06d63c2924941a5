import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

from qsrnet.dissipativity import (
    QsrTriple,
    QuadStorage,
    check_dissipation,
    derive_common_supply,
    l2_gain_report,
    supply_rate,
    truncated_norms,
)
from qsrnet.errors import InvalidArgument, InvalidEpsilon, NotApplicable
from qsrnet.lmi import FEASIBLE, LmiProblem, assemble_agent_kyp, solve_feasibility
from qsrnet.sim import TrajectoryRecord, simulate_lti


def test_supply_rate_examples():
    I = np.eye(2)
    e1 = np.array([1.0, 0.0])
    assert supply_rate(QsrTriple(-I, 0 * I, I), e1, e1) == 0.0
    assert supply_rate(QsrTriple(0 * I, 0.5 * I, 0 * I), [1.0, 2.0], [3.0, 4.0]) == pytest.approx(11.0)
    r = np.random.default_rng(0)
    M = r.normal(size=(2, 2))
    assert supply_rate(QsrTriple(M + M.T, M, I), np.zeros(2), np.zeros(2)) == 0.0
    with pytest.raises(InvalidArgument):
        supply_rate(QsrTriple(-I, 0 * I, I), np.zeros(3), np.zeros(2))
    with pytest.raises(InvalidArgument):
        QsrTriple(-I, np.zeros((2, 3)), I)


def test_supply_rate_vectorized_rows():
    r = np.random.default_rng(1)
    A = r.normal(size=(3, 3))
    trip = QsrTriple(A + A.T, r.normal(size=(3, 2)), np.eye(2))
    Y, U = r.normal(size=(5, 3)), r.normal(size=(5, 2))
    w = supply_rate(trip, Y, U)
    assert np.allclose(w, [supply_rate(trip, y, u) for y, u in zip(Y, U)])


def test_common_supply_scalar_examples():
    cs = derive_common_supply([QsrTriple(-2 * np.eye(2), np.zeros((2, 2)), 3 * np.eye(2))], [1.0])
    assert abs(cs.q - 1.0) <= 1e-12 and abs(cs.r - 3.0) <= 1e-12
    assert abs(cs.gamma - np.sqrt(3.0)) <= 1e-12
    cs = derive_common_supply([QsrTriple([[-2.0]], [[1.0]], [[0.0]])], [1.0])
    assert abs(cs.q - 1.0) <= 1e-12 and abs(cs.r - 1.0) <= 1e-12 and abs(cs.gamma - 1.0) <= 1e-12
    assert cs.beta_coeff == pytest.approx(1.0)


def test_common_supply_errors_and_defaults():
    with pytest.raises(NotApplicable):
        derive_common_supply([QsrTriple([[0.0]], [[1.0]], [[1.0]])])
    with pytest.raises(InvalidEpsilon):
        derive_common_supply([QsrTriple([[-1.0]], [[1.0]], [[1.0]])], [1.0])
    with pytest.raises(InvalidEpsilon):
        derive_common_supply([QsrTriple([[-1.0]], [[1.0]], [[1.0]])], [0.0])
    cs = derive_common_supply([QsrTriple([[-4.0]], [[0.0]], [[-1.0]])])
    assert cs.epsilons == (2.0,)
    assert cs.r == 0.0 and cs.gamma == 0.0


def random_triple(r, l, m):
    M = r.normal(size=(l, l))
    Q = -(M @ M.T) - r.uniform(0.05, 1.0) * np.eye(l)
    N = r.normal(size=(m, m))
    return QsrTriple(Q, r.normal(size=(l, m)), N + N.T)


@settings(deadline=None, max_examples=50)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_common_supply_dominates_every_mode(l, m, k, seed):
    r = np.random.default_rng(seed)
    modes = [random_triple(r, l, m) for _ in range(k)]
    cs = derive_common_supply(modes)
    Y, U = r.normal(size=(2000, l)), r.normal(size=(2000, m))
    for trip in modes:
        w = supply_rate(trip, Y, U)
        bound = -cs.q * np.sum(Y * Y, axis=1) + cs.r * np.sum(U * U, axis=1)
        assert np.all(w <= bound + 1e-9 * (1 + np.abs(bound)))


@settings(deadline=None, max_examples=30)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_duplicate_mode_invariance(l, m, seed):
    r = np.random.default_rng(seed)
    modes = [random_triple(r, l, m) for _ in range(2)]
    a = derive_common_supply(modes)
    b = derive_common_supply(modes + [modes[0]])
    assert (a.q, a.r, a.gamma) == (b.q, b.r, b.gamma)


def test_storage_rejects_indefinite():
    with pytest.raises(InvalidArgument):
        QuadStorage(np.diag([1.0, -1.0]))
    V = QuadStorage(np.diag([2.0, 1.0]))
    assert V([1.0, 1.0]) == 3.0
    assert np.allclose(V(np.eye(2)), [2.0, 1.0])


def _scalar_agent():
    prob = LmiProblem()
    for v in "PQR":
        prob.variable(v, (1, 1), True, 10.0)
    prob.variable("S", (1, 1), False, 10.0)
    prob.extend(assemble_agent_kyp([[-1.0]], [[1.0]], "P", "Q", "S", "R"))
    prob.add_psd("P", 1e-2)
    # Q <= -0.1 keeps the triple dissipative in a nontrivial way
    from qsrnet.lmi import AffineMatrixExpr

    prob.add(AffineMatrixExpr.zeros(1).add("Q", np.eye(1), np.eye(1)), 0.1, "Q neg")
    res = solve_feasibility(prob)
    assert res.status == FEASIBLE
    a = res.assignment
    return QuadStorage(a["P"]), QsrTriple(a["Q"], a["S"], a["R"])


def test_check_dissipation_lti_agent():
    storage, trip = _scalar_agent()
    r = np.random.default_rng(3)
    for _ in range(10):
        f, ph = r.uniform(0.2, 3.0, 3), r.uniform(0, 2 * np.pi, 3)
        tr = simulate_lti([[-1.0]], [[1.0]], lambda t: np.array([np.sin(f * t + ph).sum()]), 0.01, 8.0, [r.normal()])
        assert check_dissipation(tr, storage, trip, rel_tol=1e-3, input="e").passed
        # inflated storage on an active trajectory violates the inequality
        bad = check_dissipation(tr, QuadStorage(1e3 * storage.P), trip, rel_tol=1e-3, input="e")
        assert not bad.passed


def test_check_dissipation_zero_and_modes():
    t = np.linspace(0, 1, 11)
    Z = np.zeros((11, 1))
    tr = TrajectoryRecord(t, Z, Z, Z, Z, np.zeros(11, int))
    trip = QsrTriple([[-1.0]], [[0.0]], [[1.0]])
    rep = check_dissipation(tr, QuadStorage([[1.0]]), trip)
    assert rep.passed and rep.worst_violation == 0.0
    # storage jumps across a switch are not pairs of the same mode
    x = np.where(t < 0.5, 0.0, 1.0)[:, None]
    tr = TrajectoryRecord(t, x, Z, Z, Z, np.where(t < 0.5, 1, 2))
    assert check_dissipation(tr, QuadStorage([[1.0]]), {1: trip, 2: trip}).passed
    assert not check_dissipation(tr, QuadStorage([[1.0]]), trip).passed
    with pytest.raises(InvalidArgument):
        check_dissipation(tr, QuadStorage([[1.0]]), {1: trip})


def test_l2_report_examples():
    t = np.linspace(0, 10, 1001)
    zero = np.zeros((len(t), 2))
    assert l2_gain_report(t, zero, zero, 1.0, 0.0, tol=1e-12).passed
    u = np.sin(t)[:, None]
    y = 2 * u
    assert l2_gain_report(t, y, u, 2.0, 0.0, tol=1e-9).passed
    rep = l2_gain_report(t, y, u, 1.0, 0.0)
    assert not rep.passed and rep.max_ratio == pytest.approx(2.0)
    n = truncated_norms(t, u)
    assert n[-1] == pytest.approx(np.sqrt(np.trapezoid(np.sin(t) ** 2, t)))
