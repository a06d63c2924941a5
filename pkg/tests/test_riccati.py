import hypothesis.strategies as st
import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings

from qsrnet.errors import NotStabilizable, NumericalFailure
from qsrnet.riccati import (
    QuadrotorParams,
    care_residual,
    care_sign,
    is_hurwitz,
    lqr_gain,
    matrix_sign,
    default_lqr_weights,
    quadrotor_linearize,
    randomize_fleet,
)
from qsrnet.sim import SwitchingSignal, rk4_switched


def rigid_body_rhs(p, s, w):
    """Nonlinear quadrotor: ZYX Euler angles, body rates, rotor speeds ``w``."""
    phi, th, psi = s[3:6]
    wb = s[9:12]
    f = p.k_f * w**2
    T = f.sum()
    tau = np.array(
        [
            p.arm_length * (f[1] - f[3]),
            p.arm_length * (f[2] - f[0]),
            p.k_m * (w[0] ** 2 - w[1] ** 2 + w[2] ** 2 - w[3] ** 2),
        ]
    )
    cphi, sphi, cth, sth, cpsi, spsi = np.cos(phi), np.sin(phi), np.cos(th), np.sin(th), np.cos(psi), np.sin(psi)
    thrust_dir = np.array(
        [cpsi * sth * cphi + spsi * sphi, spsi * sth * cphi - cpsi * sphi, cth * cphi]
    )
    acc = T / p.mass * thrust_dir - np.array([0.0, 0.0, p.g])
    E = np.array(
        [[1.0, sphi * np.tan(th), cphi * np.tan(th)], [0.0, cphi, -sphi], [0.0, sphi / cth, cphi / cth]]
    )
    J = np.diag([p.Ixx, p.Iyy, p.Izz])
    dw = np.linalg.solve(J, tau - np.cross(wb, J @ wb))
    return np.concatenate([s[6:9], E @ wb, acc, dw])


def finite_difference(p, h=1e-6):
    wh = p.hover_speed
    s0 = np.zeros(12)
    w0 = np.full(4, wh)
    A = np.zeros((12, 12))
    B = np.zeros((12, 4))
    for i in range(12):
        d = np.zeros(12)
        d[i] = h
        A[:, i] = (rigid_body_rhs(p, s0 + d, w0) - rigid_body_rhs(p, s0 - d, w0)) / (2 * h)
    for j in range(4):
        d = np.zeros(4)
        d[j] = h * wh
        B[:, j] = (rigid_body_rhs(p, s0, w0 + d) - rigid_body_rhs(p, s0, w0 - d)) / (2 * h * wh)
    return A, B


@pytest.mark.parametrize("mass,arm", [(0.5, 0.17), (0.4, 0.2), (0.66, 0.12)])
def test_linearization_matches_nonlinear_model(mass, arm):
    p = QuadrotorParams(mass=mass, arm_length=arm)
    ss = quadrotor_linearize(p)
    A, B = finite_difference(p)
    assert np.allclose(ss.A, A, atol=1e-6)
    assert np.allclose(ss.B, B, rtol=1e-6, atol=1e-9)
    assert ss.A[6, 4] == p.g and ss.A[7, 3] == -p.g
    assert ss.B[8].sum() == pytest.approx(4 * 2 * p.k_f * p.hover_speed / p.mass)
    # hover is an equilibrium of the nonlinear model
    assert np.allclose(rigid_body_rhs(p, np.zeros(12), np.full(4, p.hover_speed)), 0.0, atol=1e-12)


def test_invalid_params():
    with pytest.raises(ValueError):
        QuadrotorParams(mass=-1.0)


def test_scalar_care():
    P = care_sign([[-1.0]], [[1.0]], [[1.0]], [[1.0]])
    assert abs(P[0, 0] - (np.sqrt(2.0) - 1.0)) <= 1e-10
    d = lqr_gain([[-1.0]], [[1.0]], [[1.0]], [[1.0]])
    assert abs(d.K[0, 0] - (np.sqrt(2.0) - 1.0)) <= 1e-10


def test_zero_cost_gives_zero_solution():
    A = np.array([[-1.0, 2.0], [0.0, -3.0]])
    P = care_sign(A, np.eye(2), np.zeros((2, 2)), np.eye(2))
    assert np.abs(P).max() <= 1e-12


@settings(deadline=None, max_examples=100)
@given(st.integers(1, 12), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_random_care_residual(n, m, seed):
    r = np.random.default_rng(seed)
    A = r.normal(size=(n, n))
    B = r.normal(size=(n, m))
    C = r.normal(size=(n, n))
    Qw = C @ C.T + 1e-3 * np.eye(n)
    Rw = np.diag(r.uniform(0.5, 2.0, m))
    P = care_sign(A, B, Qw, Rw)
    res = np.linalg.norm(care_residual(A, B, Qw, Rw, P))
    assert res <= 1e-8 * (1 + np.linalg.norm(P) ** 2)
    assert np.linalg.eigvalsh(P)[0] >= -1e-9 * (1 + np.linalg.norm(P))
    ref = sla.solve_continuous_are(A, B, Qw, Rw)
    # ill-conditioned draws (|P| ~ 1e8) leave the reference solver with the larger residual,
    # so compare in norm rather than entrywise
    assert np.linalg.norm(P - ref) <= 1e-5 * np.linalg.norm(ref)


def test_zero_input_columns_give_zero_gain_rows():
    A = np.array([[0.0, 1.0], [-1.0, -0.5]])
    B = np.array([[0.0, 0.0], [1.0, 0.0]])
    d = lqr_gain(A, B, np.eye(2), np.eye(2))
    assert np.abs(d.K[1]).max() == 0.0


def test_quadrotor_lqr_is_stable():
    Qw, Rw = default_lqr_weights()
    for p in randomize_fleet(QuadrotorParams(), 9, 0):
        ss = quadrotor_linearize(p)
        d = lqr_gain(ss.A, ss.B, Qw, Rw)
        assert d.K.shape == (4, 12)
        assert np.linalg.eigvals(ss.A - ss.B @ d.K).real.max() < 0


def test_matrix_sign():
    S, _ = matrix_sign(np.diag([-3.0, 2.0]))
    assert np.allclose(S, np.diag([-1.0, 1.0]), atol=1e-14)
    with pytest.raises(NumericalFailure):
        matrix_sign(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    assert is_hurwitz(np.array([[-1.0, 5.0], [0.0, -2.0]]))
    assert not is_hurwitz(np.array([[1.0, 0.0], [0.0, -2.0]]))


def test_unstabilizable_detected():
    with pytest.raises(NotStabilizable):
        care_sign([[0.0]], [[0.0]], [[1.0]], [[1.0]])
    with pytest.raises((NotStabilizable, NumericalFailure)):
        care_sign([[1.0]], [[0.0]], [[1.0]], [[1.0]])


def test_fleet_randomization():
    a = randomize_fleet(QuadrotorParams(), 9, 7)
    assert a == randomize_fleet(QuadrotorParams(), 9, 7)
    assert len({(p.mass, p.arm_length) for p in a}) == 9
    nom = QuadrotorParams()
    big = randomize_fleet(nom, 10_000, 3)
    s = np.array([[p.mass / nom.mass, p.arm_length / nom.arm_length] for p in big])
    assert s.min() >= 2 / 3 and s.max() <= 4 / 3
    assert abs(s.mean() - 1.0) <= 0.01
    assert all(p.Ixx == nom.Ixx and p.k_f == nom.k_f for p in big[:50])


def _decay_ratio(A, B, K, x0):
    F = A - B @ K
    _, X, _ = rk4_switched(lambda m, t, x: F @ x, SwitchingSignal.constant(0, 20.0), 1e-2, 20.0, x0)
    return np.linalg.norm(X[-1]) / np.linalg.norm(x0)


@pytest.mark.parametrize("seed", range(5))
def test_closed_loop_decay_fast_systems(seed):
    r = np.random.default_rng(seed)
    n, m = 6, 3
    A = r.normal(size=(n, n)) - 2 * np.eye(n)
    B = r.normal(size=(n, m))
    d = lqr_gain(A, B, 100 * np.eye(n), np.eye(m))
    assert _decay_ratio(A, B, d.K, r.normal(size=n)) <= 1e-3


@pytest.mark.xfail(
    strict=True,
    reason="hover LQR with these weights has closed-loop poles near -0.1; x(20) keeps ~1/e of x0",
)
def test_closed_loop_decay_quadrotor():
    Qw, Rw = default_lqr_weights()
    ss = quadrotor_linearize(QuadrotorParams())
    d = lqr_gain(ss.A, ss.B, Qw, Rw)
    r = np.random.default_rng(0)
    assert _decay_ratio(ss.A, ss.B, d.K, r.normal(size=12)) <= 1e-3
