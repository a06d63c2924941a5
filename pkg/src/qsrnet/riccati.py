"""Riccati solver, LQR synthesis and the quadrotor fleet model.

The CARE is solved with the matrix sign function of the Hamiltonian
``[[A, -B Rw^-1 B'], [-Qw, -A']]``; its stable invariant subspace gives
``P`` through one least-squares solve.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgument, NotStabilizable, NumericalFailure, SingularMatrix
from .linalg import as_matrix, as_sym, eigvalsh, fro, inv, lambda_max, lu_factor, lu_solve

SIGN_MAX_ITER = 100
SIGN_TOL = 1e-13


@dataclass(frozen=True)
class StateSpace:
    """``x' = A x + B u``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise InvalidArgument(f"A {A.shape} and B {B.shape} are inconsistent")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class QuadrotorParams:
    mass: float = 0.5
    arm_length: float = 0.17
    Ixx: float = 3.2e-3
    Iyy: float = 3.2e-3
    Izz: float = 5.5e-3
    k_f: float = 6.11e-8
    k_m: float = 1.5e-9
    g: float = 9.81

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if not (np.isfinite(v) and v > 0):
                raise InvalidArgument(f"quadrotor parameter {name} must be positive, got {v}")

    @property
    def hover_speed(self) -> float:
        """Rotor speed at which four rotors carry the weight (rad/s)."""
        return float(np.sqrt(self.mass * self.g / (4.0 * self.k_f)))


@dataclass(frozen=True)
class LqrDesign:
    Q_lqr: np.ndarray
    R_lqr: np.ndarray
    K: np.ndarray
    P: np.ndarray


def quadrotor_linearize(p: QuadrotorParams) -> StateSpace:
    """Hover linearization with states (x, y, z, phi, theta, psi, vx, vy, vz, p, q, r).

    Inputs are deviations of the four rotor speeds from hover. Rotors 1 and
    3 lie on the body x axis, 2 and 4 on the y axis; 1 and 3 spin opposite
    to 2 and 4.
    """
    A = np.zeros((12, 12))
    A[0:3, 6:9] = np.eye(3)
    A[3:6, 9:12] = np.eye(3)
    A[6, 4] = p.g
    A[7, 3] = -p.g
    wh = p.hover_speed
    dthrust = 2.0 * p.k_f * wh
    ddrag = 2.0 * p.k_m * wh
    B = np.zeros((12, 4))
    B[8, :] = dthrust / p.mass
    B[9, :] = np.array([0.0, 1.0, 0.0, -1.0]) * dthrust * p.arm_length / p.Ixx
    B[10, :] = np.array([-1.0, 0.0, 1.0, 0.0]) * dthrust * p.arm_length / p.Iyy
    B[11, :] = np.array([1.0, -1.0, 1.0, -1.0]) * ddrag / p.Izz
    return StateSpace(A, B)


def randomize_fleet(
    nominal: QuadrotorParams, count: int, seed, low: float = 2 / 3, high: float = 4 / 3
) -> list[QuadrotorParams]:
    """Copies of ``nominal`` with mass and arm length each scaled by U[low, high]."""
    if count < 1:
        raise InvalidArgument("fleet count must be at least 1")
    if not 0 < low <= high:
        raise InvalidArgument("need 0 < low <= high")
    rng = np.random.default_rng(seed)
    scales = rng.uniform(low, high, size=(count, 2))
    return [
        replace(nominal, mass=nominal.mass * a, arm_length=nominal.arm_length * b)
        for a, b in scales
    ]


def default_lqr_weights() -> tuple[np.ndarray, np.ndarray]:
    return np.diag([100.0] * 6 + [10.0] * 6), np.eye(4)


def _log_abs_det(Z: np.ndarray) -> float:
    LU, _ = lu_factor(Z)
    return float(np.sum(np.log(np.abs(np.diag(LU)))))


def matrix_sign(Z, max_iter: int = SIGN_MAX_ITER, tol: float = SIGN_TOL) -> tuple[np.ndarray, int]:
    """Newton iteration ``Z <- (Z/c + c Z^-1)/2`` with determinant scaling.

    ``c = |det Z|^(1/n)`` while far from convergence, then unscaled steps.
    Stops on a relative step below ``tol`` or when steps below 1e-8 stop
    decreasing (rounding level). Raises ``NumericalFailure`` otherwise.
    """
    Z = as_matrix(Z, "Z").copy()
    n = Z.shape[0]
    scaling = True
    prev = np.inf
    for k in range(1, max_iter + 1):
        c = np.exp(_log_abs_det(Z) / n) if scaling else 1.0
        Zn = 0.5 * (Z / c + c * inv(Z))
        step = np.abs(Zn - Z).sum() / max(np.abs(Zn).sum(), 1e-300)
        Z = Zn
        if step <= tol or (not scaling and step < 1e-8 and step >= prev):
            return Z, k
        if step < 1e-2:
            scaling = False
        prev = step
    raise NumericalFailure(f"matrix sign iteration did not converge in {max_iter} steps")


def _lyap_solve(F: np.ndarray, Res: np.ndarray) -> np.ndarray:
    """Solve ``F' X + X F = -Res`` by the Kronecker form."""
    n = F.shape[0]
    K = np.kron(np.eye(n), F.T) + np.kron(F.T, np.eye(n))
    return lu_solve(K, -Res.reshape(-1)).reshape(n, n)


def care_residual(A, B, Qw, Rw, P) -> np.ndarray:
    Rinv = inv(Rw)
    return A.T @ P + P @ A - P @ B @ Rinv @ B.T @ P + Qw


def care_sign(A, B, Qw, Rw, refine: int = 2) -> np.ndarray:
    """Stabilizing solution of ``A'P + PA - P B Rw^-1 B' P + Qw = 0``.

    Raises ``NumericalFailure`` if the sign iteration does not converge and
    ``NotStabilizable`` if the stable subspace does not yield a PSD ``P``.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    Qw = as_sym(Qw, "Qw", check=True)
    Rw = as_sym(Rw, "Rw", check=True)
    n, m = B.shape
    if A.shape != (n, n) or Qw.shape != (n, n) or Rw.shape != (m, m):
        raise InvalidArgument("CARE data have inconsistent dimensions")
    if eigvalsh(Rw)[0] <= 0:
        raise InvalidArgument("Rw must be positive definite")
    G = B @ inv(Rw) @ B.T
    Ham = np.block([[A, -G], [-Qw, -A.T]])
    try:
        W, _ = matrix_sign(Ham)
    except SingularMatrix as exc:
        raise NotStabilizable(f"Hamiltonian has eigenvalues on the imaginary axis: {exc}") from exc
    W11, W12 = W[:n, :n], W[:n, n:]
    W21, W22 = W[n:, :n], W[n:, n:]
    M = np.vstack([W12, W22 + np.eye(n)])
    rhs = -np.vstack([W11 + np.eye(n), W21])
    # orthogonal least squares; normal equations would square the conditioning
    P, _, rank, sv = np.linalg.lstsq(M, rhs, rcond=None)
    if rank < n or sv[-1] <= 1e-14 * sv[0]:
        raise NotStabilizable("stable invariant subspace is not a graph over the state space")
    P = 0.5 * (P + P.T)
    for _ in range(refine):
        F = A - G @ P
        Res = care_residual(A, B, Qw, Rw, P)
        try:
            dP = _lyap_solve(F, Res)
        except SingularMatrix:
            break
        P = 0.5 * (P + dP + (P + dP).T)
    res = fro(care_residual(A, B, Qw, Rw, P))
    if not np.all(np.isfinite(P)) or res > 1e-8 * (1.0 + fro(P) ** 2):
        raise NumericalFailure(f"CARE residual {res:.3e} too large")
    if eigvalsh(P)[0] < -1e-9 * (1.0 + fro(P)):
        raise NotStabilizable("Riccati solution is not positive semidefinite")
    return P


def is_hurwitz(A) -> bool:
    """All eigenvalues in the open left half plane, via ``sign(A) = -I``."""
    A = as_matrix(A, "A")
    try:
        S, _ = matrix_sign(A)
    except NumericalFailure:
        return False
    return bool(np.abs(S + np.eye(A.shape[0])).max() <= 1e-8)


def lqr_gain(A, B, Qw, Rw) -> LqrDesign:
    """``K = Rw^-1 B' P``; raises ``NotStabilizable`` if ``A - BK`` is not Hurwitz."""
    P = care_sign(A, B, Qw, Rw)
    K = lu_solve(as_sym(Rw, "Rw"), as_matrix(B).T @ P)
    if not is_hurwitz(as_matrix(A) - as_matrix(B) @ K):
        raise NotStabilizable("closed loop A - BK is not Hurwitz")
    return LqrDesign(as_sym(Qw, "Qw"), as_sym(Rw, "Rw"), K, P)


def lyapunov_certificate(design: LqrDesign, A, B) -> float:
    """``lambda_max`` of ``(A-BK)'P + P(A-BK)``; negative certifies the closed loop."""
    F = as_matrix(A) - as_matrix(B) @ design.K
    return lambda_max(F.T @ design.P + design.P @ F)
