"""Dense real linear algebra used throughout the package.

Matrices are plain ``numpy`` arrays. ``as_matrix`` and ``as_sym`` validate
inputs (finite, 2-D, square/symmetric where required); everything else is a
pure function of its arguments.

The symmetric eigensolver is a cyclic Jacobi method with round-robin
(tournament) pair ordering, so each round applies ``n/2`` disjoint rotations
as vectorized row/column updates.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import InvalidArgument, NumericalFailure, SingularMatrix

SYM_TOL = 1e-12
JACOBI_TOL = 1e-13
JACOBI_MAX_SWEEPS = 100


def fro(M) -> float:
    return float(np.linalg.norm(M, "fro")) if np.size(M) else 0.0


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    A = np.array(M, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    elif A.ndim == 1:
        A = A.reshape(1, -1)
    if A.ndim != 2:
        raise InvalidArgument(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidArgument(f"{name} has non-finite entries")
    return A


def as_sym(M, name: str = "matrix", check: bool = False) -> np.ndarray:
    """Return ``(M + M.T)/2`` after validation.

    With ``check=True`` the input must already be symmetric to
    ``SYM_TOL * (1 + max|M|)``.
    """
    A = as_matrix(M, name)
    if A.shape[0] != A.shape[1]:
        raise InvalidArgument(f"{name} must be square, got shape {A.shape}")
    if check:
        scale = 1.0 + (np.abs(A).max() if A.size else 0.0)
        if np.abs(A - A.T).max(initial=0.0) > SYM_TOL * scale:
            raise InvalidArgument(f"{name} is not symmetric")
    return 0.5 * (A + A.T)


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings for ``n - 1`` rounds of a tournament on ``n`` (even) players."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        rounds.append((np.minimum(p, q), np.maximum(p, q)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


_ROUNDS_CACHE: dict[int, list] = {}


def sym_eig(M, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS, vectors: bool = True):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(w, V)`` with ``w`` ascending and ``M @ V = V @ diag(w)``.
    Stops when the off-diagonal Frobenius norm is at most ``tol * ||M||_F``;
    raises ``NumericalFailure`` after ``max_sweeps`` sweeps. With
    ``vectors=False`` the rotations are not accumulated and ``V`` is None.
    """
    A = as_sym(M, "M")
    n = A.shape[0]
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    if n == 1:
        return A[0].copy(), (np.ones((1, 1)) if vectors else None)
    m = n + (n % 2)
    if m != n:
        # padding index stays decoupled: its off-diagonals are exactly zero
        A = np.pad(A, ((0, 1), (0, 1)))
    V = np.eye(m) if vectors else None
    thresh = tol * fro(A)
    rounds = _ROUNDS_CACHE.setdefault(m, _round_robin(m))
    off_mask = ~np.eye(m, dtype=bool)
    # entries below this never need rotating: if all are, off <= thresh
    skip = thresh / m

    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(A[off_mask] ** 2))
        if off <= thresh:
            break
        for p, q in rounds:
            apq = A[p, q]
            active = np.abs(apq) > skip
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            app, aqq = A[p, p], A[q, q]
            tau = (aqq - app) / (2.0 * apq)
            sgn = np.where(tau >= 0, 1.0, -1.0)
            t = sgn / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            rp, rq = A[p, :], A[q, :]
            A[p, :] = c[:, None] * rp - s[:, None] * rq
            A[q, :] = s[:, None] * rp + c[:, None] * rq
            cp, cq = A[:, p], A[:, q]
            A[:, p] = cp * c - cq * s
            A[:, q] = cp * s + cq * c
            A[p, q] = 0.0
            A[q, p] = 0.0
            if vectors:
                vp, vq = V[:, p], V[:, q]
                V[:, p] = vp * c - vq * s
                V[:, q] = vp * s + vq * c
    else:
        off = np.sqrt(np.sum(A[off_mask] ** 2))
        if off > thresh:
            raise NumericalFailure(
                f"Jacobi did not converge in {max_sweeps} sweeps (off={off:.3e})"
            )

    w = np.diag(A).copy()
    if not vectors:
        # the padding index is never rotated
        return np.sort(w[:n], kind="stable"), None
    if m != n:
        # drop the padding eigenpair (eigenvector e_n, eigenvalue 0)
        keep = np.argsort(np.abs(V[n, :]))[:n]
        w, V = w[keep], V[:n, keep]
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def eigvalsh(M) -> np.ndarray:
    return sym_eig(M, vectors=False)[0]


def lambda_max(M) -> float:
    return float(sym_eig(M, vectors=False)[0][-1])


def _definiteness_shift(M: np.ndarray) -> float:
    return SYM_TOL * (1.0 + fro(M))


def is_negdef(M, margin: float = 0.0) -> bool:
    """True iff ``lambda_max(M) <= -margin``.

    Decided twice, by Jacobi eigenvalues and by a Cholesky factorization of
    ``-(M + margin I)`` shifted by a roundoff allowance. The two routes must
    agree; a disagreement raises ``NumericalFailure``.
    """
    if margin < 0:
        raise InvalidArgument("margin must be nonnegative")
    A = as_sym(M, "M")
    n = A.shape[0]
    if n == 0:
        return True
    delta = _definiteness_shift(A)
    by_eig = lambda_max(A) <= -margin + delta
    N = -(A + margin * np.eye(n)) + delta * np.eye(n)
    try:
        np.linalg.cholesky(N)
        by_chol = True
    except np.linalg.LinAlgError:
        by_chol = False
    if by_eig != by_chol:
        raise NumericalFailure(
            "eigenvalue and Cholesky definiteness tests disagree "
            f"(lambda_max={lambda_max(A):.3e}, margin={margin:.3e})"
        )
    return by_eig


def is_posdef(M, margin: float = 0.0) -> bool:
    return is_negdef(-as_sym(M, "M"), margin)


def inertia(M, tol: float | None = None) -> tuple[int, int, int]:
    """Counts of (negative, zero, positive) eigenvalues."""
    A = as_sym(M, "M")
    w = eigvalsh(A)
    if tol is None:
        tol = 1e-10 * (1.0 + fro(A))
    return int(np.sum(w < -tol)), int(np.sum(np.abs(w) <= tol)), int(np.sum(w > tol))


def lu_factor(A):
    """LU with partial pivoting; returns ``(LU, perm)`` with ``A[perm] = L U``."""
    LU = as_matrix(A, "A").copy()
    n, m = LU.shape
    if n != m:
        raise InvalidArgument(f"A must be square, got {LU.shape}")
    perm = np.arange(n)
    tiny = 1e-13 * fro(LU)
    for k in range(n):
        piv = k + int(np.argmax(np.abs(LU[k:, k])))
        if abs(LU[piv, k]) <= tiny or LU[piv, k] == 0.0:
            raise SingularMatrix(f"pivot {k} below {tiny:.3e}")
        if piv != k:
            LU[[k, piv]] = LU[[piv, k]]
            perm[[k, piv]] = perm[[piv, k]]
        LU[k + 1 :, k] /= LU[k, k]
        LU[k + 1 :, k + 1 :] -= np.outer(LU[k + 1 :, k], LU[k, k + 1 :])
    return LU, perm


def lu_solve(A, B) -> np.ndarray:
    """Solve ``A X = B`` by LU with partial pivoting.

    Raises ``SingularMatrix`` when a pivot falls below ``1e-13 * ||A||_F``.
    ``B`` may be a vector or a matrix; the result has the same shape.
    """
    B = np.array(B, dtype=float)
    vec = B.ndim == 1
    Bm = B.reshape(-1, 1) if vec else B
    LU, perm = lu_factor(A)
    n = LU.shape[0]
    if Bm.shape[0] != n:
        raise InvalidArgument(f"B has {Bm.shape[0]} rows, A has {n}")
    X = Bm[perm].copy()
    for k in range(n):
        X[k + 1 :] -= np.outer(LU[k + 1 :, k], X[k])
    for k in range(n - 1, -1, -1):
        X[k] /= LU[k, k]
        X[:k] -= np.outer(LU[:k, k], X[k])
    return X.ravel() if vec else X


def inv(A) -> np.ndarray:
    A = as_matrix(A, "A")
    return lu_solve(A, np.eye(A.shape[0]))


def block_diag(blocks: Sequence) -> np.ndarray:
    """Block-diagonal stack of (possibly rectangular) blocks."""
    if len(blocks) == 0:
        raise InvalidArgument("block_diag needs at least one block")
    mats = [as_matrix(b, "block") for b in blocks]
    rows = sum(b.shape[0] for b in mats)
    cols = sum(b.shape[1] for b in mats)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in mats:
        out[r : r + b.shape[0], c : c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out
