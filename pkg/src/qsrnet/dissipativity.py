"""Quadratic supply rates, trajectory-level dissipation checks and common supply rates.

A system is QSR-dissipative when some storage ``V >= 0`` satisfies

    V(x(t)) - V(x(s)) <= int_s^t  y'Qy + 2 y'Su + u'Ru

along all trajectories. For a family of modes sharing one storage, any
``eps_i > 0`` with ``Q_i + eps_i I < 0`` gives the dominating common supply
``-q |y|^2 + r |u|^2`` (Young's inequality on the cross term), hence the L2
bound ``|y_T| <= sqrt(r/q) |u_T| + sqrt(V(x0)/q)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidArgument, InvalidEpsilon, NotApplicable
from .linalg import as_matrix, as_sym, eigvalsh, lambda_max


@dataclass(frozen=True)
class QsrTriple:
    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = as_sym(self.Q, "Q")
        R = as_sym(self.R, "R")
        S = as_matrix(self.S, "S")
        if S.shape != (Q.shape[0], R.shape[0]):
            raise InvalidArgument(f"S {S.shape} incompatible with Q {Q.shape}, R {R.shape}")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "R", R)

    @property
    def out_dim(self) -> int:
        return self.Q.shape[0]

    @property
    def in_dim(self) -> int:
        return self.R.shape[0]

    def matrix(self) -> np.ndarray:
        """``W = [[Q, S], [S', R]]`` so that ``w = [y; u]' W [y; u]``."""
        return np.block([[self.Q, self.S], [self.S.T, self.R]])


@dataclass(frozen=True)
class QuadStorage:
    P: np.ndarray

    def __post_init__(self):
        P = as_sym(self.P, "P")
        if P.size and eigvalsh(P)[0] < -1e-9:
            raise InvalidArgument("storage matrix is not positive semidefinite")
        object.__setattr__(self, "P", P)

    def __call__(self, x) -> np.ndarray:
        """``V(x) = x'Px`` for one state or a stack of states (rows)."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return float(x @ self.P @ x)
        return np.einsum("ki,ij,kj->k", x, self.P, x)


@dataclass(frozen=True)
class CommonSupply:
    q: float
    r: float
    epsilons: tuple[float, ...]
    gamma: float
    beta_coeff: float

    def beta(self, V0: float) -> float:
        return float(np.sqrt(max(V0, 0.0)) * self.beta_coeff)

    def rate(self, y, u) -> float:
        y = np.asarray(y, dtype=float)
        u = np.asarray(u, dtype=float)
        return float(-self.q * (y @ y) + self.r * (u @ u))


def supply_rate(qsr: QsrTriple, y, u):
    """``y'Qy + y'Su + u'S'y + u'Ru``; rows of 2-D ``y``/``u`` are samples."""
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    if y.shape[-1] != qsr.out_dim or u.shape[-1] != qsr.in_dim or y.shape[:-1] != u.shape[:-1]:
        raise InvalidArgument(
            f"supply rate expects y of size {qsr.out_dim} and u of size {qsr.in_dim}"
        )
    if y.ndim == 1:
        return float(y @ qsr.Q @ y + 2.0 * (y @ qsr.S @ u) + u @ qsr.R @ u)
    return (
        np.einsum("ki,ij,kj->k", y, qsr.Q, y)
        + 2.0 * np.einsum("ki,ij,kj->k", y, qsr.S, u)
        + np.einsum("ki,ij,kj->k", u, qsr.R, u)
    )


def _cumtrapz(t, f):
    out = np.zeros_like(f, dtype=float)
    out[1:] = np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(t))
    return out


@dataclass
class DissipationReport:
    passed: bool
    worst_violation: float
    tol: float
    worst_time: float
    n_segments: int


def _select(traj, name, index):
    arr = np.asarray(getattr(traj, name), dtype=float)
    return arr if index is None else arr[:, index]


def check_dissipation(
    traj,
    storage: QuadStorage,
    qsr: QsrTriple | Sequence[QsrTriple] | Mapping[int, QsrTriple],
    tol: float = 0.0,
    rel_tol: float = 0.0,
    input: str = "u",
    state_index=None,
    input_index=None,
    output_index=None,
) -> DissipationReport:
    """Check ``V(x(t)) - V(x(s)) <= int_s^t w + tol`` for all grid pairs ``s < t``.

    With one triple the whole record is one segment. With a sequence or
    mapping indexed by mode, pairs are restricted to a single mode interval
    and the active mode's supply rate is used. The check is O(K): with
    ``D = V - int w`` the worst violation ending at ``t`` is
    ``D(t) - min_{s < t} D(s)``. ``rel_tol`` scales with
    ``max(max V, int |w|)`` and adds to ``tol``.
    """
    t = np.asarray(traj.t, dtype=float)
    x = _select(traj, "x", state_index)
    u = _select(traj, input, input_index)
    y = _select(traj, "y", output_index)
    V = storage(x)
    if isinstance(qsr, QsrTriple):
        modes = np.zeros(len(t), dtype=int)
        rates = {0: qsr}
    else:
        modes = np.asarray(traj.mode, dtype=int)
        rates = dict(qsr) if isinstance(qsr, Mapping) else dict(enumerate(qsr))
    w = np.empty(len(t))
    for m in np.unique(modes):
        sel = modes == m
        if int(m) not in rates:
            raise InvalidArgument(f"no supply rate given for mode {m}")
        w[sel] = supply_rate(rates[int(m)], y[sel], u[sel])

    worst, worst_t = -np.inf, float(t[0]) if len(t) else 0.0
    scale = 0.0
    bounds = np.flatnonzero(np.diff(modes)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [len(t)]])
    for a, b in zip(starts, ends):
        if b - a < 2:
            continue
        W = _cumtrapz(t[a:b], w[a:b])
        D = V[a:b] - W
        prior_min = np.minimum.accumulate(D)[:-1]
        viol = D[1:] - prior_min
        k = int(np.argmax(viol))
        if viol[k] > worst:
            worst, worst_t = float(viol[k]), float(t[a + 1 + k])
        scale = max(scale, float(np.abs(V[a:b]).max()), float(np.sum(np.abs(np.diff(W)))))
    if worst == -np.inf:
        worst = 0.0
    allowed = tol + rel_tol * scale
    return DissipationReport(worst <= allowed, worst, allowed, worst_t, len(starts))


def derive_common_supply(modes: Sequence[QsrTriple], epsilons: Sequence[float] | None = None) -> CommonSupply:
    """Common supply ``-q|y|^2 + r|u|^2`` dominating every mode's rate.

    ``q = -max_i lambda_max(Q_i + eps_i I)``, ``r = max_i lambda_max(S_i'S_i/eps_i + R_i)``
    (clamped at 0), ``gamma = sqrt(r/q)``. Default ``eps_i = -lambda_max(Q_i)/2``.
    """
    if len(modes) == 0:
        raise InvalidArgument("need at least one mode")
    lmax = [lambda_max(m.Q) for m in modes]
    for i, lm in enumerate(lmax):
        if not lm < 0:
            raise NotApplicable(f"mode {i}: Q is not negative definite (lambda_max = {lm:.3e})")
    if epsilons is None:
        eps = [-lm / 2.0 for lm in lmax]
    else:
        if len(epsilons) != len(modes):
            raise InvalidArgument("one epsilon per mode is required")
        eps = [float(e) for e in epsilons]
    qs, rs = [], []
    for i, (m, e) in enumerate(zip(modes, eps)):
        if not e > 0:
            raise InvalidEpsilon(f"mode {i}: epsilon must be positive")
        qi = lambda_max(m.Q + e * np.eye(m.out_dim))
        if not qi < 0:
            raise InvalidEpsilon(f"mode {i}: Q + eps I is not negative definite (eps = {e:.3e})")
        qs.append(qi)
        rs.append(lambda_max(m.S.T @ m.S / e + m.R))
    q = -max(qs)
    r = max(0.0, max(rs))
    return CommonSupply(q=q, r=r, epsilons=tuple(eps), gamma=float(np.sqrt(r / q)), beta_coeff=float(1.0 / np.sqrt(q)))


@dataclass
class L2Report:
    passed: bool
    max_ratio: float
    worst_excess: float
    worst_time: float
    y_norms: np.ndarray = field(repr=False)
    u_norms: np.ndarray = field(repr=False)


def truncated_norms(t, sig) -> np.ndarray:
    """Trapezoid L2 norms of ``sig`` truncated at every grid time."""
    sig = np.asarray(sig, dtype=float)
    sq = np.sum(sig.reshape(len(t), -1) ** 2, axis=1)
    return np.sqrt(np.maximum(_cumtrapz(np.asarray(t, float), sq), 0.0))


def l2_gain_report(t, y, u, gamma: float, beta: float, tol: float = 0.0) -> L2Report:
    """``|y_T| <= gamma |u_T| + beta + tol`` on every grid truncation.

    ``max_ratio`` is ``max_T (|y_T| - beta) / |u_T|`` over ``|u_T| > 0``.
    """
    yn = truncated_norms(t, y)
    un = truncated_norms(t, u)
    excess = yn - gamma * un - beta
    k = int(np.argmax(excess)) if len(excess) else 0
    pos = un > 0
    ratio = float(np.max((yn[pos] - beta) / un[pos])) if pos.any() else -np.inf
    worst = float(excess[k]) if len(excess) else 0.0
    return L2Report(bool(worst <= tol), ratio, worst, float(t[k]) if len(t) else 0.0, yn, un)


def l2_bound_check(traj, cs: CommonSupply, V0: float, tol: float = 0.0, input: str = "e") -> L2Report:
    """The L2 bound implied by ``cs`` along a recorded trajectory."""
    return l2_gain_report(traj.t, traj.y, getattr(traj, input), cs.gamma, cs.beta(V0), tol)
