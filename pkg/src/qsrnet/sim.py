"""Fixed-step simulation of switched networks under L2 disturbances."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dissipativity import l2_gain_report
from .errors import DivergenceDetected, InvalidArgument, SingularMatrix
from .linalg import as_matrix, block_diag, lu_solve
from .network import DynamicAgent, NetworkSpec

DIVERGENCE_LIMIT = 1e12

# unit L2 norm on [0, inf): int (c1 t^2 e^-t)^2 = c1^2 4!/2^5, int (sin t/t)^2 = pi/2
C1 = math.sqrt(4.0 / 3.0)
C2 = math.sqrt(2.0 / math.pi)
C3 = 1.0


@dataclass(frozen=True)
class SwitchingSignal:
    """Mode ``modes[k]`` is active on ``[times[k], times[k+1])``; ``times[0] = 0``."""

    times: tuple[float, ...]
    modes: tuple[int, ...]
    horizon: float

    def __post_init__(self):
        if len(self.times) != len(self.modes) or not self.times:
            raise InvalidArgument("switching signal needs matching, nonempty times and modes")
        if self.times[0] != 0.0:
            raise InvalidArgument("first event must be at t = 0")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise InvalidArgument("switching times must be strictly increasing")

    @property
    def n_switches(self) -> int:
        return len(self.times) - 1

    def mode_at(self, t):
        idx = np.searchsorted(np.asarray(self.times), np.asarray(t, dtype=float), side="right") - 1
        return np.asarray(self.modes)[idx]

    @classmethod
    def constant(cls, mode: int, horizon: float) -> "SwitchingSignal":
        return cls((0.0,), (int(mode),), float(horizon))


def gen_switching(
    seed,
    horizon: float,
    n_switches: int,
    n_modes: int,
    min_dwell: float,
    dt: float | None = None,
    modes: Sequence[int] | None = None,
) -> SwitchingSignal:
    """Random switching with exactly ``n_switches`` events after ``t = 0``.

    Gaps between events (and before the first) are at least ``min_dwell``,
    times are uniform subject to that, and each new mode is drawn uniformly
    among the modes other than the current one. With ``dt`` the times are
    drawn on the sampling grid (``min_dwell`` rounded up to whole steps).
    """
    if n_switches < 0 or n_modes < 1:
        raise InvalidArgument("need n_switches >= 0 and n_modes >= 1")
    if n_switches > 0 and n_modes < 2:
        raise InvalidArgument("switching needs at least two modes")
    if min_dwell < 0 or horizon <= 0:
        raise InvalidArgument("need horizon > 0 and min_dwell >= 0")
    labels = list(modes) if modes is not None else list(range(1, n_modes + 1))
    if len(labels) != n_modes:
        raise InvalidArgument("mode labels must match n_modes")
    rng = np.random.default_rng(seed)
    if dt is not None:
        if dt <= 0:
            raise InvalidArgument("dt must be positive")
        steps = int(math.floor(horizon / dt + 1e-9))
        dwell = max(1, int(math.ceil(min_dwell / dt - 1e-9)))
        slack = steps - n_switches * dwell
        if n_switches and slack < 1:
            raise InvalidArgument("switches cannot be packed with this dwell time")
        v = np.sort(rng.integers(0, slack, size=n_switches))
        times = [0.0] + [float((v[k] + (k + 1) * dwell) * dt) for k in range(n_switches)]
    else:
        slack = horizon - n_switches * min_dwell
        if n_switches and slack <= 0:
            raise InvalidArgument("switches cannot be packed with this dwell time")
        v = np.sort(rng.uniform(0.0, slack, size=n_switches))
        times = [0.0] + [float(v[k] + (k + 1) * min_dwell) for k in range(n_switches)]
    seq = [labels[int(rng.integers(n_modes))]]
    for _ in range(n_switches):
        others = [m for m in labels if m != seq[-1]]
        seq.append(others[int(rng.integers(len(others)))])
    return SwitchingSignal(tuple(times), tuple(seq), float(horizon))


def l2_disturbance(kind, t):
    """Unit-L2-norm test signals: ``c1 t^2 e^-t``, ``c2 sin(t)/t``, ``1/(1+t)``."""
    t = np.asarray(t, dtype=float)
    k = str(kind).lower().lstrip("f")
    if np.any(t < 0):
        raise InvalidArgument("disturbances are defined for t >= 0")
    if k == "1":
        out = C1 * t**2 * np.exp(-t)
    elif k == "2":
        safe = np.where(t == 0.0, 1.0, t)
        out = C2 * np.where(t == 0.0, 1.0, np.sin(safe) / safe)
    elif k == "3":
        out = C3 / (1.0 + t)
    else:
        raise InvalidArgument(f"unknown disturbance kind {kind!r}")
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class DisturbanceProfile:
    kinds: tuple[int, ...]
    scales: tuple[float, ...]

    def __post_init__(self):
        if len(self.kinds) != len(self.scales):
            raise InvalidArgument("one scale per disturbance channel")
        if any(k not in (1, 2, 3) for k in self.kinds):
            raise InvalidArgument("disturbance kinds are 1, 2 or 3")

    @classmethod
    def random(cls, n_channels: int, seed, scales=1.0) -> "DisturbanceProfile":
        rng = np.random.default_rng(seed)
        kinds = tuple(int(k) for k in rng.integers(1, 4, size=n_channels))
        sc = np.broadcast_to(np.asarray(scales, dtype=float), (n_channels,))
        return cls(kinds, tuple(float(s) for s in sc))

    @classmethod
    def zero(cls, n_channels: int) -> "DisturbanceProfile":
        return cls((1,) * n_channels, (0.0,) * n_channels)

    def __call__(self, t: float) -> np.ndarray:
        out = np.empty(len(self.kinds))
        for k in (1, 2, 3):
            sel = np.asarray(self.kinds) == k
            if sel.any():
                out[sel] = l2_disturbance(k, t)
        return out * np.asarray(self.scales)


@dataclass
class TrajectoryRecord:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    e: np.ndarray
    mode: np.ndarray
    meta: dict = field(default_factory=dict)

    def truncated(self, k: int) -> "TrajectoryRecord":
        return TrajectoryRecord(
            self.t[:k], self.x[:k], self.u[:k], self.y[:k], self.e[:k], self.mode[:k], dict(self.meta)
        )


@dataclass(frozen=True)
class LinearMode:
    """``x' = A x + B e``, ``u = Cu x + Du e``, ``y = Cy x + Dy e``."""

    A: np.ndarray
    B: np.ndarray
    Cu: np.ndarray
    Du: np.ndarray
    Cy: np.ndarray
    Dy: np.ndarray


def closed_loop_modes(spec: NetworkSpec) -> dict[int, LinearMode]:
    """Eliminate static agents from every mode of ``spec``.

    Static outputs satisfy ``y_s = K (e_s + H_sd x + H_ss y_s)``; a singular
    ``I - K H_ss`` means the interconnection is ill-posed.
    """
    oy = spec.offsets(spec.out_dims)
    ou = spec.offsets(spec.in_dims)
    dyn = [k for k, a in enumerate(spec.agents) if isinstance(a, DynamicAgent)]
    sta = [k for k, a in enumerate(spec.agents) if not isinstance(a, DynamicAgent)]

    def idx(off, ks):
        return np.concatenate([np.arange(off[k], off[k + 1]) for k in ks]) if ks else np.zeros(0, int)

    yd, ys = idx(oy, dyn), idx(oy, sta)
    ud, us = idx(ou, dyn), idx(ou, sta)
    ny, nu = int(oy[-1]), int(ou[-1])
    n = sum(spec.state_dims)
    A = block_diag([spec.agents[k].ss.A for k in dyn]) if dyn else np.zeros((0, 0))
    B = block_diag([spec.agents[k].ss.B for k in dyn]) if dyn else np.zeros((0, 0))
    K = block_diag([spec.agents[k].K for k in sta]) if sta else np.zeros((0, 0))
    out = {}
    for mode in spec.modes:
        H = mode.H
        Hsd, Hss = H[np.ix_(us, yd)], H[np.ix_(us, ys)]
        # y_s = Mx x + Me e_s
        if sta:
            L = np.eye(len(ys)) - K @ Hss
            try:
                Mx = lu_solve(L, K @ Hsd)
                Me = lu_solve(L, K)
            except SingularMatrix as exc:
                raise InvalidArgument(f"mode {mode.id}: algebraic loop is ill-posed") from exc
        else:
            Mx = np.zeros((0, n))
            Me = np.zeros((0, 0))
        Es = np.zeros((len(us), nu))
        Es[:, us] = np.eye(len(us))
        Ed = np.zeros((len(ud), nu))
        Ed[:, ud] = np.eye(len(ud))
        Ys_x, Ys_e = Mx, Me @ Es
        Cy = np.zeros((ny, n))
        Dy = np.zeros((ny, nu))
        Cy[yd] = np.eye(n)
        Cy[ys] = Ys_x
        Dy[ys] = Ys_e
        Cu = H @ Cy
        Du = np.eye(nu) + H @ Dy
        Bd = B @ Du[ud]
        Ad = A + B @ Cu[ud]
        out[mode.id] = LinearMode(Ad, Bd, Cu, Du, Cy, Dy)
    return out


def rk4_switched(
    f: Callable[[int, float, np.ndarray], np.ndarray],
    sig: SwitchingSignal,
    dt: float,
    T: float,
    x0,
    limit: float = DIVERGENCE_LIMIT,
):
    """Classic RK4 with the mode frozen over each step (switches lie on the grid).

    ``f(mode, t, x)``. Returns ``(t, X, modes)``; raises ``DivergenceDetected``
    with the partial arrays in ``record`` once ``|x| > limit``.
    """
    if dt <= 0 or T < 0:
        raise InvalidArgument("need dt > 0 and T >= 0")
    K = int(math.floor(T / dt + 1e-9))
    t = np.arange(K + 1) * dt
    modes = np.asarray(sig.mode_at(t + 1e-9 * dt), dtype=int)
    x = np.array(x0, dtype=float)
    X = np.empty((K + 1, x.size))
    X[0] = x
    for k in range(K):
        m, tk = int(modes[k]), t[k]
        k1 = f(m, tk, x)
        k2 = f(m, tk + dt / 2, x + dt / 2 * k1)
        k3 = f(m, tk + dt / 2, x + dt / 2 * k2)
        k4 = f(m, tk + dt, x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        X[k + 1] = x
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > limit:
            raise DivergenceDetected(
                f"state norm exceeded {limit:.0e} at t = {t[k + 1]:.4g}",
                record=(t[: k + 2], X[: k + 2], modes[: k + 2]),
            )
    return t, X, modes


def simulate_linear(
    modes: dict[int, LinearMode],
    sig: SwitchingSignal,
    dist: Callable[[float], np.ndarray],
    dt: float,
    T: float,
    x0,
) -> TrajectoryRecord:
    """Switched linear family driven by the exogenous signal ``dist(t)``."""
    x0 = np.asarray(x0, dtype=float)

    def f(m, t, x):
        L = modes[m]
        return L.A @ x + L.B @ dist(t)

    def record(t, X, md):
        E = np.array([dist(tk) for tk in t]).reshape(len(t), -1)
        U = np.empty((len(t), next(iter(modes.values())).Cu.shape[0]))
        Y = np.empty((len(t), next(iter(modes.values())).Cy.shape[0]))
        for m in np.unique(md):
            sel = md == m
            L = modes[int(m)]
            U[sel] = X[sel] @ L.Cu.T + E[sel] @ L.Du.T
            Y[sel] = X[sel] @ L.Cy.T + E[sel] @ L.Dy.T
        return TrajectoryRecord(t, X, U, Y, E, md, {"dt": dt})

    try:
        t, X, md = rk4_switched(f, sig, dt, T, x0)
    except DivergenceDetected as exc:
        exc.record = record(*exc.record)
        raise
    return record(t, X, md)


def simulate(
    spec: NetworkSpec,
    sig: SwitchingSignal,
    dist: Callable[[float], np.ndarray],
    dt: float,
    T: float,
    x0=None,
) -> TrajectoryRecord:
    """Simulate ``spec`` under switching ``sig`` with exogenous input ``e = dist(t)``."""
    modes = closed_loop_modes(spec)
    missing = set(sig.modes) - set(modes)
    if missing:
        raise InvalidArgument(f"switching signal uses unknown modes {sorted(missing)}")
    n = sum(spec.state_dims)
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    if x0.shape != (n,):
        raise InvalidArgument(f"x0 must have {n} entries")
    return simulate_linear(modes, sig, dist, dt, T, x0)


def simulate_lti(A, B, sig_input: Callable[[float], np.ndarray], dt: float, T: float, x0) -> TrajectoryRecord:
    """Single LTI system ``x' = Ax + Bu`` with ``y = x`` and ``u = e``."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    n, m = B.shape
    L = LinearMode(A, B, np.zeros((m, n)), np.eye(m), np.eye(n), np.zeros((n, m)))
    return simulate_linear({0: L}, SwitchingSignal.constant(0, T), sig_input, dt, T, x0)


def uav_disturbance(n_rotor: int, n_state: int, seed, rotor_scale: float = 1000.0) -> DisturbanceProfile:
    """Every rotor-speed and state channel draws one of the three signals."""
    scales = np.concatenate([np.full(n_rotor, rotor_scale), np.ones(n_state)])
    return DisturbanceProfile.random(n_rotor + n_state, seed, scales)


def state_error(traj: TrajectoryRecord, groups: Sequence[slice] | None = None) -> np.ndarray:
    """``|x(t)|`` per sample; with ``groups``, one column per state slice."""
    X = np.asarray(traj.x, dtype=float)
    if groups is None:
        return np.sqrt(np.sum(X * X, axis=1))
    return np.stack([np.sqrt(np.sum(X[:, g] ** 2, axis=1)) for g in groups], axis=1)


def empirical_gain(traj: TrajectoryRecord, gamma: float, beta: float, tol: float = 0.0):
    """``|y_T| <= gamma |e_T| + beta`` at every grid time ``T``."""
    return l2_gain_report(traj.t, traj.y, traj.e, gamma, beta, tol)


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def export_error_csv(path, t, err) -> None:
    _write_csv(path, ["t", "e"], ((repr(float(a)), repr(float(b))) for a, b in zip(t, err)))


def export_events_csv(path, sig: SwitchingSignal) -> None:
    _write_csv(path, ["t", "mode"], ((repr(float(a)), int(m)) for a, m in zip(sig.times, sig.modes)))


def export_extended_csv(path, traj: TrajectoryRecord) -> None:
    nx, nu, ny, ne = traj.x.shape[1], traj.u.shape[1], traj.y.shape[1], traj.e.shape[1]
    header = (
        ["t", "mode"]
        + [f"x{i}" for i in range(nx)]
        + [f"u{i}" for i in range(nu)]
        + [f"y{i}" for i in range(ny)]
        + [f"e{i}" for i in range(ne)]
    )
    rows = (
        [repr(float(traj.t[k])), int(traj.mode[k])]
        + [repr(float(v)) for v in np.concatenate([traj.x[k], traj.u[k], traj.y[k], traj.e[k]])]
        for k in range(len(traj.t))
    )
    _write_csv(path, header, rows)
