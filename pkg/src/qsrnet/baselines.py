"""Comparison methods and the timing table.

Two baselines work on the closed-loop network instead of the agents:

* a monolithic dissipativity test over one storage ``P`` and one supply
  ``(Q, S, R)`` for all modes, with full variables or block-diagonal ones
  (one block per vehicle);
* the eigen step of a scattering-based analysis, which inspects the
  per-mode supply matrices ``W_i = [[Q_i, S_i], [S_i', R_i]]``. Those
  triples first have to be identified mode by mode, which is timed apart.
"""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dissipativity import QsrTriple
from .errors import InvalidArgument
from .lmi import (
    DEFAULT_BOX,
    FEASIBLE,
    AffineMatrixExpr,
    FeasibilityResult,
    LmiProblem,
    default_margin,
    solve_feasibility,
)
from .linalg import inertia, sym_eig
from .network import Certificate, CertifyOptions, NetworkSpec, build_problem, certify
from .riccati import StateSpace
from .sim import closed_loop_modes

FULL = "full"
BLOCK_DIAG = "block_diag"

METHODS = (
    "compositional",
    "monolithic_block_diag",
    "monolithic_full",
    "scattering_eig",
    "scattering_identification",
)


@dataclass
class BenchRecord:
    method: str
    time_s: float
    verdict: str
    n_params: int = 0
    times: list = field(default_factory=list)

    def __post_init__(self):
        if self.time_s < 0 or any(t < 0 for t in self.times):
            raise InvalidArgument("times must be nonnegative")


def network_closed_loop(spec: NetworkSpec) -> list[StateSpace]:
    """Per-mode ``x' = A_i x + B_i e`` with static agents eliminated."""
    return [StateSpace(m.A, m.B) for m in closed_loop_modes(spec).values()]


def _index_groups(groups, total):
    if groups is None:
        return [np.arange(total)]
    out = [np.asarray(g if not isinstance(g, slice) else np.arange(total)[g], dtype=int) for g in groups]
    cat = np.sort(np.concatenate(out))
    if not np.array_equal(cat, np.arange(total)):
        raise InvalidArgument("groups must partition the index range")
    return out


def uav_groups(spec: NetworkSpec):
    """Per-vehicle state and exogenous-input index sets of the formation.

    Vehicle ``p`` owns its plant states, its rotor inputs and the inputs of
    its controller.
    """
    dyn = [k for k, a in enumerate(spec.agents) if a.state_dim > 0]
    sta = [k for k, a in enumerate(spec.agents) if a.state_dim == 0]
    if len(dyn) != len(sta):
        raise InvalidArgument("expected one controller per plant")
    ox = spec.offsets(spec.state_dims)
    ou = spec.offsets(spec.in_dims)
    states = [np.arange(ox[k], ox[k + 1]) for k in dyn]
    inputs = [np.concatenate([np.arange(ou[p], ou[p + 1]), np.arange(ou[c], ou[c + 1])]) for p, c in zip(dyn, sta)]
    return states, inputs


def _sel(idx, total):
    E = np.zeros((total, len(idx)))
    E[idx, np.arange(len(idx))] = 1.0
    return E


def build_monolithic(
    modes: Sequence[StateSpace],
    structure: str = FULL,
    state_groups=None,
    input_groups=None,
    box_bound: float = DEFAULT_BOX,
    margin: float | None = None,
) -> LmiProblem:
    """Common ``P >= 0`` and ``Q <= -eps I`` with one KYP inequality per mode (``y = x``)."""
    if not modes:
        raise InvalidArgument("need at least one mode")
    n, m = modes[0].n, modes[0].m
    for s in modes:
        if (s.n, s.m) != (n, m):
            raise InvalidArgument("modes must share state and input dimensions")
    if structure == FULL:
        xg, ug = [np.arange(n)], [np.arange(m)]
    elif structure == BLOCK_DIAG:
        xg, ug = _index_groups(state_groups, n), _index_groups(input_groups, m)
        if len(xg) != len(ug):
            raise InvalidArgument("need one input group per state group")
        if state_groups is None:
            raise InvalidArgument("block-diagonal structure needs state groups")
    else:
        raise InvalidArgument(f"unknown variable structure {structure!r}")
    prob = LmiProblem()
    Ex = [_sel(g, n) for g in xg]
    Eu = [_sel(g, m) for g in ug]
    for p, (gx, gu) in enumerate(zip(xg, ug)):
        prob.variable(f"P{p}", (len(gx), len(gx)), True, box_bound)
        prob.variable(f"Q{p}", (len(gx), len(gx)), True, box_bound)
        prob.variable(f"S{p}", (len(gx), len(gu)), False, box_bound)
        prob.variable(f"R{p}", (len(gu), len(gu)), True, box_bound)
    eps = default_margin(np.zeros((n, n))) if margin is None else float(margin)
    for p, E in enumerate(Ex):
        k = E.shape[1]
        prob.add(AffineMatrixExpr.zeros(k).add(f"P{p}", -np.eye(k), np.eye(k)), 0.0, f"P{p} psd")
        prob.add(AffineMatrixExpr.zeros(k).add(f"Q{p}", np.eye(k), np.eye(k)), eps, f"Q{p} negdef")
    for i, s in enumerate(modes):
        Ty = np.vstack([np.eye(n), np.zeros((m, n))])
        Tu = np.vstack([np.zeros((n, m)), np.eye(m)])
        AB = np.hstack([s.A, s.B])
        kyp = AffineMatrixExpr.zeros(n + m)
        for p in range(len(Ex)):
            Lx = Ty @ Ex[p]
            Lu = Tu @ Eu[p]
            kyp.add(f"P{p}", Lx, Ex[p].T @ AB, transpose=True)
            kyp.add(f"Q{p}", -Lx, Lx.T)
            kyp.add(f"S{p}", -Lx, Lu.T, transpose=True)
            kyp.add(f"R{p}", -Lu, Lu.T)
        prob.add(kyp, 0.0, f"mode {i + 1} kyp")
    return prob


def monolithic_certify(
    modes: Sequence[StateSpace],
    structure: str = FULL,
    state_groups=None,
    input_groups=None,
    options: CertifyOptions | None = None,
) -> tuple[FeasibilityResult, float]:
    """Solve the monolithic test; returns the result and the wall time."""
    opt = options or CertifyOptions()
    t0 = time.perf_counter()
    prob = build_monolithic(modes, structure, state_groups, input_groups, opt.box_bound, opt.coupling_margin)
    res = solve_feasibility(
        prob,
        tol=opt.tol,
        iter_cap=opt.iter_cap,
        gap_tol=opt.gap_tol,
        stop_at=opt.stop_at,
        time_limit=opt.time_limit,
    )
    return res, time.perf_counter() - t0


def identify_mode_parameters(
    modes: Sequence[StateSpace],
    state_groups=None,
    input_groups=None,
    options: CertifyOptions | None = None,
) -> tuple[list[QsrTriple | None], float]:
    """Separate dissipativity parameters for each closed-loop mode.

    Each mode gets its own block-diagonal storage and supply; ``None`` marks
    a mode whose problem was not solved.
    """
    opt = options or CertifyOptions()
    structure = BLOCK_DIAG if state_groups is not None else FULL
    t0 = time.perf_counter()
    out = []
    for s in modes:
        res, _ = monolithic_certify([s], structure, state_groups, input_groups, opt)
        if res.status != FEASIBLE:
            out.append(None)
            continue
        a = res.assignment
        n_groups = sum(1 for k in a if k.startswith("Q"))
        xg = _index_groups(state_groups, s.n) if structure == BLOCK_DIAG else [np.arange(s.n)]
        ug = _index_groups(input_groups, s.m) if structure == BLOCK_DIAG else [np.arange(s.m)]
        Q = np.zeros((s.n, s.n))
        S = np.zeros((s.n, s.m))
        R = np.zeros((s.m, s.m))
        for p in range(n_groups):
            Q[np.ix_(xg[p], xg[p])] = a[f"Q{p}"]
            S[np.ix_(xg[p], ug[p])] = a[f"S{p}"]
            R[np.ix_(ug[p], ug[p])] = a[f"R{p}"]
        out.append(QsrTriple(Q, S, R))
    return out, time.perf_counter() - t0


@dataclass
class SpectralReport:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    inertia: tuple[int, int, int]


def scattering_eig_analysis(per_mode: Sequence[QsrTriple], zero_tol: float = 1e-9) -> tuple[list[SpectralReport], float]:
    """Eigendecomposition and inertia ``(n-, n0, n+)`` of every ``W_i``; returns reports and wall time."""
    t0 = time.perf_counter()
    reports = []
    for trip in per_mode:
        W = trip.matrix()
        w, V = sym_eig(W)
        reports.append(SpectralReport(w, V, inertia(W, zero_tol)))
    return reports, time.perf_counter() - t0


def _median_time(fn: Callable[[], tuple[str, float, int]], repetitions: int) -> BenchRecord:
    times, verdicts, n = [], [], 0
    for _ in range(repetitions):
        verdict, t, n = fn()
        times.append(t)
        verdicts.append(verdict)
    verdict = verdicts[0] if len(set(verdicts)) == 1 else "Inconsistent(" + "/".join(verdicts) + ")"
    return BenchRecord("", float(statistics.median(times)), verdict, n, times)


@dataclass
class BenchResult:
    records: list[BenchRecord]
    flags: list[str]

    def by_method(self, method: str) -> BenchRecord:
        for r in self.records:
            if r.method == method:
                return r
        raise KeyError(method)

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "time_s", "verdict"])
        for r in self.records:
            w.writerow([r.method, f"{r.time_s:.6f}", r.verdict])
        return buf.getvalue()

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.csv())


def bench_table(
    spec: NetworkSpec,
    repetitions: int = 3,
    options: CertifyOptions | None = None,
    groups=None,
    full_options: CertifyOptions | None = None,
    methods: Sequence[str] = METHODS,
    log: Callable[[str], None] | None = None,
) -> BenchResult:
    """Median wall times of the five approaches on one instance.

    ``groups = (state_groups, input_groups)`` defines the block-diagonal
    structure (default: one group per plant, see :func:`uav_groups`).
    ``full_options`` may cap the full-variable run (e.g. a time limit).
    Rows keep the order of :data:`METHODS`; verdict disagreements between
    the compositional and monolithic methods are listed in ``flags``.
    """
    if repetitions < 1:
        raise InvalidArgument("need at least one repetition")
    opt = options or CertifyOptions()
    fopt = full_options or opt
    modes = network_closed_loop(spec)
    if groups is None:
        try:
            groups = uav_groups(spec)
        except InvalidArgument:
            groups = ([np.arange(modes[0].n)], [np.arange(modes[0].m)])
    sg, ig = groups
    ident: list = []

    n_comp = build_problem(spec, opt)[0].n_params

    def compositional():
        t0 = time.perf_counter()
        c = certify(spec, opt)
        return (FEASIBLE if isinstance(c, Certificate) else c.status), time.perf_counter() - t0, n_comp

    def mono(structure, o):
        n = build_monolithic(modes, structure, sg, ig).n_params

        def run():
            res, t = monolithic_certify(modes, structure, sg, ig, o)
            return res.status, t, n

        return run

    def identification():
        trips, t = identify_mode_parameters(modes, sg, ig, opt)
        ident[:] = trips
        verdict = FEASIBLE if all(x is not None for x in trips) else "Incomplete"
        return verdict, t, 0

    def eig_step():
        trips = [x for x in ident if x is not None]
        if not trips:
            return "Skipped", 0.0, 0
        _, t = scattering_eig_analysis(trips)
        return "Done", t, 0

    table = {
        "compositional": compositional,
        "monolithic_block_diag": mono(BLOCK_DIAG, opt),
        "monolithic_full": mono(FULL, fopt),
        "scattering_identification": identification,
        "scattering_eig": eig_step,
    }
    done: dict[str, BenchRecord] = {}
    # identification must precede the eigen step that consumes its triples
    order = [m for m in METHODS if m != "scattering_eig"] + ["scattering_eig"]
    for name in order:
        if name not in methods:
            continue
        if log:
            log(f"bench: {name}")
        rec = _median_time(table[name], repetitions)
        rec.method = name
        done[name] = rec
        if log:
            log(f"bench: {name} {rec.time_s:.3f} s {rec.verdict}")
    records = [done[m] for m in METHODS if m in done]
    flags = []
    comp = done.get("compositional")
    if comp is not None and comp.verdict == FEASIBLE:
        for name in ("monolithic_block_diag", "monolithic_full"):
            r = done.get(name)
            if r is not None and r.verdict != FEASIBLE:
                flags.append(f"{name} returned {r.verdict} on an instance certified compositionally")
    return BenchResult(records, flags)
