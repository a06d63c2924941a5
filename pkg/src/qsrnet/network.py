"""Switched networks of QSR-dissipative agents and their compositional certificate.

Agents are stacked with outputs ``y = [y_1; ...; y_N]`` and inputs
``u = [u_1; ...; u_N]``; mode ``i`` closes the loop through ``u = e + H_i y``.
With block-diagonal ``Q, S, R`` assembled from the agents' triples, the
network seen from ``e`` to ``y`` is dissipative in mode ``i`` with

    Q_hat = Q + S H + H'S' + H'RH,    S_hat = S + H'R,    R_hat = R,

and a common storage (the sum of the agents' storages). ``Q_hat_i < 0`` for
every mode gives an L2 bound under arbitrary switching.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .dissipativity import CommonSupply, QsrTriple, QuadStorage, derive_common_supply
from .errors import InvalidArgument, NumericalFailure
from .linalg import as_matrix, block_diag, lambda_max
from .lmi import (
    DEFAULT_BOX,
    AffineMatrixExpr,
    FeasibilityResult,
    LmiProblem,
    assemble_agent_kyp,
    assemble_static_gain,
    default_margin,
    solve_feasibility,
)
from .riccati import QuadrotorParams, StateSpace, lqr_gain, default_lqr_weights, quadrotor_linearize


@dataclass(frozen=True)
class DynamicAgent:
    """LTI agent ``x' = Ax + Bu`` with the full state as output."""

    ss: StateSpace
    name: str = ""

    @property
    def in_dim(self) -> int:
        return self.ss.m

    @property
    def out_dim(self) -> int:
        return self.ss.n

    @property
    def state_dim(self) -> int:
        return self.ss.n


@dataclass(frozen=True)
class StaticGainAgent:
    """Memoryless agent ``y = K u``."""

    K: np.ndarray
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "K", as_matrix(self.K, "K"))

    @property
    def in_dim(self) -> int:
        return self.K.shape[1]

    @property
    def out_dim(self) -> int:
        return self.K.shape[0]

    @property
    def state_dim(self) -> int:
        return 0


Agent = Union[DynamicAgent, StaticGainAgent]


@dataclass(frozen=True)
class TopologyMode:
    """Interconnection ``u = e + H y``; ``H`` is (sum of inputs) x (sum of outputs)."""

    id: int
    H: np.ndarray
    row_dims: tuple[int, ...]
    col_dims: tuple[int, ...]

    def __post_init__(self):
        H = as_matrix(self.H, "H")
        if H.shape != (sum(self.row_dims), sum(self.col_dims)):
            raise InvalidArgument(
                f"mode {self.id}: H is {H.shape}, block dims give "
                f"{(sum(self.row_dims), sum(self.col_dims))}"
            )
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "row_dims", tuple(int(d) for d in self.row_dims))
        object.__setattr__(self, "col_dims", tuple(int(d) for d in self.col_dims))


@dataclass
class NetworkSpec:
    agents: list
    modes: list

    def __post_init__(self):
        if not self.agents:
            raise InvalidArgument("network needs at least one agent")
        if not self.modes:
            raise InvalidArgument("network needs at least one mode")
        rows = tuple(a.in_dim for a in self.agents)
        cols = tuple(a.out_dim for a in self.agents)
        for m in self.modes:
            if m.row_dims != rows or m.col_dims != cols:
                raise InvalidArgument(f"mode {m.id} block structure does not match the agents")

    @property
    def in_dims(self) -> list[int]:
        return [a.in_dim for a in self.agents]

    @property
    def out_dims(self) -> list[int]:
        return [a.out_dim for a in self.agents]

    @property
    def state_dims(self) -> list[int]:
        return [a.state_dim for a in self.agents]

    def offsets(self, dims):
        return np.concatenate([[0], np.cumsum(dims)]).astype(int)


def network_digest(spec: NetworkSpec) -> str:
    """SHA-256 over agent data and mode matrices, for matching certificates to networks."""
    h = hashlib.sha256()
    for a in spec.agents:
        mats = (a.ss.A, a.ss.B) if isinstance(a, DynamicAgent) else (a.K,)
        h.update(b"D" if isinstance(a, DynamicAgent) else b"K")
        for M in mats:
            M = np.ascontiguousarray(M, dtype="<f8")
            h.update(repr(M.shape).encode())
            h.update(M.tobytes())
    for m in spec.modes:
        h.update(repr(m.id).encode())
        h.update(np.ascontiguousarray(m.H, dtype="<f8").tobytes())
    return h.hexdigest()


def coupling_matrices(Q, S, R, H):
    """Network triple ``(Q_hat, S_hat, R_hat)`` under ``u = e + H y``."""
    Q = np.asarray(Q, dtype=float)
    S = np.asarray(S, dtype=float)
    R = np.asarray(R, dtype=float)
    H = as_matrix(H.H if isinstance(H, TopologyMode) else H, "H")
    ny, nu = S.shape
    if Q.shape != (ny, ny) or R.shape != (nu, nu) or H.shape != (nu, ny):
        raise InvalidArgument(
            f"coupling dims: Q {Q.shape}, S {S.shape}, R {R.shape}, H {H.shape}"
        )
    SH = S @ H
    Qh = Q + SH + SH.T + H.T @ R @ H
    return 0.5 * (Qh + Qh.T), S + H.T @ R, R.copy()


# --- the switched UAV formation ---------------------------------------------


@dataclass(frozen=True)
class UavModes:
    H: np.ndarray
    H_tilde: np.ndarray
    H_c: tuple
    H_hat: tuple


def canonical_uav_modes(state_dim: int = 12) -> UavModes:
    """Four formation topologies over three leader-follower groups of three.

    Inside a group followers track the leader (``H``); ``H_tilde`` couples a
    group leader to the first group's leader. Mode 1 couples both groups,
    mode 2 only the third, mode 3 only the second, mode 4 none. Each
    ``H_hat = [[0, -I], [H_c, 0]]`` feeds controller outputs back to the
    plants and plant states to the controllers.
    """
    I = np.eye(state_dim)
    Z = np.zeros((state_dim, state_dim))
    H = np.block([[I, Z, Z], [-I, I, Z], [-I, Z, I]])
    Ht = np.block([[-I, Z, Z], [Z, Z, Z], [Z, Z, Z]])
    Z3 = np.zeros_like(H)
    Hc = (
        np.block([[H, Z3, Z3], [Ht, H, Z3], [Ht, Z3, H]]),
        np.block([[H, Z3, Z3], [Z3, H, Z3], [Ht, Z3, H]]),
        np.block([[H, Z3, Z3], [Ht, H, Z3], [Z3, Z3, H]]),
        np.block([[H, Z3, Z3], [Z3, H, Z3], [Z3, Z3, H]]),
    )
    n = Hc[0].shape[0]
    n_in = n // state_dim * 4
    Hhat = tuple(
        np.block([[np.zeros((n_in, n)), -np.eye(n_in)], [h, np.zeros((n, n_in))]]) for h in Hc
    )
    return UavModes(H, Ht, Hc, Hhat)


@dataclass
class UavFleet:
    params: list
    plants: list
    designs: list
    network: NetworkSpec


def build_uav_network(
    params: Sequence[QuadrotorParams], Q_lqr=None, R_lqr=None, modes: UavModes | None = None
) -> UavFleet:
    """Nine hover-linearized quadrotors under LQR, plants first then controllers.

    Controller ``p`` is the static map ``y = K_p u`` with ``u`` the formation
    error fed by ``H_c``; the ``-I`` block of ``H_hat`` applies the sign.
    """
    if len(params) != 9:
        raise InvalidArgument("the formation topologies are defined for 9 vehicles")
    Qd, Rd = default_lqr_weights()
    Q_lqr = Qd if Q_lqr is None else np.asarray(Q_lqr, float)
    R_lqr = Rd if R_lqr is None else np.asarray(R_lqr, float)
    plants = [quadrotor_linearize(p) for p in params]
    designs = [lqr_gain(ss.A, ss.B, Q_lqr, R_lqr) for ss in plants]
    modes = modes or canonical_uav_modes(plants[0].n)
    agents = [DynamicAgent(ss, f"uav{p}") for p, ss in enumerate(plants)]
    agents += [StaticGainAgent(d.K, f"ctrl{p}") for p, d in enumerate(designs)]
    rows = tuple(a.in_dim for a in agents)
    cols = tuple(a.out_dim for a in agents)
    net = NetworkSpec(agents, [TopologyMode(i + 1, H, rows, cols) for i, H in enumerate(modes.H_hat)])
    return UavFleet(list(params), plants, designs, net)


# --- certification ------------------------------------------------------------


@dataclass
class CertifyOptions:
    box_bound: float = DEFAULT_BOX
    coupling_margin: float | None = None
    agent_margin: float = 0.0
    tol: float = 0.0
    iter_cap: int = 100
    gap_tol: float = 0.25
    stop_at: float | None = None
    time_limit: float | None = None


@dataclass
class Certificate:
    agents: list  # dicts: kind, name, qsr, storage (or None)
    modes: list  # H matrices
    lambda_max: list
    supply: CommonSupply
    margins: list = field(default_factory=list)
    runtime: float = 0.0
    solver: dict = field(default_factory=dict)

    @property
    def gamma(self) -> float:
        return self.supply.gamma

    def triples(self) -> list[QsrTriple]:
        return [a["qsr"] for a in self.agents]

    def block_triple(self):
        ts = self.triples()
        return (
            block_diag([t.Q for t in ts]),
            block_diag([t.S for t in ts]),
            block_diag([t.R for t in ts]),
        )

    def network_triples(self) -> list[QsrTriple]:
        Q, S, R = self.block_triple()
        return [QsrTriple(*coupling_matrices(Q, S, R, H)) for H in self.modes]

    def storage(self) -> QuadStorage:
        Ps = [a["storage"].P for a in self.agents if a["storage"] is not None]
        return QuadStorage(block_diag(Ps) if Ps else np.zeros((0, 0)))

    def beta(self, x0) -> float:
        x0 = np.asarray(x0, dtype=float)
        return self.supply.beta(self.storage()(x0) if x0.size else 0.0)

    def recheck(self) -> list[float]:
        """``lambda_max(Q_hat_i)`` recomputed from the stored triples."""
        return [lambda_max(t.Q) for t in self.network_triples()]

    # JSON ---------------------------------------------------------------
    def to_dict(self) -> dict:
        agents = []
        for a in self.agents:
            d = {
                "kind": a["kind"],
                "name": a["name"],
                "Q": a["qsr"].Q.tolist(),
                "S": a["qsr"].S.tolist(),
                "R": a["qsr"].R.tolist(),
                "P": None if a["storage"] is None else a["storage"].P.tolist(),
            }
            agents.append(d)
        s = self.supply
        return {
            "format": "qsrnet-certificate/1",
            "agents": agents,
            "modes": [np.asarray(H).tolist() for H in self.modes],
            "lambda_max_Q_hat": [float(v) for v in self.lambda_max],
            "supply": {
                "q": s.q,
                "r": s.r,
                "gamma": s.gamma,
                "beta_coeff": s.beta_coeff,
                "epsilons": list(s.epsilons),
            },
            "margins": [float(v) for v in self.margins],
            "runtime_s": self.runtime,
            "solver": self.solver,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Certificate":
        if d.get("format") != "qsrnet-certificate/1":
            raise InvalidArgument("not a certificate document")
        agents = []
        for a in d["agents"]:
            agents.append(
                {
                    "kind": a["kind"],
                    "name": a.get("name", ""),
                    "qsr": QsrTriple(np.array(a["Q"], float), np.array(a["S"], float), np.array(a["R"], float)),
                    "storage": None if a["P"] is None else QuadStorage(np.array(a["P"], float)),
                }
            )
        s = d["supply"]
        supply = CommonSupply(
            q=float(s["q"]),
            r=float(s["r"]),
            epsilons=tuple(float(e) for e in s["epsilons"]),
            gamma=float(s["gamma"]),
            beta_coeff=float(s["beta_coeff"]),
        )
        return cls(
            agents=agents,
            modes=[np.array(H, float) for H in d["modes"]],
            lambda_max=[float(v) for v in d["lambda_max_Q_hat"]],
            supply=supply,
            margins=[float(v) for v in d.get("margins", [])],
            runtime=float(d.get("runtime_s", 0.0)),
            solver=dict(d.get("solver", {})),
        )

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Certificate":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class NotCertified:
    status: str
    message: str
    feasibility: FeasibilityResult | None = None


def _selector(offsets, k, n):
    E = np.zeros((n, offsets[k + 1] - offsets[k]))
    E[offsets[k] : offsets[k + 1]] = np.eye(offsets[k + 1] - offsets[k])
    return E


def build_problem(spec: NetworkSpec, options: CertifyOptions | None = None) -> tuple[LmiProblem, float]:
    """Joint problem: agent KYP / static-gain conditions plus ``Q_hat_i <= -eps I``."""
    opt = options or CertifyOptions()
    prob = LmiProblem()
    rho = opt.box_bound
    for k, a in enumerate(spec.agents):
        l, m = a.out_dim, a.in_dim
        prob.variable(f"Q{k}", (l, l), True, rho)
        prob.variable(f"S{k}", (l, m), False, rho)
        prob.variable(f"R{k}", (m, m), True, rho)
        if isinstance(a, DynamicAgent):
            prob.variable(f"P{k}", (a.state_dim, a.state_dim), True, rho)
            cons = assemble_agent_kyp(a.ss.A, a.ss.B, f"P{k}", f"Q{k}", f"S{k}", f"R{k}", a.name or f"agent {k}")
        else:
            cons = assemble_static_gain(a.K, f"Q{k}", f"S{k}", f"R{k}", a.name or f"agent {k}")
        for c in cons:
            c.margin = opt.agent_margin
        prob.extend(cons)
    oy = spec.offsets(spec.out_dims)
    ou = spec.offsets(spec.in_dims)
    ny, nu = int(oy[-1]), int(ou[-1])
    eps = None
    for mode in spec.modes:
        H = mode.H
        expr = AffineMatrixExpr.zeros(ny)
        for k in range(len(spec.agents)):
            Ey = _selector(oy, k, ny)
            Eu = _selector(ou, k, nu)
            HtEu = H.T @ Eu
            expr.add(f"Q{k}", Ey, Ey.T)
            expr.add(f"S{k}", Ey, HtEu.T, transpose=True)
            expr.add(f"R{k}", HtEu, HtEu.T)
        eps = opt.coupling_margin if opt.coupling_margin is not None else default_margin(expr.constant)
        prob.add(expr, eps, f"mode {mode.id} coupling")
    return prob, float(eps)


def certify(spec: NetworkSpec, options: CertifyOptions | None = None):
    """Certificate of L2 stability under arbitrary switching, or ``NotCertified``.

    The agent conditions and every mode's coupling condition are solved
    jointly; the certificate is only emitted after every ``Q_hat_i`` has been
    re-checked with the Jacobi eigensolver.
    """
    opt = options or CertifyOptions()
    t0 = time.perf_counter()
    prob, eps = build_problem(spec, opt)
    res = solve_feasibility(
        prob,
        tol=opt.tol,
        iter_cap=opt.iter_cap,
        gap_tol=opt.gap_tol,
        stop_at=opt.stop_at,
        time_limit=opt.time_limit,
    )
    if not res.feasible:
        return NotCertified(res.status, res.message, res)
    val = res.assignment
    agents = []
    for k, a in enumerate(spec.agents):
        qsr = QsrTriple(val[f"Q{k}"], val[f"S{k}"], val[f"R{k}"])
        storage = QuadStorage(val[f"P{k}"]) if isinstance(a, DynamicAgent) else None
        agents.append(
            {
                "kind": "dynamic" if isinstance(a, DynamicAgent) else "static",
                "name": a.name,
                "qsr": qsr,
                "storage": storage,
            }
        )
    cert = Certificate(agents, [m.H for m in spec.modes], [], None)  # type: ignore[arg-type]
    lmax = cert.recheck()
    bad = [i for i, v in enumerate(lmax) if v > -eps + opt.tol]
    if bad:
        raise NumericalFailure(f"coupling re-check failed for modes {bad}: {lmax}")
    cert.lambda_max = lmax
    cert.supply = derive_common_supply(cert.network_triples())
    cert.margins = list(res.margins)
    cert.runtime = time.perf_counter() - t0
    cert.solver = {
        "status": res.status,
        "t_star": res.t_star,
        "lower_bound": res.lower_bound,
        "iterations": res.iterations,
        "solve_time_s": res.runtime,
        "coupling_margin": eps,
        "box_bound": opt.box_bound,
        "message": res.message,
        "network_digest": network_digest(spec),
    }
    return cert
