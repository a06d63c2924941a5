"""Affine matrix inequalities over symmetric/rectangular matrix variables.

A problem is a list of constraints ``F_j(X) <= -margin_j * I`` where each
``F_j`` is an :class:`AffineMatrixExpr`: a symmetric constant plus terms
``L @ X @ R`` (optionally plus their transpose). Every decision variable is
box bounded entrywise by ``[-rho, rho]``.

``solve_feasibility`` minimizes ``t = max_j lambda_max(F_j) + margin_j`` with
the interior-point method in :mod:`qsrnet.sdp`; a Feasible verdict is only issued
after :func:`verify_assignment` re-checks every constraint with the Jacobi
eigensolver.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import InvalidArgument, NumericalFailure
from .linalg import as_matrix, as_sym, fro, lambda_max

FEASIBLE = "Feasible"
INFEASIBLE = "Infeasible"
UNDECIDED = "Undecided"

DEFAULT_BOX = 1e3


@dataclass(frozen=True)
class LmiVariable:
    id: str
    shape: tuple[int, int]
    symmetric: bool = False
    box_bound: float = DEFAULT_BOX

    def __post_init__(self):
        if self.box_bound <= 0:
            raise InvalidArgument(f"box bound of {self.id} must be positive")
        if self.symmetric and self.shape[0] != self.shape[1]:
            raise InvalidArgument(f"symmetric variable {self.id} must be square")

    @property
    def n_params(self) -> int:
        r, c = self.shape
        return r * (r + 1) // 2 if self.symmetric else r * c

    def unpack(self, params: np.ndarray) -> np.ndarray:
        r, c = self.shape
        if not self.symmetric:
            return np.asarray(params, dtype=float).reshape(r, c)
        X = np.zeros((r, r))
        iu = np.triu_indices(r)
        X[iu] = params
        X[(iu[1], iu[0])] = params
        return X

    def pack(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape != tuple(self.shape):
            raise InvalidArgument(f"{self.id}: expected shape {self.shape}, got {X.shape}")
        if self.symmetric:
            return (0.5 * (X + X.T))[np.triu_indices(self.shape[0])]
        return X.ravel()


@dataclass(frozen=True)
class Term:
    """Contribution ``left @ X @ right`` (plus its transpose when ``transpose``)."""

    var: str
    left: np.ndarray
    right: np.ndarray
    transpose: bool = False


@dataclass
class AffineMatrixExpr:
    constant: np.ndarray
    terms: list[Term] = field(default_factory=list)

    @classmethod
    def zeros(cls, n: int) -> "AffineMatrixExpr":
        return cls(np.zeros((n, n)), [])

    @property
    def dim(self) -> int:
        return self.constant.shape[0]

    def add(self, var: str, left, right, transpose: bool = False) -> "AffineMatrixExpr":
        L = as_matrix(left, "left")
        R = as_matrix(right, "right")
        if L.shape[0] != self.dim or R.shape[1] != self.dim:
            raise InvalidArgument(
                f"term on {var}: left {L.shape} / right {R.shape} incompatible with dim {self.dim}"
            )
        self.terms.append(Term(var, L, R, transpose))
        return self

    def evaluate(self, values: Mapping[str, np.ndarray]) -> np.ndarray:
        F = np.array(self.constant, dtype=float)
        for t in self.terms:
            Y = t.left @ values[t.var] @ t.right
            F += Y
            if t.transpose:
                F += Y.T
        return F


@dataclass
class Constraint:
    """``expr(X) <= -margin * I``."""

    expr: AffineMatrixExpr
    margin: float = 0.0
    label: str = ""


@dataclass
class LmiProblem:
    variables: dict[str, LmiVariable] = field(default_factory=dict)
    constraints: list[Constraint] = field(default_factory=list)

    def variable(self, id: str, shape, symmetric: bool = False, box_bound: float = DEFAULT_BOX):
        if id in self.variables:
            raise InvalidArgument(f"variable {id!r} declared twice")
        v = LmiVariable(id, (int(shape[0]), int(shape[1])), symmetric, float(box_bound))
        self.variables[id] = v
        return v

    def add(self, expr: AffineMatrixExpr, margin: float = 0.0, label: str = "") -> Constraint:
        if margin < 0:
            raise InvalidArgument("constraint margin must be nonnegative")
        for t in expr.terms:
            v = self.variables.get(t.var)
            if v is None:
                raise InvalidArgument(f"constraint {label!r} references undeclared {t.var!r}")
            if t.left.shape[1] != v.shape[0] or t.right.shape[0] != v.shape[1]:
                raise InvalidArgument(f"constraint {label!r}: term shape mismatch on {t.var!r}")
        expr.constant = as_sym(expr.constant, "constant", check=True)
        _check_symmetric_structure(expr, self.variables)
        c = Constraint(expr, float(margin), label)
        self.constraints.append(c)
        return c

    def add_psd(self, var: str, margin: float = 0.0, label: str = "") -> Constraint:
        """``X >= margin * I`` for a symmetric variable."""
        v = self.variables[var]
        n = v.shape[0]
        expr = AffineMatrixExpr.zeros(n).add(var, -np.eye(n), np.eye(n))
        return self.add(expr, margin, label or f"{var} psd")

    def extend(self, constraints) -> None:
        for c in constraints:
            self.add(c.expr, c.margin, c.label)

    @property
    def n_params(self) -> int:
        return sum(v.n_params for v in self.variables.values())

    def unpack(self, x: np.ndarray) -> dict[str, np.ndarray]:
        out, o = {}, 0
        for v in self.variables.values():
            out[v.id] = v.unpack(x[o : o + v.n_params])
            o += v.n_params
        return out

    def pack(self, values: Mapping[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([v.pack(values[v.id]) for v in self.variables.values()])


def _check_symmetric_structure(expr: AffineMatrixExpr, variables) -> None:
    rng = np.random.default_rng(12345)
    vals = {}
    for t in expr.terms:
        v = variables[t.var]
        X = rng.standard_normal(v.shape)
        vals[t.var] = X + X.T if v.symmetric else X
    F = expr.evaluate(vals)
    scale = 1.0 + np.abs(F).max(initial=0.0)
    if np.abs(F - F.T).max(initial=0.0) > 1e-12 * scale * max(1, len(expr.terms)):
        raise InvalidArgument("affine expression is not symmetric for all assignments")


@dataclass
class FeasibilityResult:
    status: str
    assignment: dict[str, np.ndarray]
    t_star: float
    lower_bound: float = -np.inf
    margins: list[float] = field(default_factory=list)
    iterations: int = 0
    runtime: float = 0.0
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


def verify_assignment(prob: LmiProblem, assignment: Mapping[str, np.ndarray]) -> list[float]:
    """Worst margin ``lambda_max(F_j) + margin_j`` of every constraint (Jacobi)."""
    out = []
    for c in prob.constraints:
        F = c.expr.evaluate(assignment)
        out.append(lambda_max(0.5 * (F + F.T)) + c.margin)
    return out


def check_box(prob: LmiProblem, assignment: Mapping[str, np.ndarray]) -> bool:
    for v in prob.variables.values():
        if np.abs(assignment[v.id]).max(initial=0.0) > v.box_bound * (1 + 1e-12):
            return False
    return True


def solve_feasibility(
    prob: LmiProblem,
    tol: float = 0.0,
    iter_cap: int = 100,
    gap_tol: float = 1e-3,
    stop_at: float | None = None,
    time_limit: float | None = None,
    newton: str = "auto",
    verbose: bool = False,
) -> FeasibilityResult:
    """Decide feasibility of ``prob`` by minimizing the worst constraint margin.

    ``Feasible`` means every constraint satisfies ``lambda_max(F_j) <= -margin_j + tol``
    at the returned assignment, re-verified with the Jacobi eigensolver.
    ``Infeasible`` is issued when a dual bound computed from the barrier
    iterates proves ``t* > tol`` over the variable box; it says nothing about
    points outside the box. Anything else is ``Undecided``.

    ``stop_at`` ends the search as soon as ``t*`` drops below it; otherwise the
    solver continues until ``t* <= tol`` with relative gap below ``gap_tol``.
    """
    from .sdp import InteriorPointSolver

    t0 = time.perf_counter()
    if not prob.constraints:
        raise InvalidArgument("problem has no constraints")
    solver = InteriorPointSolver(prob, newton=newton, verbose=verbose)
    run = solver.run(
        iter_cap=iter_cap, gap_tol=gap_tol, tol=tol, stop_at=stop_at, time_limit=time_limit
    )
    assignment = prob.unpack(run.x)
    status = UNDECIDED
    margins: list[float] = []
    msg = run.message
    if run.t_star <= tol:
        margins = verify_assignment(prob, assignment)
        worst = max(margins)
        if worst <= tol and check_box(prob, assignment):
            status = FEASIBLE
        else:
            msg = f"re-verification failed (worst margin {worst:.3e}); {msg}"
    elif run.lower_bound > tol:
        status = INFEASIBLE
    if status == FEASIBLE and max(margins) > tol:
        raise NumericalFailure("feasible result failed verification")
    return FeasibilityResult(
        status=status,
        assignment=assignment,
        t_star=float(max(margins) if margins else run.t_star),
        lower_bound=float(run.lower_bound),
        margins=margins,
        iterations=run.iterations,
        runtime=time.perf_counter() - t0,
        message=msg,
    )


# --- assembly of the agent-level and network-level inequalities -------------


def assemble_agent_kyp(A, B, P: str, Q: str, S: str, R: str, label: str = "") -> list[Constraint]:
    """Dissipation LMI of ``x' = A x + B u`` with output ``y = x``.

    ``[[A'P + PA - Q, PB - S], [*, -R]] <= 0``, plus ``P >= 0`` on the storage.
    Returns constraints; the caller declares ``P, Q, S, R`` on the problem.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    n, m = B.shape
    if A.shape != (n, n):
        raise InvalidArgument(f"A {A.shape} and B {B.shape} incompatible")
    Ey = np.vstack([np.eye(n), np.zeros((m, n))])
    Eu = np.vstack([np.zeros((n, m)), np.eye(m)])
    kyp = AffineMatrixExpr.zeros(n + m)
    kyp.add(P, Ey, np.hstack([A, B]), transpose=True)
    kyp.add(Q, -Ey, Ey.T)
    kyp.add(S, -Ey, Eu.T, transpose=True)
    kyp.add(R, -Eu, Eu.T)
    psd = AffineMatrixExpr.zeros(n).add(P, -np.eye(n), np.eye(n))
    return [Constraint(kyp, 0.0, f"{label} kyp"), Constraint(psd, 0.0, f"{label} storage psd")]


def assemble_static_gain(K, Q: str, S: str, R: str, label: str = "") -> list[Constraint]:
    """Dissipation condition of the static map ``y = K u``.

    ``-R - S'K - K'S - K'QK <= 0`` (``S`` is ``out x in``).
    """
    K = as_matrix(K, "K")
    n = K.shape[1]
    expr = AffineMatrixExpr.zeros(n)
    expr.add(R, -np.eye(n), np.eye(n))
    expr.add(S, -K.T, np.eye(n), transpose=True)
    expr.add(Q, -K.T, K)
    return [Constraint(expr, 0.0, f"{label} static")]


def default_margin(constant) -> float:
    """Margin realizing a strict inequality: ``1e-6 * (1 + ||constant||_F)``."""
    return 1e-6 * (1.0 + fro(constant))
