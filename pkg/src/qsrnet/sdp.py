"""Interior-point solver behind :func:`qsrnet.lmi.solve_feasibility`.

Solves ``min t  s.t.  F_j(x) + margin_j I <= t I,  |x_k| <= rho_k`` by
primal-dual path following (Nesterov-Todd scaling, Mehrotra
predictor-corrector, infeasible start).

The Schur complement ``H_kl = sum_j tr(W_j A_jk W_j A_jl)`` is assembled from
the term structure: every term ``L X R`` contributes rank-one pieces
``L[:, a] R[b, :]`` per entry, so with ``U = [L_1 .. L_K, R_1' .. R_K']`` and
``Gamma = U' W U`` each block of ``H`` is an elementwise product of two
sub-blocks of ``Gamma``. Terms with the same shape are batched. Problems with
more parameters than ``dense_limit`` use matrix-free preconditioned CG.

Verdicts never rest on solver residuals: ``t*(x)`` is recomputed exactly from
the dual iterate, and the primal iterate ``X_j`` gives the rigorous bound
``t* >= sum_j tr(Z_j (C_j + margin_j I)) - sum_k rho_k |(A^* Z)_k|`` with
``Z_j = X_j / sum_i tr(X_i)``, valid over the box.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

log = logging.getLogger(__name__)


def _entry_to_param(shape, symmetric):
    """Row-major entry index -> parameter index."""
    r, c = shape
    if not symmetric:
        return np.arange(r * c)
    idx = np.empty((r, r), dtype=int)
    iu = np.triu_indices(r)
    idx[iu] = np.arange(len(iu[0]))
    idx[(iu[1], iu[0])] = np.arange(len(iu[0]))
    return idx.ravel()


def _param_fold(shape, symmetric):
    """Gather indices folding row-major entries into upper-triangle parameters.

    Returns ``(first, second, off)``: parameter ``k`` collects entry ``first[k]``
    plus, where ``off[k]``, its mirror ``second[k]``. ``None`` for rectangular.
    """
    if not symmetric:
        return None
    r = shape[0]
    ia, ib = np.triu_indices(r)
    off = np.flatnonzero(ia != ib)
    return ia * r + ib, (ib * r + ia)[off], off


def _fold(T, fold, axis):
    first, second, off = fold
    out = np.take(T, first, axis=axis)
    idx = [slice(None)] * T.ndim
    idx[axis] = off
    out[tuple(idx)] += np.take(T, second, axis=axis)
    return out


@dataclass
class _Group:
    L: np.ndarray  # (g, r) column indices into U
    R: np.ndarray  # (g, c)
    rows: np.ndarray  # (g * p,) parameter indices
    shape: tuple
    symmetric: bool
    flag: bool
    fold: tuple | None  # gather indices, None for rectangular

    @property
    def g(self):
        return self.L.shape[0]


class _Block:
    """One compiled constraint ``F(x) = C + M x`` (row-major vec)."""

    def __init__(self, n, C, margin, M, U, groups, label):
        self.n = n
        self.C = C
        self.margin = margin
        self.M = M
        self.MT = M.T.tocsr()
        self.U = U
        self.groups = groups
        self.label = label

    def value(self, x):
        return self.C + (self.M @ x).reshape(self.n, self.n)


def _compile(prob):
    offsets, o = {}, 0
    for v in prob.variables.values():
        offsets[v.id] = o
        o += v.n_params
    N = o
    e2p = {v.id: _entry_to_param(v.shape, v.symmetric) for v in prob.variables.values()}
    folds = {
        v.id: (_param_fold(v.shape, True) if v.symmetric else None)
        for v in prob.variables.values()
    }
    blocks = []
    for con in prob.constraints:
        expr = con.expr
        n = expr.dim
        perm_t = np.arange(n * n).reshape(n, n).T.ravel()
        mats = []
        Ucols, Lidx, Ridx = [], [], []
        col = 0
        for t in expr.terms:
            v = prob.variables[t.var]
            r, c = v.shape
            K = sp.kron(sp.csr_matrix(t.left), sp.csr_matrix(t.right.T), format="csr")
            E = sp.csr_matrix(
                (np.ones(r * c), (np.arange(r * c), offsets[t.var] + e2p[t.var])),
                shape=(r * c, N),
            )
            KE = K @ E
            if t.transpose:
                KE = KE + KE[perm_t]
            mats.append(KE)
            Ucols.append(t.left)
            Lidx.append(np.arange(col, col + r))
            col += r
        for t in expr.terms:
            c = t.right.shape[0]
            Ucols.append(t.right.T)
            Ridx.append(np.arange(col, col + c))
            col += c
        if mats:
            M = mats[0]
            for K in mats[1:]:
                M = M + K
            M = ((M + M[perm_t]) * 0.5).tocsr()
            M.eliminate_zeros()
            U = np.hstack(Ucols)
        else:
            M = sp.csr_matrix((n * n, N))
            U = np.zeros((n, 0))
        # batch terms of identical signature; a group never repeats a variable
        groups: dict = {}
        for k, t in enumerate(expr.terms):
            v = prob.variables[t.var]
            key = (v.shape, v.symmetric, t.transpose)
            bucket = groups.setdefault(key, [[]])
            for g in bucket:
                if all(expr.terms[j].var != t.var for j in g):
                    g.append(k)
                    break
            else:
                bucket.append([k])
        glist = []
        for (shape, sym, flag), bucket in groups.items():
            for g in bucket:
                p = prob.variables[expr.terms[g[0]].var].n_params
                rows = np.concatenate(
                    [offsets[expr.terms[k].var] + np.arange(p) for k in g]
                )
                glist.append(
                    _Group(
                        L=np.stack([Lidx[k] for k in g]),
                        R=np.stack([Ridx[k] for k in g]),
                        rows=rows,
                        shape=shape,
                        symmetric=sym,
                        flag=flag,
                        fold=folds[expr.terms[g[0]].var],
                    )
                )
        blocks.append(
            _Block(n, np.array(expr.constant, float), con.margin, M, U, glist, con.label)
        )
    return N, blocks


def _pair_block(Gam, A: _Group, B: _Group):
    """Hessian block between parameter sets of groups A and B.

    Entry ``(a, b)`` of a term contributes ``L[:, a] R[b, :]`` (and its
    transpose when flagged). Since ``Gam`` is symmetric, the four
    piece-by-piece traces collapse to two products of ``Gam`` sub-blocks.
    """
    g1, r1 = A.L.shape
    c1 = A.R.shape[1]
    g2, r2 = B.L.shape
    c2 = B.R.shape[1]

    def sub(I, J):
        return Gam[np.ix_(I.ravel(), J.ravel())].reshape(I.shape + J.shape)

    # T[p, a, b, q, c, d]: entry (a, b) of term p in A, entry (c, d) of term q in B
    RL = sub(A.R, B.L)  # [p, b, q, c]
    LR = sub(A.L, B.R)  # [p, a, q, d]
    if A.fold is not None and B.fold is not None and not (A.flag or B.flag):
        return _pair_sym(RL, LR, r1, r2)
    T = RL[:, None, :, :, :, None] * LR[:, :, None, :, None, :]
    if A.flag and B.flag:
        T *= 2.0
    n_cross = int(A.flag) + int(B.flag)
    if n_cross:
        RR = sub(A.R, B.R)  # [p, b, q, d]
        LL = sub(A.L, B.L)  # [p, a, q, c]
        T += n_cross * (RR[:, None, :, :, None, :] * LL[:, :, None, :, :, None])
    T = T.reshape(g1, r1 * c1, g2, r2 * c2)
    if A.fold is not None:
        T = _fold(T, A.fold, 1)
    if B.fold is not None:
        T = _fold(T, B.fold, 3)
    return T.reshape(T.shape[0] * T.shape[1], T.shape[2] * T.shape[3])


def _pair_sym(RL, LR, r1, r2):
    """Unflagged symmetric pair evaluated directly on upper-triangle parameters.

    Parameter ``(a, b)`` stands for ``E_ab + E_ba`` (just ``E_aa`` on the
    diagonal), so each block entry sums up to four entry-level products.
    """
    ia, ib = np.triu_indices(r1)
    jc, jd = np.triu_indices(r2)
    oa = (ia != ib).astype(float)[None, :, None, None]
    ob = (jc != jd).astype(float)[None, None, None, :]

    def g(X, i, j):
        return X[:, i][:, :, :, j]

    T = g(RL, ib, jc) * g(LR, ia, jd)
    T += oa * (g(RL, ia, jc) * g(LR, ib, jd))
    T += ob * (g(RL, ib, jd) * g(LR, ia, jc))
    T += (oa * ob) * (g(RL, ia, jd) * g(LR, ib, jc))
    return T.reshape(T.shape[0] * T.shape[1], T.shape[2] * T.shape[3])


@dataclass
class RunResult:
    x: np.ndarray
    t_star: float
    lower_bound: float
    iterations: int
    message: str


def _max_step(L, D):
    """Largest alpha with L L' + alpha D >= 0 (inf if unbounded)."""
    Li = sla.solve_triangular(L, np.eye(L.shape[0]), lower=True)
    lam = np.linalg.eigvalsh(Li @ D @ Li.T)[0]
    return np.inf if lam >= 0 else -1.0 / lam


def _lp_max_step(v, dv):
    neg = dv < 0
    return np.min(-v[neg] / dv[neg]) if neg.any() else np.inf


class InteriorPointSolver:
    """Primal-dual path following with Nesterov-Todd scaling.

    Dual (the user's) problem: ``max -t`` over ``y = (x, t)`` with slacks
    ``Z_j = t I - F_j(x) - margin_j I >= 0`` and ``rho -+ x >= 0``.
    Primal: ``X_j >= 0``, ``w+-`` with ``sum_j tr X_j = 1`` and
    ``F_j^*(X_j) + w+ - w- = 0``. Mehrotra predictor-corrector steps from an
    infeasible start.
    """

    def __init__(self, prob, newton: str = "auto", dense_limit: int = 9000, verbose=False):
        self.prob = prob
        self.N, self.blocks = _compile(prob)
        self.rho = np.concatenate(
            [np.full(v.n_params, v.box_bound) for v in prob.variables.values()]
        )
        if newton == "auto":
            newton = "dense" if self.N <= dense_limit else "cg"
        if newton not in ("dense", "cg"):
            raise ValueError(f"unknown newton mode {newton!r}")
        self.newton = newton
        self.verbose = verbose
        self.nu = sum(b.n for b in self.blocks) + 2 * self.N
        self.cg_maxiter = 1000

    # -- affine maps -----------------------------------------------------------
    def values(self, x):
        return [b.value(x) for b in self.blocks]

    def t_star(self, x):
        return max(
            float(np.linalg.eigvalsh(0.5 * (F + F.T))[-1]) + b.margin
            for F, b in zip(self.values(x), self.blocks)
        )

    def _adjoint(self, Xs):
        """``(F^*(X), -sum tr X_j)`` from the SDP blocks only."""
        g = np.zeros(self.N)
        tr = 0.0
        for X, b in zip(Xs, self.blocks):
            g += b.MT @ X.ravel()
            tr += np.trace(X)
        return g, -tr

    def _forward(self, dx, dt):
        """SDP-block parts of ``A^T (dx, dt)``."""
        return [(b.M @ dx).reshape(b.n, b.n) - dt * np.eye(b.n) for b in self.blocks]

    def lower_bound(self, Xs):
        """Dual bound on ``t*`` from PSD multipliers ``Xs`` (rescaled to unit trace)."""
        s = sum(np.trace(X) for X in Xs)
        if not s > 0:
            return -np.inf
        g = np.zeros(self.N)
        val = 0.0
        for X, b in zip(Xs, self.blocks):
            Z = X / s
            g += b.MT @ Z.ravel()
            val += float(np.sum(Z * b.C)) + b.margin * float(np.trace(Z))
        return val - float(self.rho @ np.abs(g))

    # -- Schur complement ----------------------------------------------------
    def _schur(self, Ws, lp):
        """``H_kl = sum_j tr(W_j A_jk W_j A_jl) + diag(lp)`` over ``(x, t)``."""
        N = self.N
        acc = np.zeros((N, N))
        H = np.zeros((N + 1, N + 1))
        for W, b in zip(Ws, self.blocks):
            if b.groups:
                Gam = b.U.T @ W @ b.U
                gl = b.groups
                for i, A in enumerate(gl):
                    for j in range(i, len(gl)):
                        B = gl[j]
                        blk = _pair_block(Gam, A, B)
                        if j == i:
                            blk *= 0.5
                        acc[np.ix_(A.rows, B.rows)] += blk
            W2 = W @ W
            H[:N, N] -= b.MT @ W2.ravel()
            H[N, N] += np.trace(W2)
        H[:N, :N] = acc
        H[:N, :N] += acc.T
        H[N, :N] = H[:N, N]
        H[np.arange(N), np.arange(N)] += lp
        return H

    def _schur_diag(self, Ws, lp):
        d = lp.copy()
        for W, b in zip(Ws, self.blocks):
            Gam = b.U.T @ W @ b.U
            for A in b.groups:
                g, r = A.L.shape
                c = A.R.shape[1]
                RL = Gam[A.R[:, :, None], A.L[:, None, :]]  # [g, b, a] = Gam[R_b, L_a]
                RR = Gam[A.R[:, :, None], A.R[:, None, :]]
                LL = Gam[A.L[:, :, None], A.L[:, None, :]]
                T = np.swapaxes(RL, 1, 2) ** 2
                if A.flag:
                    diagRR = np.einsum("gbb->gb", RR)
                    diagLL = np.einsum("gaa->ga", LL)
                    T = 2.0 * (T + diagLL[:, :, None] * diagRR[:, None, :])
                vals = T.reshape(g, r * c)
                if A.fold is not None:
                    # entries (a, b) and (b, a) share a parameter
                    ar = np.einsum("gaa->ga", RL)
                    X = ar[:, :, None] * ar[:, None, :]
                    if A.flag:
                        X = 2.0 * (X + RR * LL)
                    X[:, np.arange(r), np.arange(r)] = 0.0
                    vals = _fold(vals + X.reshape(g, r * c), A.fold, 1)
                d[A.rows] += vals.ravel()
            # a variable used by several groups couples them on the diagonal too
            gl = b.groups
            for i, A in enumerate(gl):
                for B in gl[i + 1 :]:
                    common, ia, ib = np.intersect1d(A.rows, B.rows, return_indices=True)
                    if common.size:
                        d[common] += 2.0 * _pair_block(Gam, A, B)[ia, ib]
        dt = sum(float(np.sum(W * W)) for W in Ws)
        return np.concatenate([d, [dt]])

    def _schur_matvec(self, Ws, lp, v):
        v = np.asarray(v, dtype=float).ravel()
        out = np.zeros_like(v)
        for W, D, b in zip(Ws, self._forward(v[:-1], v[-1]), self.blocks):
            WDW = W @ D @ W
            out[:-1] += b.MT @ WDW.ravel()
            out[-1] -= np.trace(WDW)
        out[:-1] += lp * v[:-1]
        return out

    def _factor(self, Ws, lp):
        if self.newton == "cg":
            d = np.maximum(self._schur_diag(Ws, lp), 1e-300)
            n = self.N + 1
            op = LinearOperator((n, n), matvec=lambda v: self._schur_matvec(Ws, lp, v), dtype=float)
            pre = LinearOperator((n, n), matvec=lambda v: np.ravel(v) / d, dtype=float)

            def solve(rhs):
                sol, _ = cg(op, rhs, M=pre, rtol=1e-10, maxiter=self.cg_maxiter)
                return sol

            return solve
        H = self._schur(Ws, lp)
        reg = 0.0
        scale = np.abs(np.diag(H)).max()
        for _ in range(8):
            try:
                cf = sla.cho_factor(H + reg * np.eye(H.shape[0]), lower=True, check_finite=False)
                return lambda rhs: sla.cho_solve(cf, rhs, check_finite=False)
            except np.linalg.LinAlgError:
                reg = max(reg * 100, 1e-14 * scale)
        raise np.linalg.LinAlgError("Schur complement not positive definite")

    # -- main loop -------------------------------------------------------------
    def run(self, iter_cap=100, gap_tol=1e-3, tol=0.0, stop_at=None, time_limit=None):
        """Iterate until the sign of ``t*`` is settled.

        Every iteration refreshes the exact ``t*(x)`` of the dual iterate and
        the rigorous bound from the primal iterate. Stops when ``t* <= stop_at``,
        the bound exceeds ``tol`` (infeasible), ``t* <= tol`` with relative gap
        below ``gap_tol``, or a cap is hit.
        """
        t_start = time.perf_counter()
        N, rho, blocks = self.N, self.rho, self.blocks
        Ct = [-b.C - b.margin * np.eye(b.n) for b in blocks]
        b_rhs = np.zeros(N + 1)
        b_rhs[-1] = -1.0

        # infeasible starting point, scaled to the data
        colnorm = np.zeros(N)
        for b in blocks:
            colnorm = np.maximum(colnorm, np.sqrt(np.asarray(b.M.multiply(b.M).sum(axis=0)).ravel()))
        anorm = max(1.0, colnorm.max(initial=0.0))
        Xs, Zs = [], []
        for b, C in zip(blocks, Ct):
            xi = max(1.0, np.sqrt(b.n)) / sum(bb.n for bb in blocks)
            eta = max(1.0, np.sqrt(b.n), anorm, np.linalg.norm(C))
            Xs.append(xi * np.eye(b.n))
            Zs.append(eta * np.eye(b.n))
        wp = np.full(N, 1.0 / max(1.0, rho.max()))
        wm = wp.copy()
        zp = rho.copy()
        zm = rho.copy()
        x = np.zeros(N)
        t = 0.0

        best_x, best_t = x.copy(), self.t_star(x)
        lb = -np.inf
        msg = "iteration cap reached"
        it = 0
        while it < iter_cap:
            it += 1
            # residuals
            gX, gt = self._adjoint(Xs)
            Rp = b_rhs - np.concatenate([gX + wp - wm, [gt]])
            AtY = self._forward(x, t)
            Rd = [C - Z - a for C, Z, a in zip(Ct, Zs, AtY)]
            rdp = rho - zp - x
            rdm = rho - zm + x
            mu = (sum(float(np.sum(X * Z)) for X, Z in zip(Xs, Zs)) + wp @ zp + wm @ zm) / self.nu

            # NT scaling: G with G^-1 X G^-T = G^T Z G = diag(lam)
            Gs, Ginv, lams, Ws = [], [], [], []
            try:
                for X, Z in zip(Xs, Zs):
                    L = np.linalg.cholesky(0.5 * (X + X.T))
                    lam2, Qm = np.linalg.eigh(L.T @ Z @ L)
                    lam = np.sqrt(np.maximum(lam2, 1e-300))
                    G = (L @ Qm) / np.sqrt(lam)
                    Gi = (Qm.T * np.sqrt(lam)[:, None]) @ sla.solve_triangular(L, np.eye(L.shape[0]), lower=True)
                    Gs.append(G), Ginv.append(Gi), lams.append(lam), Ws.append(G @ G.T)
            except np.linalg.LinAlgError:
                msg = "lost positive definiteness"
                break
            lp = wp / zp + wm / zm
            try:
                solve = self._factor(Ws, lp)
            except np.linalg.LinAlgError as exc:
                msg = f"Schur failure: {exc}"
                break
            WRdW = [W @ R @ W for W, R in zip(Ws, Rd)]
            gWR, tWR = self._adjoint(WRdW)
            gWR = gWR + (wp / zp) * rdp - (wm / zm) * rdm

            def direction(Rc, rcp, rcm):
                # Rc in scaled space per block; LP complementarity residuals
                GYG = []
                for G, lam, R in zip(Gs, lams, Rc):
                    Y = 2.0 * R / (lam[:, None] + lam[None, :])
                    GYG.append(G @ Y @ G.T)
                gY, tY = self._adjoint(GYG)
                gY = gY + rcp / zp - rcm / zm
                rhs = Rp - np.concatenate([gY, [tY]]) + np.concatenate([gWR, [tWR]])
                dy = solve(rhs)
                dx, dt = dy[:-1], dy[-1]
                dZ = [R - a for R, a in zip(Rd, self._forward(dx, dt))]
                dX = [Y - W @ D @ W for Y, W, D in zip(GYG, Ws, dZ)]
                dzp = rdp - dx
                dzm = rdm + dx
                dwp = (rcp - wp * dzp) / zp
                dwm = (rcm - wm * dzm) / zm
                return dx, dt, dX, dZ, dwp, dwm, dzp, dzm

            def steps(dX, dZ, dwp, dwm, dzp, dzm):
                ap = min(_lp_max_step(wp, dwp), _lp_max_step(wm, dwm))
                ad = min(_lp_max_step(zp, dzp), _lp_max_step(zm, dzm))
                for X, Z, DX, DZ in zip(Xs, Zs, dX, dZ):
                    ap = min(ap, _max_step(np.linalg.cholesky(X), DX))
                    ad = min(ad, _max_step(np.linalg.cholesky(Z), DZ))
                return ap, ad

            # predictor
            Rc = [-np.diag(lam**2) for lam in lams]
            dx, dt, dX, dZ, dwp, dwm, dzp, dzm = direction(Rc, -wp * zp, -wm * zm)
            ap, ad = steps(dX, dZ, dwp, dwm, dzp, dzm)
            ap, ad = min(1.0, ap), min(1.0, ad)
            mu_aff = (
                sum(float(np.sum((X + ap * DX) * (Z + ad * DZ))) for X, Z, DX, DZ in zip(Xs, Zs, dX, dZ))
                + (wp + ap * dwp) @ (zp + ad * dzp)
                + (wm + ap * dwm) @ (zm + ad * dzm)
            ) / self.nu
            sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0

            # corrector
            Rc = []
            for G, Gi, lam, DX, DZ in zip(Gs, Ginv, lams, dX, dZ):
                sx = Gi @ DX @ Gi.T
                sz = G.T @ DZ @ G
                prod = 0.5 * (sx @ sz + sz @ sx)
                Rc.append(sigma * mu * np.eye(lam.size) - np.diag(lam**2) - prod)
            rcp = sigma * mu - wp * zp - dwp * dzp
            rcm = sigma * mu - wm * zm - dwm * dzm
            dx, dt, dX, dZ, dwp, dwm, dzp, dzm = direction(Rc, rcp, rcm)
            ap, ad = steps(dX, dZ, dwp, dwm, dzp, dzm)
            gam = 0.9 + 0.09 * min(1.0, ap, ad)
            ap, ad = min(1.0, gam * ap), min(1.0, gam * ad)

            Xs = [X + ap * D for X, D in zip(Xs, dX)]
            Xs = [0.5 * (X + X.T) for X in Xs]
            wp, wm = wp + ap * dwp, wm + ap * dwm
            Zs = [0.5 * (Z + ad * D + (Z + ad * D).T) for Z, D in zip(Zs, dZ)]
            zp, zm = zp + ad * dzp, zm + ad * dzm
            x, t = x + ad * dx, t + ad * dt

            inside = np.all(np.abs(x) <= rho)
            ts = self.t_star(x) if inside else np.inf
            if ts < best_t:
                best_x, best_t = x.copy(), ts
            lb = max(lb, self.lower_bound(Xs))
            if self.verbose:
                log.info(
                    "it=%d mu=%.2e sigma=%.2f ap=%.2f ad=%.2f t=%.6g t*=%.6g lb=%.6g pinf=%.1e",
                    it, mu, sigma, ap, ad, t, best_t, lb, np.linalg.norm(Rp),
                )
            if stop_at is not None and best_t <= stop_at:
                msg = "reached stop_at"
                break
            if lb > tol:
                msg = "dual bound exceeds tolerance"
                break
            if best_t <= tol and best_t - lb <= gap_tol * abs(best_t):
                msg = "relative gap met"
                break
            if time_limit is not None and time.perf_counter() - t_start > time_limit:
                msg = "time limit reached"
                break
            if max(ap, ad) < 1e-10:
                msg = "step length collapsed"
                break
        return RunResult(best_x, best_t, lb, it, msg)
