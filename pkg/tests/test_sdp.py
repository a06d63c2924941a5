import hypothesis.strategies as st
import numpy as np
from hypothesis import given, settings

from qsrnet.lmi import AffineMatrixExpr, LmiProblem
from qsrnet.sdp import InteriorPointSolver


def random_problem(seed):
    """Constraints mixing repeated symmetric and rectangular variables, with and without transposes."""
    r = np.random.default_rng(seed)
    prob = LmiProblem()
    dims = {}
    for k in range(int(r.integers(2, 5))):
        sym = bool(r.integers(0, 2))
        a = int(r.integers(1, 4))
        shape = (a, a) if sym else (a, int(r.integers(1, 4)))
        prob.variable(f"X{k}", shape, sym, 10.0)
        dims[f"X{k}"] = shape
    for j in range(int(r.integers(1, 4))):
        n = int(r.integers(1, 6))
        C = r.normal(size=(n, n))
        e = AffineMatrixExpr(C + C.T)
        for name, (a, b) in dims.items():
            for _ in range(int(r.integers(0, 3))):
                L = r.normal(size=(n, a))
                if a == b and prob.variables[name].symmetric and r.integers(0, 2):
                    e.add(name, L, L.T)
                else:
                    e.add(name, L, r.normal(size=(b, n)), transpose=True)
        prob.add(e, 0.0, f"c{j}")
    return prob


def brute_schur(solver, Ws, lp):
    N = solver.N
    H = np.zeros((N + 1, N + 1))
    for W, b in zip(Ws, solver.blocks):
        M = b.M.toarray()
        A = [M[:, k].reshape(b.n, b.n) for k in range(N)] + [-np.eye(b.n)]
        for k in range(N + 1):
            WAk = W @ A[k] @ W
            for m in range(N + 1):
                H[k, m] += np.sum(WAk * A[m])
    H[np.arange(N), np.arange(N)] += lp
    return H


@settings(deadline=None, max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_schur_matches_brute_force(seed):
    prob = random_problem(seed)
    s = InteriorPointSolver(prob)
    r = np.random.default_rng(seed + 1)
    Ws = []
    for b in s.blocks:
        G = r.normal(size=(b.n, b.n))
        Ws.append(G @ G.T + 0.1 * np.eye(b.n))
    lp = r.uniform(0.1, 1.0, s.N)
    H = s._schur(Ws, lp)
    ref = brute_schur(s, Ws, lp)
    assert np.allclose(H, ref, rtol=1e-10, atol=1e-10 * (1 + np.abs(ref).max()))
    d = s._schur_diag(Ws, lp)
    assert np.allclose(d, np.diag(ref), rtol=1e-10, atol=1e-10 * (1 + np.abs(ref).max()))
    v = r.normal(size=s.N + 1)
    assert np.allclose(s._schur_matvec(Ws, lp, v), ref @ v, rtol=1e-9, atol=1e-9 * (1 + np.abs(ref).max()))
