import csv
import io

import numpy as np
import pytest

from qsrnet.baselines import (
    BLOCK_DIAG,
    FULL,
    METHODS,
    BenchRecord,
    bench_table,
    build_monolithic,
    identify_mode_parameters,
    monolithic_certify,
    network_closed_loop,
    scattering_eig_analysis,
    uav_groups,
)
from qsrnet.dissipativity import QsrTriple
from qsrnet.errors import InvalidArgument
from qsrnet.lmi import FEASIBLE
from qsrnet.network import Certificate, DynamicAgent, NetworkSpec, StaticGainAgent, TopologyMode, certify
from qsrnet.riccati import StateSpace, lqr_gain


def formation(seed, n_vehicles=2):
    """Double-integrator vehicles under LQR, follower tracking the leader in mode 1."""
    r = np.random.default_rng(seed)
    plants, gains = [], []
    for _ in range(n_vehicles):
        A = np.array([[0.0, 1.0], [0.0, -r.uniform(0.1, 1.0)]])
        B = np.array([[0.0], [r.uniform(0.5, 2.0)]])
        plants.append(StateSpace(A, B))
        gains.append(lqr_gain(A, B, 10 * np.eye(2), np.eye(1)).K)
    agents = [DynamicAgent(p, f"p{i}") for i, p in enumerate(plants)]
    agents += [StaticGainAgent(K, f"k{i}") for i, K in enumerate(gains)]
    nx, nu = 2 * n_vehicles, n_vehicles
    Hc_free = np.eye(nx)
    Hc_track = np.eye(nx)
    Hc_track[2:4, 0:2] = -np.eye(2)
    modes = []
    for i, Hc in enumerate((Hc_free, Hc_track)):
        H = np.block([[np.zeros((nu, nx)), -np.eye(nu)], [Hc, np.zeros((nx, nu))]])
        modes.append(TopologyMode(i + 1, H, tuple(a.in_dim for a in agents), tuple(a.out_dim for a in agents)))
    return NetworkSpec(agents, modes)


def test_spectral_examples():
    (rep,), t = scattering_eig_analysis([QsrTriple([[-1.0]], [[0.0]], [[1.0]])])
    assert rep.inertia == (1, 0, 1) and t >= 0
    (rep,), _ = scattering_eig_analysis([QsrTriple(np.zeros((2, 2)), 0.5 * np.eye(2), np.zeros((2, 2)))])
    assert np.allclose(rep.eigenvalues, [-0.5, -0.5, 0.5, 0.5])
    assert rep.inertia == (2, 0, 2)


def test_closed_loop_form():
    spec = formation(0)
    modes = network_closed_loop(spec)
    A = np.zeros((4, 4))
    B = np.zeros((4, 2))
    K = np.zeros((2, 4))
    for i in range(2):
        A[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = spec.agents[i].ss.A
        B[2 * i : 2 * i + 2, i] = spec.agents[i].ss.B[:, 0]
        K[i, 2 * i : 2 * i + 2] = spec.agents[2 + i].K
    for m, s in zip(spec.modes, modes):
        Hc = m.H[2:, :4]
        assert np.allclose(s.A, A - B @ K @ Hc)
        assert np.allclose(s.B, np.hstack([B, -B @ K]))


def test_monolithic_structures():
    spec = formation(1)
    modes = network_closed_loop(spec)
    sg, ig = uav_groups(spec)
    assert [list(g) for g in ig] == [[0, 2, 3], [1, 4, 5]]
    full = build_monolithic(modes, FULL)
    blk = build_monolithic(modes, BLOCK_DIAG, sg, ig)
    n, m = 4, 6
    assert full.n_params == 2 * n * (n + 1) // 2 + n * m + m * (m + 1) // 2
    assert blk.n_params == 2 * (3 + 3 + 2 * 3 + 6)
    with pytest.raises(InvalidArgument):
        build_monolithic(modes, "diagonal")
    with pytest.raises(InvalidArgument):
        build_monolithic(modes, BLOCK_DIAG, [np.arange(3)], [np.arange(6)])


@pytest.mark.parametrize("seed", range(10))
def test_block_feasible_implies_full_feasible(seed):
    spec = formation(seed)
    modes = network_closed_loop(spec)
    sg, ig = uav_groups(spec)
    blk, _ = monolithic_certify(modes, BLOCK_DIAG, sg, ig)
    full, _ = monolithic_certify(modes, FULL)
    if blk.status == FEASIBLE:
        assert full.status == FEASIBLE
    # verdict consistency with the compositional route
    if isinstance(certify(spec), Certificate):
        assert blk.status == FEASIBLE and full.status == FEASIBLE


def test_identification_and_eigen_step():
    spec = formation(2)
    modes = network_closed_loop(spec)
    trips, t_id = identify_mode_parameters(modes, *uav_groups(spec))
    assert all(isinstance(tr, QsrTriple) for tr in trips)
    reps, t_eig = scattering_eig_analysis(trips)
    for rep, tr in zip(reps, trips):
        assert sum(rep.inertia) == tr.out_dim + tr.in_dim
        assert rep.inertia[0] >= tr.out_dim  # Q <= -eps I dominates the output block
    assert t_eig < t_id


def test_bench_table_tiny_instance():
    spec = formation(3)
    a = bench_table(spec, repetitions=1)
    b = bench_table(spec, repetitions=2)
    assert [r.method for r in a.records] == list(METHODS)
    assert [r.verdict for r in a.records] == [r.verdict for r in b.records]
    assert not a.flags
    rows = list(csv.reader(io.StringIO(a.csv()), strict=True))
    assert rows[0] == ["method", "time_s", "verdict"]
    assert [r[0] for r in rows[1:]] == list(METHODS)
    assert all(float(r[1]) >= 0 for r in rows[1:])
    assert len(b.by_method("compositional").times) == 2
    assert b.by_method("compositional").n_params > 0


def test_bench_record_validation():
    with pytest.raises(InvalidArgument):
        BenchRecord("x", -1.0, FEASIBLE)
    with pytest.raises(InvalidArgument):
        bench_table(formation(0), repetitions=0)
