import numpy as np
import pytest
from scipy.linalg import expm

from sepsim.errors import EventBudgetError
from sepsim.geometry import Torus, make_potential
from sepsim.graphs import NeighbourhoodGraph, WeightScheme, build_graph
from sepsim.sampling import Configuration, initial_configuration, sample_ppp
from sepsim.sep import (MartingaleDiagnostics, Trajectory, duality_check,
                        dynkin_diagnostics, dynkin_observables, dynkin_qv_bound,
                        exchange, save_trajectory, sep_generator_apply,
                        simulate, suggested_grid_step)
from sepsim.walkers import make_fourier_mode, rw_generator_apply


def random_graph(n, seed, p=0.5, wmax=2.0):
    """Small dense random weighted graph for generator diagnostics."""
    rng = np.random.default_rng(seed)
    gi, gj, w = [], [], []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.uniform() < p:
                gi.append(i)
                gj.append(j)
                w.append(rng.uniform(0.1, wmax))
    from sepsim.graphs import _assemble_csr
    indptr, indices, weights = _assemble_csr(
        n, np.asarray(gi, dtype=np.int64), np.asarray(gj, dtype=np.int64),
        np.asarray(w))
    torus = Torus(1)
    pot = make_potential("zero", torus)
    cloud = sample_ppp(torus, pot, max(n, 2), seed=seed)
    cloud.points = np.linspace(0, 1, n, endpoint=False)[:, None]
    cloud.level = n
    return NeighbourhoodGraph(cloud, WeightScheme("gibbs_sqrt"), "indicator",
                              0.5, indptr, indices, weights)


class TestExchange:
    def test_swap(self):
        eta = Configuration.from_occupancy([1, 0, 1])
        out = exchange(eta, 0, 1)
        assert out.occupancy.tolist() == [0, 1, 1]
        assert out.particle_count == 2

    def test_noop_same_occupancy(self):
        eta = Configuration.from_occupancy([1, 0, 1])
        out = exchange(eta, 0, 2)
        assert out.occupancy.tolist() == [1, 0, 1]

    def test_involution(self):
        eta = Configuration.from_occupancy([1, 0, 0, 1])
        out = exchange(exchange(eta, 1, 3), 1, 3)
        assert np.array_equal(out.occupancy, eta.occupancy)

    def test_rejects_same_vertex(self):
        with pytest.raises(ValueError):
            exchange(Configuration.from_occupancy([1, 0]), 1, 1)


class TestGenerator:
    def test_constant_function(self):
        g = random_graph(6, 0)
        eta = Configuration.from_occupancy([1, 0, 1, 0, 1, 0])
        assert sep_generator_apply(g, lambda occ: 3.0, eta) == 0.0

    def test_single_edge_occupancy(self):
        g = random_graph(2, 1, p=1.1)
        w = g.weight(0, 1)
        eta = Configuration.from_occupancy([1, 0])
        val = sep_generator_apply(g, lambda occ: float(occ[0]), eta)
        assert val == pytest.approx(-w, rel=1e-14)

    def test_symmetric_product_invariant(self):
        g = random_graph(2, 2, p=1.1)
        eta = Configuration.from_occupancy([1, 0])
        val = sep_generator_apply(g, lambda occ: float(occ[0] * occ[1]), eta)
        assert val == 0.0

    def test_refuses_large_graph(self):
        g = random_graph(25, 3, p=0.2)
        with pytest.raises(ValueError):
            sep_generator_apply(g, lambda occ: 0.0, Configuration.from_occupancy(
                np.zeros(25, dtype=np.uint8)))


class TestDuality:
    def test_exact_on_random_graphs(self):
        worst = 0.0
        for seed in range(10):
            n = 4 + seed % 5
            g = random_graph(n, seed)
            phi = np.cos(2 * np.pi * g.cloud.points[:, 0]) + 0.3
            worst = max(worst, duality_check(g, phi))
        assert worst <= 1e-12

    def test_refuses_beyond_enumeration(self):
        g = random_graph(13, 0)
        with pytest.raises(ValueError):
            duality_check(g, np.zeros(13))


def unit_graph_for_sim(n_level=400, seed=5, h=0.15):
    torus = Torus(1)
    pot = make_potential("zero", torus)
    cloud = sample_ppp(torus, pot, n_level, seed=seed)
    from sepsim.kernels import make_kernel
    return build_graph(cloud, make_kernel("indicator"),
                       WeightScheme("alpha_estimator", 0.5), h)


class TestSimulate:
    def test_particle_count_conserved_and_deterministic(self):
        g = unit_graph_for_sim()
        phi = make_fourier_mode(Torus(1), [1])
        eta0 = initial_configuration(g.cloud, lambda x: np.full(x.shape[0], 0.5),
                                     seed=1)
        obs = {"phi": phi.value(g.cloud.points)}
        t1 = simulate(g, eta0, t_end=0.02, seed=9, observables=obs)
        t2 = simulate(g, eta0, t_end=0.02, seed=9, observables=obs)
        assert np.array_equal(t1.pairings["phi"], t2.pairings["phi"])
        assert np.all(t1.particle_counts == eta0.particle_count)
        assert t1.n_moves > 0

    def test_full_configuration_frozen(self):
        g = unit_graph_for_sim(150)
        eta0 = Configuration.from_occupancy(np.ones(g.n_vertices, dtype=np.uint8))
        obs = {"phi": np.cos(2 * np.pi * g.cloud.points[:, 0])}
        traj = simulate(g, eta0, t_end=0.005, seed=3, observables=obs)
        assert traj.n_moves == 0
        assert np.ptp(traj.pairings["phi"]) == 0.0

    def test_event_budget_refusal(self):
        g = unit_graph_for_sim()
        eta0 = initial_configuration(g.cloud, lambda x: np.ones(x.shape[0]), seed=0)
        with pytest.raises(EventBudgetError):
            simulate(g, eta0, t_end=10.0, seed=0, observables={}, max_events=100)

    def test_single_particle_matches_matrix_exponential(self):
        # occupation pairing of a lone walker vs the exact semigroup
        g = unit_graph_for_sim(200, seed=8, h=0.2)
        n = g.n_vertices
        start = 7
        occ = np.zeros(n, dtype=np.uint8)
        occ[start] = 1
        eta0 = Configuration.from_occupancy(occ)
        phi = np.cos(2 * np.pi * g.cloud.points[:, 0])
        rate = g.h ** -2.0
        import scipy.sparse as sp
        W = sp.csr_matrix((g.weights, g.indices, g.indptr), shape=(n, n)).toarray()
        Q = rate * (W - np.diag(W.sum(axis=1)))
        t_end = 0.02
        times = np.linspace(0, t_end, 5)
        exact = np.array([(expm(Q * t) @ phi)[start] for t in times]) / g.pairing_norm
        samples = []
        for s in range(120):
            traj = simulate(g, eta0, t_end=t_end, seed=100 + s,
                            observables={"phi": phi}, time_points=5)
            samples.append(traj.pairings["phi"])
        samples = np.asarray(samples)
        mean = samples.mean(axis=0)
        se = samples.std(axis=0, ddof=1) / np.sqrt(samples.shape[0])
        # time 0 is deterministic; compare the later grid times at 3 sigma
        assert np.all(np.abs(mean[1:] - exact[1:]) <= 3.0 * se[1:] + 1e-12)

    def test_stationarity_of_product_measure(self):
        # Bernoulli(c) is invariant: pairing distribution at t matches t=0
        g = unit_graph_for_sim(300, seed=2)
        phi = np.cos(2 * np.pi * g.cloud.points[:, 0])
        start_vals, end_vals = [], []
        for s in range(60):
            eta0 = initial_configuration(
                g.cloud, lambda x: np.full(x.shape[0], 0.4), seed=500 + s)
            traj = simulate(g, eta0, t_end=0.02, seed=700 + s,
                            observables={"phi": phi}, time_points=3)
            start_vals.append(traj.pairings["phi"][0])
            end_vals.append(traj.pairings["phi"][-1])
        start_vals = np.asarray(start_vals)
        end_vals = np.asarray(end_vals)
        se = np.sqrt(start_vals.var(ddof=1) + end_vals.var(ddof=1)) / np.sqrt(60)
        assert abs(start_vals.mean() - end_vals.mean()) <= 3.0 * se + 1e-12


class TestDynkin:
    def test_constant_phi_zero_residual(self):
        g = unit_graph_for_sim(200)
        eta0 = initial_configuration(g.cloud, lambda x: np.full(x.shape[0], 0.5),
                                     seed=4)
        obs = dynkin_observables(g, np.ones(g.n_vertices))
        traj = simulate(g, eta0, t_end=0.01, seed=5, observables=obs)
        diag = dynkin_diagnostics(traj, g, np.ones(g.n_vertices))
        assert np.abs(diag.residual).max() <= 1e-14

    def test_residual_starts_at_zero_and_mean_zero(self):
        g = unit_graph_for_sim(300, seed=6)
        phi = np.cos(2 * np.pi * g.cloud.points[:, 0])
        obs = dynkin_observables(g, phi)
        step = suggested_grid_step(g, phi)
        t_end = 0.05
        points = max(11, int(np.ceil(t_end / step)) + 1)
        residuals = []
        for s in range(50):
            eta0 = initial_configuration(
                g.cloud, lambda x: 0.5 + 0.4 * np.cos(2 * np.pi * x[:, 0]),
                seed=900 + s)
            traj = simulate(g, eta0, t_end=t_end, seed=1200 + s,
                            observables=obs, time_points=points)
            diag = dynkin_diagnostics(traj, g, phi)
            assert diag.residual[0] == 0.0
            residuals.append(diag.residual)
        residuals = np.asarray(residuals)
        mean = residuals.mean(axis=0)
        se = residuals.std(axis=0, ddof=1) / np.sqrt(residuals.shape[0])
        assert np.all(np.abs(mean[1:]) <= 3.0 * se[1:] + 1e-12)

    def test_qv_bound_value(self):
        g = random_graph(5, 4)
        phi = np.arange(5.0)
        gen = rw_generator_apply(g, phi, rescale=g.h ** -2.0)
        manual = np.abs(phi * gen).sum() / g.pairing_norm ** 2
        assert dynkin_qv_bound(g, phi) == pytest.approx(manual, rel=1e-14)


def test_trajectory_csv_export(tmp_path):
    import json
    g = unit_graph_for_sim(150)
    eta0 = initial_configuration(g.cloud, lambda x: np.full(x.shape[0], 0.5),
                                 seed=1)
    phi = np.cos(2 * np.pi * g.cloud.points[:, 0])
    traj = simulate(g, eta0, t_end=0.01, seed=2, observables={"cos1": phi},
                    time_points=6)
    path = tmp_path / "traj.csv"
    save_trajectory(traj, path, replica_id=3, metadata={"N": g.level})
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "time,function,pairing,replica,particle_count"
    assert len(lines) == 7
    cells = lines[1].split(",")
    assert cells[1] == "cos1" and cells[3] == "3"
    assert float(cells[2]) == traj.pairings["cos1"][0]
    meta = json.loads((tmp_path / "traj_meta.json").read_text())
    assert meta["seed"] == 2 and meta["N"] == g.level
