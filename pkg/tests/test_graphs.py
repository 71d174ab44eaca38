import numpy as np
import pytest

from sepsim.geometry import CircleBundle, Torus, make_potential
from sepsim.graphs import (NeighbourhoodGraph, WeightScheme, build_graph,
                           build_lifted_graph, composite_layout,
                           density_diagnostic, density_field, load_graph,
                           rw_apply_streamed, save_graph)
from sepsim.kernels import (Kernel, density_estimate, make_kernel,
                            make_product_kernel)
from sepsim.sampling import LiftedCloud, PointCloud, sample_lifted, sample_ppp


def small_cloud(n=300, seed=0, potential="cosine", dim=1, beta=0.4):
    torus = Torus(dim)
    pot = make_potential(potential, torus, beta=beta) if potential == "cosine" \
        else make_potential(potential, torus)
    return sample_ppp(torus, pot, n, seed=seed)


def brute_force_edges(cloud, h):
    pts = cloud.points
    n = pts.shape[0]
    edges = {}
    for i in range(n):
        for j in range(i + 1, n):
            d = float(cloud.torus.distance(pts[i], pts[j]))
            if d <= h:
                edges[(i, j)] = d
    return edges


def graph_edges(graph):
    out = {}
    for i in range(graph.n_vertices):
        nbrs, w = graph.neighbors(i)
        for j, wij in zip(nbrs, w):
            if j > i:
                out[(i, int(j))] = float(wij)
    return out


def test_two_points_beyond_h_no_edges():
    cloud = small_cloud(50, potential="zero")
    cloud.points = np.array([[0.1], [0.5]])
    cloud.level = 2
    g = build_graph(cloud, make_kernel("indicator"),
                    WeightScheme("gibbs_sqrt"), 0.2)
    assert g.n_edges == 0


def test_two_point_weight_formula():
    cloud = small_cloud(50, potential="zero")
    cloud.points = np.array([[0.1], [0.2]])
    cloud.level = 2
    k = make_kernel("epanechnikov")
    h = 0.3
    g = build_graph(cloud, k, WeightScheme("gibbs_sqrt"), h)
    d = 0.1
    expected = 0.5 * h ** -1 * k.profile(d / h)
    assert g.weight(0, 1) == pytest.approx(expected, rel=1e-14)
    assert g.weight(1, 0) == g.weight(0, 1)


@pytest.mark.parametrize("dim", [1, 2])
@pytest.mark.parametrize("variant,alpha", [("gibbs_sqrt", 0.5),
                                           ("alpha_estimator", 0.5),
                                           ("alpha_estimator", 1.0)])
def test_cell_list_matches_brute_force(dim, variant, alpha):
    torus = Torus(dim)
    pot = make_potential("cosine", torus, beta=0.4)
    cloud = sample_ppp(torus, pot, 1200 if dim == 1 else 800, seed=3)
    k = make_kernel("epanechnikov")
    h = 0.11
    g = build_graph(cloud, k, WeightScheme(variant, alpha), h)
    expected = brute_force_edges(cloud, h)
    got = graph_edges(g)
    assert set(got) == set(expected)
    # recompute weights straight from the formula on the brute-force pairs
    kbar = density_field(cloud, k, h) if variant == "alpha_estimator" else None
    for (i, j), d in expected.items():
        y = k.profile(d / h) * h ** -dim / cloud.level
        if variant == "gibbs_sqrt":
            w = y * np.exp(0.5 * (pot.value(cloud.points[i]) +
                                  pot.value(cloud.points[j])))
        else:
            w = y / (kbar[i] * kbar[j]) ** alpha
        assert got[(i, j)] == pytest.approx(w, rel=1e-12)


def test_density_field_matches_estimator():
    cloud = small_cloud(400, seed=8)
    k = make_kernel("indicator")
    h = 0.07
    field = density_field(cloud, k, h)
    direct = density_estimate(cloud, k, h, cloud.points[:25])
    assert np.abs(field[:25] - direct).max() <= 1e-12


def test_no_self_loops_and_sorted_adjacency():
    cloud = small_cloud(500, seed=1)
    g = build_graph(cloud, make_kernel("indicator"),
                    WeightScheme("alpha_estimator", 0.5), 0.09)
    for i in range(g.n_vertices):
        nbrs, _ = g.neighbors(i)
        assert np.all(np.diff(nbrs) > 0)
        assert i not in nbrs


def test_weight_symmetry_bitwise():
    cloud = small_cloud(600, seed=2)
    g = build_graph(cloud, make_kernel("epanechnikov"),
                    WeightScheme("alpha_estimator", 1.0), 0.08)
    for i in range(0, g.n_vertices, 7):
        nbrs, w = g.neighbors(i)
        for j, wij in zip(nbrs, w):
            assert g.weight(int(j), i) == wij  # exact, not approx


def test_streamed_apply_matches_csr():
    cloud = small_cloud(700, seed=4)
    k = make_kernel("indicator")
    h = 0.1
    scheme = WeightScheme("alpha_estimator", 0.5)
    g = build_graph(cloud, k, scheme, h)
    vals = np.cos(2 * np.pi * cloud.points[:, 0])
    from sepsim.walkers import rw_generator_apply
    a = rw_generator_apply(g, vals)
    b, _ = rw_apply_streamed(cloud, k, scheme, h, vals, cloud.potential)
    assert np.abs(a - b).max() <= 1e-9 * max(1.0, np.abs(a).max())


def test_zero_estimator_diagnostic():
    cloud = small_cloud(30, potential="zero")
    cloud.points = np.array([[0.05], [0.12], [0.8]])  # one isolated point
    cloud.level = 3
    hollow = Kernel("hollow", lambda r: np.where((r > 0.5) & (r <= 1.0), 1.0, 0.0),
                    1.0, smooth=False)
    with pytest.raises(ValueError, match="kbar vanishes"):
        build_graph(cloud, hollow, WeightScheme("alpha_estimator", 0.5), 0.1)


def test_h_bounds_checked():
    cloud = small_cloud(100)
    with pytest.raises(ValueError):
        build_graph(cloud, make_kernel("indicator"), WeightScheme("gibbs_sqrt"), 0.6)
    with pytest.raises(ValueError):
        build_graph(cloud, make_kernel("indicator"), WeightScheme("gibbs_sqrt"), 0.0)


def test_density_diagnostic_windows():
    cloud = small_cloud(2000, potential="zero")
    g = build_graph(cloud, make_kernel("indicator"), WeightScheme("gibbs_sqrt"), 0.05)
    assert density_diagnostic(g, (np.array([0.3]), np.array([0.3]))) == 0.0
    full = density_diagnostic(g, (np.array([0.0]), np.array([1.0])))
    assert full == pytest.approx(cloud.count / cloud.level)
    half = density_diagnostic(g, (np.array([0.0]), np.array([0.5])))
    assert half == pytest.approx(0.5, abs=3.5 * np.sqrt(0.5 / cloud.level))


def test_graph_csv_roundtrip(tmp_path):
    cloud = small_cloud(150, seed=6)
    g = build_graph(cloud, make_kernel("indicator"),
                    WeightScheme("alpha_estimator", 0.5), 0.12)
    path = tmp_path / "graph.csv"
    save_graph(g, path)
    g2 = load_graph(path, cloud)
    assert np.array_equal(g.indptr, g2.indptr)
    assert np.array_equal(g.indices, g2.indices)
    assert np.array_equal(g.weights, g2.weights)  # repr round-trips floats
    assert g2.scheme.variant == "alpha_estimator"


# ---------------------------------------------------------------------------
# lifted graphs


def make_lifted(n=40, n_fibre=3, seed=11, a=1.0, potential="zero"):
    torus = Torus(1)
    pot = make_potential(potential, torus, beta=0.5) if potential == "cosine" \
        else make_potential(potential, torus)
    bundle = CircleBundle(torus, connection=np.array([a]))
    cloud = sample_ppp(torus, pot, n, seed=seed)
    return sample_lifted(cloud, bundle, n_fibre, seed=seed + 1)


def test_lifted_product_structure_flat_connection():
    # A = 0, identical fibre clouds: adjacency = base x fibre
    lifted = make_lifted(30, 2, a=0.0)
    fixed = np.sort(lifted.fibre_points[0])[:5]
    lifted.fibre_points = [fixed.copy() for _ in range(lifted.base.count)]
    pk = make_product_kernel("indicator_product")
    h, hp = 0.1, 0.8
    g = build_lifted_graph(lifted, pk, WeightScheme("lifted"), h, hp)
    base_adj = brute_force_edges(lifted.base, h)
    fib = lifted.bundle.fibre_distance(fixed[:, None], fixed[None, :]) <= hp
    layout = composite_layout(lifted)
    nf = fixed.shape[0]
    for (i, j) in base_adj:
        for a_ in range(nf):
            for b_ in range(nf):
                expected = bool(fib[a_, b_])
                got = g.weight(int(layout.offsets[i] + a_),
                               int(layout.offsets[j] + b_)) > 0
                assert got == expected


def test_lifted_single_edge_weight_formula():
    torus = Torus(1)
    pot = make_potential("zero", torus)
    bundle = CircleBundle(torus, connection=np.array([1.0]))
    cloud = sample_ppp(torus, pot, 10, seed=0)
    cloud.points = np.array([[0.0], [0.25]])
    cloud.level = 2
    lifted = sample_lifted(cloud, bundle, 2, seed=1)
    lifted.fibre_points = [np.array([0.0]), np.array([6.0])]
    pk = make_product_kernel("indicator_product")
    h, hp = 0.3, 0.6
    g = build_lifted_graph(lifted, pk, WeightScheme("lifted"), h, hp)
    # transported angle 0 - 1*0.25 = -0.25 ~ 6.033; distance to 6.0 is 0.033
    assert g.n_edges == 1
    expected = (h ** -1) * (hp ** -1) / (2 * 2) * 1.0
    assert g.weight(0, 1) == pytest.approx(expected, rel=1e-12)


def test_lifted_weight_symmetry_exact():
    lifted = make_lifted(25, 3, a=0.7, potential="cosine")
    pk = make_product_kernel("indicator_product")
    g = build_lifted_graph(lifted, pk, WeightScheme("lifted_alpha", 0.5), 0.15, 0.7)
    import scipy.sparse as sp
    W = sp.csr_matrix((g.weights, g.indices, g.indptr), shape=(g.n_vertices,) * 2)
    assert (abs(W - W.T)).max() == 0.0


def test_lifted_streamed_matches_materialised():
    from sepsim.graphs import lifted_density_field, lifted_rw_apply_streamed
    from sepsim.walkers import make_bundle_mode, rw_generator_apply
    lifted = make_lifted(50, 4, a=1.0, potential="cosine")
    pk = make_product_kernel("indicator_product")
    h, hp = 0.2, 0.5
    layout = composite_layout(lifted)
    phi = make_bundle_mode(lifted.bundle, [1], 1)
    vals = phi.value(lifted.base.points[layout.base_index], layout.angles)
    for variant, alpha in (("lifted", 0.5), ("lifted_alpha", 0.5),
                           ("lifted_alpha", 1.0)):
        scheme = WeightScheme(variant, alpha)
        g = build_lifted_graph(lifted, pk, scheme, h, hp)
        a = rw_generator_apply(g, vals)
        b, _ = lifted_rw_apply_streamed(lifted, pk, scheme, h, hp, vals,
                                        lifted.base.potential, layout=layout)
        assert np.abs(a - b).max() <= 1e-10 * max(1.0, np.abs(a).max())


def test_lifted_rejects_wide_fibre_bandwidth():
    lifted = make_lifted(20, 2)
    pk = make_product_kernel("indicator_product")
    with pytest.raises(ValueError):
        build_lifted_graph(lifted, pk, WeightScheme("lifted"), 0.1, 4.0)
