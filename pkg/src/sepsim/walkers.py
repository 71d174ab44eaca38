"""Generator application, limit operators, consistency harnesses, oracles.

The rescaled random-walk generator h^{-2} L applied to a smooth test
function converges, per weight scheme, to

  alpha_estimator:  (C2 / 2 C0^{2a}) e^{(2a-1)U} (Lap - 2(1-a) grad U . grad)
  gibbs_sqrt:       (C2 / 2) (Lap - grad U . grad)

with C0, C2 the kernel moments; the lifted schemes converge to the matching
horizontal operators.  The integral-operator oracles evaluate the h > 0
integrals that sit between the discrete generator and these limits, with
the kernel support handled exactly by radial substitution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import interpolate
from scipy.sparse import csr_matrix

from .geometry import CircleBundle, Potential, Torus
from .graphs import (LiftedGraph, WeightScheme, composite_layout,
                     density_field, lifted_rw_apply_streamed,
                     rw_apply_streamed)
from .kernels import (Kernel, KernelMoments, ProductKernel, _quad,
                      expected_density_oracle, kernel_moments,
                      product_kernel_moments)
from .sampling import LiftedCloud, PointCloud

Array = np.ndarray


# ---------------------------------------------------------------------------
# test functions


@dataclass
class TestFunction:
    """Smooth function on the torus with registered exact derivatives."""

    name: str
    value: Callable[[Array], Array]
    gradient: Callable[[Array], Array]
    laplacian: Callable[[Array], Array]


def make_constant(c: float = 1.0) -> TestFunction:
    return TestFunction(
        "const",
        lambda x: np.full(np.asarray(x).shape[:-1], c),
        lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        lambda x: np.zeros(np.asarray(x).shape[:-1]),
    )


def make_fourier_mode(torus: Torus, freqs, kind: str = "cos") -> TestFunction:
    """cos/sin(2 pi sum_i k_i x_i / L_i) with exact gradient and Laplacian."""
    k = np.asarray(freqs, dtype=float)
    if k.shape != (torus.dim,):
        raise ValueError("one integer frequency per axis")
    w = 2.0 * np.pi * k / torus.sides
    w2 = float(w @ w)
    trig, dtrig = (np.cos, lambda t: -np.sin(t)) if kind == "cos" else (np.sin, np.cos)

    def value(x):
        return trig(np.asarray(x, dtype=float) @ w)

    def gradient(x):
        t = np.asarray(x, dtype=float) @ w
        return dtrig(t)[..., None] * w

    def laplacian(x):
        return -w2 * trig(np.asarray(x, dtype=float) @ w)

    name = f"{kind}{','.join(str(int(f)) for f in np.atleast_1d(freqs))}"
    return TestFunction(name, value, gradient, laplacian)


def parse_test_function(spec: str, torus: Torus) -> TestFunction:
    """Names like 'const', 'cos:1', 'sin:2' or 'cos:1,0' (one freq per axis)."""
    spec = spec.strip()
    if spec in ("const", "one", "1"):
        return make_constant()
    kind, _, rest = spec.partition(":")
    if kind not in ("cos", "sin") or not rest:
        raise KeyError(f"unknown test function {spec!r}")
    freqs = [int(v) for v in rest.split(",")]
    if len(freqs) == 1 and torus.dim > 1:
        freqs = freqs + [0] * (torus.dim - 1)
    return make_fourier_mode(torus, freqs, kind)


@dataclass
class BundleTestFunction:
    """Smooth function on Torus x S^1 with the derivatives the horizontal
    operators need."""

    name: str
    value: Callable[[Array, Array], Array]
    grad_x: Callable[[Array, Array], Array]
    lap_x: Callable[[Array, Array], Array]
    dtheta: Callable[[Array, Array], Array]
    dtheta2: Callable[[Array, Array], Array]
    grad_x_dtheta: Callable[[Array, Array], Array]


def make_bundle_mode(bundle: CircleBundle, freqs, fibre_freq: int,
                     kind: str = "cos") -> BundleTestFunction:
    """cos/sin(2 pi k . x / L + 2 pi l theta / beta) on the bundle."""
    torus = bundle.base
    k = np.asarray(freqs, dtype=float)
    w = 2.0 * np.pi * k / torus.sides
    wl = 2.0 * np.pi * fibre_freq / bundle.fibre_circumference
    w2 = float(w @ w)
    trig, dtrig = (np.cos, lambda t: -np.sin(t)) if kind == "cos" else (np.sin, np.cos)

    def phase(x, theta):
        return np.asarray(x, dtype=float) @ w + wl * np.asarray(theta, dtype=float)

    return BundleTestFunction(
        name=f"{kind}{','.join(str(int(f)) for f in np.atleast_1d(freqs))};l={fibre_freq}",
        value=lambda x, t: trig(phase(x, t)),
        grad_x=lambda x, t: dtrig(phase(x, t))[..., None] * w,
        lap_x=lambda x, t: -w2 * trig(phase(x, t)),
        dtheta=lambda x, t: wl * dtrig(phase(x, t)),
        dtheta2=lambda x, t: -wl * wl * trig(phase(x, t)),
        grad_x_dtheta=lambda x, t: -wl * trig(phase(x, t))[..., None] * w,
    )


def lift_base_function(phi: TestFunction) -> BundleTestFunction:
    """The pullback phi o pi, constant along fibres."""
    def zeros_like_phase(x, t):
        return np.zeros(np.asarray(x).shape[:-1])

    return BundleTestFunction(
        name=phi.name + "~pi",
        value=lambda x, t: phi.value(x),
        grad_x=lambda x, t: phi.gradient(x),
        lap_x=lambda x, t: phi.laplacian(x),
        dtheta=zeros_like_phase,
        dtheta2=zeros_like_phase,
        grad_x_dtheta=lambda x, t: np.zeros_like(np.asarray(x, dtype=float)),
    )


def parse_bundle_function(spec: str, bundle: CircleBundle) -> BundleTestFunction:
    """Names like 'cos:1;1' (base freqs ; fibre freq), or base names lifted."""
    spec = spec.strip()
    if ";" not in spec:
        return lift_base_function(parse_test_function(spec, bundle.base))
    head, _, tail = spec.rpartition(";")
    kind, _, rest = head.partition(":")
    freqs = [int(v) for v in rest.split(",")]
    if len(freqs) == 1 and bundle.base.dim > 1:
        freqs = freqs + [0] * (bundle.base.dim - 1)
    return make_bundle_mode(bundle, freqs, int(tail), kind)


# ---------------------------------------------------------------------------
# generator application and limit operators


def evaluate_on_graph(graph, phi) -> Array:
    """Test-function values at the graph's vertices."""
    if isinstance(graph, LiftedGraph):
        x = graph.lifted.base.points[graph.layout.base_index]
        return phi.value(x, graph.layout.angles)
    return phi.value(graph.cloud.points)


def rw_generator_apply(graph, phi, rescale: Optional[float] = None) -> Array:
    """(rescale) sum_y W(x, y) (phi(y) - phi(x)) per vertex x.

    ``phi`` may be a (Bundle)TestFunction or a precomputed value vector;
    ``rescale`` defaults to the diffusive h^{-2} of the graph.
    """
    vals = phi if isinstance(phi, np.ndarray) else evaluate_on_graph(graph, phi)
    if rescale is None:
        rescale = graph.h ** (-2.0)
    n = graph.n_vertices
    W = csr_matrix((graph.weights, graph.indices, graph.indptr), shape=(n, n))
    # centring keeps constants exactly in the kernel of the operator
    v = vals - vals[0] if n else vals
    return rescale * (W @ v - graph.rowsums() * v)


def limit_operator_apply(phi: TestFunction, potential: Potential, alpha: float,
                         moments: KernelMoments, x: Array) -> Array:
    """(C2 / 2 C0^{2a}) e^{(2a-1)U} (Lap phi - 2(1-a) grad U . grad phi)."""
    pref = moments.c2 / (2.0 * moments.c0 ** (2.0 * alpha))
    u = potential.value(x)
    drift = np.sum(potential.gradient(x) * phi.gradient(x), axis=-1)
    return pref * np.exp((2.0 * alpha - 1.0) * u) * (
        phi.laplacian(x) - 2.0 * (1.0 - alpha) * drift)


def gibbs_limit_operator_apply(phi: TestFunction, potential: Potential,
                               moments: KernelMoments, x: Array) -> Array:
    """Limit of the Gibbs-sqrt weights: (C2/2)(Lap - grad U . grad)."""
    drift = np.sum(potential.gradient(x) * phi.gradient(x), axis=-1)
    return 0.5 * moments.c2 * (phi.laplacian(x) - drift)


def horizontal_square_sum(bphi: BundleTestFunction, bundle: CircleBundle,
                          x: Array, theta: Array) -> Array:
    """sum_i (d_i - A_i d_theta)^2 phi in the constant-connection trivialisation."""
    A = bundle.connection
    return (bphi.lap_x(x, theta)
            - 2.0 * (bphi.grad_x_dtheta(x, theta) @ A)
            + float(A @ A) * bphi.dtheta2(x, theta))


def horizontal_limit_operator_apply(bphi: BundleTestFunction, potential: Potential,
                                    alpha: float, moments: KernelMoments,
                                    bundle: CircleBundle, x: Array,
                                    theta: Array) -> Array:
    """Lifted-alpha limit with the horizontal Laplacian and horizontal drift."""
    A = bundle.connection
    pref = moments.c2 / (2.0 * moments.c0 ** (2.0 * alpha))
    u = potential.value(x)
    gu = potential.gradient(x)
    hgrad = bphi.grad_x(x, theta) - bphi.dtheta(x, theta)[..., None] * A
    drift = np.sum(gu * hgrad, axis=-1)
    return pref * np.exp((2.0 * alpha - 1.0) * u) * (
        horizontal_square_sum(bphi, bundle, x, theta)
        - 2.0 * (1.0 - alpha) * drift)


def horizontal_gibbs_limit_apply(bphi: BundleTestFunction, potential: Potential,
                                 moments: KernelMoments, bundle: CircleBundle,
                                 x: Array, theta: Array) -> Array:
    gu = potential.gradient(x)
    hgrad = bphi.grad_x(x, theta) - bphi.dtheta(x, theta)[..., None] * bundle.connection
    drift = np.sum(gu * hgrad, axis=-1)
    return 0.5 * moments.c2 * (
        horizontal_square_sum(bphi, bundle, x, theta) - drift)


# ---------------------------------------------------------------------------
# consistency reports


@dataclass
class ConsistencyReport:
    errors: Array
    sup_error: float
    median_error: float
    n_level: int
    h: float
    alpha: float
    scheme: str
    n_fibre: Optional[int] = None
    h_fibre: Optional[float] = None

    @classmethod
    def from_errors(cls, errors: Array, **kw) -> "ConsistencyReport":
        errors = np.asarray(errors, dtype=float)
        return cls(errors=errors, sup_error=float(errors.max(initial=0.0)),
                   median_error=float(np.median(errors)) if errors.size else 0.0,
                   **kw)


def _scheme_limit(scheme: WeightScheme, phi, potential, moments, graph_or_none,
                  x, theta=None, bundle=None):
    if scheme.variant == "gibbs_sqrt":
        return gibbs_limit_operator_apply(phi, potential, moments, x)
    if scheme.variant == "alpha_estimator":
        return limit_operator_apply(phi, potential, scheme.alpha, moments, x)
    if scheme.variant == "lifted":
        return horizontal_gibbs_limit_apply(phi, potential, moments, bundle, x, theta)
    return horizontal_limit_operator_apply(phi, potential, scheme.alpha, moments,
                                           bundle, x, theta)


def consistency_error(graph, phi, potential: Potential,
                      moments: Optional[KernelMoments] = None,
                      kernel: Optional[Kernel] = None,
                      product_kernel: Optional[ProductKernel] = None) -> ConsistencyReport:
    """Per-vertex |h^{-2} L phi - limit-operator phi| for a materialised graph."""
    applied = rw_generator_apply(graph, phi)
    if isinstance(graph, LiftedGraph):
        if moments is None:
            moments = product_kernel_moments(product_kernel, graph.cloud.torus.dim, 1)
        x = graph.lifted.base.points[graph.layout.base_index]
        limit = _scheme_limit(graph.scheme, phi, potential, moments, graph,
                              x, graph.layout.angles, graph.lifted.bundle)
        return ConsistencyReport.from_errors(
            np.abs(applied - limit), n_level=graph.level, h=graph.h,
            alpha=graph.scheme.alpha, scheme=graph.scheme.variant,
            n_fibre=graph.lifted.fibre_level, h_fibre=graph.h_fibre)
    if moments is None:
        moments = kernel_moments(kernel, graph.cloud.torus.dim)
    limit = _scheme_limit(graph.scheme, phi, potential, moments, graph,
                          graph.cloud.points)
    return ConsistencyReport.from_errors(
        np.abs(applied - limit), n_level=graph.level, h=graph.h,
        alpha=graph.scheme.alpha, scheme=graph.scheme.variant)


def consistency_profile(cloud: PointCloud, kernel: Kernel, scheme: WeightScheme,
                        h: float, phi: TestFunction, potential: Potential,
                        kbar: Optional[Array] = None) -> ConsistencyReport:
    """Streamed consistency report (no graph materialisation)."""
    moments = kernel_moments(kernel, cloud.torus.dim)
    vals = phi.value(cloud.points)
    applied, kbar = rw_apply_streamed(cloud, kernel, scheme, h, vals, potential,
                                      kbar=kbar)
    limit = _scheme_limit(scheme, phi, potential, moments, None, cloud.points)
    return ConsistencyReport.from_errors(
        np.abs(applied - limit), n_level=cloud.level, h=h,
        alpha=scheme.alpha, scheme=scheme.variant)


def lifted_consistency_profile(lifted: LiftedCloud, pk: ProductKernel,
                               scheme: WeightScheme, h: float, hp: float,
                               bphi: BundleTestFunction, potential: Potential,
                               layout=None, kbar: Optional[Array] = None,
                               source_stride: int = 1) -> ConsistencyReport:
    """Streamed lifted consistency report.

    With source_stride > 1 the generator is evaluated on the fibres over
    every stride-th base point only (the estimator stays exact over the
    full cloud); the error statistics then refer to that subsample.
    """
    if layout is None:
        layout = composite_layout(lifted)
    moments = product_kernel_moments(pk, lifted.base.torus.dim, 1)
    x = lifted.base.points[layout.base_index]
    vals = bphi.value(x, layout.angles)
    mask = None
    comp_sel = slice(None)
    if source_stride > 1:
        mask = np.zeros(lifted.base.count, dtype=bool)
        mask[::source_stride] = True
        comp_sel = mask[layout.base_index]
    applied, kbar = lifted_rw_apply_streamed(lifted, pk, scheme, h, hp, vals,
                                             potential, layout=layout,
                                             kbar=kbar, source_mask=mask)
    limit = _scheme_limit(scheme, bphi, potential, moments, None, x,
                          layout.angles, lifted.bundle)
    return ConsistencyReport.from_errors(
        np.abs(applied - limit)[comp_sel], n_level=lifted.base.level, h=h,
        alpha=scheme.alpha, scheme=scheme.variant,
        n_fibre=lifted.fibre_level, h_fibre=hp)


# ---------------------------------------------------------------------------
# integral-operator oracles (deterministic h -> 0 references)


def expected_density_spline(kernel: Kernel, potential: Potential, torus: Torus,
                            h: float, n_grid: int = 512):
    """Periodic spline of E kbar over a 1-d torus, for reuse inside oracles."""
    if torus.dim != 1:
        raise NotImplementedError("density spline is 1-d only")
    grid = np.linspace(0.0, torus.sides[0], n_grid + 1)
    vals = np.array([expected_density_oracle(kernel, potential, torus, h,
                                             np.array([g])) for g in grid[:-1]])
    vals = np.append(vals, vals[0])
    spl = interpolate.CubicSpline(grid, vals, bc_type="periodic")
    L = torus.sides[0]
    return lambda x: spl(np.mod(x, L))


def integral_operator_oracle(phi: TestFunction, potential: Potential, alpha: float,
                             kernel: Kernel, torus: Torus, h: float, x: Array,
                             weighted: bool = True,
                             density=None, angular_points: int = 256) -> float:
    """Quadrature of the kernel integral operator applied to phi at x.

    weighted=True: the alpha-normalised operator against d mu (expected-
    estimator denominators); weighted=False: the plain operator against dVol,
    whose limit is (C2/2) Lap phi.
    """
    if not 0 < h < torus.half_min_side:
        raise ValueError("need 0 < h < half the shortest side")
    x = np.asarray(x, dtype=float).reshape(torus.dim)
    phix = float(phi.value(x[None, :])[0])
    if not weighted:
        if torus.dim == 1:
            def f(r):
                r = np.atleast_1d(np.asarray(r, dtype=float))
                ys = np.stack([x[0] + h * r, x[0] - h * r], axis=-1)[..., None]
                out = kernel.profile(r) * (phi.value(ys) - phix).sum(axis=-1)
                return out if out.shape != (1,) else out[0]

            return h ** (-2.0) * _quad(f, 0.0, 1.0)
        if torus.dim == 2:
            theta = 2.0 * math.pi * np.arange(angular_points) / angular_points
            dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)

            def f(r):
                r = np.atleast_1d(np.asarray(r, dtype=float))
                ys = x[None, None, :] + h * r[:, None, None] * dirs[None, :, :]
                ang = (phi.value(ys) - phix).mean(axis=-1) * 2.0 * math.pi
                out = kernel.profile(r) * r * ang
                return out if out.shape != (1,) else out[0]

            return h ** (-2.0) * _quad(f, 0.0, 1.0)
        raise NotImplementedError("plain oracle implemented for m <= 2")
    if torus.dim != 1:
        raise NotImplementedError("weighted oracle implemented for m = 1")
    if density is None:
        density = expected_density_spline(kernel, potential, torus, h)
    dx = float(density(x[0])) ** alpha

    def f(r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        ys = np.stack([x[0] + h * r, x[0] - h * r], axis=-1)
        num = (phi.value(ys[..., None]) - phix) * np.exp(-potential.value(ys[..., None]))
        out = kernel.profile(r) * (num / density(ys) ** alpha).sum(axis=-1)
        return out if out.shape != (1,) else out[0]

    return h ** (-2.0) / dx * _quad(f, 0.0, 1.0)


def lifted_density_oracle(pk: ProductKernel, potential: Potential,
                          bundle: CircleBundle, h: float, hp: float,
                          x: Array) -> float:
    """Quadrature of E kbar~ on the bundle; equals C0~ e^{-U(x)} + O(h^2 + h'^2).

    Homogeneity of the fibre makes the value independent of the fibre angle.
    """
    torus = bundle.base
    if torus.dim != 1:
        raise NotImplementedError("lifted oracles implemented for base dim 1")
    if not 0 < hp < bundle.fibre_circumference / 2:
        raise ValueError("need 0 < h' < half the fibre circumference")
    x = np.asarray(x, dtype=float).reshape(1)

    def f(r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        ys = np.stack([x[0] + h * r, x[0] - h * r], axis=-1)
        base = np.exp(-potential.value(ys[..., None])).sum(axis=-1)

        def inner(rp):
            rp = np.atleast_1d(np.asarray(rp, dtype=float))
            out = 2.0 * pk.profile2(r[:, None], rp[None, :])
            return out

        # fibre substitution q = c + tau h' r' collapses to 2 int_0^1 k~ dr'
        grid = (np.arange(2048) + 0.5) / 2048
        fib = inner(grid).mean(axis=1)
        out = base * fib
        return out if out.shape != (1,) else out[0]

    return _quad(f, 0.0, 1.0)


def horizontal_integral_oracle(bphi: BundleTestFunction, potential: Potential,
                               alpha: float, pk: ProductKernel,
                               bundle: CircleBundle, h: float, hp: float,
                               x: Array, theta: float,
                               density=None, weighted: bool = True,
                               fibre_points: int = 512) -> float:
    """Quadrature of the lifted integral operator at (x, theta).

    Limit (C2~/2 C0~^{2a}) e^{(2a-1)U} Delta^H_{2(1-a)} phi with error
    O(h^2) + O(h^{-2} h'^2).
    """
    torus = bundle.base
    if torus.dim != 1:
        raise NotImplementedError("lifted oracles implemented for base dim 1")
    if not 0 < hp < bundle.fibre_circumference / 2:
        raise ValueError("need 0 < h' < half the fibre circumference")
    x = np.asarray(x, dtype=float).reshape(1)
    A = float(bundle.connection[0])
    phixu = float(bphi.value(x[None, :], np.array([theta]))[0])
    if weighted and density is None:
        dens_grid = np.linspace(0.0, torus.sides[0], 257)
        dens_vals = np.array([
            lifted_density_oracle(pk, potential, bundle, h, hp, np.array([g]))
            for g in dens_grid[:-1]])
        dens_vals = np.append(dens_vals, dens_vals[0])
        spl = interpolate.CubicSpline(dens_grid, dens_vals, bc_type="periodic")
        L = torus.sides[0]
        density = lambda z: spl(np.mod(z, L))
    dx = float(density(x[0])) ** alpha if weighted else 1.0
    # fixed midpoint grid in the fibre direction (smooth integrand)
    rp = (np.arange(fibre_points) + 0.5) / fibre_points

    def f(r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        total = np.zeros_like(r)
        for sgn in (1.0, -1.0):
            y = x[0] + sgn * h * r
            c = theta - A * sgn * h * r  # transported fibre angle
            w = np.exp(-potential.value(y[:, None]))
            if weighted:
                w = w / density(y) ** alpha
            for tau in (1.0, -1.0):
                q = c[:, None] + tau * hp * rp[None, :]
                vals = bphi.value(np.broadcast_to(y[:, None, None],
                                                  (r.size, fibre_points, 1)), q)
                kv = pk.profile2(r[:, None], rp[None, :])
                total += (kv * (vals - phixu)).mean(axis=1) * w
        return total if total.shape != (1,) else total[0]

    return h ** (-2.0) / dx * _quad(f, 0.0, 1.0)


def fit_loglog_slope(hs, errs) -> float:
    """Least-squares slope of log err against log h."""
    hs = np.asarray(hs, dtype=float)
    errs = np.asarray(errs, dtype=float)
    mask = errs > 0
    return float(np.polyfit(np.log(hs[mask]), np.log(errs[mask]), 1)[0])


def richardson_limit(oracle: Callable[[float], float], h: float) -> float:
    """h -> 0 limit from the two finest bandwidths, assuming an O(h^2)
    leading error: (4 f(h/2) - f(h)) / 3."""
    return (4.0 * oracle(h / 2.0) - oracle(h)) / 3.0


# ---------------------------------------------------------------------------
# concentration experiments


def sup_density_deviation(cloud: PointCloud, kernel: Kernel, h: float,
                          density) -> float:
    """sup over vertices of |kbar(x) - E kbar(x)| (E kbar via quadrature)."""
    kbar = density_field(cloud, kernel, h)
    expected = density(cloud.points[:, 0]) if cloud.torus.dim == 1 \
        else np.array([expected_density_oracle(kernel, cloud.potential,
                                               cloud.torus, h, p)
                       for p in cloud.points])
    return float(np.abs(kbar - expected).max())


def concentration_experiment(torus: Torus, potential: Potential, kernel: Kernel,
                             schedule, n_list, seeds, delta_quantile: float = 0.8):
    """Empirical exceedance frequencies of the sup deviation across levels.

    delta is pinned at the given quantile of the smallest-N deviations.
    Returns a dict with per-level deviations, h, delta and frequencies.
    """
    from .sampling import bandwidth, sample_ppp

    if len(seeds) < 2:
        raise ValueError("need several seeds per level")
    deviations = {}
    hs = {}
    for n in n_list:
        h = bandwidth(schedule, n, torus.dim)
        hs[n] = h
        density = expected_density_spline(kernel, potential, torus, h) \
            if torus.dim == 1 else None
        devs = []
        for seed in seeds:
            cloud = sample_ppp(torus, potential, n, seed)
            devs.append(sup_density_deviation(cloud, kernel, h, density))
        deviations[n] = np.asarray(devs)
    smallest = min(n_list)
    delta = float(np.quantile(deviations[smallest], delta_quantile))
    freqs = {n: float(np.mean(deviations[n] > delta)) for n in n_list}
    return {"deviations": deviations, "h": hs, "delta": delta,
            "frequencies": freqs}
