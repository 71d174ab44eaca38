"""Kernel profiles, their moments, and the kernel density estimator.

Moments follow the radial formulas

    C0 = S_{m-1} int_0^1 k(r) r^{m-1} dr,
    C2 = (S_{m-1}/m) int_0^1 k(r) r^{m+1} dr,

with S_{m-1} the surface of the unit (m-1)-sphere; odd moments vanish by
symmetry and are reported as computed residuals.  Product kernels on a
bundle use the double-integral analogues with the fibre dimension m'.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import QuadratureError
from .geometry import Potential, Torus

Array = np.ndarray

QUAD_TOL = 1e-10
_COMPOSITE_POINTS = 1_000_000


@dataclass
class Kernel:
    """Bounded nonnegative radial profile supported on [0, 1]."""

    name: str
    profile: Callable[[Array], Array]
    sup_bound: float
    smooth: bool = True
    # id understood by the numba kernels in _accel; -1 means python-only
    numba_id: int = -1

    def __call__(self, r):
        return self.profile(np.asarray(r, dtype=float))


def _indicator(r):
    return np.where(r <= 1.0, 1.0, 0.0)


def _epanechnikov(r):
    return np.maximum(1.0 - r * r, 0.0)


def _bump(r):
    r = np.asarray(r, dtype=float)
    scalar = r.ndim == 0
    r = np.atleast_1d(r)
    out = np.zeros_like(r)
    inside = r < 1.0
    # exp(-1/(1-r^2)) with the singular exponent only evaluated inside
    t = r[inside]
    out[inside] = np.exp(-1.0 / (1.0 - t * t))
    return out[0] if scalar else out


_KERNELS = {
    "indicator": lambda: Kernel("indicator", _indicator, 1.0, smooth=False, numba_id=0),
    "epanechnikov": lambda: Kernel("epanechnikov", _epanechnikov, 1.0, numba_id=1),
    "bump": lambda: Kernel("bump", _bump, math.exp(-1.0), numba_id=2),
}


def make_kernel(name: str) -> Kernel:
    try:
        return _KERNELS[name]()
    except KeyError:
        raise KeyError(f"unknown kernel {name!r}; registry: {sorted(_KERNELS)}")


@dataclass
class ProductKernel:
    """Bounded nonnegative profile on [0,1]^2 for lifted graphs.

    ``base`` and ``fibre`` are set when the profile is separable,
    k~(r, r') = base(r) * fibre(r'); the fast lifted sweeps additionally
    require the fibre factor to be the indicator.
    """

    name: str
    profile2: Callable[[Array, Array], Array]
    sup_bound: float
    base: Optional[Kernel] = None
    fibre: Optional[Kernel] = None

    def __call__(self, r, rp):
        return self.profile2(np.asarray(r, dtype=float), np.asarray(rp, dtype=float))

    @property
    def separable_indicator_fibre(self) -> bool:
        return self.base is not None and self.fibre is not None and self.fibre.name == "indicator"


def make_product_kernel(name: str) -> ProductKernel:
    """Separable products of registry kernels, named '<base>_x_<fibre>'."""
    if name == "indicator_product":
        name = "indicator_x_indicator"
    try:
        base_name, fibre_name = name.split("_x_")
    except ValueError:
        raise KeyError(
            f"unknown product kernel {name!r}; use '<base>_x_<fibre>' with registry kernels"
        )
    kb, kf = make_kernel(base_name), make_kernel(fibre_name)

    def profile2(r, rp):
        return kb.profile(r) * kf.profile(rp)

    return ProductKernel(name, profile2, kb.sup_bound * kf.sup_bound, base=kb, fibre=kf)


@dataclass
class KernelMoments:
    c0: float
    c2: float
    dim: int
    fibre_dim: int = 0


def sphere_surface(m: int) -> float:
    """Surface of the unit (m-1)-sphere in R^m."""
    return 2.0 * math.pi ** (m / 2.0) / math.gamma(m / 2.0)


def _quad(f, a: float, b: float, tol: float = QUAD_TOL) -> float:
    """Adaptive quadrature with a composite-midpoint fallback.

    The fallback handles profiles whose interior discontinuities defeat
    adaptivity; registry kernels never need it on [0, 1].
    """
    val, err, info, *rest = integrate.quad(f, a, b, epsabs=tol * 1e-2,
                                           limit=400, full_output=True)
    if not rest and err <= tol and np.isfinite(val):
        return val
    grid = a + (b - a) * (np.arange(_COMPOSITE_POINTS) + 0.5) / _COMPOSITE_POINTS
    vals = np.asarray(f(grid), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise QuadratureError(f"quadrature failed on [{a}, {b}]: non-finite integrand")
    return float(vals.mean() * (b - a))


def kernel_moments(kernel: Kernel, m: int, tol: float = QUAD_TOL) -> KernelMoments:
    """C0 and C2 of a radial kernel in dimension m."""
    if m < 1:
        raise ValueError("dimension must be >= 1")
    s = sphere_surface(m)
    c0 = s * _quad(lambda r: kernel.profile(r) * r ** (m - 1), 0.0, 1.0, tol)
    c2 = (s / m) * _quad(lambda r: kernel.profile(r) * r ** (m + 1), 0.0, 1.0, tol)
    return KernelMoments(c0=c0, c2=c2, dim=m)


def odd_moment(kernel: Kernel, m: int, order: int = 1) -> float:
    """Computed odd moment int k(|v|) (v^1)^order dv; zero by symmetry.

    Returned as a quadrature residual so the vanishing is checked, not assumed.
    """
    if order % 2 != 1:
        raise ValueError("order must be odd")
    if m == 1:
        return _quad(lambda v: kernel.profile(np.abs(v)) * v ** order, -1.0, 1.0)
    # radial and angular factors both evaluated numerically
    radial = _quad(lambda r: kernel.profile(r) * r ** (m - 1 + order), 0.0, 1.0)
    if m == 2:
        angular = _quad(lambda t: np.cos(t) ** order, 0.0, 2.0 * math.pi)
    else:
        # first-coordinate direction integral over the (m-1)-sphere
        angular = sphere_surface(m - 1) * _quad(
            lambda t: np.cos(t) ** order * np.sin(t) ** (m - 2), 0.0, math.pi
        )
    return radial * angular


def product_kernel_moments(
    pk: ProductKernel, m: int, m_fibre: int, tol: float = QUAD_TOL
) -> KernelMoments:
    """C0 and C2 of a product kernel; C2 weights the base coordinate."""
    if m < 1 or m_fibre < 1:
        raise ValueError("dimensions must be >= 1")
    s, sp = sphere_surface(m), sphere_surface(m_fibre)
    if pk.base is not None and pk.fibre is not None:
        # separable: both moments factorise (Fubini)
        b0 = _quad(lambda r: pk.base.profile(r) * r ** (m - 1), 0.0, 1.0, tol)
        b2 = _quad(lambda r: pk.base.profile(r) * r ** (m + 1), 0.0, 1.0, tol)
        f0 = _quad(lambda r: pk.fibre.profile(r) * r ** (m_fibre - 1), 0.0, 1.0, tol)
        c0 = s * sp * b0 * f0
        c2 = (s / m) * sp * b2 * f0
    else:
        def outer0(r):
            return _quad(lambda rp: pk.profile2(r, rp) * rp ** (m_fibre - 1), 0.0, 1.0, tol) * r ** (m - 1)

        def outer2(r):
            return _quad(lambda rp: pk.profile2(r, rp) * rp ** (m_fibre - 1), 0.0, 1.0, tol) * r ** (m + 1)

        c0 = s * sp * _quad(np.vectorize(outer0), 0.0, 1.0, tol)
        c2 = (s / m) * sp * _quad(np.vectorize(outer2), 0.0, 1.0, tol)
    return KernelMoments(c0=c0, c2=c2, dim=m, fibre_dim=m_fibre)


def product_odd_moment(pk: ProductKernel, m: int, m_fibre: int) -> float:
    """Mixed first moment over the fibre coordinate; zero by symmetry."""
    if m_fibre == 1:
        def f(rp):
            return pk.profile2(np.zeros_like(rp), np.abs(rp)) * rp

        return _quad(f, -1.0, 1.0)
    radial = _quad(lambda rp: pk.profile2(0.0, rp) * rp ** m_fibre, 0.0, 1.0)
    angular = _quad(lambda t: np.cos(t), 0.0, 2.0 * math.pi)
    return radial * angular


def density_estimate(cloud, kernel: Kernel, h: float, x: Array) -> Array:
    """Kernel density estimate kbar(x) = (1/N) sum_j h^{-m} k(d(x, X^j)/h).

    The self term is included when x coincides with a cloud point (the sum
    runs over all points with no exclusion).  ``cloud.level`` provides the
    1/N normalisation; vectorised over rows of x.
    """
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    pts = cloud.points
    if pts.shape[0] == 0:
        raise ValueError("cloud is empty")
    torus: Torus = cloud.torus
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    m = torus.dim
    out = np.zeros(x.shape[0])
    # chunked over cloud points to bound the broadcast temporaries
    chunk = max(1, int(4e6) // max(1, x.shape[0]))
    for start in range(0, pts.shape[0], chunk):
        block = pts[start:start + chunk]
        d = torus.distance(x[:, None, :], block[None, :, :])
        out += kernel.profile(d / h).sum(axis=1)
    out *= h ** (-m) / cloud.level
    return out[0] if single else out


def expected_density_oracle(
    kernel: Kernel, potential: Potential, torus: Torus, h: float, x: Array,
    tol: float = QUAD_TOL, angular_points: int = 256,
) -> float:
    """Quadrature of int h^{-m} k(d(x,y)/h) e^{-U(y)} dVol(y).

    Radial reduction keeps the kernel support exact: for m = 1 it is
    int_0^1 k(r) [e^{-U(x+hr)} + e^{-U(x-hr)}] dr, and for m = 2 the angular
    integral is done by a periodic trapezoid rule.  Equals
    C0 e^{-U(x)} + O(h^2).
    """
    if not 0 < h < torus.half_min_side:
        raise ValueError("need 0 < h < half the shortest side")
    x = np.asarray(x, dtype=float).reshape(torus.dim)
    if torus.dim == 1:
        def f(r):
            r = np.atleast_1d(np.asarray(r, dtype=float))
            ys = np.stack([x[0] + h * r, x[0] - h * r], axis=-1)[..., None]
            out = kernel.profile(r) * np.exp(-potential.value(ys)).sum(axis=-1)
            return out if out.shape != (1,) else out[0]

        return _quad(f, 0.0, 1.0, tol)
    if torus.dim == 2:
        theta = 2.0 * math.pi * np.arange(angular_points) / angular_points
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)

        def f(r):
            r = np.atleast_1d(np.asarray(r, dtype=float))
            ys = x[None, None, :] + h * r[:, None, None] * dirs[None, :, :]
            ang = np.exp(-potential.value(ys)).mean(axis=-1) * 2.0 * math.pi
            out = kernel.profile(r) * r * ang
            return out if out.shape != (1,) else out[0]

        return _quad(f, 0.0, 1.0, tol)
    raise NotImplementedError("density oracle implemented for m <= 2")
