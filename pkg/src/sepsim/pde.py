"""Pseudo-spectral reference solvers on the torus and the circle bundle.

Fourier modes are truncated at K per base axis (L on the fibre); grids carry
4K points per axis so the quadratic drift products stay alias-free after
truncation (3/2-rule headroom).  The Laplacian (and the horizontal symbol
sum_i (2 pi k_i/L_i - A_i 2 pi l/beta)^2) is applied exactly mode by mode;
drift products are formed in physical space.  Classical RK4 in time with the
step bounded by 0.5 / (C_eff * max symbol).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CflViolation
from .geometry import CircleBundle, Potential, Torus

Array = np.ndarray

_BAND_LIMIT_TOL = 1e-9


@dataclass
class FieldState:
    """Real field on a periodic grid, stored as rfftn coefficients."""

    spectrum: Array
    grid_shape: tuple
    lengths: tuple
    time: float
    domain: object  # Torus or CircleBundle

    def values(self) -> Array:
        return _irfft(self.spectrum, self.grid_shape)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def grid_axes(self):
        return [length * np.arange(n) / n
                for n, length in zip(self.grid_shape, self.lengths)]


def _irfft(spec, shape):
    return np.fft.irfftn(spec, s=shape, axes=tuple(range(len(shape))),
                         norm="forward")


def _mode_numbers(shape):
    """Signed integer wavenumbers per axis in rfftn layout."""
    axes = [np.fft.fftfreq(n) * n for n in shape[:-1]]
    axes.append(np.arange(shape[-1] // 2 + 1))
    return np.meshgrid(*axes, indexing="ij")


def _band_mask(shape, cutoffs):
    modes = _mode_numbers(shape)
    mask = np.ones(modes[0].shape, dtype=bool)
    for k, cut in zip(modes, cutoffs):
        mask &= np.abs(k) <= cut
    return mask


def _grid_points(shape, lengths):
    axes = [length * np.arange(n) / n for n, length in zip(shape, lengths)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return mesh


def _project(vals, shape, cutoffs):
    vals = np.asarray(vals, dtype=float)
    if vals.shape != tuple(shape):
        raise ValueError("initial profile evaluation has the wrong shape")
    spec = np.fft.rfftn(vals, norm="forward")
    mask = _band_mask(vals.shape, cutoffs)
    tail = np.abs(spec[~mask]).max(initial=0.0)
    scale = max(np.abs(spec).max(initial=0.0), 1.0)
    if tail > _BAND_LIMIT_TOL * scale:
        raise ValueError(
            f"initial profile is not band-limited to the mode cutoffs "
            f"(tail amplitude {tail:g})")
    spec[~mask] = 0.0
    return spec


def _rk4_march(spec, t_grid, dt_max, rhs, dt=None):
    """March through t_grid with classical RK4, subdividing each interval."""
    if dt is not None and dt > dt_max:
        raise CflViolation(dt, dt_max)
    out = [spec.copy()]
    cur = spec.copy()
    for t0, t1 in zip(t_grid[:-1], t_grid[1:]):
        span = float(t1 - t0)
        if span < 0:
            raise ValueError("t_grid must be nondecreasing")
        if span == 0:
            out.append(cur.copy())
            continue
        steps = max(1, int(math.ceil(span / (dt if dt is not None else dt_max))))
        step = span / steps
        for _ in range(steps):
            k1 = rhs(cur)
            k2 = rhs(cur + 0.5 * step * k1)
            k3 = rhs(cur + 0.5 * step * k2)
            k4 = rhs(cur + step * k3)
            cur = cur + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out.append(cur.copy())
    return out


def _validate_t_grid(t_grid):
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.shape[0] < 1:
        raise ValueError("t_grid must be a nonempty 1-d array")
    if abs(t_grid[0]) > 0:
        raise ValueError("t_grid must start at 0")
    return t_grid


def solve_weighted_heat(rho0, potential: Potential, torus: Torus, C: float,
                        t_grid, modes: int = 64, drift_coefficient: float = 1.0,
                        prefactor_exponent: float = 0.0,
                        dt: Optional[float] = None) -> list:
    """d_t rho = C e^{p U} (Lap rho - a grad U . grad rho).

    a = drift_coefficient and p = prefactor_exponent select the family
    member; (a, p) = (2(1 - alpha), 2 alpha - 1) matches the alpha-weight
    scheme, and (1, 0) is the plain drift-diffusion form.  rho0 is a
    callable on stacked points of shape (..., m).
    """
    t_grid = _validate_t_grid(t_grid)
    shape = tuple(4 * modes for _ in range(torus.dim))
    lengths = tuple(torus.sides)
    cutoffs = [modes] * torus.dim
    mesh = _grid_points(shape, lengths)
    pts = np.stack(mesh, axis=-1)

    kmodes = _mode_numbers(shape)
    # physical wavenumbers
    wav = [2.0 * np.pi * k / s for k, s in zip(kmodes, torus.sides)]
    lap_symbol = -sum(w ** 2 for w in wav)

    grad_u = potential.gradient(pts)
    pref = np.exp(prefactor_exponent * potential.value(pts))
    a = drift_coefficient

    spec0 = _project(rho0(pts), shape, cutoffs)
    mask = _band_mask(shape, cutoffs)

    def rhs(spec):
        lap_phys = _irfft(lap_symbol * spec, shape)
        if a != 0.0:
            drift = np.zeros(shape)
            for j, w in enumerate(wav):
                dj = _irfft(1j * w * spec, shape)
                drift += grad_u[..., j] * dj
            phys = pref * (lap_phys - a * drift)
        else:
            phys = pref * lap_phys
        out = np.fft.rfftn(phys, norm="forward") * C
        out[~mask] = 0.0
        return out

    sym_max = float(np.abs(lap_symbol[mask]).max())
    dt_max = 0.5 / (C * float(pref.max()) * sym_max) if sym_max > 0 else np.inf
    specs = _rk4_march(spec0, t_grid, dt_max, rhs, dt)
    return [FieldState(s, shape, lengths, float(t), torus)
            for s, t in zip(specs, t_grid)]


def solve_fokker_planck(rho0, potential: Potential, torus: Torus, C: float,
                        t_grid, modes: int = 64,
                        dt: Optional[float] = None) -> list:
    """d_t rho = C div(grad rho + rho grad U); conserves the plain mass."""
    t_grid = _validate_t_grid(t_grid)
    shape = tuple(4 * modes for _ in range(torus.dim))
    lengths = tuple(torus.sides)
    cutoffs = [modes] * torus.dim
    mesh = _grid_points(shape, lengths)
    pts = np.stack(mesh, axis=-1)

    kmodes = _mode_numbers(shape)
    wav = [2.0 * np.pi * k / s for k, s in zip(kmodes, torus.sides)]
    lap_symbol = -sum(w ** 2 for w in wav)
    grad_u = potential.gradient(pts)

    spec0 = _project(rho0(pts), shape, cutoffs)
    mask = _band_mask(shape, cutoffs)

    def rhs(spec):
        phys = _irfft(spec, shape)
        out = lap_symbol * spec
        for j, w in enumerate(wav):
            flux = np.fft.rfftn(phys * grad_u[..., j], norm="forward")
            out = out + 1j * w * flux
        out = out * C
        out[~mask] = 0.0
        return out

    sym_max = float(np.abs(lap_symbol[mask]).max())
    dt_max = 0.5 / (C * sym_max) if sym_max > 0 else np.inf
    specs = _rk4_march(spec0, t_grid, dt_max, rhs, dt)
    return [FieldState(s, shape, lengths, float(t), torus)
            for s, t in zip(specs, t_grid)]


def solve_horizontal_heat(rho0, potential: Potential, bundle: CircleBundle,
                          C: float, t_grid, modes=(64, 32),
                          drift_coefficient: float = 1.0,
                          prefactor_exponent: float = 0.0,
                          dt: Optional[float] = None) -> list:
    """d_t rho = C e^{p U} (Lap^H rho - a sum_i d_i U (d_i - A_i d_theta) rho).

    The base potential enters through its lift U o pi, whose horizontal
    derivative has no fibre component; mode (k, l) sees the exact symbol
    -sum_i (2 pi k_i/L_i - A_i 2 pi l/beta)^2.  rho0 is a callable
    rho0(base_points, theta) with base_points of shape (..., m).
    """
    torus = bundle.base
    t_grid = _validate_t_grid(t_grid)
    kcut, lcut = modes
    shape = tuple([4 * kcut] * torus.dim + [4 * lcut])
    lengths = tuple(list(torus.sides) + [bundle.fibre_circumference])
    cutoffs = [kcut] * torus.dim + [lcut]
    mesh = _grid_points(shape, lengths)
    base_pts = np.stack(mesh[:-1], axis=-1)

    kmodes = _mode_numbers(shape)
    wav = [2.0 * np.pi * k / lng for k, lng in zip(kmodes, lengths)]
    A = bundle.connection
    horiz = [wav[i] - A[i] * wav[-1] for i in range(torus.dim)]
    h_symbol = -sum(w ** 2 for w in horiz)

    grad_u = potential.gradient(base_pts)
    pref = np.exp(prefactor_exponent * potential.value(base_pts))
    a = drift_coefficient

    spec0 = _project(rho0(base_pts, mesh[-1]), shape, cutoffs)
    mask = _band_mask(shape, cutoffs)

    def rhs(spec):
        lap_phys = _irfft(h_symbol * spec, shape)
        if a != 0.0:
            drift = np.zeros(shape)
            for i in range(torus.dim):
                di = _irfft(1j * horiz[i] * spec, shape)
                drift += grad_u[..., i] * di
            phys = pref * (lap_phys - a * drift)
        else:
            phys = pref * lap_phys
        out = np.fft.rfftn(phys, norm="forward") * C
        out[~mask] = 0.0
        return out

    sym_max = float(np.abs(h_symbol[mask]).max())
    dt_max = 0.5 / (C * float(pref.max()) * sym_max) if sym_max > 0 else np.inf
    specs = _rk4_march(spec0, t_grid, dt_max, rhs, dt)
    return [FieldState(s, shape, lengths, float(t), bundle)
            for s, t in zip(specs, t_grid)]


def pde_pairing(field: FieldState, phi, measure: str = "gibbs",
                potential: Optional[Potential] = None) -> float:
    """int phi rho_t e^{-U} dVol (measure='gibbs') or against dVol.

    phi may be a TestFunction, a BundleTestFunction, or a grid array.
    """
    mesh = _grid_points(field.grid_shape, field.lengths)
    if isinstance(phi, np.ndarray):
        phi_vals = phi
    elif hasattr(phi, "grad_x"):  # bundle test function
        pts = np.stack(mesh[:-1], axis=-1)
        phi_vals = phi.value(pts, mesh[-1])
    else:
        pts = np.stack(mesh, axis=-1)
        phi_vals = phi.value(pts)
    integrand = field.values() * phi_vals
    if measure == "gibbs":
        if potential is None:
            raise ValueError("gibbs pairing needs the potential")
        if isinstance(field.domain, CircleBundle):
            pts = np.stack(mesh[:-1], axis=-1)
        else:
            pts = np.stack(mesh, axis=-1)
        integrand = integrand * np.exp(-potential.value(pts))
    elif measure != "volume":
        raise KeyError("measure must be 'gibbs' or 'volume'")
    return float(integrand.mean() * field.volume)
