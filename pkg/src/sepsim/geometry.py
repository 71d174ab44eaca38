"""Flat tori with Gibbs potentials, and trivial circle bundles over them.

All geometry here is exact: geodesics on a flat torus are straight lines in
the covering space, distances minimise over period shifts, and parallel
transport on the trivial circle bundle with constant connection A is the
fibre shift by -A . delta along the minimal base displacement delta.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import AmbiguousGeodesicError

Array = np.ndarray


@dataclass
class Torus:
    """Flat torus R^m / (L_1 Z x ... x L_m Z) with the product metric."""

    dim: int
    sides: Optional[Array] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"torus dimension must be >= 1, got {self.dim}")
        if self.sides is None:
            self.sides = np.ones(self.dim)
        else:
            self.sides = np.asarray(self.sides, dtype=float)
        if self.sides.shape != (self.dim,):
            raise ValueError("need one side length per axis")
        if np.any(self.sides <= 0):
            raise ValueError("side lengths must be positive")

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))

    @property
    def half_min_side(self) -> float:
        return float(self.sides.min() / 2.0)

    @property
    def diameter(self) -> float:
        # half the diagonal of the side-length box
        return float(np.linalg.norm(self.sides / 2.0))

    def wrap(self, x: Array) -> Array:
        """Map coordinates into the fundamental domain [0, L_i).

        np.mod of a tiny negative value can round up to the period itself;
        fold that edge back to 0.
        """
        w = np.mod(x, self.sides)
        return np.where(w == self.sides, 0.0, w)

    def displacement(self, a: Array, b: Array) -> Array:
        """Minimal representative of b - a, componentwise in [-L_i/2, L_i/2)."""
        d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
        return d - self.sides * np.round(d / self.sides)

    def distance(self, a: Array, b: Array) -> Array:
        """Geodesic distance, broadcasting over leading axes."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.shape[-1] != self.dim or b.shape[-1] != self.dim:
            raise ValueError(
                f"point dimension mismatch: torus dim {self.dim}, "
                f"got shapes {a.shape} and {b.shape}"
            )
        return np.sqrt(np.sum(self.displacement(a, b) ** 2, axis=-1))


@dataclass
class Potential:
    """Smooth periodic potential with its exact gradient.

    ``value`` maps (..., m) arrays to (...,); ``gradient`` maps (..., m) to
    (..., m).  ``min_value`` is the exact minimum of U over the torus, used
    by the thinning sampler for the envelope sup e^{-U} = e^{-min U}.
    """

    name: str
    value: Callable[[Array], Array]
    gradient: Callable[[Array], Array]
    min_value: float = 0.0


def _zero_potential(dim: int) -> Potential:
    def value(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    def gradient(x):
        x = np.asarray(x, dtype=float)
        return np.zeros_like(x)

    return Potential("zero", value, gradient, min_value=0.0)


def _cosine_potential(dim: int, sides: Array, beta: float, axis: int = 0) -> Potential:
    w = 2.0 * np.pi / sides[axis]

    def value(x):
        x = np.asarray(x, dtype=float)
        return beta * np.cos(w * x[..., axis])

    def gradient(x):
        x = np.asarray(x, dtype=float)
        g = np.zeros_like(x)
        g[..., axis] = -beta * w * np.sin(w * x[..., axis])
        return g

    return Potential(f"cosine(beta={beta})", value, gradient, min_value=-abs(beta))


def _two_mode_potential(
    dim: int, sides: Array, beta1: float, beta2: float, axis: int = 0
) -> Potential:
    w = 2.0 * np.pi / sides[axis]

    def value(x):
        x = np.asarray(x, dtype=float)
        t = x[..., axis]
        return beta1 * np.cos(w * t) + beta2 * np.sin(2.0 * w * t)

    def gradient(x):
        x = np.asarray(x, dtype=float)
        t = x[..., axis]
        g = np.zeros_like(x)
        g[..., axis] = -beta1 * w * np.sin(w * t) + 2.0 * beta2 * w * np.cos(2.0 * w * t)
        return g

    # exact minimum of a two-mode profile is not closed form; scan one period
    grid = np.linspace(0.0, sides[axis], 65536, endpoint=False)
    vals = beta1 * np.cos(w * grid) + beta2 * np.sin(2.0 * w * grid)
    # a conservative pad keeps the thinning envelope valid between grid nodes
    pad = (abs(beta1) + 4.0 * abs(beta2)) * (w * sides[axis] / 65536) ** 2
    return Potential(
        f"two_mode(beta1={beta1},beta2={beta2})",
        value,
        gradient,
        min_value=float(vals.min() - pad),
    )


def make_potential(name: str, torus: Torus, **params) -> Potential:
    """Registry of paired (value, gradient) closures."""
    if name == "zero":
        return _zero_potential(torus.dim)
    if name == "cosine":
        return _cosine_potential(
            torus.dim, torus.sides, beta=params.get("beta", 0.5),
            axis=params.get("axis", 0),
        )
    if name == "two_mode":
        return _two_mode_potential(
            torus.dim, torus.sides,
            beta1=params.get("beta1", 0.5), beta2=params.get("beta2", 0.25),
            axis=params.get("axis", 0),
        )
    raise KeyError(f"unknown potential {name!r}; registry: zero, cosine, two_mode")


@dataclass
class CircleBundle:
    """Trivial circle bundle Torus x S^1 with constant connection coefficients.

    The fibre carries the standard circle metric of the given circumference.
    Parallel transport of a fibre angle u from x to y along the minimal base
    geodesic is u - A . delta(x, y), which makes the transported fibre
    distance symmetric under swapping (x, u) <-> (y, q).
    """

    base: Torus
    fibre_circumference: float = 2.0 * np.pi
    connection: Optional[Array] = None

    def __post_init__(self):
        if self.fibre_circumference <= 0:
            raise ValueError("fibre circumference must be positive")
        if self.connection is None:
            self.connection = np.zeros(self.base.dim)
        else:
            self.connection = np.asarray(self.connection, dtype=float)
        if self.connection.shape != (self.base.dim,):
            raise ValueError("need one connection coefficient per base axis")

    def wrap_angle(self, u: Array) -> Array:
        w = np.mod(u, self.fibre_circumference)
        return np.where(w == self.fibre_circumference, 0.0, w)

    def fibre_distance(self, u: Array, q: Array) -> Array:
        """Circle distance between fibre angles."""
        beta = self.fibre_circumference
        d = np.mod(np.asarray(u, dtype=float) - np.asarray(q, dtype=float), beta)
        return np.minimum(d, beta - d)

    def transport(self, x: Array, y: Array, u: Array) -> Array:
        """Parallel transport of fibre angle u from x to y."""
        delta = self.base.displacement(x, y)
        return self.wrap_angle(u - delta @ self.connection)


def geodesic_distance(torus: Torus, a: Array, b: Array) -> Array:
    """Minimum over period shifts of the Euclidean distance."""
    return torus.distance(a, b)


def potential_and_gradient(potential: Potential, x: Array):
    """Evaluate (U(x), grad U(x)) from the registered exact forms."""
    return potential.value(x), potential.gradient(x)


def fibre_distance_after_transport(
    bundle: CircleBundle, x: Array, u: float, y: Array, q: float
):
    """Circle distance between the transport of u from x to y, and q.

    Requires a unique minimal base geodesic; raises AmbiguousGeodesicError
    when x and y sit exactly half a period apart along some axis.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    raw = np.mod(np.abs(y - x), bundle.base.sides)
    ties = np.isclose(raw, bundle.base.sides / 2.0, rtol=0.0, atol=0.0)
    if np.any(ties):
        axes = np.nonzero(np.atleast_1d(ties))[0]
        raise AmbiguousGeodesicError(
            f"points are exactly half a period apart along axis {axes.tolist()}; "
            "parallel transport is not unique"
        )
    return bundle.fibre_distance(bundle.transport(x, y, u), q)


def finite_difference_gradient(f: Callable[[Array], Array], x: Array, step: float) -> Array:
    """Central finite differences, used by tests against registered gradients."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.shape[-1]):
        e = np.zeros_like(x)
        e[..., i] = step
        g[..., i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return g
