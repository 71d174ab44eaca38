"""Shared exception types with named diagnostics."""


class QuadratureError(RuntimeError):
    """Raised when adaptive quadrature and its composite fallback both fail."""


class RegimeViolation(ValueError):
    """A bandwidth schedule breaks one of the scaling conditions.

    The message names the violated inequality, e.g. ``N h^{m+2}/log N``.
    """


class CflViolation(ValueError):
    """Requested time step exceeds the spectral stability bound."""

    def __init__(self, dt, dt_max):
        self.dt = dt
        self.dt_max = dt_max
        super().__init__(
            f"time step {dt:g} violates stability bound; use dt <= {dt_max:g}"
        )


class EventBudgetError(RuntimeError):
    """Estimated kinetic Monte Carlo event count exceeds the run budget."""


class AmbiguousGeodesicError(ValueError):
    """Two points are exactly half a period apart along some axis, so the
    minimal geodesic (and hence parallel transport) is not unique."""
