"""Scale bookkeeping, particle state and the closed-form mean-field growth law.

All radii are rescaled radii (order one); volumes and surfaces are plain sums
of cubes and squares of radii with the geometric constants dropped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import DomainError, RegimeError, SystemExtinct
from .validation import check_nonnegative, check_radii

DEFAULT_EPSILON = 0.01


def derive_gamma(delta, alpha, epsilon=DEFAULT_EPSILON):
    """Exponent ``gamma`` with ``delta**gamma`` the largest of the three defect scales.

    For ``0 < delta < 1`` the largest of ``delta**alpha``, ``delta**(2*alpha-3)``
    and ``delta**(2*alpha-3-epsilon)`` is the one with the smallest exponent.

    Raises
    ------
    RegimeError
        If ``alpha <= 3/2 + epsilon``; the critical case is not covered.
    """
    delta, alpha, epsilon = float(delta), float(alpha), float(epsilon)
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    if epsilon <= 0.0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    if alpha <= 1.5 + epsilon:
        raise RegimeError(f"alpha must exceed 3/2 + epsilon = {1.5 + epsilon}, got {alpha}")
    return _gamma(alpha, epsilon)


def _gamma(alpha, epsilon):
    return min(alpha, 2.0 * alpha - 3.0, 2.0 * alpha - 3.0 - epsilon)


@dataclass(frozen=True)
class ScaleParameters:
    """Small-parameter bookkeeping: lattice spacing ``delta`` and size exponent ``alpha``.

    ``delta = 0`` represents the homogenized limit (``delta_alpha == 0``).
    ``diagnostics_only`` lifts the ``alpha > 3/2 + epsilon`` gate so that
    regime-boundary experiments can be run; ``gamma`` is then reported from the
    same formula even if it is not positive.
    """

    delta: float
    alpha: float
    epsilon: float = DEFAULT_EPSILON
    diagnostics_only: bool = False

    def __post_init__(self):
        if not 0.0 <= self.delta < 1.0:
            raise DomainError(f"delta must lie in [0, 1), got {self.delta}")
        if self.epsilon <= 0.0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        if not self.diagnostics_only and self.alpha <= 1.5 + self.epsilon:
            raise RegimeError(
                f"alpha must exceed 3/2 + epsilon = {1.5 + self.epsilon}, got {self.alpha}"
            )

    @property
    def gamma(self):
        return _gamma(self.alpha, self.epsilon)

    @property
    def delta_alpha(self):
        """Physical particle size scale ``delta**alpha``."""
        return self.delta**self.alpha

    @property
    def delta_gamma(self):
        return self.delta**self.gamma

    @classmethod
    def limit(cls, alpha=2.0, epsilon=DEFAULT_EPSILON):
        """The ``delta -> 0`` limit, where the growth law is ``u_bar - 1/R``."""
        return cls(0.0, alpha, epsilon)

    def capacity_density(self, n_initial):
        return n_initial * self.delta**self.alpha

    def surface_area_density(self, n_initial):
        return n_initial * self.delta ** (2.0 * self.alpha)


@dataclass(frozen=True)
class MeanFieldState:
    u_bar: float
    weighted_first_moment: float
    weighted_second_moment: float


@dataclass(frozen=True)
class Diagnostics:
    total_volume: float
    total_surface: float
    dissipation: float
    active_fraction: float


@dataclass
class ParticleSystem:
    """State of the N-particle system.

    ``radii[i] == 0`` exactly when particle ``i`` is extinct. ``centers`` may be
    ``None`` for purely radial computations.
    """

    scale: ScaleParameters
    radii: np.ndarray
    centers: np.ndarray | None = None
    active: np.ndarray | None = None
    extinction_times: np.ndarray | None = None
    initial_count: int | None = None

    def __post_init__(self):
        self.radii = check_radii(self.radii)
        n = self.radii.size
        if self.centers is not None:
            self.centers = np.asarray(self.centers, dtype=float).reshape(n, 3)
        if self.active is None:
            self.active = self.radii > 0
        else:
            self.active = np.asarray(self.active, dtype=bool)
            if np.any(self.active != (self.radii > 0)):
                raise DomainError("active flags must coincide with positive radii")
        if self.extinction_times is None:
            self.extinction_times = np.full(n, np.nan)
        else:
            self.extinction_times = np.asarray(self.extinction_times, dtype=float)
        if self.initial_count is None:
            self.initial_count = n

    @property
    def n_active(self):
        return int(np.count_nonzero(self.active))

    @property
    def active_radii(self):
        return self.radii[self.active]

    def copy(self):
        return replace(
            self,
            radii=self.radii.copy(),
            centers=self.centers,
            active=self.active.copy(),
            extinction_times=self.extinction_times.copy(),
        )

    def check_invariants(self, r0_bound=None, min_separation=None):
        """Raise ``DomainError`` if the configured bounds are violated."""
        if r0_bound is not None and np.any(self.radii > r0_bound):
            raise DomainError(f"initial radii exceed the bound R_0 = {r0_bound}")
        if min_separation is not None and self.centers is not None and len(self.centers) > 1:
            from scipy.spatial import cKDTree

            dist, _ = cKDTree(self.centers).query(self.centers, k=2)
            if dist[:, 1].min() < min_separation:
                raise DomainError(
                    f"centers closer than {min_separation}: {dist[:, 1].min():.3g}"
                )


def mean_field(radii, delta_alpha):
    """Volume-conserving mean field over the active (positive) radii.

    Extinct particles enter both weighted sums with zero weight.

    Raises
    ------
    SystemExtinct
        If every radius is zero.
    """
    radii = check_radii(radii)
    delta_alpha = check_nonnegative(delta_alpha, "delta_alpha")
    weights = 1.0 / (1.0 + delta_alpha * radii)
    first = float(np.sum(radii * weights))
    second = float(np.sum(radii * radii * weights))
    if second <= 0.0:
        raise SystemExtinct("system extinct: no active particles, mean field undefined")
    return MeanFieldState(first / second, first, second)


def _mean_field_fast(radii, delta_alpha):
    # hot-path variant without validation; radii are the active radii only
    w = radii / (1.0 + delta_alpha * radii)
    return np.sum(w) / np.dot(w, radii)


def growth_rate(radius, u_bar, delta_alpha):
    """Single-particle growth law ``(u_bar - 1/R) / (1 + delta_alpha R)``."""
    radius = float(radius)
    if not radius > 0.0:
        raise DomainError(f"growth rate queried at non-positive radius {radius}")
    return (u_bar - 1.0 / radius) / (1.0 + delta_alpha * radius)


def growth_rates(radii, u_bar, delta_alpha):
    """Vectorized growth law; every entry of ``radii`` must be positive."""
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0.0):
        raise DomainError("growth rate queried at non-positive radius")
    return (u_bar - 1.0 / radii) / (1.0 + delta_alpha * radii)


def diagnostics(system):
    """Volume, surface, surface-dissipation rate and active fraction of ``system``."""
    r = system.active_radii
    if r.size == 0:
        raise SystemExtinct("system extinct: diagnostics need an active particle")
    da = system.scale.delta_alpha
    ubar = mean_field(r, da).u_bar
    rdot = growth_rates(r, ubar, da)
    return Diagnostics(
        total_volume=float(np.sum(r**3)),
        total_surface=float(np.sum(r**2)),
        dissipation=float(np.sum(r * rdot + (r * rdot) ** 2)),
        active_fraction=r.size / system.initial_count,
    )


def growth_law_defect(radii, delta_alpha):
    """Largest gap between the finite-size rate and the limiting law ``u_bar - 1/R``.

    Both sides use the finite-size mean field, so the gap is
    ``|u_bar - 1/R| * delta_alpha R / (1 + delta_alpha R)``.
    """
    r = check_radii(radii)
    r = r[r > 0]
    ubar = mean_field(r, delta_alpha).u_bar
    return float(np.max(np.abs(growth_rates(r, ubar, delta_alpha) - (ubar - 1.0 / r))))


def lattice_size(delta):
    """Number of lattice cells per unit length for spacing ``delta``."""
    n = 1.0 / delta
    k = round(n)
    return int(k) if math.isclose(n, k, rel_tol=1e-9) else int(math.floor(n))
