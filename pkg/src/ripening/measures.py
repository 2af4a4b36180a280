"""Empirical radius measures, one-dimensional Wasserstein distance and the
weak-form residual of the limiting transport equation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, SystemExtinct
from .lsw_pde import DensityTrajectory, RadiusDensity
from .particle_sim import Trajectory
from .validation import check_positive, check_radii


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Equal-weight atoms at the active radii, each of mass ``weight = 1/N_i``."""

    radii: np.ndarray
    weight: float

    def __post_init__(self):
        r = check_radii(self.radii, name="radii")
        object.__setattr__(self, "radii", np.sort(r[r > 0]))
        if not self.weight > 0:
            raise DomainError("atom weight must be positive")

    @property
    def total_weight(self):
        return self.radii.size * self.weight

    @property
    def is_empty(self):
        return self.radii.size == 0

    def moment(self, k):
        return float(np.sum(self.radii**k) * self.weight)

    @classmethod
    def from_radii(cls, radii, initial_count=None):
        radii = np.asarray(radii, dtype=float)
        n = radii.size if initial_count is None else int(initial_count)
        return cls(radii, 1.0 / n)


def empirical_from_snapshot(system):
    """Empirical measure of ``system``; extinct particles drop out.

    An extinct system gives an empty measure (``total_weight == 0``).
    """
    return EmpiricalMeasure(system.radii, 1.0 / system.initial_count)


# -- Wasserstein-1 ---------------------------------------------------------------


def _breakpoints(m):
    if isinstance(m, EmpiricalMeasure):
        return m.radii
    return m.grid.edges


def _normalized_cdf(m, x):
    """Return right-continuous CDF values at ``x`` and left limits at ``x``."""
    if isinstance(m, EmpiricalMeasure):
        if m.is_empty:
            raise SystemExtinct("zero-mass measure in Wasserstein distance")
        n = m.radii.size
        right = np.searchsorted(m.radii, x, side="right") / n
        left = np.searchsorted(m.radii, x, side="left") / n
        return right, left
    if isinstance(m, RadiusDensity):
        mass = m.values.sum()
        if mass <= 0:
            raise SystemExtinct("zero-mass measure in Wasserstein distance")
        cdf = np.concatenate([[0.0], np.cumsum(m.values)]) / mass
        f = np.interp(x, m.grid.edges, cdf, left=0.0, right=1.0)
        return f, f
    raise TypeError(f"unsupported measure type {type(m).__name__}")


def _abs_linear_integral(d0, d1, h):
    # exact integral of |linear| over an interval of length h
    same = d0 * d1 >= 0
    denom = np.where(same, 1.0, np.abs(d0) + np.abs(d1))
    return np.where(same, 0.5 * h * (np.abs(d0) + np.abs(d1)), 0.5 * h * (d0**2 + d1**2) / denom)


def wasserstein1(a, b):
    """W1 distance between the normalized measures ``a`` and ``b``.

    Both CDFs are piecewise linear (atomic measures: piecewise constant)
    between the merged breakpoints, so the L1 distance of CDFs is computed
    exactly on each interval.
    """
    x = np.union1d(_breakpoints(a), _breakpoints(b))
    fa_r, fa_l = _normalized_cdf(a, x)
    fb_r, fb_l = _normalized_cdf(b, x)
    if x.size < 2:
        return 0.0
    d0 = (fa_r - fb_r)[:-1]
    d1 = (fa_l - fb_l)[1:]
    return float(np.sum(_abs_linear_integral(d0, d1, np.diff(x))))


# -- test functions and the weak form -------------------------------------------


def _bump(s):
    # (1 - s^2)^3 on |s| < 1 and its derivative; C^2 at the endpoints
    inside = np.abs(s) < 1
    q = np.where(inside, 1 - s * s, 0.0)
    return q**3, np.where(inside, -6 * s * q * q, 0.0)


@dataclass(frozen=True)
class TestFunction:
    """Product test function ``phi(t, R) = b(t) c(R)``.

    ``b(t) = (1 - (t/t_end)**2)**3`` on ``[0, t_end)`` with ``b(0) = 1``;
    ``c`` is the same kernel centered on ``(r_lo, r_hi)``.
    """

    __test__ = False  # not a pytest class

    t_end: float
    r_lo: float
    r_hi: float

    def __post_init__(self):
        check_positive(self.t_end, "t_end")
        if not 0 < self.r_lo < self.r_hi:
            raise DomainError("test function needs 0 < r_lo < r_hi")

    def _parts(self, t, r):
        t = np.asarray(t, dtype=float)
        r = np.asarray(r, dtype=float)
        bt, dbt = _bump(t / self.t_end)
        bt = np.where(t >= 0, bt, 0.0)
        dbt = np.where(t >= 0, dbt, 0.0) / self.t_end
        half = 0.5 * (self.r_hi - self.r_lo)
        c, dc = _bump((r - 0.5 * (self.r_lo + self.r_hi)) / half)
        return bt, dbt, c, dc / half

    def __call__(self, t, r):
        bt, _, c, _ = self._parts(t, r)
        return bt * c

    def dt(self, t, r):
        _, dbt, c, _ = self._parts(t, r)
        return dbt * c

    def dr(self, t, r):
        bt, _, _, dc = self._parts(t, r)
        return bt * dc


def _weighted_atoms(trajectory):
    """Yield ``(time, radii, weights)`` with ``sum(weights) = a(t)``."""
    if isinstance(trajectory, Trajectory):
        for t, snap in zip(trajectory.times, trajectory.snapshots):
            r = snap.active_radii
            yield t, r, np.full(r.size, 1.0 / snap.initial_count)
    elif isinstance(trajectory, DensityTrajectory):
        m0 = trajectory.densities[0].active_mass
        for t, d in zip(trajectory.times, trajectory.densities):
            yield t, d.grid.centers, d.values * d.grid.dr / m0
    else:
        raise TypeError(f"unsupported trajectory type {type(trajectory).__name__}")


def weak_form_residual(trajectory, phi, *, signed=False):
    """Residual of the weak limiting equation against ``phi``.

    Evaluates ``int int (phi_t + (u - 1/R) phi_R) a dnu_t dt + int phi(0, .) dnu_0``
    with ``u = int R dnu_t / int R^2 dnu_t`` at each snapshot and trapezoidal
    quadrature in time.
    """
    atoms = list(_weighted_atoms(trajectory))
    times = np.array([a[0] for a in atoms])
    if phi.t_end > times[-1] * (1 + 1e-12):
        raise DomainError(
            f"test function support ends at {phi.t_end}, beyond the horizon {times[-1]}"
        )
    integrand = np.zeros(times.size)
    for k, (t, r, w) in enumerate(atoms):
        m1, m2 = np.dot(w, r), np.dot(w, r * r)
        if m2 <= 0:
            continue
        ubar = m1 / m2
        integrand[k] = np.dot(w, phi.dt(t, r) + (ubar - 1.0 / r) * phi.dr(t, r))
    _, r0, w0 = atoms[0]
    value = np.trapezoid(integrand, times) + np.dot(w0, phi(0.0, r0))
    return float(value if signed else abs(value))


def active_fraction_series(trajectory):
    """Times and active fraction ``a(t)``, particle count or mass based."""
    if isinstance(trajectory, Trajectory):
        n0 = trajectory.snapshots[0].initial_count
        return trajectory.times.copy(), trajectory.active_counts / n0
    if isinstance(trajectory, DensityTrajectory):
        return trajectory.times.copy(), trajectory.active_fraction
    raise TypeError(f"unsupported trajectory type {type(trajectory).__name__}")


def total_variation(values):
    return float(np.sum(np.abs(np.diff(np.asarray(values, dtype=float)))))
