"""First-order upwind finite-volume solver for the LSW transport equation.

Solves ``dn/dt + d(v n)/dR = 0`` on ``[r_min, r_max]`` with the velocity of
either kinetic regime and the matching self-consistent mean field, frozen
over each step. Mass crossing ``r_min`` is booked as escaped (extinct) mass.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import CFLViolation, DomainError, DomainTooSmall, SystemExtinct
from .validation import check_positive

DEFAULT_CFL = 0.9


class KineticRegime(str, enum.Enum):
    REACTION = "reaction"
    DIFFUSION = "diffusion"

    def velocity(self, radius, u_bar):
        radius = np.asarray(radius, dtype=float)
        if self is KineticRegime.REACTION:
            return u_bar - 1.0 / radius
        return (radius * u_bar - 1.0) / radius**2


@dataclass(frozen=True)
class RadiusGrid:
    r_min: float
    r_max: float
    cell_count: int

    def __post_init__(self):
        if not 0.0 < self.r_min < self.r_max:
            raise DomainError(f"need 0 < r_min < r_max, got {self.r_min}, {self.r_max}")
        if int(self.cell_count) < 1:
            raise DomainError("cell_count must be positive")

    @property
    def dr(self):
        return (self.r_max - self.r_min) / self.cell_count

    @property
    def edges(self):
        return np.linspace(self.r_min, self.r_max, self.cell_count + 1)

    @property
    def centers(self):
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])

    @classmethod
    def with_default_cutoff(cls, r_max, cell_count):
        """Grid with the default extinction cutoff ``r_min = 1e-3 r_max``."""
        return cls(1e-3 * r_max, r_max, cell_count)


@dataclass
class RadiusDensity:
    """Cell averages of the radius density with a closed mass ledger."""

    grid: RadiusGrid
    values: np.ndarray
    escaped_mass: float = 0.0
    initial_mass: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.cell_count,):
            raise DomainError(
                f"expected {self.grid.cell_count} cell values, got {self.values.shape}"
            )
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise DomainError("density values must be finite and nonnegative")
        if self.initial_mass is None:
            self.initial_mass = self.active_mass + self.escaped_mass

    @property
    def active_mass(self):
        return float(self.values.sum() * self.grid.dr)

    def moment(self, k):
        """Midpoint-rule moment ``sum R_c**k n_c dR``."""
        return float(np.dot(self.grid.centers**k, self.values) * self.grid.dr)

    def moments(self, kmax=3):
        return np.array([self.moment(k) for k in range(kmax + 1)])

    @classmethod
    def from_function(cls, grid, func, n_sub=8):
        """Cell averages of ``func`` by Gauss-Legendre quadrature in each cell."""
        x, w = np.polynomial.legendre.leggauss(n_sub)
        e = grid.edges
        mid, half = 0.5 * (e[:-1] + e[1:]), 0.5 * np.diff(e)
        pts = mid[:, None] + half[:, None] * x
        vals = np.asarray(func(pts), dtype=float)
        return cls(grid, np.clip(0.5 * vals @ w, 0.0, None))

    @classmethod
    def uniform(cls, grid, low, high, mass=1.0):
        """Exact cell averages of the uniform density of total ``mass`` on ``[low, high]``."""
        e = grid.edges
        overlap = np.clip(np.minimum(e[1:], high) - np.maximum(e[:-1], low), 0.0, None)
        return cls(grid, mass / (high - low) * overlap / grid.dr)

    @classmethod
    def bump(cls, grid, center, width, mass=1.0):
        """Smooth compact bump ``(1 - s**2)**3`` on ``[center - width, center + width]``."""
        norm = 32.0 / 35.0 * width

        def f(r):
            s = (r - center) / width
            return np.where(np.abs(s) < 1, (1 - s * s) ** 3, 0.0) * mass / norm

        return cls.from_function(grid, f)

    @classmethod
    def point_cell(cls, grid, radius, mass=1.0):
        """All mass in the single cell containing ``radius``."""
        j = int(np.clip(np.searchsorted(grid.edges, radius) - 1, 0, grid.cell_count - 1))
        vals = np.zeros(grid.cell_count)
        vals[j] = mass / grid.dr
        return cls(grid, vals)

    @classmethod
    def from_histogram(cls, grid, radii, weights=None):
        """Histogram of particle radii on ``grid``, normalized to unit mass."""
        radii = np.asarray(radii, dtype=float)
        radii = radii[radii > 0]
        counts, _ = np.histogram(radii, bins=grid.edges, weights=weights)
        if counts.sum() <= 0:
            raise SystemExtinct("extinct input: no positive radii inside the grid")
        return cls(grid, counts / (counts.sum() * grid.dr))

    def copy(self):
        return RadiusDensity(self.grid, self.values.copy(), self.escaped_mass, self.initial_mass)


def closure_mean_field(density, regime):
    """Self-consistent mean field: ``M1/M2`` (reaction) or ``M0/M1`` (diffusion)."""
    regime = KineticRegime(regime)
    if regime is KineticRegime.REACTION:
        num, den = density.moment(1), density.moment(2)
    else:
        num, den = density.moment(0), density.moment(1)
    if den <= 0.0:
        raise SystemExtinct("density extinct: mean field undefined")
    return num / den


def max_stable_dt(density, regime, u_bar, cfl=DEFAULT_CFL):
    v = KineticRegime(regime).velocity(density.grid.edges, u_bar)
    vmax = float(np.max(np.abs(v)))
    return np.inf if vmax == 0 else cfl * density.grid.dr / vmax


def advect_step(density, regime, dt, *, u_bar=None, cfl=DEFAULT_CFL, tail_tolerance=1e-10):
    """One upwind step with edge velocities at the step-start mean field.

    ``u_bar`` fixes the mean field (closure disabled, test mode).

    Raises
    ------
    CFLViolation
        If ``dt`` exceeds ``cfl * dR / max|v|``; ``suggested_dt`` is the limit.
    DomainTooSmall
        If more than ``tail_tolerance`` of the mass sits in the last cell
        while the velocity there points outward.
    """
    regime = KineticRegime(regime)
    dt = check_positive(dt, "dt")
    n = density.values
    if not np.any(n > 0):
        return density.copy()
    ub = closure_mean_field(density, regime) if u_bar is None else float(u_bar)
    grid = density.grid
    v = regime.velocity(grid.edges, ub)
    limit = max_stable_dt(density, regime, ub, cfl)
    if dt > limit * (1.0 + 1e-12):
        raise CFLViolation(f"dt={dt:.3g} exceeds CFL limit {limit:.3g}", suggested_dt=limit)
    if v[-1] > 0 and n[-1] * grid.dr > tail_tolerance * max(density.active_mass, 1e-300):
        raise DomainTooSmall(f"density reaches r_max={grid.r_max}; enlarge the grid")

    new, outflow = _upwind(n, v, dt / grid.dr)
    return RadiusDensity(grid, new, density.escaped_mass + outflow * dt, density.initial_mass)


def _upwind(n, v, dt_dr):
    """Godunov update of cell values ``n`` with edge velocities ``v``.

    Zero flux at the outer edge; returns the new values and the outflow rate
    through the inner edge.
    """
    flux = np.zeros(n.size + 1)
    vi = v[1:-1]
    flux[1:-1] = np.where(vi > 0, vi * n[:-1], vi * n[1:])
    flux[0] = min(v[0], 0.0) * n[0]
    new = n - dt_dr * (flux[1:] - flux[:-1])
    np.maximum(new, 0.0, out=new)  # clears round-off negatives only
    return new, -flux[0]


@dataclass
class DensityTrajectory:
    times: np.ndarray
    densities: list
    u_bar: np.ndarray
    moments: np.ndarray
    active_mass: np.ndarray
    escaped_mass: np.ndarray
    regime: KineticRegime
    n_steps: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.densities[0].grid

    @property
    def active_fraction(self):
        return self.active_mass / self.active_mass[0]

    def volume_drift(self):
        """Third-moment drift with escaped mass counted at ``r_min**3``."""
        r_min = self.grid.r_min
        m3 = self.moments[:, 3] + r_min**3 * self.escaped_mass
        return np.abs(m3 - m3[0])


def _output_times(horizon, cadence, output_times):
    if output_times is not None:
        ts = np.unique(np.asarray(output_times, dtype=float))
        ts = ts[(ts > 0) & (ts <= horizon)]
    else:
        cadence = horizon if cadence is None else cadence
        ts = np.minimum(np.arange(1, int(np.ceil(horizon / cadence - 1e-9)) + 1) * cadence, horizon)
    if ts.size == 0 or ts[-1] < horizon:
        ts = np.append(ts, horizon)
    return ts


def _record(density, regime, u_bar):
    try:
        ub = closure_mean_field(density, regime) if u_bar is None else float(u_bar)
    except SystemExtinct:
        ub = np.nan
    return ub, density.moments(3), density.active_mass, density.escaped_mass


def solve(initial, regime, horizon, *, cadence=None, output_times=None, u_bar=None,
          cfl=DEFAULT_CFL, tail_tolerance=1e-10):
    """Integrate ``initial`` to ``horizon``, recording snapshots at output times.

    Raises
    ------
    SystemExtinct
        If the initial density is zero.
    """
    regime = KineticRegime(regime)
    horizon = check_positive(horizon, "horizon")
    if initial.active_mass <= 0:
        raise SystemExtinct("extinct input: initial density has zero mass")
    targets = _output_times(horizon, cadence, output_times)
    grid = initial.grid
    inv = 1.0 / grid.edges
    c = grid.centers
    num_w, den_w = (c, c * c) if regime is KineticRegime.REACTION else (np.ones_like(c), c)
    n, escaped = initial.values.copy(), initial.escaped_mass
    t = 0.0
    times, snaps, rows = [0.0], [initial.copy()], [_record(initial, regime, u_bar)]
    steps = 0
    for target in targets:
        while t < target - 1e-14 * max(1.0, target):
            den = den_w @ n
            if den <= 0:  # everything has escaped
                t = target
                break
            ub = (num_w @ n) / den if u_bar is None else float(u_bar)
            v = ub - inv if regime is KineticRegime.REACTION else (ub - inv) * inv
            dt = min(cfl * grid.dr / np.abs(v).max(), target - t)
            if v[-1] > 0 and n[-1] > tail_tolerance * n.sum():
                raise DomainTooSmall(f"density reaches r_max={grid.r_max}; enlarge the grid")
            n, outflow = _upwind(n, v, dt / grid.dr)
            escaped += outflow * dt
            t = target if dt == target - t else t + dt
            steps += 1
        dens = RadiusDensity(grid, n.copy(), escaped, initial.initial_mass)
        times.append(target)
        snaps.append(dens)
        rows.append(_record(dens, regime, u_bar))
    ub, mom, act, esc = zip(*rows)
    return DensityTrajectory(
        times=np.array(times),
        densities=snaps,
        u_bar=np.array(ub),
        moments=np.array(mom),
        active_mass=np.array(act),
        escaped_mass=np.array(esc),
        regime=regime,
        n_steps=steps,
    )


def characteristic_solution(initial_func, t, u_bar=0.0):
    """Exact density at time ``t`` for constant ``u_bar = 0`` transport ``dR/dt = -1/R``.

    Returns a callable ``n(t, R) = n0(sqrt(R**2 + 2 t)) R / sqrt(R**2 + 2 t)``.
    """
    if u_bar != 0.0:
        raise DomainError("closed-form characteristics implemented for u_bar = 0 only")

    def n(r):
        r = np.asarray(r, dtype=float)
        r0 = np.sqrt(r * r + 2.0 * t)
        return initial_func(r0) * r / r0

    return n


class LSWSolver(BaseEstimator):
    """Estimator-style front end to :func:`solve`.

    ``fit`` takes cell values (or a :class:`RadiusDensity`) and integrates;
    ``predict`` returns densities at requested times by linear interpolation
    between snapshots.
    """

    def __init__(self, regime="reaction", r_min=None, r_max=3.0, cell_count=600,
                 horizon=1.0, cadence=None, cfl=DEFAULT_CFL, u_bar=None):
        self.regime = regime
        self.r_min = r_min
        self.r_max = r_max
        self.cell_count = cell_count
        self.horizon = horizon
        self.cadence = cadence
        self.cfl = cfl
        self.u_bar = u_bar

    def make_grid(self):
        r_min = 1e-3 * self.r_max if self.r_min is None else self.r_min
        return RadiusGrid(r_min, self.r_max, self.cell_count)

    def fit(self, X, y=None):
        if isinstance(X, RadiusDensity):
            density = X
        else:
            density = RadiusDensity(self.make_grid(), np.ravel(X))
        self.grid_ = density.grid
        self.trajectory_ = solve(density, self.regime, self.horizon, cadence=self.cadence,
                                 u_bar=self.u_bar, cfl=self.cfl)
        self.n_features_in_ = density.grid.cell_count
        return self

    def predict(self, times):
        check_is_fitted(self, "trajectory_")
        traj = self.trajectory_
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if np.any(times < 0) or np.any(times > traj.times[-1] + 1e-12):
            raise DomainError("prediction times outside the solved horizon")
        vals = np.stack([d.values for d in traj.densities])
        j = np.clip(np.searchsorted(traj.times, times, side="right") - 1, 0, len(traj.times) - 2)
        t0, t1 = traj.times[j], traj.times[j + 1]
        w = ((times - t0) / np.where(t1 > t0, t1 - t0, 1.0))[:, None]
        return (1 - w) * vals[j] + w * vals[j + 1]
