"""Time integration of the mean-field N-particle system with extinction events.

Particles are split at every step into a *bulk* set, advanced by classical
RK4 with step doubling, and a *frozen* set of small subcritical particles
(``R <= freeze_threshold`` and ``u_bar R <= 1/4``) advanced by the exact
solution of ``dR/dt = (u_bar - 1/R) / (1 + delta_alpha R)`` with ``u_bar``
held at its step-start value. The bulk closure receives the frozen set's
exact volume change over the step, so volume is conserved up to the RK4
error of the bulk alone.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import interp1d
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import (
    Diagnostics,
    ParticleSystem,
    ScaleParameters,
    diagnostics,
    mean_field,
)
from .exceptions import DomainError, NumericalFailure, StepRejected, SystemExtinct
from .validation import check_positive, check_radii

logger = logging.getLogger(__name__)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


@dataclass(frozen=True)
class IntegratorConfig:
    """Step-size and extinction controls.

    ``tolerance`` bounds the per-step RK4 error in each radius and the
    per-step volume error relative to the current total volume, per unit time.
    """

    dt_max: float = 0.05
    tolerance: float = 1e-9
    extinction_radius: float = 1e-6
    freeze_threshold: float = 0.05
    history_radius: float = 0.25
    volume_tolerance: float | None = None
    dt_initial: float | None = None

    def __post_init__(self):
        for name in ("dt_max", "tolerance", "extinction_radius", "freeze_threshold"):
            check_positive(getattr(self, name), name)
        if not self.extinction_radius < self.freeze_threshold:
            raise DomainError("need 0 < extinction_radius < freeze_threshold")

    def check_budget(self, n_initial):
        """Reject configurations whose worst-case extinction volume loss is too large."""
        if self.volume_tolerance is not None:
            loss = n_initial * self.extinction_radius**3
            if loss > self.volume_tolerance:
                raise DomainError(
                    f"extinction volume loss {loss:.3g} exceeds volume_tolerance "
                    f"{self.volume_tolerance:.3g}"
                )


@dataclass
class Trajectory:
    """Snapshots at output times plus a per-accepted-step series.

    ``step_*`` arrays hold one entry per accepted step (index 0 is the initial
    state). ``envelope_samples`` maps a particle index to the ``(t, R)`` samples
    recorded while its radius was below ``history_radius``.
    """

    times: np.ndarray
    snapshots: list
    diagnostics_series: list
    u_bar: np.ndarray
    extinction_log: list
    step_times: np.ndarray
    step_volume: np.ndarray
    step_surface: np.ndarray
    step_u_bar: np.ndarray
    step_max_radius: np.ndarray
    envelope_samples: dict = field(default_factory=dict)
    n_rejected: int = 0
    config: IntegratorConfig | None = None

    @property
    def initial(self):
        return self.snapshots[0]

    @property
    def active_counts(self):
        return np.array([s.n_active for s in self.snapshots])

    def volume_budget(self, t, n_extinct):
        """Allowed absolute volume drift at time ``t`` after ``n_extinct`` extinctions."""
        cfg = self.config
        v0 = self.step_volume[0]
        return n_extinct * cfg.extinction_radius**3 + t * cfg.tolerance * v0

    def extinctions_before(self, t):
        return sum(1 for _, ti in self.extinction_log if ti <= t)


# -- frozen-field analytics ------------------------------------------------------


def _frozen_time(r_from, r_to, u_bar, delta_alpha):
    """Elapsed time for a frozen-field particle to shrink from ``r_from`` to ``r_to``.

    Integrates ``r (1 + delta_alpha r) / (1 - u_bar r)`` over ``[r_to, r_from]``
    by Gauss-Legendre quadrature; the integrand is analytic there since
    ``u_bar r <= 1/4``.
    """
    r_from = np.asarray(r_from, dtype=float)
    r_to = np.asarray(r_to, dtype=float)
    half = 0.5 * (r_from - r_to)
    mid = 0.5 * (r_from + r_to)
    r = mid[..., None] + half[..., None] * _GL_NODES
    f = r * (1.0 + delta_alpha * r) / (1.0 - u_bar * r)
    return half * (f @ _GL_WEIGHTS)


def frozen_radius(r0, u_bar, delta_alpha, elapsed):
    """Radius reached after ``elapsed`` time under a frozen mean field (vectorized).

    Newton iteration in ``q = R**2`` on the monotone elapsed-time map, with
    bracketing in ``[0, r0**2]``.
    """
    r0 = np.atleast_1d(np.asarray(r0, dtype=float))
    elapsed = np.broadcast_to(np.asarray(elapsed, dtype=float), r0.shape)
    lo = np.zeros_like(r0)
    hi = r0**2
    q = np.clip(r0**2 - 2.0 * (1.0 - u_bar * r0) * elapsed, 0.0, r0**2)
    for _ in range(60):
        r = np.sqrt(q)
        g = _frozen_time(r0, r, u_bar, delta_alpha) - elapsed
        # g decreases in q; shrink the bracket
        hi = np.where(g < 0.0, q, hi)
        lo = np.where(g >= 0.0, q, lo)
        slope = -(1.0 + delta_alpha * r) / (2.0 * (1.0 - u_bar * r))
        q_new = q - g / slope
        bad = ~((q_new > lo) & (q_new < hi))
        q_new = np.where(bad, 0.5 * (lo + hi), q_new)
        if np.all(np.abs(q_new - q) <= 1e-15 * np.maximum(hi, 1e-300)):
            q = q_new
            break
        q = q_new
    return np.sqrt(q)


def detect_extinction(radius, u_bar, dt, config, delta_alpha=0.0):
    """Offset within ``dt`` at which a frozen-field particle reaches the extinction radius.

    Returns ``None`` if the particle survives the step. A radius already at or
    below the extinction radius returns ``0.0``.

    Raises
    ------
    DomainError
        If ``radius`` exceeds ``freeze_threshold`` or ``1 / (4 u_bar)``.
    """
    radius = float(radius)
    if radius > config.freeze_threshold:
        raise DomainError(
            f"radius {radius} above freeze_threshold {config.freeze_threshold}"
        )
    if u_bar > 0 and radius > 1.0 / (4.0 * u_bar):
        raise DomainError(f"radius {radius} violates R <= 1/(4 u_bar) = {1 / (4 * u_bar)}")
    if radius <= config.extinction_radius:
        return 0.0
    tau = float(_frozen_time(radius, config.extinction_radius, u_bar, delta_alpha))
    return tau if tau <= dt else None


# -- stepping ------------------------------------------------------------------------


@dataclass
class _StepOutcome:
    system: ParticleSystem
    dt: float
    error_ratio: float
    u_bar: float
    extinct: np.ndarray
    frozen_idx: np.ndarray
    frozen_path: tuple | None = None


def _bulk_rhs(r, da, u_fixed, q):
    if u_fixed is not None:
        ubar = u_fixed
    else:
        w = 1.0 / (1.0 + da * r)
        wr = w * r
        ubar = (np.sum(wr) - q) / np.dot(wr, r)
    return (ubar - 1.0 / r) / (1.0 + da * r)


def _rk4(r, dt, da, u_fixed, q):
    k1 = _bulk_rhs(r, da, u_fixed, q)
    k2 = _bulk_rhs(r + 0.5 * dt * k1, da, u_fixed, q)
    k3 = _bulk_rhs(r + 0.5 * dt * k2, da, u_fixed, q)
    k4 = _bulk_rhs(r + dt * k3, da, u_fixed, q)
    return r + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _frozen_mask(r, ubar, config):
    small = r <= config.freeze_threshold
    if ubar > 0:
        small &= ubar * r <= 0.25
    return small


def _attempt(system, u_bar, dt, config, t0):
    da = system.scale.delta_alpha
    idx = np.flatnonzero(system.active)
    if idx.size == 0:
        raise SystemExtinct("system extinct: nothing to integrate")
    r = system.radii[idx]
    ubar0 = float(u_bar) if u_bar is not None else mean_field(r, da).u_bar

    fmask = _frozen_mask(r, ubar0, config)
    f_idx, b_idx = idx[fmask], idx[~fmask]
    rf = r[fmask]

    # extinction localization in the frozen set
    extinct = np.zeros(0, dtype=int)
    if rf.size:
        tau = _frozen_time(rf, config.extinction_radius, ubar0, da)
        tmin = float(tau.min())
        if tmin <= dt:
            dt = max(tmin, 0.0)
            extinct = f_idx[tau <= dt * (1.0 + 1e-12)]

    # exact frozen update
    rf_new = rf.copy()
    if rf.size and dt > 0:
        rf_new = frozen_radius(rf, ubar0, da, dt)
        rf_new[np.isin(f_idx, extinct)] = config.extinction_radius
    q = 0.0
    if dt > 0:
        q = float(np.sum(rf_new**3 - rf**3)) / (3.0 * dt)

    rb = system.radii[b_idx]
    err_ratio = 0.0
    rb_new = rb
    if rb.size and dt > 0:
        u_fixed = None if u_bar is None else float(u_bar)
        if u_fixed is None and rb.size == 1 and rf.size == 0:
            rb_new = rb.copy()  # lone particle is exactly critical
        else:
            with np.errstate(all="ignore"):
                full = _rk4(rb, dt, da, u_fixed, q)
                half = _rk4(rb, 0.5 * dt, da, u_fixed, q)
                half = _rk4(half, 0.5 * dt, da, u_fixed, q)
            if not (np.all(np.isfinite(half)) and np.all(half > config.extinction_radius)
                    and np.all(np.isfinite(full)) and np.all(full > 0)):
                raise StepRejected("radius left the admissible range", suggested_dt=0.25 * dt)
            diff = (half - full) / 15.0
            comp_err = float(np.max(np.abs(diff)))
            vol_err = abs(float(np.sum(half**3) - np.sum(full**3))) / 15.0
            vol_scale = float(np.sum(system.radii**3))
            err_ratio = max(
                comp_err / config.tolerance,
                vol_err / (config.tolerance * max(dt, 1e-300) * vol_scale),
            )
            if err_ratio > 1.0:
                factor = max(0.1, 0.9 * err_ratio ** (-0.2))
                raise StepRejected(
                    f"local error ratio {err_ratio:.3g} above tolerance",
                    suggested_dt=factor * dt,
                )
            rb_new = half + diff

    new = system.copy()
    new.radii[b_idx] = rb_new
    new.radii[f_idx] = rf_new
    if extinct.size:
        new.radii[extinct] = 0.0
        new.active[extinct] = False
        new.extinction_times[extinct] = t0 + dt
    path = (f_idx, rf, ubar0) if rf.size else None
    return _StepOutcome(new, dt, err_ratio, ubar0, extinct, f_idx, path)


def step(system, u_bar, dt, config, t0=0.0):
    """Advance ``system`` by one accepted step of at most ``dt``.

    ``u_bar=None`` recomputes the mean field at every RK stage; a number holds
    the mean field fixed at that value (test mode). A frozen-set extinction
    inside the step shortens it to the extinction offset.

    Raises
    ------
    StepRejected
        When the error estimate exceeds the tolerance; ``suggested_dt`` is set.
    """
    dt = check_positive(dt, "dt")
    if dt > config.dt_max * (1 + 1e-12):
        raise DomainError(f"dt {dt} exceeds dt_max {config.dt_max}")
    return _attempt(system, u_bar, dt, config, t0).system


# -- driver ---------------------------------------------------------------------------


def _empty_diagnostics():
    return Diagnostics(0.0, 0.0, 0.0, 0.0)


def _safe_diagnostics(system, u_bar):
    if system.n_active == 0:
        return _empty_diagnostics()
    if u_bar is None:
        return diagnostics(system)
    r = system.active_radii
    da = system.scale.delta_alpha
    rdot = (u_bar - 1.0 / r) / (1.0 + da * r)
    return Diagnostics(
        float(np.sum(r**3)),
        float(np.sum(r**2)),
        float(np.sum(r * rdot + (r * rdot) ** 2)),
        r.size / system.initial_count,
    )


def _current_ubar(system, u_bar):
    if u_bar is not None:
        return float(u_bar)
    if system.n_active == 0:
        return float("nan")
    return mean_field(system.active_radii, system.scale.delta_alpha).u_bar


def check_noncollision(system):
    """Raise ``DomainError`` if any two particle balls touch."""
    if system.centers is None or system.n_active < 2:
        return
    from scipy.spatial import cKDTree

    idx = np.flatnonzero(system.active)
    phys = system.scale.delta_alpha * system.radii[idx]
    tree = cKDTree(system.centers[idx])
    pairs = tree.query_pairs(2.0 * phys.max(), output_type="ndarray")
    if pairs.size == 0:
        return
    d = np.linalg.norm(system.centers[idx[pairs[:, 0]]] - system.centers[idx[pairs[:, 1]]], axis=1)
    if np.any(phys[pairs[:, 0]] + phys[pairs[:, 1]] >= d):
        raise DomainError("particle balls collide; reduce delta or the horizon")


def _output_grid(horizon, cadence, output_times):
    if output_times is not None:
        ts = np.unique(np.asarray(output_times, dtype=float))
        ts = ts[(ts > 0) & (ts <= horizon)]
    else:
        cadence = horizon if cadence is None else cadence
        n = int(np.ceil(horizon / cadence - 1e-9))
        ts = np.minimum(np.arange(1, n + 1) * cadence, horizon)
    if ts.size == 0 or ts[-1] < horizon:
        ts = np.append(ts, horizon)
    return ts


def simulate(
    initial,
    horizon,
    config=None,
    *,
    u_bar=None,
    cadence=None,
    output_times=None,
    check_collisions=False,
):
    """Integrate ``initial`` up to ``horizon`` (rescaled time).

    Snapshots are taken at multiples of ``cadence`` (or at ``output_times``)
    and at ``horizon``. Rejected steps are retried with the suggested smaller
    step.

    Raises
    ------
    NumericalFailure
        If the step size underflows ``1e-14 * horizon``.
    """
    horizon = check_positive(horizon, "horizon")
    config = IntegratorConfig() if config is None else config
    config.check_budget(initial.initial_count)
    targets = _output_grid(horizon, cadence, output_times)

    system = initial.copy()
    t = 0.0
    ub = _current_ubar(system, u_bar)
    times, snaps, diags, ubars = [0.0], [system.copy()], [_safe_diagnostics(system, u_bar)], [ub]
    st, sv, ss, su, sm = [0.0], [diags[0].total_volume], [diags[0].total_surface], [ub], [
        float(system.radii.max())
    ]
    log = []
    hist = {}
    _record_history(hist, system, t, config)
    rejected = 0
    dt = config.dt_initial or min(config.dt_max, 1e-3 * horizon + 1e-3)
    dt_floor = 1e-14 * horizon

    for target in targets:
        while t < target - 1e-14 * max(1.0, target):
            if system.n_active == 0:
                t = target
                break
            trial = min(dt, config.dt_max, target - t)
            try:
                out = _attempt(system, u_bar, trial, config, t)
            except StepRejected as exc:
                rejected += 1
                dt = exc.suggested_dt if exc.suggested_dt else 0.5 * trial
                if dt < dt_floor:
                    raise NumericalFailure(f"step size underflow at t={t:.6g}") from exc
                continue
            if out.extinct.size:
                _sample_final_path(hist, out, t, config, system.scale.delta_alpha)
            system = out.system
            full_step = out.dt == trial
            t = target if full_step and trial == target - t else t + out.dt
            for i in out.extinct:
                log.append((int(i), float(system.extinction_times[i])))
            _record_history(hist, system, t, config)
            ub = _current_ubar(system, u_bar)
            r = system.active_radii
            st.append(t)
            sv.append(float(np.sum(r**3)))
            ss.append(float(np.sum(r**2)))
            su.append(ub)
            sm.append(float(r.max()) if r.size else 0.0)
            if full_step and trial == dt:
                grow = 4.0 if out.error_ratio == 0 else min(4.0, 0.9 * out.error_ratio ** -0.2)
                dt = min(config.dt_max, dt * grow)
        times.append(target)
        snaps.append(system.copy())
        diags.append(_safe_diagnostics(system, u_bar))
        ubars.append(_current_ubar(system, u_bar))
        if check_collisions:
            check_noncollision(system)

    envelope = {i: np.array(hist[i]) for i, _ in log if i in hist}
    return Trajectory(
        times=np.array(times),
        snapshots=snaps,
        diagnostics_series=diags,
        u_bar=np.array(ubars),
        extinction_log=log,
        step_times=np.array(st),
        step_volume=np.array(sv),
        step_surface=np.array(ss),
        step_u_bar=np.array(su),
        step_max_radius=np.array(sm),
        envelope_samples=envelope,
        n_rejected=rejected,
        config=config,
    )


def _record_history(hist, system, t, config):
    small = np.flatnonzero(system.active & (system.radii <= config.history_radius))
    for i in small:
        hist.setdefault(int(i), []).append((t, float(system.radii[i])))


def _sample_final_path(hist, out, t0, config, da, n_samples=8):
    # dense samples of the analytic path inside the step that ends in extinction
    f_idx, rf, ubar0 = out.frozen_path
    pos = np.searchsorted(f_idx, out.extinct)
    offsets = out.dt * (1.0 - np.geomspace(1.0, 1e-6, n_samples))[1:]
    for p, i in zip(pos, out.extinct):
        if offsets.size:
            radii = frozen_radius(np.full(offsets.size, rf[p]), ubar0, da, offsets)
            rows = hist.setdefault(int(i), [])
            rows.extend((t0 + s, float(rr)) for s, rr in zip(offsets, radii))


# -- monitors ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundReport:
    max_ubar: float
    max_radius: float
    initial_ubar: float
    initial_max_radius: float
    factor: float
    violated: bool


def uniform_bound_monitor(trajectory, factor=10.0):
    """Track the running suprema of the mean field and the radii.

    Flags a violation when either exceeds ``factor`` times its initial value.
    """
    ub = trajectory.step_u_bar[np.isfinite(trajectory.step_u_bar)]
    rm = trajectory.step_max_radius
    if ub.size == 0:
        raise SystemExtinct("trajectory holds no active state")
    max_ubar, max_radius = float(ub.max()), float(rm.max())
    violated = max_ubar > factor * ub[0] or max_radius > factor * rm[0]
    return BoundReport(max_ubar, max_radius, float(ub[0]), float(rm[0]), factor, violated)


def check_volume_budget(trajectory):
    """Largest ratio of observed volume drift to its budget over all accepted steps."""
    v0 = trajectory.step_volume[0]
    ext_times = np.sort(np.array([ti for _, ti in trajectory.extinction_log]))
    n_ext = np.searchsorted(ext_times, trajectory.step_times, side="right")
    budget = trajectory.volume_budget(trajectory.step_times, n_ext)
    drift = np.abs(trajectory.step_volume - v0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(budget > 0, drift / budget, np.where(drift > 0, np.inf, 0.0))
    return float(ratio.max())


def surface_increase(trajectory):
    """Largest relative surface increase between consecutive accepted steps."""
    s = trajectory.step_surface
    if s.size < 2:
        return 0.0
    return float(np.max((s[1:] - s[:-1]) / np.maximum(s[:-1], 1e-300)))


def envelope_violations(trajectory, u_max=None):
    """Extinction-envelope samples outside ``sqrt(t_i - t) <= R <= 2 sqrt(t_i - t)``.

    ``t_i`` is the time the radius reaches zero: the logged time (radius at
    ``extinction_radius``) plus the frozen-field time to shrink from there to
    zero. Only samples strictly before ``t_i`` with ``R <= 1 / (4 u_max)`` are
    checked; returns ``(checked, violations)``.
    """
    if u_max is None:
        u_max = float(np.nanmax(trajectory.step_u_bar))
    r_cap = 1.0 / (4.0 * u_max) if u_max > 0 else np.inf
    da = trajectory.initial.scale.delta_alpha
    tail = float(_frozen_time(trajectory.config.extinction_radius, 0.0, max(u_max, 0.0), da))
    checked, bad = 0, []
    for i, t_log in trajectory.extinction_log:
        samples = trajectory.envelope_samples.get(i)
        if samples is None:
            continue
        ti = t_log + tail
        for t, r in samples:
            if t >= ti or r > r_cap:
                continue
            checked += 1
            s = np.sqrt(ti - t)
            if not (s <= r <= 2.0 * s):
                bad.append((i, t, r, ti))
    return checked, bad


# -- initial data --------------------------------------------------------------------


def initial_radii(kind, n, params=None, seed=0):
    """Draw ``n`` initial radii from a named distribution.

    ``uniform``: ``low``, ``high``. ``lognormal``: ``mean``, ``sigma``,
    ``r_max`` (truncated above, sampled by inverse CDF). ``explicit``:
    ``radii`` list, tiled or truncated to ``n``.
    """
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    if kind == "uniform":
        low, high = float(params.get("low", 0.5)), float(params.get("high", 1.5))
        if not 0 < low < high:
            raise DomainError("uniform radii need 0 < low < high")
        return rng.uniform(low, high, size=n)
    if kind == "lognormal":
        from scipy import stats

        mean, sigma = float(params.get("mean", 0.0)), float(params.get("sigma", 0.25))
        r_max = float(params.get("r_max", 3.0))
        dist = stats.lognorm(s=sigma, scale=np.exp(mean))
        top = dist.cdf(r_max)
        return dist.ppf(rng.uniform(0.0, top, size=n))
    if kind == "explicit":
        radii = check_radii(params["radii"], allow_zero=False)
        return np.resize(radii, n) if n is not None else radii.copy()
    raise DomainError(f"unknown initial distribution {kind!r}")


def growth_law_defect_series(trajectory):
    """Per-snapshot largest gap between the finite-size rate and ``u_bar - 1/R``."""
    from .core import growth_law_defect

    out = []
    for snap in trajectory.snapshots:
        if snap.n_active == 0:
            out.append(0.0)
        else:
            out.append(growth_law_defect(snap.active_radii, snap.scale.delta_alpha))
    return np.array(out)


# -- estimator --------------------------------------------------------------------------


class ParticleSimulator(BaseEstimator):
    """Estimator-style front end: ``fit`` integrates, ``predict`` reads the state.

    Parameters mirror :class:`ScaleParameters` and :class:`IntegratorConfig`;
    ``u_bar`` fixes the mean field externally (test mode) when not ``None``.

    Attributes
    ----------
    trajectory_ : Trajectory
    scale_ : ScaleParameters
    """

    def __init__(
        self,
        delta=0.1,
        alpha=2.0,
        epsilon=0.01,
        horizon=1.0,
        cadence=None,
        dt_max=0.05,
        tolerance=1e-9,
        extinction_radius=1e-6,
        freeze_threshold=0.05,
        u_bar=None,
        diagnostics_only=False,
    ):
        self.delta = delta
        self.alpha = alpha
        self.epsilon = epsilon
        self.horizon = horizon
        self.cadence = cadence
        self.dt_max = dt_max
        self.tolerance = tolerance
        self.extinction_radius = extinction_radius
        self.freeze_threshold = freeze_threshold
        self.u_bar = u_bar
        self.diagnostics_only = diagnostics_only

    def _config(self):
        return IntegratorConfig(
            dt_max=self.dt_max,
            tolerance=self.tolerance,
            extinction_radius=self.extinction_radius,
            freeze_threshold=self.freeze_threshold,
        )

    def fit(self, X, y=None, centers=None):
        """Integrate from initial radii ``X`` (1-D array)."""
        radii = check_radii(np.ravel(X), allow_zero=False, name="X")
        self.scale_ = ScaleParameters(
            self.delta, self.alpha, self.epsilon, diagnostics_only=self.diagnostics_only
        )
        system = ParticleSystem(self.scale_, radii, centers=centers)
        self.trajectory_ = simulate(
            system, self.horizon, self._config(), u_bar=self.u_bar, cadence=self.cadence
        )
        self.n_features_in_ = 1
        return self

    def predict(self, times):
        """Radii at ``times`` by linear interpolation between snapshots."""
        check_is_fitted(self, "trajectory_")
        traj = self.trajectory_
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if np.any(times < 0) or np.any(times > traj.times[-1] + 1e-12):
            raise DomainError("prediction times outside the integrated horizon")
        radii = np.stack([s.radii for s in traj.snapshots])
        return interp1d(traj.times, radii, axis=0)(times)
