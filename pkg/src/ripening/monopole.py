"""Monopole approximation of the chemical potential over lattice-placed particles.

The approximation is the mean field plus one point-source term per particle,
``u_bar + sum_j c_j / |x - x_j|`` with
``c_j = delta_alpha R_j / (1 + delta_alpha R_j) * (1 - u_bar R_j) * delta_alpha``.
Nothing here solves the exterior Laplace problem; the defect checks compare
the approximation against the mean field and against the particle boundary
relation.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import ParticleSystem, ScaleParameters, lattice_size, mean_field
from .exceptions import CapacityError, DomainError, RipeningError, SystemExtinct
from .validation import check_points

MAX_CENTERS = 2_000_000
_CHUNK = 4_000_000  # point-particle pairs evaluated per block


@dataclass(frozen=True)
class LatticeConfig:
    delta: float
    jitter: float = 0.0
    max_centers: int = MAX_CENTERS

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise DomainError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0.0 <= self.jitter < 0.5:
            raise DomainError(f"jitter must lie in [0, 1/2), got {self.jitter}")


@dataclass(frozen=True)
class FieldSample:
    point: np.ndarray
    value: float
    deviation: float


@dataclass(frozen=True)
class SurveyReport:
    delta: float
    alpha: float
    gamma: float
    max_deviation: float
    mean_deviation: float
    envelope: float
    n_points: int
    n_tries: int


def place_lattice(config, seed=0):
    """Cell-centred cubic lattice ``(k + 1/2) delta`` inside the unit cube.

    Each center is displaced by ``jitter * delta`` times a uniform vector in
    ``[-1, 1]^3`` drawn from ``seed``.

    Raises
    ------
    CapacityError
        If the lattice holds more than ``config.max_centers`` points.
    """
    k = lattice_size(config.delta)
    count = k**3
    if count > config.max_centers:
        raise CapacityError(
            f"lattice with delta={config.delta} needs {count} centers "
            f"(budget {config.max_centers})",
            required=count,
        )
    axis = (np.arange(k) + 0.5) * config.delta
    centers = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    if config.jitter > 0:
        rng = np.random.default_rng(seed)
        centers = centers + config.jitter * config.delta * rng.uniform(-1, 1, centers.shape)
    return centers


def profile_radii(centers, kind="cosine", base=1.0, amplitude=0.5, seed=0):
    """Fixed polydisperse radii assigned to lattice centers.

    ``cosine`` varies smoothly in space, ``R = base + amplitude cos(pi x_1)``,
    so the configuration has the same continuum limit for every ``delta``;
    ``uniform`` draws i.i.d. radii in ``[base - amplitude, base + amplitude]``.
    """
    centers = np.asarray(centers, dtype=float)
    if kind == "cosine":
        return base + amplitude * np.cos(np.pi * centers[:, 0])
    if kind == "uniform":
        rng = np.random.default_rng(seed)
        return rng.uniform(base - amplitude, base + amplitude, len(centers))
    raise DomainError(f"unknown radius profile {kind!r}")


def direction_set(n=26):
    """Unit vectors from the axis, edge and corner directions of a cube (26 total)."""
    dirs = np.array([d for d in itertools.product((-1, 0, 1), repeat=3) if any(d)], dtype=float)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    if n > len(dirs):
        raise DomainError(f"at most {len(dirs)} directions available")
    return dirs[:n]


def _active_parts(system, u_bar):
    if system.centers is None:
        raise DomainError("field evaluation needs particle centers")
    idx = np.flatnonzero(system.active)
    r = system.radii[idx]
    da = system.scale.delta_alpha
    coef = da * r / (1.0 + da * r) * (1.0 - u_bar * r) * da
    return idx, system.centers[idx], coef, da * r


def _monopole_sum(points, centers, coef, phys_radii, check_inside=True, exclude=None):
    out = np.empty(len(points))
    if len(centers) == 0:
        out[:] = 0.0
        return out
    step = max(1, _CHUNK // max(1, len(centers)))
    for s in range(0, len(points), step):
        p = points[s : s + step]
        d = np.sqrt(((p[:, None, :] - centers[None, :, :]) ** 2).sum(-1))
        if check_inside and np.any(d < phys_radii * (1.0 - 1e-12)):
            raise DomainError("evaluation point lies inside a particle")
        if exclude is not None:
            d[np.arange(len(p)), exclude[s : s + step]] = np.inf
        out[s : s + step] = (coef / d).sum(axis=1)
    return out


def evaluate_zeta(system, u_bar, point):
    """Monopole approximation at one point (or an ``(n, 3)`` array of points).

    Raises
    ------
    DomainError
        If a point lies strictly inside a particle ball.
    """
    pts = check_points(point)
    _, centers, coef, phys = _active_parts(system, u_bar)
    vals = u_bar + _monopole_sum(pts, centers, coef, phys)
    return float(vals[0]) if np.ndim(point) == 1 else vals


def boundary_defect(system, u_bar, particle, directions=None):
    """Largest neighbour contribution to the monopole field on particle ``particle``'s sphere.

    This is the amount by which the approximation misses the boundary
    relation ``u = 1/R + dR/dt`` on that particle: the sum over ``j != i`` of
    the point-source terms, maximized over the sample directions.
    """
    if not system.active[particle]:
        raise DomainError(f"particle {particle} is not active")
    return float(boundary_defects(system, u_bar, [particle], directions)[0])


def boundary_defects(system, u_bar, particles=None, directions=None):
    """Vectorized :func:`boundary_defect` over ``particles`` (default: all active)."""
    dirs = direction_set() if directions is None else np.asarray(directions, dtype=float)
    idx, centers, coef, phys = _active_parts(system, u_bar)
    pos = {int(i): k for k, i in enumerate(idx)}
    if particles is None:
        particles = idx
    rows = []
    for p in np.atleast_1d(particles):
        if int(p) not in pos:
            raise DomainError(f"particle {p} is not active")
        rows.append(pos[int(p)])
    rows = np.asarray(rows, dtype=int)
    pts = (centers[rows, None, :] + phys[rows, None, None] * dirs[None, :, :]).reshape(-1, 3)
    own = np.repeat(rows, len(dirs))
    vals = _monopole_sum(pts, centers, coef, phys, check_inside=False, exclude=own)
    return np.abs(vals.reshape(len(rows), len(dirs))).max(axis=1)


def max_boundary_defect(system, u_bar, max_particles=512, directions=None):
    """Largest boundary defect over an evenly strided subset of active particles."""
    idx = np.flatnonzero(system.active)
    if idx.size > max_particles:
        idx = idx[np.linspace(0, idx.size - 1, max_particles).round().astype(int)]
    return float(boundary_defects(system, u_bar, idx, directions).max())


def exterior_points(system, count, seed=0, max_rounds=64):
    """Scrambled-Sobol points in the unit cube outside every particle ball.

    Returns ``(points, n_tries)``.

    Raises
    ------
    RipeningError
        If ``count`` exterior points are not found within ``max_rounds`` draws.
    """
    idx, centers, _, phys = _active_parts(system, 0.0)
    tree = cKDTree(centers) if len(centers) else None
    rmax = phys.max() if len(phys) else 0.0
    sobol = qmc.Sobol(d=3, scramble=True, seed=seed)
    kept, tries = [], 0
    n_kept = 0
    batch = int(2 ** np.ceil(np.log2(max(count, 2))))
    for _ in range(max_rounds):
        pts = sobol.random(batch)
        tries += batch
        if tree is not None:
            ok = np.ones(batch, dtype=bool)
            for i, near in enumerate(tree.query_ball_point(pts, rmax)):
                if near:
                    dist = np.linalg.norm(centers[near] - pts[i], axis=1)
                    ok[i] = np.all(dist >= phys[near])
            pts = pts[ok]
        kept.append(pts)
        n_kept += len(pts)
        if n_kept >= count:
            return np.concatenate(kept)[:count], tries
    raise RipeningError(
        f"found only {n_kept} exterior points in {tries} draws; "
        "particles overlap or the volume fraction is too high"
    )


def deviation_survey(system, u_bar, sample_count=4096, seed=0):
    """Sample ``|zeta - u_bar|`` at exterior quasi-random points.

    The report carries the max and mean deviation and the theoretical envelope
    ``delta**gamma (1 + 2 sup R)(1 + u_bar sup R)`` for comparison.
    """
    if sample_count < 1:
        raise DomainError("sample_count must be at least 1")
    if system.n_active == 0:
        raise SystemExtinct("system extinct: nothing to survey")
    pts, tries = exterior_points(system, sample_count, seed)
    _, centers, coef, phys = _active_parts(system, u_bar)
    dev = np.abs(_monopole_sum(pts, centers, coef, phys, check_inside=False))
    scale = system.scale
    sup_r = float(system.active_radii.max())
    envelope = scale.delta_gamma * (1 + 2 * sup_r) * (1 + u_bar * sup_r)
    return SurveyReport(
        delta=scale.delta,
        alpha=scale.alpha,
        gamma=scale.gamma,
        max_deviation=float(dev.max()),
        mean_deviation=float(dev.mean()),
        envelope=float(envelope),
        n_points=len(pts),
        n_tries=tries,
    )


def discrete_laplacian(system, u_bar, point, h):
    """Seven-point Laplacian of the monopole field at an exterior ``point``."""
    p = np.asarray(point, dtype=float)
    offsets = np.vstack([np.zeros(3), h * np.eye(3), -h * np.eye(3)])
    vals = evaluate_zeta(system, u_bar, p + offsets)
    return float((vals[1:].sum() - 6.0 * vals[0]) / h**2)


def lattice_system(delta, alpha, epsilon=0.01, profile="cosine", jitter=0.0, seed=0,
                   diagnostics_only=False, **profile_kw):
    """Lattice-placed particle system with a fixed radius profile, plus its mean field."""
    scale = ScaleParameters(delta, alpha, epsilon, diagnostics_only=diagnostics_only)
    centers = place_lattice(LatticeConfig(delta, jitter), seed)
    radii = profile_radii(centers, profile, seed=seed, **profile_kw)
    system = ParticleSystem(scale, radii, centers=centers)
    return system, mean_field(radii, scale.delta_alpha).u_bar


class MonopoleField(BaseEstimator):
    """Estimator wrapper: ``fit`` takes radii and centers, ``predict`` evaluates the field.

    Attributes
    ----------
    system_ : ParticleSystem
    u_bar_ : float
        Mean field of the fitted configuration.
    """

    def __init__(self, delta=0.1, alpha=2.0, epsilon=0.01, jitter=0.0, seed=0,
                 sample_count=4096, diagnostics_only=False):
        self.delta = delta
        self.alpha = alpha
        self.epsilon = epsilon
        self.jitter = jitter
        self.seed = seed
        self.sample_count = sample_count
        self.diagnostics_only = diagnostics_only

    def fit(self, X, y=None, centers=None):
        """``X`` holds one radius per center; centers default to the lattice."""
        scale = ScaleParameters(self.delta, self.alpha, self.epsilon,
                                diagnostics_only=self.diagnostics_only)
        if centers is None:
            centers = place_lattice(LatticeConfig(self.delta, self.jitter), self.seed)
        radii = np.ravel(np.asarray(X, dtype=float))
        if radii.size != len(centers):
            raise DomainError(f"got {radii.size} radii for {len(centers)} centers")
        self.system_ = ParticleSystem(scale, radii, centers=centers)
        self.u_bar_ = mean_field(radii, scale.delta_alpha).u_bar
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        """Monopole field at the ``(n, 3)`` points ``X``."""
        check_is_fitted(self, "system_")
        return evaluate_zeta(self.system_, self.u_bar_, check_points(X))

    def survey(self):
        check_is_fitted(self, "system_")
        return deviation_survey(self.system_, self.u_bar_, self.sample_count, self.seed)

    def boundary_defect(self, particle):
        check_is_fitted(self, "system_")
        return boundary_defect(self.system_, self.u_bar_, particle)
