"""Run configuration, single runs, comparisons and convergence sweeps.

A run is described by a YAML file whose sections map onto the dataclasses
below; unknown keys are rejected. The resolved configuration is hashed and
the hash is written into every output file.
"""
from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy import stats

from . import export
from .core import ParticleSystem, ScaleParameters
from .exceptions import (
    CapacityError,
    ConfigError,
    DomainError,
    DomainTooSmall,
    NumericalFailure,
    RegimeError,
    RipeningError,
    StepRejected,
    SystemExtinct,
)
from .lsw_pde import KineticRegime, RadiusDensity, RadiusGrid, solve
from .measures import TestFunction, empirical_from_snapshot, wasserstein1, weak_form_residual
from .monopole import deviation_survey, lattice_system, max_boundary_defect
from .particle_sim import (
    IntegratorConfig,
    check_volume_budget,
    envelope_violations,
    initial_radii,
    simulate,
    surface_increase,
    uniform_bound_monitor,
)

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
SURFACE_TOLERANCE = 1e-12
MASS_TOLERANCE = 1e-12


@dataclass(frozen=True)
class InitialConfig:
    kind: str = "uniform"
    n: int = 1000
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("uniform", "lognormal", "explicit"):
            raise DomainError(f"unknown kind {self.kind!r}")
        if int(self.n) < 1:
            raise DomainError("n must be positive")

    def sample(self, n=None, seed=None):
        n = self.n if n is None else n
        seed = self.seed if seed is None else seed
        if self.kind == "explicit":
            return np.asarray(self.params.get("radii", []), dtype=float)
        return initial_radii(self.kind, n, self.params, seed)


@dataclass(frozen=True)
class GridConfig:
    r_min: float | None = None
    r_max: float = 3.0
    cell_count: int = 600

    def build(self):
        if self.r_min is None:
            return RadiusGrid.with_default_cutoff(self.r_max, self.cell_count)
        return RadiusGrid(self.r_min, self.r_max, self.cell_count)


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    cadence: float = 0.05
    formats: tuple = ("csv",)

    def __post_init__(self):
        if set(self.formats) - {"csv"}:
            raise DomainError("only the csv format is supported")
        if not self.cadence > 0:
            raise DomainError("cadence must be positive")


@dataclass(frozen=True)
class SurveyConfig:
    sample_count: int = 4096
    profile: str = "cosine"
    base: float = 1.0
    amplitude: float = 0.5
    max_particles: int = 512
    jitter: float = 0.0


@dataclass(frozen=True)
class SweepConfig:
    deltas: tuple = (0.2, 0.1, 0.05)
    seeds: tuple = (0,)
    checkpoints: tuple = ()
    survey: bool = True
    test_r_lo: float = 0.4
    test_r_hi: float = 1.8


@dataclass(frozen=True)
class RunConfig:
    scale: ScaleParameters
    initial: InitialConfig = field(default_factory=InitialConfig)
    horizon: float = 1.0
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    regime: str = "reaction"
    output: OutputConfig = field(default_factory=OutputConfig)
    survey: SurveyConfig = field(default_factory=SurveyConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def to_dict(self):
        return dataclasses.asdict(self)

    @property
    def digest(self):
        # the output location is not part of a run's identity
        d = self.to_dict()
        d["output"].pop("directory")
        return export.config_hash(d)

    def output_times(self):
        cad = self.output.cadence
        ts = np.arange(1, int(np.floor(self.horizon / cad + 1e-9)) + 1) * cad
        extra = [c for c in self.sweep.checkpoints if 0 < c <= self.horizon]
        return np.unique(np.concatenate([ts, extra, [self.horizon]]))


_SECTIONS = {
    "scale": ScaleParameters,
    "initial": InitialConfig,
    "integrator": IntegratorConfig,
    "grid": GridConfig,
    "output": OutputConfig,
    "survey": SurveyConfig,
    "sweep": SweepConfig,
}
_TUPLE_FIELDS = {"formats", "deltas", "seeds", "checkpoints"}


def _build_section(name, raw):
    cls = _SECTIONS[name]
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("expected a mapping", field=name)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError("unknown key", field=f"{name}.{key}")
    kwargs = {k: tuple(v) if k in _TUPLE_FIELDS else v for k, v in raw.items()}
    if name == "scale":
        for key in ("delta", "alpha"):
            if key not in kwargs:
                raise ConfigError("missing required key", field=f"scale.{key}")
    try:
        return cls(**kwargs)
    except RegimeError as exc:
        raise ConfigError(str(exc), field=f"{name}.alpha") from exc
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), field=name) from exc


def parse_config(raw, *, out=None, seed=None, diagnostics_only=False):
    """Build a :class:`RunConfig` from a plain mapping plus command-line overrides."""
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping")
    allowed = set(_SECTIONS) | {"horizon", "regime"}
    for key in raw:
        if key not in allowed:
            raise ConfigError("unknown key", field=key)
    raw = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}
    if diagnostics_only:
        raw.setdefault("scale", {})["diagnostics_only"] = True
    if seed is not None:
        raw.setdefault("initial", {})["seed"] = int(seed)
        raw.setdefault("sweep", {})["seeds"] = [int(seed)]
    if out is not None:
        raw.setdefault("output", {})["directory"] = str(out)
    if "scale" not in raw:
        raise ConfigError("missing required section", field="scale")
    parts = {name: _build_section(name, raw.get(name)) for name in _SECTIONS if name in raw}
    horizon = raw.get("horizon", 1.0)
    if not isinstance(horizon, (int, float)) or horizon <= 0:
        raise ConfigError("must be a positive number", field="horizon")
    regime = raw.get("regime", "reaction")
    try:
        KineticRegime(regime)
    except ValueError as exc:
        raise ConfigError(f"unknown regime {regime!r}", field="regime") from exc
    return RunConfig(horizon=float(horizon), regime=regime, **parts)


def load_config(path, **overrides):
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    return parse_config(raw or {}, **overrides)


def exit_code_for(exc):
    if isinstance(exc, (ConfigError, DomainError, SystemExtinct)):
        return EXIT_CONFIG
    return EXIT_NUMERICAL


@dataclass
class RunResult:
    status: int
    files: list
    summary: dict


# -- single runs -----------------------------------------------------------------


def _particle_checks(traj):
    checked, bad = envelope_violations(traj)
    report = {
        "volume_budget_ratio": check_volume_budget(traj),
        "surface_increase": surface_increase(traj),
        "envelope_checked": checked,
        "envelope_violations": len(bad),
        "bound_violated": bool(uniform_bound_monitor(traj).violated),
        "extinctions": len(traj.extinction_log),
        "final_active": int(traj.snapshots[-1].n_active),
    }
    ok = (report["volume_budget_ratio"] <= 1.0
          and report["surface_increase"] <= SURFACE_TOLERANCE
          and not bad and not report["bound_violated"])
    return ok, report


def _simulate_particles(config, radii):
    if not np.any(np.asarray(radii) > 0):
        raise SystemExtinct("extinct input: no positive initial radius")
    system = ParticleSystem(config.scale, radii)
    return simulate(system, config.horizon, config.integrator, output_times=config.output_times())


def run_particles(config, directory=None):
    """Simulate the configured system and write its CSV outputs."""
    directory = Path(directory or config.output.directory)
    traj = _simulate_particles(config, config.initial.sample())
    files = export.write_particle_run(directory, traj, config.digest)
    ok, report = _particle_checks(traj)
    return RunResult(EXIT_OK if ok else EXIT_INVARIANT, files, report)


def _pde_checks(traj):
    ledger = traj.active_mass + traj.escaped_mass
    mass_error = float(np.max(np.abs(ledger - ledger[0])) / ledger[0])
    min_value = float(min(d.values.min() for d in traj.densities))
    report = {
        "mass_ledger_error": mass_error,
        "min_value": min_value,
        "volume_drift": float(traj.volume_drift()[-1]),
        "final_active_fraction": float(traj.active_fraction[-1]),
        "steps": traj.n_steps,
    }
    return mass_error <= MASS_TOLERANCE and min_value >= 0.0, report


def _solve_pde(config, radii):
    density = RadiusDensity.from_histogram(config.grid.build(), radii)
    return solve(density, config.regime, config.horizon, output_times=config.output_times())


def run_pde(config, directory=None):
    """Solve the transport equation from the histogram of the configured initial radii."""
    directory = Path(directory or config.output.directory)
    traj = _solve_pde(config, config.initial.sample())
    files = export.write_pde_run(directory, traj, config.digest)
    ok, report = _pde_checks(traj)
    return RunResult(EXIT_OK if ok else EXIT_INVARIANT, files, report)


def survey_row(config, delta):
    sv = config.survey
    sc = config.scale
    system, ubar = lattice_system(
        delta, sc.alpha, sc.epsilon, profile=sv.profile, jitter=sv.jitter,
        seed=config.initial.seed, diagnostics_only=sc.diagnostics_only,
        base=sv.base, amplitude=sv.amplitude,
    )
    rep = deviation_survey(system, ubar, sv.sample_count, config.initial.seed)
    defect = max_boundary_defect(system, ubar, sv.max_particles)
    return (rep.delta, rep.alpha, rep.gamma, rep.max_deviation, rep.mean_deviation,
            rep.envelope, defect)


def fit_slope(deltas, values, confidence=0.95):
    """Least-squares slope of ``log(values)`` against ``log(deltas)`` with a t interval."""
    x, y = np.log(np.asarray(deltas, float)), np.log(np.asarray(values, float))
    if x.size < 3 or np.unique(x).size < 2:
        raise ConfigError(">= 3 points required for a slope", field="sweep.deltas")
    fit = stats.linregress(x, y)
    half = stats.t.ppf(0.5 + confidence / 2, x.size - 2) * fit.stderr
    return float(fit.slope), float(fit.slope - half), float(fit.slope + half)


def run_field_survey(config, directory=None):
    """Deviation survey and boundary defect at each sweep delta (or the configured one)."""
    directory = Path(directory or config.output.directory)
    deltas = config.sweep.deltas or (config.scale.delta,)
    rows = [survey_row(config, d) for d in deltas]
    files = [export.write_survey(directory / "survey.csv", rows, config.digest)]
    summary = {"rows": rows}
    if len(deltas) >= 3:
        summary["deviation_slope"] = fit_slope(deltas, [r[3] for r in rows])
        summary["defect_slope"] = fit_slope(deltas, [r[6] for r in rows])
        files.append(_write_slopes(directory, summary, config.digest))
    return RunResult(EXIT_OK, files, summary)


def _write_slopes(directory, summary, digest):
    rows = [(k.removesuffix("_slope"), *v) for k, v in summary.items() if k.endswith("_slope")]
    return export.write_csv(directory / "slopes.csv", ("quantity", "slope", "ci_low", "ci_high"),
                            rows, digest)


def _index_of(times, t):
    j = int(np.argmin(np.abs(np.asarray(times) - t)))
    if not np.isclose(times[j], t, rtol=0, atol=1e-9):
        raise DomainError(f"checkpoint {t} is not an output time")
    return j


def _checkpoints(config):
    return config.sweep.checkpoints or (config.horizon,)


def _comparison_metrics(config, traj, pde_traj):
    phi = TestFunction(config.horizon, config.sweep.test_r_lo, config.sweep.test_r_hi)
    w1 = []
    for c in _checkpoints(config):
        snap = traj.snapshots[_index_of(traj.times, c)]
        dens = pde_traj.densities[_index_of(pde_traj.times, c)]
        w1.append(wasserstein1(empirical_from_snapshot(snap), dens))
    return weak_form_residual(traj, phi), w1


def report_columns(config):
    return ("delta", "N", "gamma", "residual", *(f"w1_at_{c:g}" for c in _checkpoints(config)))


def run_compare(config, directory=None):
    """Particle run against the matched PDE run: residual and W1 at the checkpoints."""
    directory = Path(directory or config.output.directory)
    radii = config.initial.sample()
    traj = _simulate_particles(config, radii)
    pde_traj = _solve_pde(config, radii)
    residual, w1 = _comparison_metrics(config, traj, pde_traj)
    files = export.write_particle_run(directory / "particles", traj, config.digest)
    files += export.write_pde_run(directory / "pde", pde_traj, config.digest)
    row = (config.scale.delta, radii.size, config.scale.gamma, residual, *w1)
    files.append(export.write_csv(directory / "report.csv", report_columns(config), [row],
                                  config.digest))
    ok, report = _particle_checks(traj)
    report.update(residual=residual, w1=w1)
    return RunResult(EXIT_OK if ok else EXIT_INVARIANT, files, report)


# -- sweeps ------------------------------------------------------------------------


def particle_count(delta):
    """Particles in the unit cube at lattice spacing ``delta``."""
    return int(round(delta**-3))


def _cell_config(config, delta, seed):
    scale = dataclasses.replace(config.scale, delta=delta)
    initial = dataclasses.replace(config.initial, n=particle_count(delta), seed=seed)
    return dataclasses.replace(config, scale=scale, initial=initial)


def _sweep_cell(config, delta, seed, pde_traj, directory):
    """One (delta, seed) cell; failures are caught and reported in the row."""
    cell = _cell_config(config, delta, seed)
    row = {"delta": delta, "seed": seed, "N": cell.initial.n, "gamma": cell.scale.gamma,
           "run_dir": str(directory), "status": "ok"}
    try:
        traj = _simulate_particles(cell, cell.initial.sample())
        export.write_particle_run(directory, traj, config.digest)
        ok, report = _particle_checks(traj)
        row["residual"], row["w1"] = _comparison_metrics(cell, traj, pde_traj)
        row["active_fraction"] = traj.snapshots[-1].n_active / cell.initial.n
        if not ok:
            row["status"] = "invariant"
            row["detail"] = report
        if config.sweep.survey:
            s = survey_row(cell, delta)
            row["max_deviation"], row["defect_max"] = s[3], s[6]
    except (NumericalFailure, StepRejected, DomainTooSmall, CapacityError) as exc:
        row["status"] = f"numerical: {exc}"
    except RipeningError as exc:
        row["status"] = f"error: {exc}"
    return row


def run_convergence_sweep(config, directory=None, workers=1):
    """Particle runs over ``sweep.deltas`` x ``sweep.seeds`` against matched PDE runs.

    The PDE for each seed starts from the histogram of the finest cell's
    initial radii. Returns a :class:`RunResult` whose summary carries the
    rows and the fitted slopes.
    """
    directory = Path(directory or config.output.directory)
    deltas = tuple(float(d) for d in config.sweep.deltas)
    if len(deltas) < 3:
        raise ConfigError(">= 3 points required for a slope", field="sweep.deltas")
    finest = min(deltas)
    pde = {}
    files = []
    for seed in config.sweep.seeds:
        cell = _cell_config(config, finest, seed)
        pde[seed] = _solve_pde(cell, cell.initial.sample())
        files += export.write_pde_run(directory / f"pde_seed_{seed}", pde[seed], config.digest)

    jobs = [(d, s, directory / f"delta_{d:g}_seed_{s}") for d in deltas for s in config.sweep.seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_sweep_cell, config, d, s, pde[s], p) for d, s, p in jobs]
            rows = [f.result() for f in futs]
    else:
        rows = [_sweep_cell(config, d, s, pde[s], p) for d, s, p in jobs]

    checkpoints = _checkpoints(config)
    table = []
    for r in rows:
        w1 = r.get("w1", [np.nan] * len(checkpoints))
        table.append((r["delta"], r["N"], r["seed"], r["gamma"], r.get("residual", np.nan), *w1,
                      r.get("active_fraction", np.nan), r.get("max_deviation", np.nan),
                      r.get("defect_max", np.nan), r["status"], r["run_dir"]))
    cols = (*report_columns(config)[:2], "seed", *report_columns(config)[2:],
            "active_fraction", "max_deviation", "defect_max", "status", "run_dir")
    files.append(export.write_csv(directory / "summary.csv", cols, table, config.digest))

    good = [r for r in rows if r["status"] == "ok"]
    summary = {"rows": rows, "w1_monotone": _w1_monotone(good, checkpoints)}
    if len({r["delta"] for r in good}) >= 3:
        ds = [r["delta"] for r in good]
        summary["residual_slope"] = fit_slope(ds, [r["residual"] for r in good])
        if config.sweep.survey:
            summary["deviation_slope"] = fit_slope(ds, [r["max_deviation"] for r in good])
            summary["defect_slope"] = fit_slope(ds, [r["defect_max"] for r in good])
    files.append(_write_slopes(directory, summary, config.digest))

    if any(r["status"].startswith("numerical") for r in rows):
        status = EXIT_NUMERICAL
    elif len(good) < len(rows):
        status = EXIT_INVARIANT
    else:
        status = EXIT_OK
    return RunResult(status, files, summary)


def _w1_monotone(rows, checkpoints, slack=0.2):
    """Per checkpoint: does seed-averaged W1 decrease with delta within ``slack``?"""
    out = []
    for k in range(len(checkpoints)):
        by_delta = {}
        for r in rows:
            by_delta.setdefault(r["delta"], []).append(r["w1"][k])
        ds = sorted(by_delta, reverse=True)
        w = [np.mean(by_delta[d]) for d in ds]
        out.append(all(b <= a * (1 + slack) for a, b in zip(w, w[1:])))
    return out
