"""CSV writers shared by the command-line runs.

Every file starts with a ``# config_sha256=<hash>`` line, then a header row.
Floats are written with 17 significant digits so that files round-trip.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np


def config_hash(config_dict):
    """SHA-256 of the canonical JSON form of a plain config mapping."""
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path, columns, rows, digest):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# config_sha256={digest}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path):
    """Return ``(digest, columns, rows)`` with rows as lists of strings."""
    with Path(path).open(newline="") as fh:
        first = fh.readline().strip()
        digest = first.split("=", 1)[1] if first.startswith("# config_sha256=") else None
        reader = csv.reader(fh)
        columns = next(reader)
        return digest, columns, list(reader)


TRAJECTORY_COLUMNS = ("time", "active_count", "volume", "surface", "u_bar",
                      "min_radius", "max_radius")


def write_particle_run(directory, trajectory, digest):
    """Write trajectory, per-snapshot radii, per-step series and extinction log."""
    directory = Path(directory)
    rows = []
    for t, snap, ub in zip(trajectory.times, trajectory.snapshots, trajectory.u_bar):
        r = snap.active_radii
        lo, hi = (r.min(), r.max()) if r.size else (0.0, 0.0)
        rows.append((t, snap.n_active, np.sum(r**3), np.sum(r**2), ub, lo, hi))
    files = [write_csv(directory / "trajectory.csv", TRAJECTORY_COLUMNS, rows, digest)]
    radii_rows = (
        (t, i, r)
        for t, snap in zip(trajectory.times, trajectory.snapshots)
        for i, r in enumerate(snap.radii)
    )
    files.append(write_csv(directory / "radii.csv", ("time", "index", "radius"), radii_rows, digest))
    steps = zip(trajectory.step_times, trajectory.step_volume, trajectory.step_surface,
                trajectory.step_u_bar, trajectory.step_max_radius)
    files.append(write_csv(directory / "steps.csv",
                           ("time", "volume", "surface", "u_bar", "max_radius"), steps, digest))
    files.append(write_csv(directory / "extinctions.csv", ("index", "time"),
                           sorted(trajectory.extinction_log, key=lambda e: (e[1], e[0])), digest))
    return files


MOMENT_COLUMNS = ("time", "u_bar", "moment0", "moment1", "moment2", "moment3",
                  "active_mass", "escaped_mass")


def write_pde_run(directory, trajectory, digest):
    directory = Path(directory)
    rows = (
        (t, ub, *m, a, e)
        for t, ub, m, a, e in zip(trajectory.times, trajectory.u_bar, trajectory.moments,
                                  trajectory.active_mass, trajectory.escaped_mass)
    )
    files = [write_csv(directory / "moments.csv", MOMENT_COLUMNS, rows, digest)]
    centers = trajectory.grid.centers
    prof = ((t, r, n) for t, d in zip(trajectory.times, trajectory.densities)
            for r, n in zip(centers, d.values))
    files.append(write_csv(directory / "profiles.csv", ("time", "r_center", "n"), prof, digest))
    return files


SURVEY_COLUMNS = ("delta", "alpha", "gamma", "max_deviation", "mean_deviation",
                  "envelope", "defect_max")


def write_survey(path, rows, digest):
    return write_csv(path, SURVEY_COLUMNS, rows, digest)
