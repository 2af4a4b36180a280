import numpy as np
import pytest
import yaml

from oracles import two_particle_extinction_time
from ripening import cli, harness
from ripening.exceptions import ConfigError, NumericalFailure
from ripening.export import read_csv


def write_config(tmp_path, data, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


TWO = {"scale": {"delta": 0.0, "alpha": 2.0},
       "initial": {"kind": "explicit", "n": 2, "params": {"radii": [1.0, 2.0]}},
       "horizon": 1.0, "output": {"cadence": 0.25}}


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="scale.bogus"):
        harness.parse_config({"scale": {"delta": 0.1, "alpha": 2.0, "bogus": 1}})
    with pytest.raises(ConfigError, match="extra"):
        harness.parse_config({"scale": {"delta": 0.1, "alpha": 2.0}, "extra": 1})
    with pytest.raises(ConfigError, match="scale.alpha"):
        harness.parse_config({"scale": {"delta": 0.1}})
    with pytest.raises(ConfigError, match="regime"):
        harness.parse_config({"scale": {"delta": 0.1, "alpha": 2.0}, "regime": "x"})


def test_regime_gate():
    raw = {"scale": {"delta": 0.1, "alpha": 1.4}}
    with pytest.raises(ConfigError, match="alpha must exceed 3/2 \\+ epsilon"):
        harness.parse_config(raw)
    cfg = harness.parse_config(raw, diagnostics_only=True)
    assert cfg.scale.diagnostics_only


def test_overrides_change_hash(tmp_path):
    a = harness.parse_config(TWO)
    b = harness.parse_config(TWO, seed=5, out=tmp_path)
    assert b.initial.seed == 5 and b.output.directory == str(tmp_path)
    assert a.digest != b.digest
    assert a.digest == harness.parse_config(TWO, out=tmp_path).digest


def test_two_particle_run(tmp_path):
    cfg = harness.parse_config(TWO, out=tmp_path)
    result = harness.run_particles(cfg)
    assert result.status == harness.EXIT_OK
    digest, cols, rows = read_csv(tmp_path / "extinctions.csv")
    assert digest == cfg.digest and cols == ["index", "time"]
    assert float(rows[0][1]) == pytest.approx(two_particle_extinction_time(), abs=1e-6)
    _, cols, rows = read_csv(tmp_path / "trajectory.csv")
    assert cols == ["time", "active_count", "volume", "surface", "u_bar", "min_radius",
                    "max_radius"]
    assert [r[1] for r in rows] == ["2", "2", "2", "2", "1"]


def test_monodisperse_constant_outputs(tmp_path):
    data = {"scale": {"delta": 0.1, "alpha": 2.0},
            "initial": {"kind": "explicit", "params": {"radii": [1.0] * 8}},
            "horizon": 2.0, "output": {"cadence": 0.5}}
    result = harness.run_particles(harness.parse_config(data, out=tmp_path))
    assert result.status == 0
    _, _, rows = read_csv(tmp_path / "trajectory.csv")
    assert len({tuple(r[1:]) for r in rows}) == 1


def test_determinism(tmp_path):
    data = {"scale": {"delta": 0.2, "alpha": 2.0},
            "initial": {"kind": "lognormal", "n": 60, "params": {"sigma": 0.3}, "seed": 3},
            "horizon": 0.5, "output": {"cadence": 0.1}}
    for sub in ("a", "b"):
        harness.run_particles(harness.parse_config(data, out=tmp_path / sub))
    for name in ("trajectory.csv", "radii.csv", "steps.csv", "extinctions.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_pde_run(tmp_path):
    data = {"scale": {"delta": 0.0, "alpha": 2.0},
            "initial": {"kind": "uniform", "n": 20000, "params": {"low": 1.0, "high": 2.0}},
            "horizon": 0.5, "grid": {"r_max": 3.0, "cell_count": 150},
            "output": {"cadence": 0.25}}
    result = harness.run_pde(harness.parse_config(data, out=tmp_path))
    assert result.status == 0
    assert result.summary["mass_ledger_error"] <= 1e-12
    _, cols, rows = read_csv(tmp_path / "moments.csv")
    assert cols[:3] == ["time", "u_bar", "moment0"] and len(rows) == 3
    _, cols, rows = read_csv(tmp_path / "profiles.csv")
    assert cols == ["time", "r_center", "n"] and len(rows) == 3 * 150


def test_cli_exit_codes(tmp_path, capsys, monkeypatch):
    two = write_config(tmp_path, TWO)
    assert cli.main(["simulate", "--config", str(two), "--out", str(tmp_path / "o")]) == 0
    zero = write_config(tmp_path, {"scale": {"delta": 0.0, "alpha": 2.0},
                                   "initial": {"kind": "explicit", "params": {"radii": [0.0]}}},
                        "zero.yaml")
    assert cli.main(["pde", "--config", str(zero), "--out", str(tmp_path / "z")]) == 2
    assert "extinct input" in capsys.readouterr().err
    low = write_config(tmp_path, {"scale": {"delta": 0.1, "alpha": 1.4}}, "low.yaml")
    assert cli.main(["simulate", "--config", str(low)]) == 2
    assert "alpha must exceed 3/2 + epsilon" in capsys.readouterr().err
    one = write_config(tmp_path, {"scale": {"delta": 0.1, "alpha": 2.0},
                                  "sweep": {"deltas": [0.1]}}, "one.yaml")
    assert cli.main(["sweep", "--config", str(one)]) == 2
    assert ">= 3 points required for a slope" in capsys.readouterr().err

    monkeypatch.setattr(harness, "surface_increase", lambda traj: 1.0)
    assert cli.main(["simulate", "--config", str(two), "--out", str(tmp_path / "i")]) == 1

    def boom(*args, **kwargs):
        raise NumericalFailure("step size underflow")

    monkeypatch.setattr(harness, "simulate", boom)
    assert cli.main(["simulate", "--config", str(two), "--out", str(tmp_path / "n")]) == 3


def test_field_survey_cli(tmp_path):
    cfg = write_config(tmp_path, {"scale": {"delta": 0.25, "alpha": 2.0},
                                  "survey": {"sample_count": 256, "max_particles": 32},
                                  "sweep": {"deltas": [0.5, 0.25, 0.2]}})
    assert cli.main(["field-survey", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 0
    _, cols, rows = read_csv(tmp_path / "s" / "survey.csv")
    assert cols == ["delta", "alpha", "gamma", "max_deviation", "mean_deviation", "envelope",
                    "defect_max"]
    assert len(rows) == 3
    _, _, slopes = read_csv(tmp_path / "s" / "slopes.csv")
    assert {r[0] for r in slopes} == {"deviation", "defect"}


def small_sweep(tmp_path, workers):
    data = {"scale": {"delta": 0.2, "alpha": 2.0},
            "initial": {"kind": "uniform", "params": {"low": 0.5, "high": 1.5}},
            "horizon": 0.4, "grid": {"r_max": 3.0, "cell_count": 150},
            "output": {"cadence": 0.05},
            "sweep": {"deltas": [0.5, 0.34, 0.25], "seeds": [0, 1],
                      "checkpoints": [0.2, 0.4], "survey": False}}
    return harness.run_convergence_sweep(harness.parse_config(data, out=tmp_path), workers=workers)


def test_sweep_outputs(tmp_path):
    res = small_sweep(tmp_path / "a", 1)
    assert res.status == 0
    digest, cols, rows = read_csv(tmp_path / "a" / "summary.csv")
    assert cols[:7] == ["delta", "N", "seed", "gamma", "residual", "w1_at_0.2", "w1_at_0.4"]
    assert len(rows) == 6 and all(r[cols.index("status")] == "ok" for r in rows)
    assert [int(r[1]) for r in rows[::2]] == [8, 25, 64]
    for r in rows:
        assert (tmp_path / "a" / r[-1].split("/")[-1] / "trajectory.csv").exists()
    slope, lo, hi = res.summary["residual_slope"]
    assert lo <= slope <= hi
    par = small_sweep(tmp_path / "b", 2)
    assert ((tmp_path / "a" / "summary.csv").read_text().replace(str(tmp_path / "a"), "")
            == (tmp_path / "b" / "summary.csv").read_text().replace(str(tmp_path / "b"), ""))
    assert np.isfinite(par.summary["residual_slope"][0])
