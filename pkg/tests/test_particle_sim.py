import numpy as np
import pytest
from scipy.integrate import solve_ivp
from sklearn.base import clone

from oracles import two_particle_extinction_time
from ripening.core import ParticleSystem, ScaleParameters
from ripening.exceptions import DomainError
from ripening.particle_sim import (
    IntegratorConfig,
    ParticleSimulator,
    check_noncollision,
    check_volume_budget,
    detect_extinction,
    envelope_violations,
    frozen_radius,
    growth_law_defect_series,
    initial_radii,
    simulate,
    step,
    surface_increase,
    uniform_bound_monitor,
)

LIMIT = ScaleParameters.limit()
CFG = IntegratorConfig()


def limit_system(radii):
    return ParticleSystem(LIMIT, np.asarray(radii, dtype=float))


def test_monodisperse_step_is_identity():
    sys0 = limit_system([1.0, 1.0, 1.0, 1.0])
    sys1 = step(sys0, None, 0.05, CFG)
    np.testing.assert_array_equal(sys1.radii, sys0.radii)


def test_two_particles_short_time_against_reference():
    def rhs(_, r):
        u = r.sum() / (r * r).sum()
        return u - 1 / r

    ref = solve_ivp(rhs, (0, 0.1), [1.0, 2.0], method="DOP853", rtol=1e-13, atol=1e-14).y[:, -1]
    traj = simulate(limit_system([1.0, 2.0]), 0.1, CFG)
    r = traj.snapshots[-1].radii
    assert r[0] < 1 < 2 < r[1]
    assert abs(np.sum(r**3) - 9) < 1e-10
    np.testing.assert_allclose(r, ref, atol=1e-8)


def test_two_particle_extinction_and_survivor():
    traj = simulate(limit_system([1.0, 2.0]), 2.0, CFG, cadence=0.5)
    (idx, t_ext), = traj.extinction_log
    assert idx == 0
    assert t_ext == pytest.approx(two_particle_extinction_time(), abs=1e-6)
    final = traj.snapshots[-1]
    assert final.radii[0] == 0.0
    assert final.radii[1] == pytest.approx(9 ** (1 / 3), rel=1e-9)
    assert final.extinction_times[0] == t_ext
    report = uniform_bound_monitor(traj)
    assert report.max_radius == pytest.approx(9 ** (1 / 3), rel=1e-9)
    assert report.max_ubar >= 1 / report.max_radius
    assert not report.violated


def test_frozen_zero_field_extinction_time():
    traj = simulate(limit_system([1.0]), 1.0, CFG, u_bar=0.0)
    (_, t_log), = traj.extinction_log
    # logged at the extinction radius; the zero crossing is eps^2/2 later
    assert t_log + CFG.extinction_radius**2 / 2 == pytest.approx(0.5, abs=1e-8)


def test_detect_extinction_examples():
    big = 10.0
    cfg = IntegratorConfig(freeze_threshold=0.2)
    tau = detect_extinction(0.1, 0.0, big, cfg)
    assert tau == pytest.approx((0.01 - cfg.extinction_radius**2) / 2, rel=1e-12)
    tau = detect_extinction(0.1, 1.0, big, cfg)
    assert 0.01 / 4 <= tau <= 0.01
    assert detect_extinction(0.1, 0.0, 1e-4, cfg) is None
    with pytest.raises(DomainError):
        detect_extinction(0.5, 10.0, big, IntegratorConfig(freeze_threshold=0.6))
    with pytest.raises(DomainError):
        detect_extinction(0.1, 0.0, big, IntegratorConfig(freeze_threshold=0.05))


@pytest.mark.parametrize("u", [0.0, 0.5, 2.0])
def test_frozen_radius_matches_quadrature_ode(u):
    r0, da, t = 0.1, 0.01, 0.002

    def rhs(_, r):
        return (u - 1 / r) / (1 + da * r)

    ref = solve_ivp(rhs, (0, t), [r0], rtol=1e-12, atol=1e-14).y[0, -1]
    assert frozen_radius(r0, u, da, t)[0] == pytest.approx(ref, rel=1e-9)


def test_monodisperse_long_horizon_constant():
    traj = simulate(ParticleSystem(ScaleParameters(0.2, 2.0), np.ones(5)), 10.0, CFG, cadence=1.0)
    for snap in traj.snapshots:
        np.testing.assert_array_equal(snap.radii, np.ones(5))
    assert np.all(traj.active_counts == 5)
    report = uniform_bound_monitor(traj)
    assert report.max_ubar == pytest.approx(1.0) and report.max_radius == 1.0


def test_polydisperse_invariants_moderate_run():
    radii = initial_radii("uniform", 200, {"low": 0.5, "high": 1.5}, seed=1)
    traj = simulate(ParticleSystem(ScaleParameters(0.1, 2.0), radii), 0.5, CFG, cadence=0.1)
    assert check_volume_budget(traj) <= 1.0
    assert surface_increase(traj) <= 1e-12
    counts = traj.active_counts
    assert np.all(np.diff(counts) <= 0)
    checked, bad = envelope_violations(traj)
    assert checked > 0 and not bad
    assert np.all(np.diff(traj.times) > 0) and traj.times[0] == 0


def test_growth_law_defect_series_scales():
    radii = initial_radii("uniform", 100, {"low": 0.5, "high": 1.5}, seed=2)
    out = []
    for d in (0.2, 0.1):
        traj = simulate(ParticleSystem(ScaleParameters(d, 2.0), radii), 0.2, CFG, cadence=0.1)
        out.append(max(growth_law_defect_series(traj)))
    assert np.log(out[0] / out[1]) / np.log(2) >= 0.99 - 0.3


def test_initial_radii_kinds():
    u = initial_radii("uniform", 1000, {"low": 0.5, "high": 1.5}, seed=0)
    assert u.min() >= 0.5 and u.max() <= 1.5
    np.testing.assert_array_equal(u, initial_radii("uniform", 1000, {"low": 0.5, "high": 1.5}, seed=0))
    ln = initial_radii("lognormal", 1000, {"mean": 0.0, "sigma": 0.5, "r_max": 2.0}, seed=0)
    assert ln.max() <= 2.0 and ln.min() > 0
    ex = initial_radii("explicit", 4, {"radii": [1.0, 2.0]})
    np.testing.assert_array_equal(ex, [1.0, 2.0, 1.0, 2.0])
    with pytest.raises(DomainError):
        initial_radii("gamma", 3)


def test_volume_budget_config():
    with pytest.raises(DomainError):
        IntegratorConfig(extinction_radius=0.1, freeze_threshold=0.05)
    with pytest.raises(DomainError):
        IntegratorConfig(extinction_radius=1e-2, volume_tolerance=1e-6).check_budget(10)


def test_noncollision():
    centers = np.array([[0.25, 0.5, 0.5], [0.75, 0.5, 0.5]])
    check_noncollision(ParticleSystem(ScaleParameters(0.5, 2.0), [0.9, 0.9], centers=centers))
    with pytest.raises(DomainError):
        check_noncollision(ParticleSystem(ScaleParameters(0.9, 2.0, diagnostics_only=True),
                                          [0.5, 0.5], centers=centers * [0.1, 1, 1]))


def test_simulator_estimator():
    est = ParticleSimulator(delta=0.0, horizon=1.0, cadence=0.25)
    assert clone(est).get_params()["horizon"] == 1.0
    est.fit([1.0, 2.0])
    r = est.predict([0.0, 1.0])
    np.testing.assert_allclose(r[0], [1.0, 2.0])
    assert r[1][0] == 0.0
    with pytest.raises(DomainError):
        est.predict([2.0])
