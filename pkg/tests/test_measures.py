import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import cdf_l1_quadrature, transport_assignment, transport_lp
from ripening.core import ParticleSystem, ScaleParameters
from ripening.exceptions import DomainError, SystemExtinct
from ripening.lsw_pde import RadiusDensity, RadiusGrid, solve
from ripening.measures import (
    EmpiricalMeasure,
    TestFunction,
    active_fraction_series,
    empirical_from_snapshot,
    total_variation,
    wasserstein1,
    weak_form_residual,
)
from ripening.particle_sim import simulate

LIMIT = ScaleParameters.limit()


def atoms(xs, ks):
    return EmpiricalMeasure.from_radii(np.repeat(xs, ks))


# at most 5 distinct positions with small integer multiplicities
atomic = st.lists(st.tuples(st.floats(0.01, 5.0), st.integers(1, 3)), min_size=1, max_size=5)


def test_empirical_examples():
    m = empirical_from_snapshot(ParticleSystem(LIMIT, [1.0, 1.0, 2.0, 0.0]))
    np.testing.assert_array_equal(m.radii, [1.0, 1.0, 2.0])
    assert m.weight == 0.25 and m.total_weight == 0.75
    mono = empirical_from_snapshot(ParticleSystem(LIMIT, np.ones(100)))
    assert mono.total_weight == pytest.approx(1.0)
    assert np.unique(mono.radii).tolist() == [1.0]
    empty = empirical_from_snapshot(ParticleSystem(LIMIT, [0.0, 0.0]))
    assert empty.is_empty and empty.total_weight == 0


def test_empirical_after_two_particle_extinction():
    traj = simulate(ParticleSystem(LIMIT, [1.0, 2.0]), 1.5, cadence=0.5)
    m = empirical_from_snapshot(traj.snapshots[-1])
    assert m.radii.size == 1
    assert m.radii[0] == pytest.approx(9 ** (1 / 3), rel=1e-9)
    assert m.total_weight == 0.5


def test_third_moment_consistency():
    radii = np.random.default_rng(0).uniform(0.5, 1.5, 50)
    radii[::7] = 0
    sys_ = ParticleSystem(LIMIT, radii)
    m = empirical_from_snapshot(sys_)
    assert m.moment(3) * sys_.initial_count == pytest.approx(np.sum(radii**3), rel=1e-14)


def test_w1_examples():
    a = atoms([1.0, 2.0], [1, 1])
    assert wasserstein1(a, a) == 0.0
    assert wasserstein1(atoms([1.0], [1]), atoms([2.0], [1])) == pytest.approx(1.0)
    g = RadiusGrid(0.5, 3.5, 300)
    uni = RadiusDensity.uniform(g, 1.0, 3.0)
    pair = atoms([1.0, 3.0], [1, 1])
    assert wasserstein1(pair, uni) == pytest.approx(0.5, rel=1e-12)

    def cdf_pair(x):
        return 0.5 * (x >= 1) + 0.5 * (x >= 3)

    def cdf_uni(x):
        return np.clip((x - 1) / 2, 0, 1)

    assert cdf_l1_quadrature(cdf_pair, cdf_uni, 0.0, 4.0) == pytest.approx(0.5, abs=1e-4)


def test_w1_zero_mass():
    g = RadiusGrid(0.5, 3.5, 30)
    with pytest.raises(SystemExtinct):
        wasserstein1(EmpiricalMeasure.from_radii([0.0]), atoms([1.0], [1]))
    with pytest.raises(SystemExtinct):
        wasserstein1(RadiusDensity(g, np.zeros(30)), atoms([1.0], [1]))


@given(atomic, atomic)
def test_w1_matches_transport_oracle(pa, pb):
    xa, ka = map(np.array, zip(*pa))
    xb, kb = map(np.array, zip(*pb))
    ta, tb = ka.sum(), kb.sum()
    ref = transport_assignment(xa, ka * tb, xb, kb * ta)
    assert wasserstein1(atoms(xa, ka), atoms(xb, kb)) == pytest.approx(ref, abs=1e-10)


@given(atomic, atomic)
def test_w1_lp_oracle(pa, pb):
    xa, ka = map(np.array, zip(*pa))
    xb, kb = map(np.array, zip(*pb))
    ref = transport_lp(xa, ka / ka.sum(), xb, kb / kb.sum())
    assert wasserstein1(atoms(xa, ka), atoms(xb, kb)) == pytest.approx(ref, abs=1e-8)


@given(atomic, atomic, atomic)
def test_w1_metric_axioms(pa, pb, pc):
    a, b, c = (atoms(*map(np.array, zip(*p))) for p in (pa, pb, pc))
    ab, ba = wasserstein1(a, b), wasserstein1(b, a)
    assert ab == pytest.approx(ba, abs=1e-14)
    assert wasserstein1(a, a) == 0.0
    assert ab <= wasserstein1(a, c) + wasserstein1(c, b) + 1e-12
    xa, na = np.unique(a.radii, return_counts=True)
    xb, nb = np.unique(b.radii, return_counts=True)
    same = np.array_equal(xa, xb) and np.allclose(na / na.sum(), nb / nb.sum())
    assert (ab <= 1e-14) == same


def test_test_function_support_and_derivatives():
    phi = TestFunction(1.0, 0.5, 1.5)
    assert phi(0.0, 1.0) == 1.0
    assert phi(1.0, 1.0) == 0.0 and phi(0.5, 0.5) == 0.0 and phi(0.5, 2.0) == 0.0
    t, r, h = 0.3, 0.8, 1e-6
    assert phi.dt(t, r) == pytest.approx((phi(t + h, r) - phi(t - h, r)) / (2 * h), rel=1e-6)
    assert phi.dr(t, r) == pytest.approx((phi(t, r + h) - phi(t, r - h)) / (2 * h), rel=1e-6)
    with pytest.raises(DomainError):
        TestFunction(1.0, 0.0, 1.0)


def test_residual_zero_cases():
    traj = simulate(ParticleSystem(LIMIT, np.ones(10)), 1.0, cadence=0.01)
    # support away from every radius: phi vanishes on the data
    assert weak_form_residual(traj, TestFunction(1.0, 2.0, 3.0)) == 0.0
    # stationary monodisperse data: exact residual is b(1) - b(0) + b(0) = 0
    assert weak_form_residual(traj, TestFunction(1.0, 0.5, 1.5)) < 1e-4
    with pytest.raises(DomainError):
        weak_form_residual(traj, TestFunction(2.0, 0.5, 1.5))


def test_residual_pde_consistent():
    res = []
    for cells in (150, 300):
        g = RadiusGrid(0.003, 3.0, cells)
        traj = solve(RadiusDensity.uniform(g, 1.0, 2.0), "reaction", 0.5, cadence=0.005)
        res.append(weak_form_residual(traj, TestFunction(0.5, 0.6, 2.2)))
    assert res[1] < res[0] < 1e-2


def test_active_fraction_series():
    traj = simulate(ParticleSystem(LIMIT, np.ones(4)), 1.0, cadence=0.5)
    _, a = active_fraction_series(traj)
    assert np.all(a == 1.0)
    traj = simulate(ParticleSystem(LIMIT, [1.0, 2.0]), 1.5, cadence=0.05)
    t, a = active_fraction_series(traj)
    (_, t_ext), = traj.extinction_log
    np.testing.assert_array_equal(a, np.where(t < t_ext, 1.0, 0.5))
    assert total_variation(a) == pytest.approx(a[0] - a[-1])
    g = RadiusGrid(0.003, 3.0, 100)
    pde = solve(RadiusDensity.uniform(g, 1.0, 2.0), "reaction", 0.2, cadence=0.1)
    _, a = active_fraction_series(pde)
    np.testing.assert_allclose(a, 1.0, atol=1e-14)
