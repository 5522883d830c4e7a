import numpy as np
import pytest

from adress.geometry import KB, PeriodicBox, instantaneous_temperature
from adress.integrator import (
    IntegrationError,
    IntegratorParams,
    integrate_sites,
    maxwell_boltzmann,
    normals_for_sites,
    philox4x64,
    rng_stream,
    sd_step,
)
from adress.state import SimState

BOX = PeriodicBox.cubic(1000.0)


def _u64(*v):
    return [np.uint64(x) for x in v]


@pytest.mark.parametrize("seed, site, step", [(0, 0, 1), (12345, 7, 99), (2**63 + 5, 2**40, 2**50)])
def test_philox_matches_numpy_reference(seed, site, step):
    # numpy's Philox bumps the counter before producing a block
    ref = np.random.Philox(key=seed, counter=np.array([step - 1, site, 0, 0], dtype=np.uint64)).random_raw(4)
    out = philox4x64(*_u64(step, site, 0, 0), *_u64(seed, 0))
    assert [int(x) for x in out] == [int(x) for x in ref]


def test_rng_stream_deterministic():
    assert rng_stream(42, 3, 17, 1) == rng_stream(42, 3, 17, 1)
    assert rng_stream(42, 3, 17, 1) != rng_stream(43, 3, 17, 1)
    assert rng_stream(42, 3, 17, 0) != rng_stream(42, 3, 17, 1)
    with pytest.raises(ValueError):
        rng_stream(1, 1, 1, 3)


def test_rng_stream_agrees_with_batch():
    ids = np.array([0, 5, 9], dtype=np.uint64)
    batch = normals_for_sites(np.uint64(8), ids, np.uint64(4))
    for row, sid in zip(batch, ids):
        assert [rng_stream(8, int(sid), 4, k) for k in range(3)] == row.tolist()


def test_rng_moments():
    z = normals_for_sites(np.uint64(2024), np.arange(333_334, dtype=np.uint64), np.uint64(1)).ravel()[:1_000_000]
    n = z.size
    assert abs(z.mean()) < 4 / np.sqrt(n)
    assert abs(z.var() - 1.0) < 4 * np.sqrt(2.0 / n)
    # kurtosis of a normal is 3
    assert abs(np.mean(z**4) - 3.0) < 4 * np.sqrt(96.0 / n)


def test_rng_site_streams_uncorrelated():
    ids = np.array([0, 1], dtype=np.uint64)
    a = np.empty(100_000)
    b = np.empty(100_000)
    for s in range(100_000):
        z = normals_for_sites(np.uint64(9), ids, np.uint64(s))
        a[s], b[s] = z[0, 0], z[1, 0]
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.01


def test_free_flight_without_friction():
    x = np.array([[1.0, 2.0, 3.0]])
    v = np.array([[0.5, -1.0, 2.0]])
    st = SimState(x, v, BOX)
    p = IntegratorParams(dt=0.002, friction=0.0)
    out = sd_step(st, np.zeros((1, 3)), p, [12.0])
    np.testing.assert_allclose(out.positions, x + v * 0.002, rtol=1e-15)
    np.testing.assert_array_equal(out.velocities, v)
    assert out.step == 1 and out.time == pytest.approx(0.002)


def test_zero_friction_consumes_no_noise():
    rng = np.random.default_rng(0)
    st = SimState(rng.uniform(0, 5, (20, 3)), rng.normal(size=(20, 3)), BOX)
    f = rng.normal(size=(20, 3))
    a = sd_step(st, f, IntegratorParams(0.002, 0.0, 323.0, seed=1), np.ones(20))
    b = sd_step(st, f, IntegratorParams(0.002, 0.0, 323.0, seed=2), np.ones(20))
    c = sd_step(st, f, IntegratorParams(0.002, 0.5, 323.0, seed=2, thermostat=False), np.ones(20))
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(a.velocities, c.velocities)


def test_harmonic_oscillator_energy():
    # omega = 1 / ps, dt = 1 / (100 omega), 1000 steps
    m, k = 1.0, 1.0
    omega = np.sqrt(k / m)
    dt = 1.0 / (100 * omega)
    center = 500.0
    st = SimState([[center + 1.0, center, center]], [[0.0, 0.3, 0.0]], BOX)
    p = IntegratorParams(dt, friction=0.0)
    # leapfrog starts from v(-dt/2)
    st.velocities = st.velocities + 0.5 * dt * k * (st.positions - center) / m
    energies = []
    for _ in range(1000):
        disp = st.positions - center
        f = -k * disp
        st = sd_step(st, f, p, [m])
        energies.append(st.kinetic_energy + 0.5 * k * float((disp**2).sum()))
    e = np.array(energies)
    assert np.abs(e - e[0]).max() / e[0] < 1e-4


def test_ou_decay_deterministic_limit():
    # T_ref = 0: the OU substep is a pure exponential decay
    gamma, dt, n = 2.0, 0.01, 100
    v0 = np.array([[1.5, -0.5, 0.25]])
    means = []
    for seed in range(1000):
        st = SimState([[1.0, 1.0, 1.0]], v0, BOX)
        p = IntegratorParams(dt, gamma, 0.0, seed=seed)
        for _ in range(n):
            st = sd_step(st, np.zeros((1, 3)), p, [1.0])
        means.append(st.velocities[0])
    means = np.array(means)
    np.testing.assert_allclose(means.mean(0), v0[0] * np.exp(-gamma * n * dt), rtol=1e-12)


def test_ou_decay_statistics_over_seeds():
    gamma, dt, n, T, m = 2.0, 0.01, 50, 300.0, 10.0
    v0 = 1.5
    a = np.exp(-gamma * dt)
    L = np.array([1000.0] * 3)
    finals = np.empty(1000)
    for seed in range(1000):
        pos = np.ones((1, 3))
        vel = np.array([[v0, 0.0, 0.0]])
        p = IntegratorParams(dt, gamma, T, seed=seed)
        for s in range(n):
            integrate_sites(pos, vel, np.zeros((1, 3)), np.array([m]), np.zeros(1, dtype=np.uint64), s, p, L)
        finals[seed] = vel[0, 0]
    mean = v0 * a**n
    var = KB * T / m * (1 - a ** (2 * n))
    se = np.sqrt(var / finals.size)
    assert abs(finals.mean() - mean) < 3 * se
    # sample variance against the closed form, within 4 standard errors
    assert abs(finals.var(ddof=1) - var) < 4 * var * np.sqrt(2.0 / (finals.size - 1))


def test_one_step_noise_variance():
    n, m, T, gamma, dt = 200_000, 14.0, 323.0, 0.5, 0.002
    pos = np.ones((n, 3))
    vel = np.zeros((n, 3))
    p = IntegratorParams(dt, gamma, T, seed=77)
    integrate_sites(pos, vel, np.zeros((n, 3)), np.full(n, m), np.arange(n, dtype=np.uint64), 0, p,
                    np.array([1000.0] * 3))
    expected = (1 - np.exp(-2 * gamma * dt)) * KB * T / m
    assert vel.var() == pytest.approx(expected, rel=4 * np.sqrt(2.0 / (3 * n)))


def test_thermostat_reaches_reference_for_free_particles():
    n = 2000
    rng = np.random.default_rng(1)
    mass = rng.uniform(10, 20, n)
    pos = rng.uniform(0, 10, (n, 3))
    vel = np.zeros((n, 3))
    p = IntegratorParams(0.01, 5.0, 323.0, seed=3)
    L = np.array([10.0] * 3)
    temps = []
    for s in range(400):
        integrate_sites(pos, vel, np.zeros((n, 3)), mass, np.arange(n, dtype=np.uint64), s, p, L)
        if s >= 200:
            temps.append(instantaneous_temperature(vel, mass))
    assert np.mean(temps) == pytest.approx(323.0, rel=0.01)


def test_nan_force_reports_site():
    st = SimState(np.ones((3, 3)), None, BOX)
    f = np.zeros((3, 3))
    f[2, 1] = np.nan
    with pytest.raises(IntegrationError, match="site 2"):
        sd_step(st, f, IntegratorParams(0.001), np.ones(3))


@pytest.mark.parametrize("kw", [{"dt": 0.0}, {"dt": 0.001, "friction": -1.0},
                                {"dt": 0.001, "ref_temperature": -5.0}, {"dt": 0.001, "seed": -1}])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        IntegratorParams(**kw)


def test_positions_wrapped():
    box = PeriodicBox.cubic(2.0)
    st = SimState([[1.999, 0.001, 1.0]], [[1.0, -1.0, 0.0]], box)
    out = sd_step(st, np.zeros((1, 3)), IntegratorParams(0.01, 0.0), [1.0])
    assert np.all(out.positions >= 0) and np.all(out.positions < 2.0)
    np.testing.assert_allclose(out.positions, [[0.009, 1.991, 1.0]], atol=1e-12)


def test_maxwell_boltzmann():
    m = np.random.default_rng(0).uniform(10, 20, 500)
    v = maxwell_boltzmann(m, 323.0, np.random.default_rng(1))
    np.testing.assert_allclose((m[:, None] * v).sum(0), 0.0, atol=1e-10)
    assert instantaneous_temperature(v, m) == pytest.approx(323.0, rel=1e-12)
