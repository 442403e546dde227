import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from swingguard import pmu
from swingguard.netmodel import wscc9
from swingguard.simulator import ApplyFault, EventSchedule, integrate


@pytest.fixture(scope="module")
def traj():
    return integrate(wscc9(damping=1.0), EventSchedule.fault_clear(ApplyFault(bus=7), 0.1, ("L5-7",)), 2.0, 1e-3)


def stream_of(arr):
    n, m = arr.shape
    return pmu.DerivedStream(np.arange(n) * 0.02, tuple(f"G{j}" for j in range(m)), arr.copy(), arr.copy(),
                             arr.copy())


def test_sample_count(traj):
    s = pmu.sample(traj, 0.02)
    assert len(s.t) == 101
    assert s.delta.shape == (101, 3)


def test_flat_speed_is_nominal_frequency(smib):
    s = pmu.sample(integrate(smib, (), 1.0, 1e-3), 0.02)
    assert np.all(s.freq == smib.f0)


def test_cycle_limits(traj):
    with pytest.raises(pmu.PmuError):
        pmu.sample(traj, 0.01)
    with pytest.raises(pmu.PmuError):
        pmu.sample(traj, 0.2)
    with pytest.raises(pmu.PmuError):
        pmu.sample(traj, 0.0255)


def test_derive_substitution():
    raw = pmu.PmuStream(np.array([0.0]), ("G1",), np.array([[0.0]]), np.array([[50.05]]),
                        np.array([[0.7]]), np.array([[0.7]]), 50.0)
    d = pmu.derive(raw)
    assert d.domega[0, 0] == pytest.approx(2 * math.pi * 0.001, rel=1e-9)
    assert d.dp[0, 0] == 0.0


def test_round_trip_matches_simulator(traj):
    d = pmu.derive(pmu.sample(traj, 0.02))
    idx = np.arange(0, len(traj.t), 20)
    assert np.max(np.abs(d.domega - traj.domega[idx])) < 1e-12
    assert np.array_equal(d.dp, traj.dp[idx])


def test_noise_amplitude_ratios():
    # SNR 40 dB -> A_noise = A_signal / 100; 30 dB -> 10**-1.5
    assert 10 ** (-40 / 20) == pytest.approx(0.01)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(20000, 2)) + 3.0
    s = stream_of(x)
    for snr, ratio in ((40, 0.01), (30, 10 ** -1.5)):
        noisy = pmu.add_noise(s, pmu.NoiseSpec(snr, seed=5))
        rms = np.sqrt(np.mean(x**2, axis=0))
        measured = np.std(noisy.delta - x, axis=0) / rms
        assert measured == pytest.approx([ratio, ratio], rel=0.03)
    assert 10 ** (-1.5) == pytest.approx(0.03162, abs=1e-5)


def test_infinite_snr_is_identity(traj):
    d = pmu.derive(pmu.sample(traj, 0.02))
    assert pmu.add_noise(d, pmu.NoiseSpec(math.inf, 3)) is d


def test_noise_seeded(traj):
    d = pmu.derive(pmu.sample(traj, 0.02))
    a = pmu.add_noise(d, pmu.NoiseSpec(40, 7))
    b = pmu.add_noise(d, pmu.NoiseSpec(40, 7))
    c = pmu.add_noise(d, pmu.NoiseSpec(40, 8))
    assert np.array_equal(a.dp, b.dp)
    assert not np.array_equal(a.dp, c.dp)


def test_noise_channel_selection(traj):
    d = pmu.derive(pmu.sample(traj, 0.02))
    n = pmu.add_noise(d, pmu.NoiseSpec(40, 1, channels=("dp",)))
    assert np.array_equal(n.delta, d.delta) and not np.array_equal(n.dp, d.dp)
    with pytest.raises(pmu.PmuError):
        pmu.NoiseSpec(40, channels=("freq",))


def test_maf_white_noise_reduction():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(10000, 1))
    out = pmu.trailing_mean(x, 5)
    assert np.std(out[5:]) == pytest.approx(1 / math.sqrt(5), rel=0.15)


def test_maf_trailing_mean_by_hand():
    x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    assert pmu.trailing_mean(x, 3) == pytest.approx([1.0, 1.5, 2.0, 3.0, 4.0])


@given(arrays(float, (12, 3), elements=st.floats(-1e3, 1e3)))
def test_maf_window_one_identity(a):
    s = stream_of(a)
    assert pmu.moving_average(s, 1) is s


@given(st.floats(-100, 100), st.integers(1, 15))
def test_maf_constant_unchanged(c, w):
    out = pmu.trailing_mean(np.full((30, 2), c), w)
    assert np.allclose(out, c, atol=1e-12 * max(1.0, abs(c)))


@given(arrays(float, (25, 2), elements=st.floats(-10, 10)), st.integers(2, 8))
def test_maf_is_causal(a, w):
    out = pmu.trailing_mean(a, w)
    b = a.copy()
    b[15:] += 100.0
    assert np.array_equal(pmu.trailing_mean(b, w)[:15], out[:15])


def test_csv_round_trip(tmp_path, traj):
    raw = pmu.sample(traj, 0.02)
    d = pmu.derive(raw)
    p = tmp_path / "pmu.csv"
    d.to_csv(p, raw)
    back = pmu.read_stream_csv(p)
    assert back.machine_ids == d.machine_ids
    assert np.allclose(back.delta, d.delta, rtol=1e-15, atol=1e-15)
    assert np.array_equal(back.domega, d.domega)
    assert np.array_equal(back.dp, d.dp)
    raw.to_csv(tmp_path / "raw.csv")
    back_raw = pmu.read_stream_csv(tmp_path / "raw.csv", f0=traj.f0)
    assert np.max(np.abs(back_raw.domega - d.domega)) < 1e-12


def test_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,machine_id,delta_deg,domega_pu,dp_pu\n0,G1,1,0,0\n0,G2,1,0,0\n0.02,G1,1,0,0\n")
    with pytest.raises(pmu.PmuError, match="machine set"):
        pmu.read_stream_csv(p)
    p.write_text("t,machine_id,delta_deg,domega_pu,dp_pu\n0,G1,abc,0,0\n")
    with pytest.raises(pmu.PmuError, match="line 2: field 'delta_deg'"):
        pmu.read_stream_csv(p)
    p.write_text("t,machine_id,delta_deg,freq_hz,pm_pu,pe_pu\n0,G1,1,50,1,1\n")
    with pytest.raises(pmu.PmuError, match="f0"):
        pmu.read_stream_csv(p)
    p.write_text("")
    with pytest.raises(pmu.PmuError):
        pmu.read_stream_csv(p)
