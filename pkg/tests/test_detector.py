import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from swingguard import pmu
from swingguard.detector import (
    DetectionSample, Detector, DetectorConfig, DetectorError, convex_region_map, decide, index_c, index_mu,
    index_tau, threshold_criteria, write_detection_csv, write_summary,
)
from swingguard.equivalence import SmibEquivalent
from swingguard.scheme import detect_stream
from swingguard.simulator import AnalyticSmib, equal_area_cct, integrate


def eq(t=0.0, delta=0.0, domega=0.0, dp=0.0, M=1.0, mode="m"):
    return SmibEquivalent(t, delta, domega, M, dp, mode, frozenset({"G1"}), frozenset())


def cstream(values):
    return [DetectionSample(0.02 * k, "m", v, None, None, v is None, "", 0.1 * k) for k, v in enumerate(values)]


def test_c_substitution():
    assert index_c(eq(dp=0.5, domega=0.01), eq(dp=0.6, domega=0.01)) == pytest.approx(-10.0)


def test_c_constant_inputs():
    assert index_c(eq(dp=0.3, domega=0.02), eq(dp=0.3, domega=0.02)) == 0.0


def test_c_gating():
    assert index_c(eq(domega=1e-5, dp=1), eq(domega=0.01, dp=1)) is None
    assert index_c(eq(domega=0.01, dp=1), eq(domega=-0.01, dp=1)) is None
    assert index_c(eq(domega=0.01, dp=1), eq(domega=0.01, dp=1, mode="other")) is None


@given(st.floats(0.01, 100), st.floats(-5, 5), st.floats(-5, 5), st.floats(1e-3, 0.1), st.floats(1e-3, 0.1))
def test_c_sign_invariant_under_power_scaling(k, p1, p0, w1, w0):
    base = index_c(eq(dp=p1, domega=w1), eq(dp=p0, domega=w0))
    scaled = index_c(eq(dp=k * p1, domega=w1), eq(dp=k * p0, domega=w0))
    assert np.sign(base) == np.sign(scaled)


def test_tau_linear_is_zero():
    s = [eq(delta=d, domega=0.5 * d + 0.1) for d in (1.0, 2.0, 3.0)]
    assert index_tau(s[2], s[1], s[0]) == pytest.approx(0.0)


def test_tau_parabola():
    s = [eq(delta=d, domega=d * d) for d in (1.0, 2.0, 3.0)]
    assert index_tau(s[2], s[1], s[0]) == pytest.approx(2.0)


def test_mu_stationary_point_gated():
    a = eq(delta=0.5, domega=0.0, dp=0.0)
    assert index_mu(a, a, 0.5, 100.0) is None


def test_mu_identical_samples_is_one():
    a = eq(delta=0.9, domega=0.01, dp=-0.2)
    assert index_mu(a, a, 0.5, 100.0) == pytest.approx(1.0)


def test_decide_all_negative():
    d = decide(cstream([-1.0, -2.0, -0.5]))
    assert d.verdict == "stable" and d.t_s is None


def test_decide_first_positive():
    d = decide(cstream([-1.0, -1.0, 2.0, 3.0]))
    assert d.t_s == pytest.approx(0.04)
    assert d.delta_s == pytest.approx(0.2)


def test_decide_confirmation():
    cfg = DetectorConfig(confirm_samples=2)
    assert decide(cstream([-1.0, 1.0, -1.0, 1.0]), cfg).verdict == "stable"
    assert decide(cstream([-1.0, 1.0, 1.0]), cfg).t_s == pytest.approx(0.04)
    # a gated sample neither confirms nor breaks the run
    assert decide(cstream([1.0, None, 1.0]), cfg).t_s == pytest.approx(0.04)


def test_config_validation():
    with pytest.raises(DetectorError):
        DetectorConfig(active_index="z")
    with pytest.raises(DetectorError):
        DetectorConfig(confirm_samples=0)
    with pytest.raises(DetectorError, match="unknown"):
        DetectorConfig.from_dict({"epsilon": 1})


def test_mode_change_resets_history():
    det = Detector()
    det.update(eq(0.00, 0.1, 0.01, 0.5))
    det.update(eq(0.02, 0.2, 0.01, 0.4))
    s = det.update(eq(0.04, 0.3, 0.01, 0.9, mode="new"))
    assert s.c is None and s.gated


def test_inactive_before_clearing():
    det = Detector(active_from=0.1)
    for k in range(5):
        s = det.update(eq(0.02 * k, 0.1 * k, 0.01, 0.1 * k * k))
    assert s.c is None
    assert det.update(eq(0.10, 0.5, 0.01, 1.0)).c is None
    assert det.update(eq(0.12, 0.6, 0.01, 2.0)).c is not None


def test_index_maf_waits_for_full_window():
    det = Detector(DetectorConfig(index_maf_window=3))
    vals = [det.update(eq(0.02 * k, 0.1 * k, 0.01, 0.1 * (k % 2))).c for k in range(6)]
    assert vals[:3] == [None, None, None]
    assert vals[3] is not None


# --- simulation-based -------------------------------------------------------------


def smib_detect(sm, ct, index="c"):
    tr = integrate(sm, sm.schedule(ct), 3.0, 1e-4)
    stream = pmu.derive(pmu.sample(tr, 0.02))
    res = detect_stream(stream, {"G1": sm.M}, {"A": ("G1",)},
                        __import__("swingguard.scheme", fromlist=["SchemeConfig"]).SchemeConfig(
                            detector=DetectorConfig(active_index=index)),
                        sm.omega0, active_from=ct, sep=lambda e: sm.delta_sep, infinite_bus=True)
    return tr, res


@pytest.fixture(scope="module")
def smib_cct():
    return equal_area_cct(AnalyticSmib()).cct


def test_c_positive_before_delta_u(smib_cct):
    sm = AnalyticSmib()
    ct = math.ceil((smib_cct + 0.001) * 1e4) / 1e4
    _, res = smib_detect(sm, ct)
    d = res.decision
    assert d.verdict == "unstable"
    assert d.delta_s < sm.delta_u
    first = next(s for s in res.samples if s.t == d.t_s)
    assert first.c > 0


def test_mu_fires_no_earlier_than_c(smib_cct):
    sm = AnalyticSmib()
    later = 0
    for extra in (0.001, 0.01, 0.05):
        ct = math.ceil((smib_cct + extra) * 1e4) / 1e4
        t_c = smib_detect(sm, ct, "c")[1].decision.t_s
        t_mu = smib_detect(sm, ct, "mu")[1].decision.t_s
        assert t_c is not None and t_mu is not None and t_mu >= t_c
        later += t_mu > t_c
    assert later >= 1


def _region(sm, d, w):
    return convex_region_map(lambda x: sm.pmax_post * np.sin(x), lambda x: sm.pmax_post * np.cos(x),
                             sm.pm, sm.M, sm.omega0, np.atleast_1d(d), np.atleast_1d(w), sm.D)


def test_region_axis_is_boundary():
    sm = AnalyticSmib()
    assert np.all(_region(sm, np.linspace(0, 3, 7), np.array([0.0])) == 0)


def test_region_symmetric_in_speed():
    sm = AnalyticSmib()
    grid_d = np.linspace(-1, 3, 41)
    grid_w = np.linspace(0.001, 0.02, 20)
    assert np.array_equal(_region(sm, grid_d, grid_w), _region(sm, grid_d, -grid_w))


def test_region_agrees_with_detection(smib_cct):
    sm = AnalyticSmib()
    for extra in (0.002, 0.02):
        ct = math.ceil((smib_cct + extra) * 1e4) / 1e4
        tr, res = smib_detect(sm, ct)
        k = int(np.argmin(np.abs(tr.t - res.decision.t_s)))
        assert _region(sm, tr.delta[k, 0], tr.domega[k, 0])[0, 0] == 1
    for ct in (0.1, 0.2, round(smib_cct - 0.002, 4)):
        tr = integrate(sm, sm.schedule(ct), 3.0, 1e-4)
        post = tr.t > ct
        labels = [_region(sm, d, w)[0, 0] for d, w in zip(tr.delta[post, 0], tr.domega[post, 0])]
        assert max(labels) < 1


def test_criteria_ordering_on_smib(smib_cct):
    sm = AnalyticSmib()
    ct = math.ceil((smib_cct + 0.01) * 1e4) / 1e4
    _, res = smib_detect(sm, ct)
    times = threshold_criteria(res.equivalents, sm.delta_u, res.decision.t_s, ct)
    assert times.proposed < times.delta_u < times.angle_180


def test_stable_run_has_no_criteria(smib_cct):
    sm = AnalyticSmib()
    _, res = smib_detect(sm, 0.15)
    times = threshold_criteria(res.equivalents, sm.delta_u, res.decision.t_s, 0.15)
    assert times.proposed is None and times.delta_u is None and times.angle_180 is None


@given(st.lists(st.floats(0.0, 0.5), min_size=2, max_size=40), st.floats(0.3, 3.0))
def test_monotone_crossings_ordered(steps, du):
    d = np.cumsum(steps)
    stream = [eq(t=0.02 * k, delta=float(v)) for k, v in enumerate(d)]
    times = threshold_criteria(stream, du, None)
    if times.delta_u is not None and times.angle_180 is not None:
        assert times.delta_u <= times.angle_180


def test_outputs_have_no_nan(tmp_path):
    samples = cstream([None, float("nan"), 1.0])
    write_detection_csv(tmp_path / "d.csv", samples)
    text = (tmp_path / "d.csv").read_text()
    assert "nan" not in text.lower()
    write_summary(tmp_path / "s.json", decide(samples))
    assert json.loads((tmp_path / "s.json").read_text())["verdict"] == "unstable"
