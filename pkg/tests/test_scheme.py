import math
from dataclasses import replace

import numpy as np
import pytest

from swingguard import pmu
from swingguard.equivalence import SmibEquivalent
from swingguard.scheme import (
    SchemeConfig, SchemeError, detect_stream, final_stability, run_closed_loop, sime_delta_u,
)
from swingguard.simulator import AnalyticSmib, integrate


@pytest.fixture(scope="module")
def closed(wscc9_scenario):
    sc = wscc9_scenario
    sched = sc.schedule
    with_ctrl = run_closed_loop(sc.model, sched, sc.scheme)
    without = run_closed_loop(sc.model, sched, replace(sc.scheme, control_actions=()))
    return with_ctrl, without


def test_closed_loop_actuates_after_delay(closed):
    rep, _ = closed
    assert rep.verdict == "unstable"
    assert rep.actuation_time == pytest.approx(rep.t_s + 0.2, abs=1e-9)
    assert rep.cms_at_startup == ("G2",)


def test_closed_loop_control_saves_system(closed):
    rep, base = closed
    assert rep.final_stable
    assert not base.final_stable
    assert base.notes == ["no control configured"]
    assert base.actuation_time is None


def test_closed_loop_shed_applied(closed):
    rep, _ = closed
    traj = rep.trajectory
    j = traj.machine_ids.index("G2")
    before = traj.t < rep.actuation_time - 1e-9
    after = traj.t > rep.actuation_time + 1e-9
    assert traj.pm[after, j][0] == pytest.approx(0.4 * traj.pm[before, j][-1])


def test_closed_loop_stable_case_no_startup(wscc9_scenario):
    sc = wscc9_scenario
    rep = run_closed_loop(sc.model, sc.case("stable"), sc.scheme)
    assert rep.verdict == "stable" and rep.t_s is None and rep.actuation_time is None
    assert rep.final_stable


def test_closed_loop_messages(closed):
    rep, _ = closed
    m = rep.messages
    assert m["direct_total"] == 3 * m["samples"]
    assert m["two_layer_total"] <= m["direct_total"] + m["samples"]


def test_closed_loop_rejects_bad_config(wscc9_scenario):
    sc = wscc9_scenario
    with pytest.raises(SchemeError, match="unknown machine"):
        run_closed_loop(sc.model, sc.case("stable"), replace(sc.scheme, control_actions=(("G9", 0.5),)))
    with pytest.raises(SchemeError):
        SchemeConfig(cycle=0.01)
    with pytest.raises(SchemeError):
        SchemeConfig(control_actions=(("G2", 1.5),))


def test_detect_stream_checks_machines(smib):
    tr = integrate(smib, smib.schedule(0.1), 0.5, 1e-3)
    stream = pmu.derive(pmu.sample(tr, 0.02))
    with pytest.raises(SchemeError, match="disagree"):
        detect_stream(stream, {"G1": smib.M}, {"A": ("G1", "G2")}, infinite_bus=True)


def test_detect_stream_needs_samples(smib):
    tr = integrate(smib, smib.schedule(0.01), 0.03, 1e-3)
    stream = pmu.derive(pmu.sample(tr, 0.02))
    with pytest.raises(SchemeError, match="at least 3"):
        detect_stream(stream, {"G1": smib.M}, {"A": ("G1",)}, infinite_bus=True)


def test_sime_delta_u_interpolates():
    mk = lambda t, d, dp: SmibEquivalent(t, d, 0.01, 1.0, dp, "m", frozenset({"G1"}), frozenset())
    stream = [mk(0.0, 1.0, -1.0), mk(0.1, 2.0, -0.5), mk(0.2, 3.0, 0.5)]
    assert sime_delta_u(stream, 0.0) == pytest.approx(2.5)
    assert sime_delta_u(stream[:2], 0.0) is None


def test_sime_delta_u_near_analytic():
    sm = AnalyticSmib()
    tr = integrate(sm, sm.schedule(0.3), 2.0, 1e-4)
    stream = pmu.derive(pmu.sample(tr, 0.02))
    res = detect_stream(stream, {"G1": sm.M}, {"A": ("G1",)}, SchemeConfig(dt=1e-4), sm.omega0,
                        active_from=0.3, infinite_bus=True)
    du = sime_delta_u(res.equivalents, 0.3)
    # one 20 ms cycle of slip is the sampling resolution
    assert du == pytest.approx(sm.delta_u, abs=0.1)


def test_final_stability(smib):
    ok, info = final_stability(integrate(smib, smib.schedule(0.15), 3.0, 1e-3))
    assert ok and info["bounded"] and info["decaying"]
    # a growing swing is not stable even with bounded angles
    t = np.linspace(0, 3, 3001)
    grow = integrate(smib, smib.schedule(0.15), 3.0, 1e-3)
    grow.domega[:, 0] = 0.01 * t * np.sin(2 * np.pi * t)
    assert not final_stability(grow)[0]
    bad, info = final_stability(integrate(smib, smib.schedule(0.4), 3.0, 1e-3))
    assert not bad and not info["bounded"]
    assert math.isfinite(info["max_angle_spread_deg"])
