"""Acceptance criteria 1-10, each timed and reported on one line."""

import contextlib
import math
import os
import re
import time
from dataclasses import replace

import numpy as np
import pytest

from swingguard import pmu
from swingguard.bench import BenchConfig, make_fleet, run_area, run_bench
from swingguard.cli import main
from swingguard.detector import threshold_criteria
from swingguard.equivalence import (
    Fleet, GroupAssignment, direct_equivalence, identity_error, layer1_equivalence, layer2_equivalence,
    message_volume,
)
from swingguard.netmodel import smib_network, steady_state
from swingguard.scheme import detect_stream, run_closed_loop, sime_delta_u
from swingguard.simulator import AnalyticSmib, ApplyFault, EventSchedule, equal_area_cct, integrate
from swingguard.studies import MITIGATIONS, classify, evaluate_case, noise_study, record

# analytic SMIB variants: default, partial fault, heavier loading, damped
SMIB_VARIANTS = [AnalyticSmib(), AnalyticSmib(pmax_fault=0.5), AnalyticSmib(pm=1.0, M=6.0), AnalyticSmib(D=0.002)]
SMIB_DT = 1e-4

# 9-bus fault/clearing pairs and their simulated CCT brackets (ms), from sweep_cct
# at 1 ms resolution on the bundled scenario (damping 1.0, 5 s horizon)
NINE_BUS = [
    (7, "L5-7", 197, 198), (7, "L7-8", 208, 209), (9, "L6-9", 248, 249), (9, "L8-9", 260, 261),
    (5, "L4-5", 483, 484), (6, "L4-6", 544, 545), (4, "L4-5", 360, 361), (8, "L7-8", 319, 320),
]


@pytest.fixture
def criterion(acceptance_lines):
    lines = acceptance_lines

    @contextlib.contextmanager
    def run(number, limit_s=None):
        info = {}
        start = time.perf_counter()
        try:
            yield info
            elapsed = time.perf_counter() - start
            if limit_s is not None:
                assert elapsed < limit_s, f"runtime {elapsed:.1f} s exceeds {limit_s} s"
        except AssertionError as exc:
            elapsed = time.perf_counter() - start
            lines.append(f"CRITERION {number}: FAIL ({elapsed:.1f} s) {str(exc).splitlines()[0]}")
            print(lines[-1])
            raise
        lines.append(f"CRITERION {number}: PASS ({elapsed:.1f} s) {info.get('detail', '')}".rstrip())
        print(lines[-1])

    return run


def smib_verdict(sm: AnalyticSmib, ct: float):
    traj = integrate(sm, sm.schedule(ct), 3.0, SMIB_DT)
    stream = pmu.derive(pmu.sample(traj, 0.02), sm.f0)
    res = detect_stream(stream, {sm.machine_id: sm.M}, {"A": (sm.machine_id,)}, omega0=sm.omega0,
                        active_from=ct, infinite_bus=True)
    return traj, res


def grid(x, step, up):
    k = x / step
    return (math.ceil(k - 1e-9) if up else math.floor(k + 1e-9)) * step


def test_criterion_1_identity(criterion):
    with criterion(1, 10) as info:
        rng = np.random.default_rng(20240601)
        worst = 0.0
        for _ in range(200):
            n = int(rng.integers(2, 501))
            p = int(rng.integers(1, min(n, 20) + 1))
            f = Fleet(tuple(f"G{k}" for k in range(n)), rng.uniform(0.5, 30, n), rng.uniform(-3, 3, n),
                      rng.normal(0, 0.02, n), rng.normal(0, 2, n), np.zeros(n))
            area = rng.integers(0, p, n)
            crit = rng.random(n) < rng.uniform(0.1, 0.9)
            crit[0], crit[-1] = True, False
            labels = {g: ("C" if c else "N") for g, c in zip(f.ids, crit)}
            cois = []
            for a in np.unique(area):
                cois += layer1_equivalence(f.take(area == a), labels, str(a))
            two = layer2_equivalence(cois)
            cms = frozenset(g for g, c in zip(f.ids, crit) if c)
            direct = direct_equivalence(f, GroupAssignment(0.0, cms, frozenset(f.ids) - cms, 0.0, False))
            assert two.cms == direct.cms
            worst = max(worst, *identity_error(two, direct, f).values())
        assert worst <= 1e-12, f"identity error {worst:.3e}"
        info["detail"] = f"200 fleets, max relative error {worst:.2e}"


def test_criterion_2_cct_bracket(criterion):
    with criterion(2, 30) as info:
        out = []
        for sm in SMIB_VARIANTS:
            cct = equal_area_cct(sm).cct
            lo, hi = grid(cct - 0.002, SMIB_DT, False), grid(cct + 0.002, SMIB_DT, True)
            v_lo = smib_verdict(sm, lo)[1].decision.verdict
            v_hi = smib_verdict(sm, hi)[1].decision.verdict
            assert (v_lo, v_hi) == ("stable", "unstable"), f"{sm}: {v_lo} at {lo:.4f}, {v_hi} at {hi:.4f}"
            out.append(f"{cct:.4f}")
        info["detail"] = f"flip within CCT +/- 2 ms on {len(out)} variants (CCT {', '.join(out)} s)"


def test_criterion_3_ordering(criterion, wscc9_scenario):
    with criterion(3, 120) as info:
        margins = []
        for sm in SMIB_VARIANTS:
            cct = equal_area_cct(sm).cct
            for extra in (0.003, 0.01):
                ct = grid(cct + extra, SMIB_DT, True)
                _, res = smib_verdict(sm, ct)
                times = threshold_criteria(res.equivalents, sm.delta_u, res.decision.t_s, ct)
                margins.append((f"smib {sm.pm}/{sm.pmax_fault}/{sm.M}/{sm.D} +{extra * 1e3:.0f}ms", times))
        sc = wscc9_scenario
        for bus, line, _, hi in NINE_BUS:
            ct = (hi + 3) * 1e-3
            sched = EventSchedule.fault_clear(ApplyFault(bus=bus), ct, (line,))
            _, stream = record(sc, sched, 3.0)
            res = classify(sc, stream, ct)
            du = sime_delta_u(res.equivalents, ct)
            margins.append((f"bus{bus}/{line} +3ms", threshold_criteria(res.equivalents, du, res.decision.t_s, ct)))
        assert len(margins) >= 10
        for name, t in margins:
            assert t.proposed is not None and t.delta_u is not None and t.angle_180 is not None, f"{name}: {t}"
            assert t.proposed < t.delta_u < t.angle_180, f"{name}: {t}"
        m1 = min(t.delta_u - t.proposed for _, t in margins)
        m2 = min(t.angle_180 - t.proposed for _, t in margins)
        info["detail"] = f"{len(margins)} runs; min margins {m1 * 1e3:.0f} ms to delta_u, {m2 * 1e3:.0f} ms to 180 deg"


def test_criterion_4_no_false_starts(criterion, wscc9_scenario):
    with criterion(4, 300) as info:
        sc = wscc9_scenario
        outcomes = []
        for bus, line, lo, hi in NINE_BUS:
            durations = [50, 100, round(0.8 * lo), lo - 10, lo - 3, hi + 3, hi + 10, hi + 20]
            for ms in durations:
                sched = EventSchedule.fault_clear(ApplyFault(bus=bus), ms * 1e-3, (line,))
                outcomes.append((f"bus{bus}/{line}/{ms}ms", evaluate_case(sc, sched)))
        stable = sum(o.truth_stable for _, o in outcomes)
        unstable = len(outcomes) - stable
        assert stable >= 30 and unstable >= 15, f"suite has {stable} stable, {unstable} unstable"
        wrong = [name for name, o in outcomes if not o.correct]
        assert not wrong, f"misclassified: {wrong}"
        info["detail"] = f"{stable} stable + {unstable} unstable cases, all correct"


def test_criterion_5_closed_loop(criterion, wscc9_scenario):
    with criterion(5, 60) as info:
        sc = wscc9_scenario
        rep = run_closed_loop(sc.model, sc.schedule, sc.scheme)
        twin = run_closed_loop(sc.model, sc.schedule, replace(sc.scheme, control_actions=()))
        assert twin.verdict == "unstable" and not twin.final_stable, "uncontrolled run is not unstable"
        assert rep.t_s is not None and rep.actuation_time == pytest.approx(rep.t_s + 0.2, abs=1e-9)
        assert rep.final_stable, f"controlled run fails the final-stability predicate: {rep.final_details}"
        info["detail"] = (f"t_s {rep.t_s:.2f} s, shed at {rep.actuation_time:.2f} s, controlled spread "
                          f"{rep.final_details['max_angle_spread_deg']:.0f} deg")


def test_criterion_6_noise(criterion, wscc9_scenario):
    with criterion(6, 300) as info:
        study = noise_study(wscc9_scenario, [40.0, 30.0], trials=100, mitigations=MITIGATIONS, indexes=("c",),
                            unstable_case=None)
        r40 = study.row(40.0, "none")
        r30 = study.row(30.0, "none")
        assert r40.false_starts == 0, f"{r40.false_starts} false starts at 40 dB"
        assert r30.false_starts > 0, "no false starts at 30 dB without mitigation"
        for m in ("maf-input", "maf-index"):
            r = study.row(30.0, m)
            assert r.false_starts == 0, f"{r.false_starts} false starts at 30 dB with {m}"
        info["detail"] = (f"40 dB: 0/100; 30 dB none: {r30.false_starts}/100; "
                          f"maf-input and maf-index: 0/100")


def test_criterion_7_index_ranking(criterion, wscc9_scenario):
    with criterion(7) as info:
        study = noise_study(wscc9_scenario, [40.0], trials=100, mitigations=("none",), indexes=("c", "tau"),
                            unstable_case=None)
        c, tau = study.row(40.0, "none", "c"), study.row(40.0, "none", "tau")
        assert c.false_starts == 0, f"c: {c.false_starts} false positives"
        assert tau.false_starts >= 1, "tau produced no false positive"
        info["detail"] = f"40 dB stable fixture: tau {tau.false_starts}/100, c {c.false_starts}/100 false positives"


def test_criterion_8_message_volume(criterion):
    with criterion(8, 1) as info:
        n, p = 2000, 20
        fleet = make_fleet(n, p, seed=8)
        uploaded = sum(len(run_area(recs, fleet.inertia, fleet.delta0, a)) for a, recs in fleet.areas.items())
        vol = message_volume(n, p, [uploaded])
        assert p / n <= vol.ratio <= 2 * p / n
        assert message_volume(n, p, [p]).ratio == 0.01 and message_volume(n, p, [2 * p]).ratio == 0.02
        info["detail"] = f"N={n}, P={p}: {uploaded} records vs {n}, ratio {vol.ratio:.2%}"


def test_criterion_9_scaling(criterion):
    with criterion(9, 60) as info:
        res = run_bench(BenchConfig(sizes=(2000,), areas=20, repetitions=30, warmup=3))
        row = res.row(2000)
        assert row.identity_max_err <= 1e-12
        assert row.speedup >= 2.0, f"speedup {row.speedup:.2f}"
        threads = os.cpu_count() or 1
        note = "" if threads >= 4 else f"; host has {threads} hardware thread(s), criterion assumes >= 4"
        info["detail"] = (f"N=2000, P=20: direct {row.t_direct_ms:.2f} ms, two-layer {row.t_twolayer_ms:.2f} ms, "
                          f"speedup {row.speedup:.2f}x, workers {res.workers}{note}")


NUMBER = re.compile(r"(?<![A-Za-z_])(nan|inf|infinity)(?![A-Za-z_])", re.IGNORECASE)


def test_criterion_10_numerical_hygiene(criterion, tmp_path):
    with criterion(10) as info:
        ss = steady_state(smib_network())
        d0 = ss.delta0 + 0.4
        finals = [integrate(ss.network, (), 1.0, h, delta0=d0).delta[-1, 0] for h in (0.02, 0.01, 0.005)]
        order = math.log2(abs(finals[0] - finals[1]) / abs(finals[1] - finals[2]))
        assert order >= 3.7, f"RK4 order {order:.2f}"

        drift = 0.0
        for sm in (AnalyticSmib(), AnalyticSmib(pmax_fault=0.5)):
            ct = 0.2
            tr = integrate(sm, sm.schedule(ct), 3.0, SMIB_DT)
            d, w, t = tr.delta[:, 0], tr.domega[:, 0], tr.t
            for mask, stage in ((t <= ct + 1e-12, "fault"), (t >= ct - 1e-12, "post")):
                e = sm.energy(d[mask], w[mask], stage)
                drift = max(drift, (e.max() - e.min()) / np.abs(e).max())
        assert drift < 1e-6, f"energy drift {drift:.2e}"

        out = tmp_path
        runs = [
            ["simulate", "--scenario", "wscc9", "--case", "unstable", "--t-end", "3", "--out", out / "sim"],
            ["detect", "--pmu-csv", out / "sim" / "pmu.csv", "--areas", "wscc9", "--snr-db", "30",
             "--schedule", out / "sim" / "events.json", "--out", out / "det"],
            ["closed-loop", "--scenario", "wscc9", "--out", out / "cl"],
            ["simulate", "--scenario", "smib", "--case", "unstable", "--out", out / "smib"],
            ["bench-equivalence", "--sizes", "100,400", "--repetitions", "10", "--out", out / "bench"],
            ["sweep-cct", "--scenario", "smib", "--dt", "0.001", "--resolution", "0.005", "--out", out / "sweep"],
            ["noise-study", "--scenario", "wscc9", "--snr-list", "40", "--trials", "20", "--mitigation", "none",
             "--out", out / "noise"],
        ]
        for argv in runs:
            assert main([str(a) for a in argv]) == 0, f"command failed: {argv[0]}"
        files = [f for f in out.rglob("*") if f.is_file()]
        bad = [str(f.relative_to(out)) for f in files if NUMBER.search(f.read_text())]
        assert not bad, f"non-finite values in {bad}"
        info["detail"] = (f"RK4 order {order:.2f}, energy drift {drift:.1e}, {len(files)} emitted files finite")
