"""Batch studies: CCT sweeps and seeded noise trials.

Both fan independent runs out over a process pool capped by
SWINGGUARD_THREADS; every run builds its own simulator and pipeline.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from . import pmu
from .bench import thread_cap
from .scenarios import Scenario
from .scheme import SchemeConfig, detect_stream
from .simulator import ApplyFault, EventSchedule, integrate

log = logging.getLogger(__name__)

MITIGATIONS = ("none", "maf-input", "maf-index")
MIN_TRIALS = 20
MIN_TAIL = 1.0  # s of post-clearance horizon needed to call a run stable


class StudyError(ValueError):
    pass


@dataclass(frozen=True)
class CaseOutcome:
    duration: float
    truth_stable: bool
    verdict: str
    t_s: float | None

    @property
    def correct(self) -> bool:
        return (self.verdict == "unstable") != self.truth_stable


def _pool(workers: int | None) -> Executor | None:
    n = thread_cap() if workers is None else min(workers, thread_cap())
    return ProcessPoolExecutor(n) if n > 1 else None


def _map(pool: Executor | None, fn, *iterables) -> list:
    if pool is None:
        return list(map(fn, *iterables))
    return list(pool.map(fn, *iterables))


def record(scenario: Scenario, schedule: EventSchedule,
           t_end: float | None = None) -> tuple[bool, pmu.DerivedStream]:
    """Simulate one schedule; returns ground truth and the noise-free PMU stream."""
    traj = integrate(scenario.model, schedule, t_end or scenario.t_end, scenario.dt)
    stream = pmu.derive(pmu.sample(traj, scenario.scheme.cycle), scenario.f0)
    return traj.is_stable(), stream


def classify(scenario: Scenario, stream: pmu.DerivedStream, active_from: float,
             config: SchemeConfig | None = None):
    return detect_stream(stream, scenario.inertia, scenario.areas, config or scenario.scheme,
                         scenario.omega0, active_from=active_from, infinite_bus=scenario.infinite_bus)


def evaluate_case(scenario: Scenario, schedule: EventSchedule) -> CaseOutcome:
    """Ground truth and detector verdict for one schedule."""
    truth, stream = record(scenario, schedule)
    clear = schedule.clear_time
    res = classify(scenario, stream, clear if clear is not None else 0.0)
    onset = min((t for t, _ in schedule), default=0.0)
    duration = (clear - onset) if clear is not None else math.inf
    return CaseOutcome(duration, truth, res.decision.verdict, res.decision.t_s)


# --- CCT sweep ----------------------------------------------------------------


@dataclass
class SweepResult:
    fault: ApplyFault
    remove_lines: tuple[str, ...]
    resolution: float
    stable_bound: float
    unstable_bound: float
    cases: list[CaseOutcome] = field(default_factory=list)

    @property
    def cct(self) -> float:
        return self.stable_bound

    @property
    def detector_errors(self) -> list[CaseOutcome]:
        return [c for c in self.cases if not c.correct]

    def to_dict(self) -> dict:
        return {
            "fault": {"bus": self.fault.bus, "line": self.fault.line, "location": self.fault.location},
            "remove_lines": list(self.remove_lines),
            "resolution_s": self.resolution,
            "stable_bound_s": self.stable_bound,
            "unstable_bound_s": self.unstable_bound,
            "probes": len(self.cases),
            "detector_errors": len(self.detector_errors),
        }

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["duration_s", "truth", "verdict", "t_s"])
            for c in sorted(self.cases, key=lambda c: c.duration):
                w.writerow([f"{c.duration:.6f}", "stable" if c.truth_stable else "unstable", c.verdict,
                            "" if c.t_s is None else f"{c.t_s:.6f}"])


def _sweep_case(scenario: Scenario, fault: ApplyFault, lines: tuple[str, ...], steps: int) -> CaseOutcome:
    schedule = EventSchedule.fault_clear(fault, steps * scenario.dt, lines)
    out = evaluate_case(scenario, schedule)
    return replace(out, duration=steps * scenario.dt)


def sweep_cct(scenario: Scenario, fault: ApplyFault, remove_lines: Sequence[str] = (),
              resolution: float = 1e-3, t_max: float = 1.0, workers: int | None = None) -> SweepResult:
    """Bracket the CCT on the step grid by k-section (bisection when serial).

    Each round probes one duration per worker; the detector verdict of every
    probed duration is kept next to the simulator ground truth.
    """
    if not resolution >= scenario.dt:
        raise StudyError(f"resolution {resolution} is below the simulation step {scenario.dt}")
    if scenario.t_end - t_max < MIN_TAIL:
        raise StudyError(f"horizon too short to classify: t_end={scenario.t_end} s leaves under "
                         f"{MIN_TAIL} s after the longest probed fault ({t_max} s)")
    lines = tuple(remove_lines)
    lo, hi = 0, int(round(t_max / scenario.dt))
    limit = max(1, int(math.floor(resolution / scenario.dt + 1e-9)))
    pool = _pool(workers)
    width = getattr(pool, "_max_workers", 1)
    cases: list[CaseOutcome] = []
    try:
        ends = _map(pool, _sweep_case, [scenario] * 2, [fault] * 2, [lines] * 2, [lo, hi])
        cases += ends
        if not ends[0].truth_stable:
            raise StudyError("the system is unstable for a zero-duration fault; no CCT exists")
        if ends[1].truth_stable:
            raise StudyError(f"horizon too short to classify: still stable at the longest fault ({t_max} s)")
        while hi - lo > limit:
            probes = sorted({lo + (hi - lo) * (k + 1) // (width + 1) for k in range(width)} - {lo, hi})
            outs = _map(pool, _sweep_case, [scenario] * len(probes), [fault] * len(probes),
                        [lines] * len(probes), probes)
            cases += outs
            for steps, out in zip(probes, outs):
                if out.truth_stable:
                    lo = max(lo, steps)
            hi = min([hi] + [s for s, o in zip(probes, outs) if not o.truth_stable and s > lo])
    finally:
        if pool is not None:
            pool.shutdown()
    return SweepResult(fault, lines, resolution, lo * scenario.dt, hi * scenario.dt, cases)


# --- noise trials -------------------------------------------------------------


def mitigation_config(scenario: Scenario, mitigation: str, index: str = "c") -> tuple[int, SchemeConfig]:
    """Input MAF window and scheme config for a mitigation mode."""
    if mitigation not in MITIGATIONS:
        raise StudyError(f"unknown mitigation {mitigation!r}; choose from {MITIGATIONS}")
    det = replace(scenario.scheme.detector, active_index=index)
    maf_in = 1
    if mitigation == "maf-input":
        maf_in = scenario.maf_window
    elif mitigation == "maf-index":
        det = replace(det, index_maf_window=scenario.maf_window)
    return maf_in, replace(scenario.scheme, detector=det)


def _trial(scenario: Scenario, stream: pmu.DerivedStream, active_from: float, snr_db: float, seed: int,
           maf_in: int, config: SchemeConfig) -> str:
    noisy = pmu.moving_average(pmu.add_noise(stream, pmu.NoiseSpec(snr_db, seed)), maf_in)
    return classify(scenario, noisy, active_from, config).decision.verdict


@dataclass(frozen=True)
class NoiseRow:
    snr_db: float
    mitigation: str
    index: str
    trials: int
    false_starts: int
    missed: int
    baseline_false_starts: int
    baseline_missed: int

    @property
    def false_start_rate(self) -> float:
        return self.false_starts / self.trials

    @property
    def missed_rate(self) -> float:
        return self.missed / self.trials


@dataclass
class NoiseStudy:
    rows: list[NoiseRow]
    stable_case: str
    unstable_case: str | None

    def row(self, snr_db: float, mitigation: str, index: str = "c") -> NoiseRow:
        for r in self.rows:
            if r.snr_db == snr_db and r.mitigation == mitigation and r.index == index:
                return r
        raise KeyError((snr_db, mitigation, index))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["snr_db", "mitigation", "index", "trials", "false_starts", "false_start_rate",
                        "missed", "missed_rate", "noise_free_false_start", "noise_free_missed"])
            for r in self.rows:
                w.writerow([r.snr_db, r.mitigation, r.index, r.trials, r.false_starts,
                            f"{r.false_start_rate:.6f}", r.missed, f"{r.missed_rate:.6f}",
                            r.baseline_false_starts, r.baseline_missed])

    def to_dict(self) -> dict:
        return {"stable_case": self.stable_case, "unstable_case": self.unstable_case,
                "rows": [{**r.__dict__, "false_start_rate": r.false_start_rate, "missed_rate": r.missed_rate}
                         for r in self.rows]}


def noise_study(scenario: Scenario, snr_list: Sequence[float], trials: int = 100,
                mitigations: Sequence[str] = MITIGATIONS, indexes: Sequence[str] = ("c",),
                seed: int = 0, stable_case: str = "stable", unstable_case: str | None = "unstable",
                workers: int | None = None) -> NoiseStudy:
    """False-start and missed-detection counts over seeded noise trials.

    Trial ``k`` uses noise seed ``seed + k`` for every SNR and mitigation, so
    configurations are compared on the same draws.
    """
    if trials < MIN_TRIALS:
        raise StudyError(f"need at least {MIN_TRIALS} trials, got {trials}")
    for m in mitigations:
        if m not in MITIGATIONS:
            raise StudyError(f"unknown mitigation {m!r}; choose from {MITIGATIONS}")
    fixtures = {"stable": scenario.case(stable_case)}
    if unstable_case is not None:
        fixtures["unstable"] = scenario.case(unstable_case)
    recorded = {}
    for kind, schedule in fixtures.items():
        truth, stream = record(scenario, schedule, scenario.noise_t_end)
        if truth != (kind == "stable"):
            raise StudyError(f"fixture {kind!r} is not {kind} in simulation")
        recorded[kind] = (stream, schedule.clear_time or 0.0)
    seeds = [seed + k for k in range(trials)]
    rows = []
    pool = _pool(workers)
    try:
        for index in indexes:
            for m in mitigations:
                maf_in, config = mitigation_config(scenario, m, index)
                base = {kind: _trial(scenario, s, a, math.inf, 0, maf_in, config) for kind, (s, a) in recorded.items()}
                for snr in snr_list:
                    counts = {}
                    for kind, (stream, active) in recorded.items():
                        verdicts = _map(pool, _trial, [scenario] * trials, [stream] * trials, [active] * trials,
                                        [snr] * trials, seeds, [maf_in] * trials, [config] * trials)
                        wrong = "unstable" if kind == "stable" else "stable"
                        counts[kind] = sum(v != "unstable" if wrong == "stable" else v == "unstable"
                                           for v in verdicts)
                    rows.append(NoiseRow(
                        snr_db=float(snr), mitigation=m, index=index, trials=trials,
                        false_starts=counts["stable"], missed=counts.get("unstable", 0),
                        baseline_false_starts=int(base["stable"] == "unstable"),
                        baseline_missed=int(base.get("unstable", "unstable") != "unstable"),
                    ))
                    log.info("snr=%s %s %s: %d false starts, %d missed", snr, m, index,
                             rows[-1].false_starts, rows[-1].missed)
    finally:
        if pool is not None:
            pool.shutdown()
    return NoiseStudy(rows, stable_case, unstable_case)

