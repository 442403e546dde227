"""Two-layer start-up scheme: area centers, global center, detector, control.

Area centers only ever see their own generators and upload COI records;
the global center sees nothing else. The same pipeline object runs offline
over a recorded stream (``detect_stream``) or in closed loop with the
simulator (``run_closed_loop``).
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .detector import (
    UNSTABLE,
    Decision,
    DetectionSample,
    Detector,
    DetectorConfig,
    summary_dict,
)
from .equivalence import (
    CoiGenerator,
    EquivalenceError,
    Fleet,
    SmibEquivalent,
    area_center,
    global_assignment,
    layer2_equivalence,
    single_machine_equivalent,
)
from .grouping import DEFAULT_DELTA_SET, DEFAULT_MIN_GAP, GroupAssignment
from .netmodel import Network, Topology
from .pmu import DerivedSample, DerivedStream
from .simulator import (
    AnalyticSmib,
    EventSchedule,
    ShedGeneration,
    Simulation,
    SimulationError,
    Trajectory,
    _NetworkPower,
    post_fault_sep,
)

log = logging.getLogger(__name__)


class SchemeError(ValueError):
    pass


@dataclass(frozen=True)
class SchemeConfig:
    cycle: float = 0.02
    delta_set: float = DEFAULT_DELTA_SET
    min_gap: float = DEFAULT_MIN_GAP
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    control_delay: float = 0.2
    control_actions: tuple[tuple[str, float], ...] = ()
    t_end: float = 3.0
    dt: float = 1e-3
    workers: int = 1

    def __post_init__(self) -> None:
        if not 0.02 - 1e-12 <= self.cycle <= 0.1 + 1e-12:
            raise SchemeError(f"recording cycle must be within [0.02, 0.1] s, got {self.cycle}")
        if self.control_delay < 0:
            raise SchemeError("control delay must be >= 0")
        if self.workers < 1:
            raise SchemeError("workers must be >= 1")
        for mid, frac in self.control_actions:
            if not 0.0 < frac <= 1.0:
                raise SchemeError(f"shed fraction for {mid} must be in (0, 1], got {frac}")

    def to_dict(self) -> dict:
        return {
            "cycle_s": self.cycle,
            "delta_set_deg": math.degrees(self.delta_set),
            "min_gap_deg": math.degrees(self.min_gap),
            "detector": self.detector.__dict__.copy(),
            "control_delay_s": self.control_delay,
            "control_actions": [{"machine": m, "fraction": f} for m, f in self.control_actions],
            "t_end_s": self.t_end,
            "dt_s": self.dt,
        }


class AreaCenter:
    """Layer-1 stage for one area; stores the initial angles on first use."""

    def __init__(self, area: str, ids: Sequence[str], delta_set: float = DEFAULT_DELTA_SET):
        self.area = area
        self.ids = tuple(ids)
        self.delta_set = delta_set
        self.delta0: dict[str, float] | None = None
        self.elapsed = 0.0

    def process(self, records: Sequence[DerivedSample], inertia: Mapping[str, float]) -> list[CoiGenerator]:
        start = time.perf_counter()
        if self.delta0 is None:
            self.delta0 = {r.machine_id: r.delta for r in records}
        live = [r for r in records if inertia.get(r.machine_id, 0.0) > 0.0]
        out = []
        if live:
            fleet = Fleet.from_records(live, inertia, self.delta0)
            out = area_center(fleet, self.area, self.delta_set)
        self.elapsed += time.perf_counter() - start
        return out


@dataclass(frozen=True)
class StepResult:
    t: float
    equivalent: SmibEquivalent | None
    assignment: GroupAssignment
    coi_count: int
    detection: DetectionSample


class TwoLayerPipeline:
    """Per-sample area -> global -> detector chain."""

    def __init__(self, areas: Mapping[str, Sequence[str]], config: SchemeConfig, omega0: float,
                 active_from: float = -math.inf,
                 sep: Callable[[SmibEquivalent], float | None] | None = None,
                 infinite_bus: bool = False):
        self.config = config
        self.infinite_bus = infinite_bus
        n = sum(len(v) for v in areas.values())
        if infinite_bus and n != 1:
            raise SchemeError("an infinite bus is supported only with a single machine")
        self.centers = [AreaCenter(a, ids, config.delta_set) for a, ids in areas.items()]
        self.detector = Detector(config.detector, omega0, active_from, sep)
        self.global_elapsed = 0.0
        self.detect_elapsed = 0.0
        self.steps = 0
        self._pool = ThreadPoolExecutor(min(config.workers, len(self.centers))) if config.workers > 1 else None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def step(self, t: float, records: Mapping[str, DerivedSample], inertia: Mapping[str, float]) -> StepResult:
        self.steps += 1
        batches = [[records[g] for g in c.ids] for c in self.centers]
        if self._pool is None:
            uploads = [c.process(b, inertia) for c, b in zip(self.centers, batches)]
        else:
            uploads = list(self._pool.map(lambda cb: cb[0].process(cb[1], inertia), zip(self.centers, batches)))
        cois = [c for up in uploads for c in up]
        start = time.perf_counter()
        eq = None
        if self.infinite_bus:
            (center,) = self.centers
            gid = center.ids[0]
            r = records[gid]
            if inertia.get(gid, 0.0) > 0.0:
                fleet = Fleet((gid,), np.array([inertia[gid]]), np.array([r.delta]), np.array([r.domega]),
                              np.array([r.dp]), np.zeros(1))
                eq = single_machine_equivalent(fleet, t)
                assignment = GroupAssignment(t, frozenset((gid,)), frozenset(), math.inf, False)
            else:
                assignment = GroupAssignment(t, frozenset(), frozenset((gid,)), 0.0, True)
        else:
            labelled, assignment = global_assignment(cois, t, self.config.min_gap)
            if not assignment.coherent:
                try:
                    eq = layer2_equivalence(labelled, t)
                except EquivalenceError:
                    eq = None
        self.global_elapsed += time.perf_counter() - start
        start = time.perf_counter()
        sample = self.detector.update(eq, t)
        self.detect_elapsed += time.perf_counter() - start
        return StepResult(t, eq, assignment, len(cois), sample)

    def timing(self) -> dict[str, float]:
        n = max(self.steps, 1)
        return {
            "area_ms_max_mean": 1e3 * max((c.elapsed for c in self.centers), default=0.0) / n,
            "global_ms_mean": 1e3 * self.global_elapsed / n,
            "detector_ms_mean": 1e3 * self.detect_elapsed / n,
        }


@dataclass
class DetectResult:
    steps: list[StepResult]
    decision: Decision
    timing: dict[str, float]

    @property
    def equivalents(self) -> list[SmibEquivalent]:
        return [s.equivalent for s in self.steps if s.equivalent is not None]

    @property
    def samples(self) -> list[DetectionSample]:
        return [s.detection for s in self.steps]

    @property
    def assignments(self) -> list[GroupAssignment]:
        return [s.assignment for s in self.steps]

    @property
    def coi_counts(self) -> list[int]:
        return [s.coi_count for s in self.steps]


def detect_stream(stream: DerivedStream, inertia: Mapping[str, float], areas: Mapping[str, Sequence[str]],
                  config: SchemeConfig | None = None, omega0: float = 2 * math.pi * 50,
                  active_from: float = -math.inf,
                  sep: Callable[[SmibEquivalent], float | None] | None = None,
                  infinite_bus: bool = False) -> DetectResult:
    """Run the full pipeline over a recorded stream (the first sample sets delta(0))."""
    config = config or SchemeConfig()
    if len(stream) < 3:
        raise SchemeError("a stream needs at least 3 samples")
    listed = {g for ids in areas.values() for g in ids}
    if listed != set(stream.machine_ids):
        raise SchemeError(f"area map and stream disagree on machines: {sorted(listed ^ set(stream.machine_ids))}")
    steps = []
    with TwoLayerPipeline(areas, config, omega0, active_from, sep, infinite_bus) as pipe:
        for k in range(len(stream)):
            recs = {r.machine_id: r for r in stream.sample_records(k)}
            steps.append(pipe.step(float(stream.t[k]), recs, inertia))
        return DetectResult(steps, pipe.detector.decision(), pipe.timing())


# --- model-side references ----------------------------------------------------


def sime_delta_u(stream: Sequence[SmibEquivalent], after: float) -> float | None:
    """Equivalent angle where dP first turns from negative to positive after ``after``.

    Linear interpolation between the bracketing samples of one mode.
    """
    prev = None
    for s in stream:
        if s.t < after - 1e-9:
            continue
        if prev is not None and prev.mode_id == s.mode_id and prev.dp < 0.0 <= s.dp:
            w = -prev.dp / (s.dp - prev.dp)
            return prev.delta + w * (s.delta - prev.delta)
        prev = s
    return None


class RigidSep:
    """Post-fault SEP of the equivalent with each group moved rigidly.

    Starting from the angles at ``delta_ref``, critical machines are shifted
    together against the rest; the equivalent dP(delta) of that motion is
    solved for its stable root. Cached per mode. Comparison use only.
    """

    def __init__(self, power: Callable[[np.ndarray], np.ndarray], ids: Sequence[str], M: np.ndarray,
                 pm: np.ndarray, delta_ref: np.ndarray):
        self.power = power
        self.ids = tuple(ids)
        self.M = np.asarray(M, float)
        self.pm = np.asarray(pm, float)
        self.delta_ref = np.asarray(delta_ref, float)
        self._cache: dict[str, float | None] = {}

    def __call__(self, eq: SmibEquivalent) -> float | None:
        if eq.mode_id not in self._cache:
            self._cache[eq.mode_id] = self._solve(eq.cms)
        return self._cache[eq.mode_id]

    def _solve(self, cms: frozenset[str]) -> float | None:
        c = np.array([g in cms for g in self.ids])
        live = self.M > 0
        if not c.any() or not (live & ~c).any():
            return None
        mc, mn = self.M[c].sum(), self.M[~c & live].sum()
        base_c = float(np.sum(self.M[c] * self.delta_ref[c]) / mc)
        base_n = float(np.sum(self.M[~c & live] * self.delta_ref[~c & live]) / mn)

        def neg_dp(d_r: float) -> float:
            delta = self.delta_ref + np.where(c, d_r - (base_c - base_n), 0.0)
            dp = self.pm - self.power(delta)
            return -float((mn * dp[c].sum() - mc * dp[~c & live].sum()) / (mc + mn))

        try:
            return post_fault_sep(neg_dp, 0.0, guess=0.0)
        except (RuntimeError, SimulationError):
            return None


# --- final stability -------------------------------------------------------------


GROWTH_TOL = 0.05  # allowed growth of the speed-spread peak; absorbs sampling phase


def final_stability(trajectory: Trajectory, tail: float = 0.5) -> tuple[bool, dict]:
    """Bounded angles over the run and a non-growing speed spread at the end.

    The trailing ``tail`` fraction is halved: the peak machine speed spread
    in the last half must not exceed the peak in the first half by more
    than ``GROWTH_TOL``. An undamped swing therefore counts as stable.
    """
    spread = trajectory.max_angle_spread()
    bounded = bool(np.all(spread < math.pi))
    live = trajectory.inertia[-1] > 0
    w = trajectory.domega[:, live]
    if trajectory.has_infinite_bus:
        w = np.concatenate([w, np.zeros((len(trajectory.t), 1))], axis=1)
    wspread = w.max(axis=1) - w.min(axis=1)
    n = len(trajectory.t)
    start = int(n * (1 - tail))
    mid = start + (n - start) // 2
    early = float(wspread[start:mid].max()) if mid > start else 0.0
    late = float(wspread[mid:].max()) if n > mid else 0.0
    decaying = late <= (1.0 + GROWTH_TOL) * early
    return bounded and decaying, {
        "max_angle_spread_deg": float(math.degrees(spread.max())),
        "speed_spread_peak_early": early,
        "speed_spread_peak_late": late,
        "bounded": bounded,
        "decaying": decaying,
    }


# --- closed loop -------------------------------------------------------------------


@dataclass
class RunReport:
    verdict: str
    t_s: float | None
    delta_s: float | None
    actuation_time: float | None
    cms_at_startup: tuple[str, ...]
    final_stable: bool
    final_details: dict
    timing: dict[str, float]
    messages: dict[str, int]
    redetections: list[float]
    notes: list[str]
    steps: list[StepResult] = field(repr=False)
    trajectory: Trajectory = field(repr=False)
    decision: Decision = field(repr=False)

    def to_dict(self) -> dict:
        return {
            **summary_dict(self.decision),
            "actuation_time_s": self.actuation_time,
            "cms_at_startup": list(self.cms_at_startup),
            "final_stable": self.final_stable,
            "final_stability": self.final_details,
            "timing_ms": self.timing,
            "messages": self.messages,
            "redetections_s": self.redetections,
            "notes": self.notes,
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n")


def _grid_time(t: float, step: float) -> float:
    return round(t / step) * step


def run_closed_loop(model: Network | AnalyticSmib, schedule: EventSchedule,
                    config: SchemeConfig | None = None) -> RunReport:
    """Simulate with the scheme in the loop; shed at t_s + delay on an unstable verdict."""
    config = config or SchemeConfig()
    if not len(schedule):
        raise SchemeError("the schedule has no disturbance")
    sim = Simulation(model, config.dt, schedule)
    ids = sim.ids
    if isinstance(model, AnalyticSmib):
        areas = {"A": ids}
    else:
        areas = sim.network.areas
    known = set(ids)
    for mid, _ in config.control_actions:
        if mid not in known:
            raise SchemeError(f"control action names unknown machine {mid!r}")
    onset = min(t for t, _ in schedule)
    clear = schedule.clear_time
    active_from = onset if clear is None else clear
    pipe = TwoLayerPipeline(areas, config, sim.w0, active_from, None, sim.infinite)
    n_samples = int(math.floor(config.t_end / config.cycle + 1e-9))
    stride = round(config.cycle / config.dt)
    if abs(stride * config.dt - config.cycle) > 1e-9:
        raise SchemeError("the recording cycle must be a multiple of the simulation step")
    steps: list[StepResult] = []
    notes: list[str] = []
    t_s = delta_s = t_act = None
    cms: tuple[str, ...] = ()
    redetections: list[float] = []
    try:
        for k in range(n_samples + 1):
            t = k * config.cycle
            sim.run_until(t)
            if t < onset - 1e-9:
                continue
            snap = sim.snapshot()
            inertia = dict(zip(ids, snap["M"].tolist()))
            recs = {
                g: DerivedSample(t, g, float(snap["delta"][j]), float(snap["domega"][j]),
                                 float(snap["pm"][j] - snap["pe"][j]))
                for j, g in enumerate(ids)
            }
            if t_act is not None and abs(t - t_act) < 1e-9:
                pipe.detector.notify_control(t)
            res = pipe.step(t, recs, inertia)
            steps.append(res)
            if res.detection.verdict != UNSTABLE:
                continue
            if t_s is not None:
                redetections.append(t)
                log.info("re-detection at t=%.3f s (control already issued)", t)
                continue
            t_s, delta_s, cms = t, res.detection.delta, tuple(sorted(res.assignment.cms))
            if not config.control_actions:
                notes.append("no control configured")
                continue
            t_act = _grid_time(t + config.control_delay, config.dt)
            for mid, frac in config.control_actions:
                sim.add_event(t_act, ShedGeneration(mid, frac))
        sim.run_until(config.t_end)
    finally:
        pipe.close()
    traj = sim.trajectory()
    stable, details = final_stability(traj)
    decision = pipe.detector.decision()
    coi = [s.coi_count for s in steps]
    return RunReport(
        verdict=decision.verdict, t_s=t_s, delta_s=delta_s, actuation_time=t_act, cms_at_startup=cms,
        final_stable=stable, final_details=details, timing=pipe.timing(),
        messages={"direct_per_sample": len(ids), "two_layer_total": int(sum(coi)),
                  "direct_total": len(ids) * len(coi), "samples": len(coi)},
        redetections=redetections, notes=notes, steps=steps, trajectory=traj, decision=decision,
    )


def network_sep(network: Network, topology: Topology, trajectory: Trajectory, t_ref: float) -> RigidSep:
    """RigidSep over the post-fault network, anchored at the state at ``t_ref``."""
    k = int(np.searchsorted(trajectory.t, t_ref - 1e-9))
    k = min(k, len(trajectory.t) - 1)
    fn = _NetworkPower(network)(topology, tuple(np.ones(len(trajectory.machine_ids))))
    return RigidSep(fn, trajectory.machine_ids, trajectory.inertia[k], trajectory.pm[k], trajectory.delta[k])
