"""Concave/convex instability indexes on the SMIB equivalent stream.

Three indexes are computed on every sample:

* ``c``: change of dP/domega between consecutive samples, unstable when > 0;
* ``tau``: change of the phase-trajectory slope over three samples, > 0;
* ``mu``: ratio of two projections on the trajectory normal, < 1.

Only the configured active index drives the verdict. Samples where an
index is numerically meaningless are gated: they carry no evidence either
way and leave the confirmation counter untouched. By default a sample
also counts only while the critical group moves away from the rest
(domega > 0 of the equivalent).
"""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .equivalence import SmibEquivalent

INDEXES = ("c", "tau", "mu")
STABLE, UNSTABLE, INDETERMINATE = "stable", "unstable", "indeterminate"


class DetectorError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    epsilon_domega: float = 1e-4
    confirm_samples: int = 1
    index_maf_window: int = 1
    active_index: str = "c"
    angle_deadband: float = 1e-6
    include_fault_on: bool = False
    separating_only: bool = True

    def __post_init__(self) -> None:
        if self.active_index not in INDEXES:
            raise DetectorError(f"active_index must be one of {INDEXES}, got {self.active_index!r}")
        if not self.epsilon_domega > 0 or not self.angle_deadband > 0:
            raise DetectorError("dead-bands must be > 0")
        if self.confirm_samples < 1 or self.index_maf_window < 1:
            raise DetectorError("confirm_samples and index_maf_window must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "DetectorConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise DetectorError(f"unknown detector settings: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class DetectionSample:
    t: float
    mode_id: str | None
    c: float | None
    tau: float | None
    mu: float | None
    gated: bool
    verdict: str
    delta: float | None = None

    def value(self, index: str) -> float | None:
        return getattr(self, index)


def index_c(current: SmibEquivalent, previous: SmibEquivalent, epsilon_domega: float = 1e-4) -> float | None:
    """dP/domega(t) - dP/domega(t - dt); None when gated.

    Gated when either speed is inside the dead-band or the speed changes
    sign between the samples (the quotient passes through infinity there).
    """
    if current.mode_id != previous.mode_id:
        return None
    w1, w0 = current.domega, previous.domega
    if abs(w1) < epsilon_domega or abs(w0) < epsilon_domega or (w1 > 0) != (w0 > 0):
        return None
    return current.dp / w1 - previous.dp / w0


def index_tau(s2: SmibEquivalent, s1: SmibEquivalent, s0: SmibEquivalent,
              angle_deadband: float = 1e-6) -> float | None:
    """Difference of successive phase-plane slopes over samples s0, s1, s2 (oldest last)."""
    if not s2.mode_id == s1.mode_id == s0.mode_id:
        return None
    d2 = s2.delta - s1.delta
    d1 = s1.delta - s0.delta
    if abs(d2) < angle_deadband or abs(d1) < angle_deadband or (d2 > 0) != (d1 > 0):
        return None
    return (s2.domega - s1.domega) / d2 - (s1.domega - s0.domega) / d1


def index_mu(current: SmibEquivalent, previous: SmibEquivalent, delta_sep: float | None,
             omega0: float) -> float | None:
    """Projection ratio on the trajectory normal at the previous sample.

    Speeds are in rad/s and the acceleration comes from the swing equation
    of the equivalent. None when delta_sep is unknown or the ratio is 0/0.
    """
    if delta_sep is None or current.mode_id != previous.mode_id:
        return None
    w_prev = omega0 * previous.domega
    w_cur = omega0 * current.domega
    wdot = omega0 * previous.dp / previous.M
    num = -wdot * (previous.delta - delta_sep) + w_prev * w_prev
    den = -wdot * (current.delta - delta_sep) + w_prev * w_cur
    scale = abs(wdot) * (abs(previous.delta - delta_sep) + abs(current.delta - delta_sep)) + w_prev * w_prev + abs(w_prev * w_cur)
    if scale == 0.0 or abs(den) <= 1e-12 * scale:
        return None
    return num / den


def fires(index: str, value: float) -> bool:
    return value < 1.0 if index == "mu" else value > 0.0


class Decider:
    """Confirmation counter over one index stream."""

    def __init__(self, config: DetectorConfig):
        self.config = config
        self.count = 0

    def reset(self) -> None:
        self.count = 0

    def push(self, value: float | None) -> str:
        if value is None:
            return INDETERMINATE
        if fires(self.config.active_index, value):
            self.count += 1
            if self.count >= self.config.confirm_samples:
                self.count = 0
                return UNSTABLE
            return INDETERMINATE
        self.count = 0
        return STABLE


class _Smoother:
    """Trailing mean of the last ``window`` non-gated values of one index.

    Gated until the window has filled since the last reset.
    """

    def __init__(self, window: int):
        self.window = window
        self.buf: deque[float] = deque(maxlen=window)

    def reset(self) -> None:
        self.buf.clear()

    def push(self, value: float | None) -> float | None:
        if value is None:
            return None
        if self.window == 1:
            return value
        self.buf.append(value)
        if len(self.buf) < self.window:
            return None
        return math.fsum(self.buf) / self.window


@dataclass
class Decision:
    verdict: str
    t_s: float | None
    delta_s: float | None
    detections: list[float] = field(default_factory=list)
    mode_history: list[tuple[float, str | None]] = field(default_factory=list)


class Detector:
    """Stateful per-run detector fed one equivalent sample at a time.

    ``active_from`` gates everything before fault clearance unless the
    config includes fault-on samples. ``sep`` maps an equivalent sample to
    the post-fault SEP angle used by ``mu`` (or None when unknown).
    """

    def __init__(self, config: DetectorConfig | None = None, omega0: float = 2 * math.pi * 50,
                 active_from: float = -math.inf,
                 sep: Callable[[SmibEquivalent], float | None] | None = None):
        self.config = config or DetectorConfig()
        self.omega0 = omega0
        self.active_from = -math.inf if self.config.include_fault_on else active_from
        self.sep = sep
        self.window: deque[SmibEquivalent] = deque(maxlen=3)
        self.smoothers = {k: _Smoother(self.config.index_maf_window) for k in INDEXES}
        self.decider = Decider(self.config)
        self.samples: list[DetectionSample] = []
        self.detections: list[float] = []
        self.detection_angles: list[float] = []
        self.mode_history: list[tuple[float, str | None]] = []

    def reset(self) -> None:
        self.window.clear()
        for s in self.smoothers.values():
            s.reset()
        self.decider.reset()

    def notify_control(self, t: float) -> None:
        """Forget history across a control action; evaluation continues."""
        self.reset()

    def update(self, eq: SmibEquivalent | None, t: float | None = None) -> DetectionSample:
        t = eq.t if t is None else t
        mode = None if eq is None else eq.mode_id
        if not self.mode_history or self.mode_history[-1][1] != mode:
            self.mode_history.append((t, mode))
            self.reset()
        closing = self.config.separating_only and eq is not None and eq.domega <= 0.0
        if eq is None or t < self.active_from - 1e-9:
            sample = DetectionSample(t, mode, None, None, None, True, INDETERMINATE,
                                     None if eq is None else eq.delta)
            self.samples.append(sample)
            return sample
        self.window.append(eq)
        w = list(self.window)
        raw = {"c": None, "tau": None, "mu": None}
        if len(w) >= 2:
            raw["c"] = index_c(w[-1], w[-2], self.config.epsilon_domega)
            raw["mu"] = index_mu(w[-1], w[-2], None if self.sep is None else self.sep(w[-1]), self.omega0)
        if len(w) == 3:
            raw["tau"] = index_tau(w[-1], w[-2], w[-3], self.config.angle_deadband)
        if closing:
            # the critical group is not moving away from the rest: no evidence
            raw = dict.fromkeys(raw)
        vals = {k: self.smoothers[k].push(v) for k, v in raw.items()}
        active = vals[self.config.active_index]
        verdict = self.decider.push(active)
        if verdict == UNSTABLE:
            self.detections.append(t)
            self.detection_angles.append(eq.delta)
        sample = DetectionSample(t, mode, vals["c"], vals["tau"], vals["mu"], active is None, verdict, eq.delta)
        self.samples.append(sample)
        return sample

    def decision(self) -> Decision:
        if self.detections:
            return Decision(UNSTABLE, self.detections[0], self.detection_angles[0], list(self.detections),
                            list(self.mode_history))
        return Decision(STABLE, None, None, [], list(self.mode_history))


def decide(samples: Sequence[DetectionSample], config: DetectorConfig | None = None) -> Decision:
    """Replay the confirmation rule over an index stream."""
    config = config or DetectorConfig()
    decider = Decider(config)
    hits: list[DetectionSample] = []
    history: list[tuple[float, str | None]] = []
    for s in samples:
        if not history or history[-1][1] != s.mode_id:
            history.append((s.t, s.mode_id))
            decider.reset()
        v = s.value(config.active_index)
        if decider.push(v) == UNSTABLE:
            hits.append(s)
    if not hits:
        return Decision(STABLE, None, None, [], history)
    return Decision(UNSTABLE, hits[0].t, hits[0].delta, [h.t for h in hits], history)


def convex_region_map(pe: Callable[[np.ndarray], np.ndarray], dpe: Callable[[np.ndarray], np.ndarray],
                      pm: float, M: float, omega0: float, delta: np.ndarray, domega: np.ndarray,
                      D: float = 0.0) -> np.ndarray:
    """Sign of l*domega on a (delta, domega) grid for a closed-form SMIB.

    l is the phase-plane curvature d2(domega)/d(delta)2. Returns +1 (convex),
    -1 (concave) or 0 (boundary, the domega = 0 axis), shaped (len(domega), len(delta)).
    """
    dd, ww = np.meshgrid(np.asarray(delta, float), np.asarray(domega, float))
    out = np.zeros(dd.shape, dtype=int)
    moving = ww != 0.0
    d, w = dd[moving], ww[moving]
    dp = pm - pe(d)
    ddp = -dpe(d)
    k = (dp - D * omega0 * w) / (M * omega0 * w)
    l_times_w = ddp / (M * omega0) - dp * k / (M * omega0 * w)
    out[moving] = np.sign(l_times_w).astype(int)
    return out


@dataclass(frozen=True)
class CriteriaTimes:
    proposed: float | None
    delta_u: float | None
    angle_180: float | None


def first_crossing(t: np.ndarray, x: np.ndarray, level: float, after: float = -math.inf) -> float | None:
    idx = np.nonzero((np.asarray(t) >= after - 1e-9) & (np.asarray(x) >= level))[0]
    return None if idx.size == 0 else float(t[idx[0]])


def threshold_criteria(stream: Sequence[SmibEquivalent], delta_u: float | None, t_proposed: float | None,
                       after: float = -math.inf) -> CriteriaTimes:
    """First crossing of delta_u and of 180 degrees by the equivalent angle."""
    if not stream:
        return CriteriaTimes(t_proposed, None, None)
    t = np.array([s.t for s in stream])
    d = np.array([s.delta for s in stream])
    return CriteriaTimes(
        t_proposed,
        None if delta_u is None else first_crossing(t, d, delta_u, after),
        first_crossing(t, d, math.pi, after),
    )


def _cell(v: float | None) -> str:
    return "" if v is None or not math.isfinite(v) else repr(v)


def write_detection_csv(path: str | Path, samples: Iterable[DetectionSample]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mode_id", "c", "tau", "mu", "gated", "verdict"])
        for s in samples:
            w.writerow([f"{s.t:.6f}", s.mode_id or "", _cell(s.c), _cell(s.tau), _cell(s.mu), int(s.gated),
                        s.verdict])


def summary_dict(decision: Decision) -> dict:
    return {
        "verdict": decision.verdict,
        "t_s": decision.t_s,
        "delta_s_deg": None if decision.delta_s is None else math.degrees(decision.delta_s),
        "mode_history": [{"t": t, "mode_id": m} for t, m in decision.mode_history],
        "detections": decision.detections,
    }


def write_summary(path: str | Path, decision: Decision, extra: dict | None = None) -> None:
    data = summary_dict(decision)
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data, indent=2, allow_nan=False) + "\n")


__all__ = [
    "INDEXES", "STABLE", "UNSTABLE", "INDETERMINATE", "DetectorError", "DetectorConfig", "DetectionSample",
    "index_c", "index_tau", "index_mu", "fires", "Decider", "Decision", "Detector", "decide",
    "convex_region_map", "CriteriaTimes", "threshold_criteria", "first_crossing", "write_detection_csv",
    "summary_dict", "write_summary",
]
