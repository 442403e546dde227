"""PMU measurement streams: decimation, derived quantities, noise, filtering.

Streams are columnar: one time vector and (time, machine) arrays per
channel. ``records()`` yields per-sample dataclasses for code that wants
row-at-a-time access.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .simulator import Trajectory

log = logging.getLogger(__name__)

MIN_CYCLE = 0.02
MAX_CYCLE = 0.1
CHANNELS = ("delta", "domega", "dp")


class PmuError(ValueError):
    pass


@dataclass(frozen=True)
class PmuSample:
    t: float
    machine_id: str
    delta: float
    f: float
    pm: float
    pe: float


@dataclass(frozen=True)
class DerivedSample:
    t: float
    machine_id: str
    delta: float
    domega: float
    dp: float


@dataclass(frozen=True, eq=False)
class PmuStream:
    t: np.ndarray
    machine_ids: tuple[str, ...]
    delta: np.ndarray
    freq: np.ndarray
    pm: np.ndarray
    pe: np.ndarray
    f0: float

    def records(self) -> Iterator[PmuSample]:
        for k, t in enumerate(self.t):
            for j, mid in enumerate(self.machine_ids):
                yield PmuSample(float(t), mid, float(self.delta[k, j]), float(self.freq[k, j]),
                                float(self.pm[k, j]), float(self.pe[k, j]))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "machine_id", "delta_deg", "freq_hz", "pm_pu", "pe_pu"])
            for s in self.records():
                w.writerow([f"{s.t:.6f}", s.machine_id, repr(math.degrees(s.delta)), repr(s.f),
                            repr(s.pm), repr(s.pe)])


@dataclass(frozen=True, eq=False)
class DerivedStream:
    t: np.ndarray
    machine_ids: tuple[str, ...]
    delta: np.ndarray
    domega: np.ndarray
    dp: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def channel(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def records(self) -> Iterator[DerivedSample]:
        for k, t in enumerate(self.t):
            for j, mid in enumerate(self.machine_ids):
                yield DerivedSample(float(t), mid, float(self.delta[k, j]), float(self.domega[k, j]),
                                    float(self.dp[k, j]))

    def sample_records(self, k: int) -> list[DerivedSample]:
        t = float(self.t[k])
        return [DerivedSample(t, mid, float(self.delta[k, j]), float(self.domega[k, j]), float(self.dp[k, j]))
                for j, mid in enumerate(self.machine_ids)]

    def to_csv(self, path: str | Path, pmu: PmuStream | None = None) -> None:
        """Derived-stream CSV; with ``pmu`` the raw columns are written too."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if pmu is None:
                w.writerow(["t", "machine_id", "delta_deg", "domega_pu", "dp_pu"])
                for s in self.records():
                    w.writerow([f"{s.t:.6f}", s.machine_id, repr(math.degrees(s.delta)), repr(s.domega),
                                repr(s.dp)])
                return
            w.writerow(["t", "machine_id", "delta_deg", "freq_hz", "pm_pu", "pe_pu", "domega_pu", "dp_pu"])
            for k, t in enumerate(self.t):
                for j, mid in enumerate(self.machine_ids):
                    w.writerow([f"{t:.6f}", mid, repr(math.degrees(self.delta[k, j])),
                                repr(float(pmu.freq[k, j])), repr(float(pmu.pm[k, j])),
                                repr(float(pmu.pe[k, j])), repr(float(self.domega[k, j])),
                                repr(float(self.dp[k, j]))])


def sample(trajectory: Trajectory, cycle: float = MIN_CYCLE) -> PmuStream:
    """Decimate a trajectory to PMU records every ``cycle`` seconds."""
    if not MIN_CYCLE - 1e-12 <= cycle <= MAX_CYCLE + 1e-12:
        raise PmuError(f"recording cycle must be within [{MIN_CYCLE}, {MAX_CYCLE}] s, got {cycle}")
    stride = round(cycle / trajectory.dt)
    if stride < 1 or abs(stride * trajectory.dt - cycle) > 1e-9:
        raise PmuError(f"cycle {cycle} is not a multiple of the simulation step {trajectory.dt}")
    idx = np.arange(0, len(trajectory.t), stride)
    f0 = trajectory.f0
    return PmuStream(
        t=trajectory.t[idx].copy(),
        machine_ids=trajectory.machine_ids,
        delta=trajectory.delta[idx].copy(),
        # inverse of the derive() relation, so the round trip is exact
        freq=f0 * (1.0 + trajectory.domega[idx] / (2 * math.pi)),
        pm=trajectory.pm[idx].copy(),
        pe=trajectory.pe[idx].copy(),
        f0=f0,
    )


def derive(stream: PmuStream, f0: float | None = None) -> DerivedStream:
    """domega = 2 pi (f - f0) / f0 and dP = Pm - Pe."""
    f0 = stream.f0 if f0 is None else f0
    if not f0 > 0:
        raise PmuError("f0 must be > 0")
    return DerivedStream(
        t=stream.t.copy(),
        machine_ids=stream.machine_ids,
        delta=stream.delta.copy(),
        domega=2 * math.pi * (stream.freq - f0) / f0,
        dp=stream.pm - stream.pe,
    )


@dataclass(frozen=True)
class NoiseSpec:
    snr_db: float
    seed: int = 0
    channels: tuple[str, ...] = CHANNELS

    def __post_init__(self) -> None:
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise PmuError(f"snr_db must be finite or +inf, got {self.snr_db}")
        bad = set(self.channels) - set(CHANNELS)
        if bad:
            raise PmuError(f"unknown noise channels {sorted(bad)}")


def add_noise(stream: DerivedStream, spec: NoiseSpec) -> DerivedStream:
    """Add Gaussian noise at ``spec.snr_db`` relative to each channel's RMS.

    Every (channel, machine) series gets its own amplitude estimate and an
    independent draw. ``snr_db = inf`` returns the stream unchanged.
    """
    if len(stream.t) == 0:
        raise PmuError("cannot add noise to an empty stream")
    if math.isinf(spec.snr_db):
        return stream
    rng = np.random.default_rng(spec.seed)
    ratio = 10.0 ** (-spec.snr_db / 20.0)
    out = {}
    for name in CHANNELS:
        x = stream.channel(name)
        if name not in spec.channels:
            continue
        rms = np.sqrt(np.mean(x**2, axis=0))
        log.debug("noise %s: A_signal=%s A_noise=%s", name, rms, rms * ratio)
        out[name] = x + rng.standard_normal(x.shape) * (rms * ratio)
    return replace(stream, **out)


def moving_average(stream: DerivedStream, window: int = 5,
                   channels: Sequence[str] = CHANNELS) -> DerivedStream:
    """Causal trailing mean over the last ``window`` samples of each channel."""
    if window < 1:
        raise PmuError("window must be >= 1")
    if window == 1:
        return stream
    return replace(stream, **{name: trailing_mean(stream.channel(name), window) for name in channels})


def trailing_mean(x: np.ndarray, window: int) -> np.ndarray:
    """Trailing mean along axis 0; the first samples average what is available."""
    x = np.asarray(x, dtype=float)
    acc = np.zeros_like(x)
    count = np.zeros(x.shape[0])
    n = x.shape[0]
    for k in range(min(window, n)):
        acc[k:] += x[: n - k]
        count[k:] += 1
    shape = (n,) + (1,) * (x.ndim - 1)
    return acc / count.reshape(shape)


def read_stream_csv(path: str | Path, f0: float | None = None) -> DerivedStream:
    """Read a PMU or trajectory CSV into a derived stream.

    Accepted column sets: ``domega_pu,dp_pu`` (derived), ``domega_pu,pm_pu,pe_pu``
    (trajectory export) or ``freq_hz,pm_pu,pe_pu`` (raw PMU, needs ``f0``).
    Every timestamp must carry the same machine set.
    """
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise PmuError(f"{path}: no samples")
    cols = set(rows[0].keys())
    missing = {"t", "machine_id", "delta_deg"} - cols
    if missing:
        raise PmuError(f"{path}: missing columns {sorted(missing)}")
    if "domega_pu" in cols and "dp_pu" in cols:
        mode = "derived"
    elif "domega_pu" in cols and {"pm_pu", "pe_pu"} <= cols:
        mode = "trajectory"
    elif {"freq_hz", "pm_pu", "pe_pu"} <= cols:
        mode = "raw"
        if f0 is None:
            raise PmuError(f"{path}: raw PMU columns need the nominal frequency f0")
    else:
        raise PmuError(f"{path}: need domega_pu,dp_pu or domega_pu,pm_pu,pe_pu or freq_hz,pm_pu,pe_pu columns")

    def num(r: dict, key: str, line: int) -> float:
        try:
            v = float(r[key])
        except (TypeError, ValueError):
            raise PmuError(f"{path}: line {line}: field '{key}' is not a number ({r.get(key)!r})") from None
        if not math.isfinite(v):
            raise PmuError(f"{path}: line {line}: field '{key}' is not finite")
        return v

    times: list[float] = []
    by_t: dict[float, dict[str, tuple[int, dict]]] = {}
    for line, r in enumerate(rows, start=2):
        t = num(r, "t", line)
        mid = r.get("machine_id")
        if not mid:
            raise PmuError(f"{path}: line {line}: field 'machine_id' is empty")
        if t not in by_t:
            by_t[t] = {}
            times.append(t)
        if mid in by_t[t]:
            raise PmuError(f"{path}: line {line}: duplicate sample for {mid!r} at t={t}")
        by_t[t][mid] = (line, r)
    ids = tuple(by_t[times[0]].keys())
    for t in times:
        if set(by_t[t]) != set(ids):
            diff = sorted(set(by_t[t]) ^ set(ids))
            raise PmuError(f"{path}: machine set at t={t} differs from the first sample ({diff})")
    shape = (len(times), len(ids))
    delta = np.empty(shape)
    domega = np.empty(shape)
    dp = np.empty(shape)
    for k, t in enumerate(times):
        for j, mid in enumerate(ids):
            line, r = by_t[t][mid]
            delta[k, j] = math.radians(num(r, "delta_deg", line))
            if mode == "raw":
                domega[k, j] = 2 * math.pi * (num(r, "freq_hz", line) - f0) / f0
            else:
                domega[k, j] = num(r, "domega_pu", line)
            if mode == "derived":
                dp[k, j] = num(r, "dp_pu", line)
            else:
                dp[k, j] = num(r, "pm_pu", line) - num(r, "pe_pu", line)
    order = np.argsort(times, kind="stable")
    return DerivedStream(np.array(times)[order], ids, delta[order], domega[order], dp[order])
