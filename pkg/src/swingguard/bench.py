"""Direct vs two-layer equivalence benchmark on synthetic fleets.

The two-layer time of one repetition is the slowest area center plus the
global center, each measured inside its own task. Area tasks run in a
process pool when more than one worker is available.
"""

from __future__ import annotations

import csv
import json
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .equivalence import (
    CoiGenerator,
    EquivalenceError,
    Fleet,
    SmibEquivalent,
    area_center,
    direct_equivalence,
    direct_lag,
    global_assignment,
    identity_error,
    layer2_equivalence,
)
from .grouping import DEFAULT_DELTA_SET, DEFAULT_MIN_GAP
from .pmu import DerivedSample

IDENTITY_TOL = 1e-12


class BenchError(RuntimeError):
    pass


def thread_cap() -> int:
    """Worker cap from SWINGGUARD_THREADS, else the CPU count."""
    cpus = os.cpu_count() or 1
    raw = os.environ.get("SWINGGUARD_THREADS")
    if raw is None:
        return cpus
    try:
        n = int(raw)
    except ValueError:
        raise BenchError(f"SWINGGUARD_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise BenchError("SWINGGUARD_THREADS must be >= 1")
    return n


@dataclass(frozen=True)
class BenchConfig:
    sizes: tuple[int, ...] = (100, 500, 1000, 2000)
    areas: int = 20
    repetitions: int = 30
    warmup: int = 3
    concurrent: bool = True
    seed: int = 0
    split_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.repetitions < 10:
            raise BenchError("repetitions must be >= 10")
        if self.areas < 1:
            raise BenchError("need at least one area")
        for n in self.sizes:
            if n < self.areas:
                raise BenchError(f"fleet size {n} is below the area count {self.areas}")
        if self.warmup < 0:
            raise BenchError("warmup must be >= 0")


@dataclass(frozen=True)
class SyntheticFleet:
    areas: dict[str, list[DerivedSample]]
    inertia: dict[str, float]
    delta0: dict[str, float]

    @property
    def records(self) -> list[DerivedSample]:
        return [r for recs in self.areas.values() for r in recs]


def make_fleet(n: int, p: int, seed: int = 0, split_fraction: float = 0.5) -> SyntheticFleet:
    """Random fleet with a planted two-cluster angle structure.

    Non-critical machines sit in [-60, -40] degrees and critical ones in
    [20, 60]. A ``split_fraction`` of areas hold both clusters; the rest
    hold one. At least one critical and one non-critical machine exist.
    """
    if not n >= p >= 1:
        raise BenchError(f"need N >= P >= 1, got N={n}, P={p}")
    rng = np.random.default_rng(seed)
    sizes = np.full(p, n // p)
    sizes[: n % p] += 1
    areas: dict[str, list[DerivedSample]] = {}
    inertia: dict[str, float] = {}
    delta0: dict[str, float] = {}
    mixed = rng.random(p) < split_fraction
    pure_c = rng.random(p) < 0.3
    labels = []
    for a in range(p):
        k = int(sizes[a])
        if mixed[a] and k >= 2:
            crit = rng.random(k) < 0.4
            crit[0], crit[-1] = True, False
        else:
            crit = np.full(k, bool(pure_c[a]))
        labels.append(crit)
    # both clusters must exist somewhere in the fleet
    if not any(c.any() for c in labels):
        labels[-1][0] = True
    if all(c.all() for c in labels):
        labels[0][-1] = False
    for a, crit in enumerate(labels):
        name = f"A{a + 1}"
        k = len(crit)
        ang = np.where(crit, rng.uniform(20.0, 60.0, k), rng.uniform(-60.0, -40.0, k))
        recs = []
        for j in range(k):
            gid = f"{name}G{j + 1}"
            inertia[gid] = float(rng.uniform(2.0, 20.0))
            delta0[gid] = 0.0
            recs.append(DerivedSample(0.0, gid, math.radians(float(ang[j])), float(rng.normal(0.0, 0.01)),
                                      float(rng.normal(0.0, 0.5))))
        areas[name] = recs
    return SyntheticFleet(areas, inertia, delta0)


def run_direct(records: Sequence[DerivedSample], inertia, delta0) -> SmibEquivalent:
    fleet = Fleet.from_records(records, inertia, delta0)
    return direct_equivalence(fleet, direct_lag(fleet, 0.0, DEFAULT_MIN_GAP), 0.0)


def run_area(records: Sequence[DerivedSample], inertia, delta0, area: str) -> list[CoiGenerator]:
    return area_center(Fleet.from_records(records, inertia, delta0), area, DEFAULT_DELTA_SET)


def run_global(cois: Sequence[CoiGenerator]) -> SmibEquivalent:
    labelled, assignment = global_assignment(cois, 0.0, DEFAULT_MIN_GAP)
    if assignment.coherent:
        raise EquivalenceError("synthetic fleet came out coherent")
    return layer2_equivalence(labelled, 0.0)


def _area_job(records, inertia, delta0, area: str, reps: int) -> tuple[list[CoiGenerator], list[float]]:
    """All repetitions of one area center; returns its output and per-rep seconds."""
    times = []
    out: list[CoiGenerator] = []
    for _ in range(reps):
        start = time.perf_counter()
        out = run_area(records, inertia, delta0, area)
        times.append(time.perf_counter() - start)
    return out, times


@dataclass
class BenchRow:
    n: int
    p: int
    t_direct_ms: float
    t_direct_p95_ms: float
    t_twolayer_ms: float
    t_twolayer_p95_ms: float
    t_area_max_ms: float
    t_global_ms: float
    speedup: float
    msgs_direct: int
    msgs_twolayer: int
    identity_max_err: float


@dataclass
class BenchResult:
    config: BenchConfig
    workers: int
    cpu_count: int
    rows: list[BenchRow] = field(default_factory=list)

    def row(self, n: int) -> BenchRow:
        for r in self.rows:
            if r.n == n:
                return r
        raise KeyError(n)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "p", "t_direct_ms", "t_twolayer_ms", "speedup", "msgs_direct", "msgs_twolayer"])
            for r in self.rows:
                w.writerow([r.n, r.p, f"{r.t_direct_ms:.6f}", f"{r.t_twolayer_ms:.6f}", f"{r.speedup:.6f}",
                            r.msgs_direct, r.msgs_twolayer])

    def to_dict(self) -> dict:
        return {"config": asdict(self.config), "workers": self.workers, "cpu_count": self.cpu_count,
                "rows": [asdict(r) for r in self.rows]}

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n")


def _p95(xs: Sequence[float]) -> float:
    return float(np.percentile(xs, 95))


def bench_size(n: int, config: BenchConfig, workers: int, pool: ProcessPoolExecutor | None) -> BenchRow:
    fleet = make_fleet(n, config.areas, config.seed + n, config.split_fraction)
    records = fleet.records
    # identity first: a mismatch aborts before any timing
    cois = [c for a, recs in fleet.areas.items() for c in run_area(recs, fleet.inertia, fleet.delta0, a)]
    two = run_global(cois)
    direct = run_direct(records, fleet.inertia, fleet.delta0)
    if two.cms != direct.cms:
        raise BenchError(f"N={n}: two-layer and direct partitions differ")
    err = identity_error(two, direct, Fleet.from_records(records, fleet.inertia, fleet.delta0))
    worst = max(err.values())
    if worst > IDENTITY_TOL:
        raise BenchError(f"N={n}: two-layer/direct identity violated ({err})")

    reps = config.repetitions + config.warmup
    t_direct = []
    for _ in range(reps):
        start = time.perf_counter()
        run_direct(records, fleet.inertia, fleet.delta0)
        t_direct.append(time.perf_counter() - start)

    jobs = [(recs, {r.machine_id: fleet.inertia[r.machine_id] for r in recs},
             {r.machine_id: fleet.delta0[r.machine_id] for r in recs}, a, reps)
            for a, recs in fleet.areas.items()]
    if pool is not None:
        results = list(pool.map(_area_job, *zip(*jobs)))
    else:
        results = [_area_job(*j) for j in jobs]
    area_times = np.array([times for _, times in results])
    uploaded = [c for out, _ in results for c in out]
    t_global = []
    for _ in range(reps):
        start = time.perf_counter()
        run_global(uploaded)
        t_global.append(time.perf_counter() - start)

    keep = slice(config.warmup, None)
    t_direct = t_direct[keep]
    area_max = area_times.max(axis=0)[keep]
    t_global = t_global[keep]
    t_two = [a + g for a, g in zip(area_max, t_global)]
    med_direct = statistics.median(t_direct)
    med_two = statistics.median(t_two)
    return BenchRow(
        n=n, p=config.areas,
        t_direct_ms=1e3 * med_direct, t_direct_p95_ms=1e3 * _p95(t_direct),
        t_twolayer_ms=1e3 * med_two, t_twolayer_p95_ms=1e3 * _p95(t_two),
        t_area_max_ms=1e3 * statistics.median(area_max), t_global_ms=1e3 * statistics.median(t_global),
        speedup=med_direct / med_two,
        msgs_direct=n, msgs_twolayer=len(uploaded),
        identity_max_err=worst,
    )


def run_bench(config: BenchConfig | None = None, workers: int | None = None) -> BenchResult:
    config = config or BenchConfig()
    cap = thread_cap()
    workers = min(cap, config.areas) if workers is None else min(workers, cap)
    if not config.concurrent:
        workers = 1
    result = BenchResult(config, workers, os.cpu_count() or 1)
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for n in config.sizes:
            result.rows.append(bench_size(n, config, workers, pool))
    finally:
        if pool is not None:
            pool.shutdown()
    return result
