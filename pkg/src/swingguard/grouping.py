"""Critical-machine identification by the largest angle gap (LAG)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

DEFAULT_MIN_GAP = math.radians(5.0)
DEFAULT_DELTA_SET = math.radians(10.0)


class GroupingError(ValueError):
    pass


@dataclass(frozen=True)
class AngleSnapshot:
    """Angles at time ``t`` together with the stored angles at the first sample."""

    t: float
    delta: Mapping[str, float]
    delta0: Mapping[str, float]

    def __post_init__(self) -> None:
        if set(self.delta) != set(self.delta0):
            raise GroupingError("snapshot angle sets at t and at 0 differ")

    def initialized(self) -> dict[str, float]:
        return {g: self.delta[g] - self.delta0[g] for g in self.delta}

    def restrict(self, ids: Iterable[str]) -> "AngleSnapshot":
        ids = list(ids)
        return AngleSnapshot(self.t, {g: self.delta[g] for g in ids}, {g: self.delta0[g] for g in ids})


@dataclass(frozen=True)
class GroupAssignment:
    t: float
    cms: frozenset[str]
    nms: frozenset[str]
    boundary_gap: float
    coherent: bool

    def group_of(self, gid: str) -> str:
        return "C" if gid in self.cms else "N"


def split_largest_gap(values: Mapping[str, float]) -> tuple[frozenset[str], frozenset[str], float]:
    """Split at the largest adjacent gap of the sorted values.

    Returns (above, below, gap). Ties go to the highest gap position. Equal
    values are ordered by id so the split never depends on input order.
    """
    if len(values) < 2:
        raise GroupingError("LAG needs at least 2 generators")
    order = sorted(values, key=lambda g: (values[g], g))
    best_k, best_gap = 0, -1.0
    for k in range(len(order) - 1):
        gap = values[order[k + 1]] - values[order[k]]
        if gap >= best_gap:
            best_k, best_gap = k, gap
    return frozenset(order[best_k + 1:]), frozenset(order[: best_k + 1]), best_gap


def lag_identify(snapshot: AngleSnapshot, min_gap: float = DEFAULT_MIN_GAP) -> GroupAssignment:
    """Largest-angle-gap split of initialized angles into CMs (above) and NMs."""
    init = snapshot.initialized()
    above, below, gap = split_largest_gap(init)
    if gap < min_gap or gap <= 0.0:
        return GroupAssignment(snapshot.t, frozenset(), frozenset(init), gap, True)
    return GroupAssignment(snapshot.t, above, below, gap, False)


def coherency_check(snapshot: AngleSnapshot, delta_set: float = DEFAULT_DELTA_SET) -> bool:
    """True iff the initialized angle spread is strictly below ``delta_set``."""
    init = snapshot.initialized()
    if not init:
        raise GroupingError("coherency check on an empty area")
    vals = init.values()
    return max(vals) - min(vals) < delta_set


def write_assignments(path: str | Path, assignments: Iterable[GroupAssignment]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "generator_id", "group"])
        for a in assignments:
            for g in sorted(a.cms | a.nms):
                w.writerow([f"{a.t:.6f}", g, a.group_of(g)])
