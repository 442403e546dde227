"""COI aggregation and the two-layer SMIB equivalent.

Layer 1 runs in each area center and reduces the area's generators to one
or two centre-of-inertia (COI) generators. Layer 2 runs in the global
center and composes the COIs into one SMIB equivalent. ``direct_equivalence``
computes the same equivalent in a single shot over every generator and is
the oracle for the layered path.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .grouping import (
    DEFAULT_DELTA_SET,
    DEFAULT_MIN_GAP,
    GroupAssignment,
    GroupingError,
    split_largest_gap,
)
from .pmu import DerivedSample

log = logging.getLogger(__name__)


class EquivalenceError(ValueError):
    pass


def mode_id(cms: Iterable[str]) -> str:
    """Stable short hash of a critical-machine set."""
    text = "\x1f".join(sorted(cms))
    return hashlib.sha1(text.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class CoiGenerator:
    area: str
    group: str
    delta: float
    domega: float
    M: float
    dp: float
    member_count: int
    delta_init: float
    members: frozenset[str]

    def __post_init__(self) -> None:
        if not self.M > 0:
            raise EquivalenceError(f"COI generator {self.area}/{self.group} has non-positive inertia")
        if self.group not in ("C", "N"):
            raise EquivalenceError(f"group must be C or N, got {self.group!r}")


@dataclass(frozen=True)
class SmibEquivalent:
    t: float
    delta: float
    domega: float
    M: float
    dp: float
    mode_id: str
    cms: frozenset[str]
    nms: frozenset[str]

    def __post_init__(self) -> None:
        if not self.M > 0:
            raise EquivalenceError("SMIB equivalent has non-positive inertia")


@dataclass(frozen=True)
class Fleet:
    """Column view of one sample over a set of generators."""

    ids: tuple[str, ...]
    M: np.ndarray
    delta: np.ndarray
    domega: np.ndarray
    dp: np.ndarray
    delta0: np.ndarray

    @classmethod
    def from_records(cls, records: Sequence[DerivedSample], inertia: Mapping[str, float],
                     delta0: Mapping[str, float] | None = None) -> "Fleet":
        ids = tuple(r.machine_id for r in records)
        try:
            M = np.array([inertia[g] for g in ids], dtype=float)
            d0 = np.zeros(len(ids)) if delta0 is None else np.array([delta0[g] for g in ids], dtype=float)
        except KeyError as exc:
            raise EquivalenceError(f"no inertia/initial angle for generator {exc.args[0]!r}") from None
        return cls(
            ids, M,
            np.array([r.delta for r in records], dtype=float),
            np.array([r.domega for r in records], dtype=float),
            np.array([r.dp for r in records], dtype=float),
            d0,
        )

    def take(self, mask: np.ndarray) -> "Fleet":
        return Fleet(tuple(g for g, keep in zip(self.ids, mask) if keep), self.M[mask], self.delta[mask],
                     self.domega[mask], self.dp[mask], self.delta0[mask])


def _coi(fleet: Fleet, mask: np.ndarray, area: str, group: str) -> CoiGenerator:
    M = fleet.M[mask]
    total = float(np.sum(M))
    return CoiGenerator(
        area=area,
        group=group,
        delta=float(np.sum(M * fleet.delta[mask])) / total,
        domega=float(np.sum(M * fleet.domega[mask])) / total,
        M=total,
        dp=float(np.sum(fleet.dp[mask])),
        member_count=int(np.count_nonzero(mask)),
        delta_init=float(np.sum(M * (fleet.delta[mask] - fleet.delta0[mask]))) / total,
        members=frozenset(g for g, keep in zip(fleet.ids, mask) if keep),
    )


def layer1_equivalence(fleet: Fleet, labels: Mapping[str, str], area: str = "1") -> list[CoiGenerator]:
    """One COI generator per non-empty group among the area's generators."""
    if not fleet.ids:
        raise EquivalenceError(f"area {area!r} has no generators")
    groups = np.array([labels[g] for g in fleet.ids])
    out = []
    for group in ("C", "N"):
        mask = groups == group
        if mask.any():
            out.append(_coi(fleet, mask, area, group))
    return out


def area_center(fleet: Fleet, area: str = "1", delta_set: float = DEFAULT_DELTA_SET) -> list[CoiGenerator]:
    """Coherency test, LAG split when incoherent, then layer-1 aggregation.

    A coherent area yields a single COI with a provisional ``N`` label; the
    global center assigns the final group.
    """
    n = len(fleet.ids)
    if n == 0:
        raise EquivalenceError(f"area {area!r} has no generators")
    init = fleet.delta - fleet.delta0
    if n == 1 or float(init.max() - init.min()) < delta_set:
        return [_coi(fleet, np.ones(n, dtype=bool), area, "N")]
    above, _, _ = split_largest_gap(dict(zip(fleet.ids, init.tolist())))
    mask = np.array([g in above for g in fleet.ids])
    return [_coi(fleet, mask, area, "C"), _coi(fleet, ~mask, area, "N")]


def global_assignment(cois: Sequence[CoiGenerator], t: float = 0.0,
                      min_gap: float = DEFAULT_MIN_GAP) -> tuple[list[CoiGenerator], GroupAssignment]:
    """LAG over COI generators; the global label overrides the area label.

    Returns the relabelled COIs and the implied generator-level assignment.
    A coherent COI set comes back with every label ``N`` and ``coherent``.
    """
    if len(cois) < 2:
        members = frozenset().union(*(c.members for c in cois))
        return [replace(c, group="N") for c in cois], GroupAssignment(t, frozenset(), members, 0.0, True)
    keys = [f"{k}" for k in range(len(cois))]
    above, _, gap = split_largest_gap({k: c.delta_init for k, c in zip(keys, cois)})
    coherent = gap < min_gap or gap <= 0.0
    out = []
    for k, c in zip(keys, cois):
        group = "C" if (k in above and not coherent) else "N"
        if group != c.group and _area_was_split(c, cois):
            log.info("t=%.3f: global LAG relabels area %s COI %s -> %s", t, c.area, c.group, group)
        out.append(replace(c, group=group))
    cms = frozenset().union(*(c.members for c in out if c.group == "C"))
    nms = frozenset().union(*(c.members for c in out if c.group == "N"))
    return out, GroupAssignment(t, cms, nms, gap, coherent)


def _area_was_split(c: CoiGenerator, cois: Sequence[CoiGenerator]) -> bool:
    return sum(1 for o in cois if o.area == c.area) > 1


def layer2_equivalence(cois: Sequence[CoiGenerator], t: float = 0.0) -> SmibEquivalent:
    """Compose COI generators into the SMIB equivalent using their group labels."""
    C = [c for c in cois if c.group == "C"]
    N = [c for c in cois if c.group == "N"]
    if not C or not N:
        raise EquivalenceError("system coherent: both a C and an N group are needed for an SMIB")
    MC = np.array([c.M for c in C])
    MN = np.array([c.M for c in N])
    mc, mn = float(np.sum(MC)), float(np.sum(MN))
    cms = frozenset().union(*(c.members for c in C))
    nms = frozenset().union(*(c.members for c in N))
    return _compose(
        t, mc, mn,
        float(np.sum(MC * np.array([c.delta for c in C]))), float(np.sum(MN * np.array([c.delta for c in N]))),
        float(np.sum(MC * np.array([c.domega for c in C]))), float(np.sum(MN * np.array([c.domega for c in N]))),
        float(np.sum([c.dp for c in C])), float(np.sum([c.dp for c in N])),
        cms, nms,
    )


def _compose(t, mc, mn, md_c, md_n, mw_c, mw_n, p_c, p_n, cms, nms) -> SmibEquivalent:
    return SmibEquivalent(
        t=t,
        delta=md_c / mc - md_n / mn,
        domega=mw_c / mc - mw_n / mn,
        M=mc * mn / (mc + mn),
        dp=(mn * p_c - mc * p_n) / (mc + mn),
        mode_id=mode_id(cms),
        cms=cms,
        nms=nms,
    )


def direct_equivalence(fleet: Fleet, assignment: GroupAssignment, t: float | None = None) -> SmibEquivalent:
    """Single-shot relative motion of the C group against the N group."""
    if not assignment.cms or not assignment.nms:
        raise EquivalenceError("system coherent: both a C and an N group are needed for an SMIB")
    mask = np.array([g in assignment.cms for g in fleet.ids])
    if mask.sum() != len(assignment.cms) or (~mask).sum() != len(assignment.nms):
        raise EquivalenceError("assignment does not partition the fleet")
    MC, MN = fleet.M[mask], fleet.M[~mask]
    return _compose(
        assignment.t if t is None else t,
        float(np.sum(MC)), float(np.sum(MN)),
        float(np.sum(MC * fleet.delta[mask])), float(np.sum(MN * fleet.delta[~mask])),
        float(np.sum(MC * fleet.domega[mask])), float(np.sum(MN * fleet.domega[~mask])),
        float(np.sum(fleet.dp[mask])), float(np.sum(fleet.dp[~mask])),
        assignment.cms, assignment.nms,
    )


def single_machine_equivalent(fleet: Fleet, t: float) -> SmibEquivalent:
    """A lone machine against an infinite bus is its own equivalent."""
    if len(fleet.ids) != 1:
        raise EquivalenceError("infinite-bus equivalent needs exactly one machine")
    return SmibEquivalent(t, float(fleet.delta[0]), float(fleet.domega[0]), float(fleet.M[0]),
                          float(fleet.dp[0]), mode_id(fleet.ids), frozenset(fleet.ids), frozenset())


def direct_lag(fleet: Fleet, t: float = 0.0, min_gap: float = DEFAULT_MIN_GAP) -> GroupAssignment:
    """Generator-level LAG over the whole fleet (the single-shot path)."""
    try:
        above, below, gap = split_largest_gap(dict(zip(fleet.ids, (fleet.delta - fleet.delta0).tolist())))
    except GroupingError as exc:
        raise EquivalenceError(str(exc)) from None
    if gap < min_gap or gap <= 0.0:
        return GroupAssignment(t, frozenset(), frozenset(fleet.ids), gap, True)
    return GroupAssignment(t, above, below, gap, False)


def identity_error(a: SmibEquivalent, b: SmibEquivalent, fleet: Fleet) -> dict[str, float]:
    """Per-field disagreement between two equivalents, relative to the term scale.

    The scale of each field is the magnitude of the sums it is built from, so
    cancellation between the C and N terms does not inflate the error.
    """
    mask = np.array([g in a.cms for g in fleet.ids])
    MC, MN = fleet.M[mask], fleet.M[~mask]
    mc, mn = MC.sum(), MN.sum()
    scale = {
        "delta": np.sum(MC * np.abs(fleet.delta[mask])) / mc + np.sum(MN * np.abs(fleet.delta[~mask])) / mn,
        "domega": np.sum(MC * np.abs(fleet.domega[mask])) / mc + np.sum(MN * np.abs(fleet.domega[~mask])) / mn,
        "M": abs(a.M),
        "dp": (mn * np.sum(np.abs(fleet.dp[mask])) + mc * np.sum(np.abs(fleet.dp[~mask]))) / (mc + mn),
    }
    out = {}
    for name, s in scale.items():
        diff = abs(getattr(a, name) - getattr(b, name))
        out[name] = 0.0 if diff == 0.0 else diff / max(float(s), np.finfo(float).tiny)
    return out


@dataclass(frozen=True)
class MessageVolume:
    n: int
    p: int
    direct: tuple[int, ...]
    two_layer: tuple[int, ...]

    @property
    def ratio(self) -> float:
        return sum(self.two_layer) / sum(self.direct)


def message_volume(n: int, p: int, coi_counts: Sequence[int]) -> MessageVolume:
    """Per-sample records uploaded to the global center under each framework.

    ``coi_counts`` holds the number of COI generators uploaded at each sample.
    """
    if not n >= p >= 1:
        raise EquivalenceError(f"need N >= P >= 1, got N={n}, P={p}")
    for c in coi_counts:
        if not p <= c <= min(2 * p, n):
            raise EquivalenceError(f"COI count {c} outside [{p}, {min(2 * p, n)}]")
    return MessageVolume(n, p, tuple(n for _ in coi_counts), tuple(int(c) for c in coi_counts))


def write_equivalents(path: str | Path, stream: Iterable[SmibEquivalent]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mode_id", "delta_eq_deg", "domega_eq_pu", "m_eq", "dp_eq_pu"])
        for s in stream:
            w.writerow([f"{s.t:.6f}", s.mode_id, repr(math.degrees(s.delta)), repr(s.domega), repr(s.M),
                        repr(s.dp)])
