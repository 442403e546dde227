"""JSON scenario files.

Angles are degrees in files and radians in memory. A scenario may also
carry ``schedule`` and ``cases`` blocks; those are read by the simulator.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

from .network import Bus, InfiniteBus, Line, Machine, Network, NetworkError


class ScenarioError(ValueError):
    """A scenario file failed to parse or validate."""


def _get(d: dict, key: str, where: str, kind=float, default: Any = ...):
    if key not in d:
        if default is ...:
            raise ScenarioError(f"{where}: missing required field '{key}'")
        return default
    value = d[key]
    if value is None:
        return default if default is not ... else None
    try:
        if kind is float:
            out = float(value)
            if not math.isfinite(out):
                raise ValueError
            return out
        return kind(value)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}.{key}: invalid value {value!r}") from None


def network_from_dict(data: dict) -> Network:
    if not isinstance(data, dict):
        raise ScenarioError("scenario: top level must be an object")
    for key in ("buses", "lines", "machines"):
        if not isinstance(data.get(key), list):
            raise ScenarioError(f"scenario: '{key}' must be a list")
    buses = []
    for k, b in enumerate(data["buses"]):
        w = f"buses[{k}]"
        try:
            buses.append(Bus(
                id=_get(b, "id", w, int),
                type=_get(b, "type", w, str, "pq"),
                vm=_get(b, "vm", w, float, 1.0),
                va=math.radians(_get(b, "va_deg", w, float, 0.0)),
                pg=_get(b, "pg", w, float, 0.0),
                pl=_get(b, "pl", w, float, 0.0),
                ql=_get(b, "ql", w, float, 0.0),
                gl=_get(b, "gl", w, float, None),
                bl=_get(b, "bl", w, float, None),
            ))
        except NetworkError as exc:
            raise ScenarioError(f"{w}: {exc}") from None
    lines = []
    for k, ln in enumerate(data["lines"]):
        w = f"lines[{k}]"
        frm = _get(ln, "from", w, int)
        to = _get(ln, "to", w, int)
        lines.append(Line(
            id=_get(ln, "id", w, str, f"L{frm}-{to}"),
            from_bus=frm, to_bus=to,
            r=_get(ln, "r", w, float, 0.0),
            x=_get(ln, "x", w, float),
            b=_get(ln, "b", w, float, 0.0),
            in_service=_get(ln, "in_service", w, bool, True),
        ))
    machines = []
    for k, m in enumerate(data["machines"]):
        w = f"machines[{k}]"
        d0 = _get(m, "delta0_deg", w, float, None)
        try:
            machines.append(Machine(
                id=_get(m, "id", w, str),
                bus=_get(m, "bus", w, int),
                M=_get(m, "M", w, float),
                D=_get(m, "D", w, float, 0.0),
                Xd=_get(m, "Xd", w, float),
                E=_get(m, "E", w, float, None),
                Pm=_get(m, "Pm", w, float, None),
                area=_get(m, "area", w, str, "1"),
                delta0=None if d0 is None else math.radians(d0),
            ))
        except NetworkError as exc:
            raise ScenarioError(f"{w}: {exc}") from None
    inf = data.get("infinite_bus")
    infinite = None
    if inf is not None:
        infinite = InfiniteBus(_get(inf, "bus", "infinite_bus", int), _get(inf, "v", "infinite_bus", float, 1.0))
    areas = data.get("areas")
    if areas is not None:
        owner = {mid: a for a, members in areas.items() for mid in members}
        known = {m.id for m in machines}
        for mid in owner:
            if mid not in known:
                raise ScenarioError(f"areas: unknown machine {mid!r}")
        missing = known - set(owner)
        if missing:
            raise ScenarioError(f"areas: machines without an area: {sorted(missing)}")
        machines = [Machine(**{**m.__dict__, "area": str(owner[m.id])}) for m in machines]
    try:
        return Network(
            buses=tuple(buses), lines=tuple(lines), machines=tuple(machines),
            f0=_get(data, "f0", "scenario", float, 50.0),
            base_mva=_get(data, "base_mva", "scenario", float, 100.0),
            infinite_bus=infinite,
            name=_get(data, "name", "scenario", str, "network"),
        )
    except NetworkError as exc:
        raise ScenarioError(f"scenario: {exc}") from None


def network_to_dict(network: Network) -> dict:
    def opt(v, f=lambda x: x):
        return None if v is None else f(v)

    out = {
        "name": network.name,
        "f0": network.f0,
        "base_mva": network.base_mva,
        "buses": [
            {"id": b.id, "type": b.type, "vm": b.vm, "va_deg": math.degrees(b.va), "pg": b.pg,
             "pl": b.pl, "ql": b.ql, "gl": b.gl, "bl": b.bl}
            for b in network.buses
        ],
        "lines": [
            {"id": ln.id, "from": ln.from_bus, "to": ln.to_bus, "r": ln.r, "x": ln.x, "b": ln.b,
             "in_service": ln.in_service}
            for ln in network.lines
        ],
        "machines": [
            {"id": m.id, "bus": m.bus, "M": m.M, "D": m.D, "Xd": m.Xd, "E": m.E, "Pm": m.Pm,
             "area": m.area, "delta0_deg": opt(m.delta0, math.degrees)}
            for m in network.machines
        ],
        "areas": {a: list(ids) for a, ids in network.areas.items()},
    }
    if network.infinite_bus is not None:
        out["infinite_bus"] = {"bus": network.infinite_bus.bus, "v": network.infinite_bus.v}
    return out


def read_json(path: str | Path) -> dict:
    text = Path(path).read_text()
    if not text.strip():
        raise ScenarioError(f"{path}: file is empty")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def load_network(path: str | Path) -> Network:
    return network_from_dict(read_json(path))
