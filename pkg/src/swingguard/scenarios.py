"""Scenario files: a model plus schedule, scheme settings and named cases.

A scenario is a JSON object. ``model`` is ``"network"`` (default; the
network fields sit at the top level, see ``netmodel.scenario``) or
``"analytic_smib"`` with parameters under ``smib``. Optional blocks:

* ``schedule``: event list (see ``simulator.schedule_from_list``);
* ``simulation``: ``t_end``, ``dt``;
* ``scheme``: ``cycle``, ``delta_set_deg``, ``min_gap_deg``, ``control_delay``,
  ``control_actions``, ``detector``;
* ``cases``: named alternative schedules, e.g. the noise-study fixtures;
* ``sweep``: default fault for ``sweep-cct``;
* ``noise``: ``maf_window`` and ``t_end``, the recording length of the
  noise-study fixtures (defaults to the simulation horizon).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

from .detector import DetectorConfig, DetectorError
from .netmodel import Network, ScenarioError, network_from_dict, read_json
from .scheme import SchemeConfig, SchemeError
from .simulator import AnalyticSmib, EventSchedule, SimulationError, schedule_from_list

DATA = "data"


@dataclass(frozen=True)
class Scenario:
    name: str
    model: Network | AnalyticSmib
    schedule: EventSchedule
    t_end: float = 3.0
    dt: float = 1e-3
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    cases: dict[str, EventSchedule] = field(default_factory=dict)
    sweep: dict[str, Any] = field(default_factory=dict)
    maf_window: int = 10
    noise_t_end: float | None = None
    source: dict = field(default_factory=dict, repr=False)

    @property
    def omega0(self) -> float:
        return self.model.omega0

    @property
    def f0(self) -> float:
        return self.model.f0

    @property
    def areas(self) -> dict[str, tuple[str, ...]]:
        if isinstance(self.model, AnalyticSmib):
            return {"A": (self.model.machine_id,)}
        return self.model.areas

    @property
    def inertia(self) -> dict[str, float]:
        if isinstance(self.model, AnalyticSmib):
            return {self.model.machine_id: self.model.M}
        return {m.id: m.M for m in self.model.machines}

    @property
    def infinite_bus(self) -> bool:
        if isinstance(self.model, AnalyticSmib):
            return True
        return self.model.infinite_bus is not None

    def case(self, name: str) -> EventSchedule:
        if name not in self.cases:
            raise ScenarioError(f"scenario {self.name!r} has no case {name!r}; known: {sorted(self.cases)}")
        return self.cases[name]

    def config_hash(self) -> str:
        return config_hash(self.source)


def config_hash(data: Any) -> str:
    text = json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def _schedule(items: Any, where: str) -> EventSchedule:
    if not isinstance(items, list):
        raise ScenarioError(f"{where}: must be a list of events")
    try:
        return schedule_from_list(items)
    except (ValueError, KeyError) as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def _num(block: dict, key: str, where: str, default: float) -> float:
    value = block.get(key, default)
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}.{key}: invalid value {value!r}") from None
    if not math.isfinite(out):
        raise ScenarioError(f"{where}.{key}: must be finite")
    return out


def scheme_from_dict(block: dict, dt: float, t_end: float, where: str = "scheme") -> SchemeConfig:
    if not isinstance(block, dict):
        raise ScenarioError(f"{where}: must be an object")
    known = {"cycle", "delta_set_deg", "min_gap_deg", "control_delay", "control_actions", "detector", "workers"}
    unknown = set(block) - known
    if unknown:
        raise ScenarioError(f"{where}: unknown settings {sorted(unknown)}")
    actions = []
    for k, a in enumerate(block.get("control_actions", [])):
        try:
            actions.append((str(a["machine"]), float(a["fraction"])))
        except (KeyError, TypeError, ValueError):
            raise ScenarioError(f"{where}.control_actions[{k}]: needs 'machine' and numeric 'fraction'") from None
    try:
        detector = DetectorConfig.from_dict(block.get("detector", {}))
        return SchemeConfig(
            cycle=_num(block, "cycle", where, 0.02),
            delta_set=math.radians(_num(block, "delta_set_deg", where, 10.0)),
            min_gap=math.radians(_num(block, "min_gap_deg", where, 5.0)),
            detector=detector,
            control_delay=_num(block, "control_delay", where, 0.2),
            control_actions=tuple(actions),
            t_end=t_end,
            dt=dt,
            workers=int(block.get("workers", 1)),
        )
    except (DetectorError, SchemeError, TypeError) as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario: top level must be an object")
    kind = data.get("model", "network")
    if kind == "analytic_smib":
        params = data.get("smib", {})
        if not isinstance(params, dict):
            raise ScenarioError("smib: must be an object")
        fields = AnalyticSmib.__dataclass_fields__
        unknown = set(params) - set(fields)
        if unknown:
            raise ScenarioError(f"smib: unknown parameters {sorted(unknown)}")
        try:
            model: Network | AnalyticSmib = AnalyticSmib(**{
                k: (str(v) if k == "machine_id" else float(v)) for k, v in params.items()
            })
            model.delta0
            model.delta_sep
        except (TypeError, ValueError, SimulationError) as exc:
            raise ScenarioError(f"smib: {exc}") from None
    elif kind == "network":
        model = network_from_dict(data)
    else:
        raise ScenarioError(f"model: unknown model kind {kind!r}")
    sim = data.get("simulation", {})
    t_end = _num(sim, "t_end", "simulation", 3.0)
    dt = _num(sim, "dt", "simulation", 1e-3)
    if not (dt > 0 and t_end > 0):
        raise ScenarioError("simulation: t_end and dt must be > 0")
    schedule = _schedule(data.get("schedule", []), "schedule")
    cases = {}
    for name, block in data.get("cases", {}).items():
        if not isinstance(block, dict) or "schedule" not in block:
            raise ScenarioError(f"cases.{name}: needs a 'schedule'")
        cases[name] = _schedule(block["schedule"], f"cases.{name}.schedule")
    noise = data.get("noise", {})
    maf = int(_num(noise, "maf_window", "noise", 10))
    if maf < 1:
        raise ScenarioError("noise.maf_window: must be >= 1")
    noise_t_end = _num(noise, "t_end", "noise", t_end)
    if noise_t_end <= 0:
        raise ScenarioError("noise.t_end: must be > 0")
    return Scenario(
        name=str(data.get("name", "scenario")),
        model=model,
        schedule=schedule,
        t_end=t_end,
        dt=dt,
        scheme=scheme_from_dict(data.get("scheme", {}), dt, t_end),
        cases=cases,
        sweep=dict(data.get("sweep", {})),
        maf_window=maf,
        noise_t_end=noise_t_end,
        source=data,
    )


def load_scenario(path: str | Path) -> Scenario:
    return scenario_from_dict(read_json(path))


def bundled_path(name: str) -> Path:
    """Path of a bundled scenario (``smib`` or ``wscc9``)."""
    path = Path(str(resources.files("swingguard").joinpath(DATA, f"{name}.json")))
    if not path.exists():
        raise ScenarioError(f"no bundled scenario named {name!r}")
    return path


def bundled(name: str) -> Scenario:
    return load_scenario(bundled_path(name))


def with_schedule(scenario: Scenario, schedule: EventSchedule) -> Scenario:
    return replace(scenario, schedule=schedule)
