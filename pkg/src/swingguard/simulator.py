"""Fixed-step RK4 integration of multi-machine swing equations.

State per machine: rotor angle ``delta`` (rad) and speed deviation
``domega`` (per unit), with

    d(delta)/dt  = w0 * domega
    M d(domega)/dt = Pm - Pe(delta) - D * w0 * domega

Topology changes only at event times, which must sit on the step grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence, Union

import numpy as np
from scipy import optimize
from scipy.integrate import quad

from .netmodel import Network, Topology, electrical_power, kron_reduce, steady_state


class SimulationError(RuntimeError):
    pass


class NumericalDivergenceError(SimulationError):
    def __init__(self, t: float):
        super().__init__(f"non-finite state at t = {t:.6f} s")
        self.t = t


@dataclass(frozen=True)
class ApplyFault:
    bus: int | None = None
    line: str | None = None
    location: float = 0.5


@dataclass(frozen=True)
class ClearFault:
    remove_lines: tuple[str, ...] = ()


@dataclass(frozen=True)
class ShedGeneration:
    machine: str
    fraction: float

    def __post_init__(self) -> None:
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"shed fraction must be in (0, 1], got {self.fraction}")


Event = Union[ApplyFault, ClearFault, ShedGeneration]


@dataclass(frozen=True)
class EventSchedule:
    events: tuple[tuple[float, Event], ...] = ()

    def __post_init__(self) -> None:
        times = [t for t, _ in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("event times must be nondecreasing")
        if any(t < 0 for t in times):
            raise ValueError("event times must be >= 0")

    @classmethod
    def fault_clear(cls, fault: ApplyFault, clear_time: float, remove_lines: Sequence[str] = (),
                    fault_time: float = 0.0) -> "EventSchedule":
        return cls(((fault_time, fault), (clear_time, ClearFault(tuple(remove_lines)))))

    def __iter__(self):
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    @property
    def clear_time(self) -> float | None:
        """Time of the last fault clearance, if any."""
        times = [t for t, e in self.events if isinstance(e, ClearFault)]
        return times[-1] if times else None

    def merged(self, extra: Iterable[tuple[float, Event]]) -> "EventSchedule":
        items = list(self.events) + list(extra)
        return EventSchedule(tuple(sorted(items, key=lambda te: te[0])))


def schedule_from_list(items: Sequence[dict]) -> EventSchedule:
    """Parse ``[{"t": 0.0, "type": "apply_fault", "bus": 7}, ...]``."""
    events = []
    for k, item in enumerate(items):
        where = f"schedule[{k}]"
        try:
            t = float(item["t"])
            kind = item["type"]
        except (KeyError, TypeError, ValueError):
            raise ValueError(f"{where}: needs numeric 't' and a 'type'") from None
        if kind == "apply_fault":
            ev: Event = ApplyFault(item.get("bus"), item.get("line"), float(item.get("location", 0.5)))
            if (ev.bus is None) == (ev.line is None):
                raise ValueError(f"{where}: apply_fault needs exactly one of 'bus' or 'line'")
        elif kind == "clear_fault":
            ev = ClearFault(tuple(item.get("remove_lines", ())))
        elif kind == "shed_generation":
            ev = ShedGeneration(str(item["machine"]), float(item["fraction"]))
        else:
            raise ValueError(f"{where}: unknown event type {kind!r}")
        events.append((t, ev))
    return EventSchedule(tuple(sorted(events, key=lambda te: te[0])))


def schedule_to_list(schedule: EventSchedule) -> list[dict]:
    out = []
    for t, ev in schedule:
        if isinstance(ev, ApplyFault):
            d = {"t": t, "type": "apply_fault", "location": ev.location}
            if ev.bus is not None:
                d["bus"] = ev.bus
            else:
                d["line"] = ev.line
        elif isinstance(ev, ClearFault):
            d = {"t": t, "type": "clear_fault", "remove_lines": list(ev.remove_lines)}
        else:
            d = {"t": t, "type": "shed_generation", "machine": ev.machine, "fraction": ev.fraction}
        out.append(d)
    return out


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled simulation output; arrays are (time, machine)."""

    t: np.ndarray
    machine_ids: tuple[str, ...]
    delta: np.ndarray
    domega: np.ndarray
    pm: np.ndarray
    pe: np.ndarray
    inertia: np.ndarray
    f0: float
    dt: float
    schedule: EventSchedule = field(default_factory=EventSchedule)
    has_infinite_bus: bool = False

    @property
    def dp(self) -> np.ndarray:
        return self.pm - self.pe

    def max_angle_spread(self) -> np.ndarray:
        """Per-sample spread of rotor angles of machines still in service.

        The infinite bus counts at angle 0.
        """
        live = self.inertia > 0
        hi = np.where(live, self.delta, -np.inf).max(axis=1)
        lo = np.where(live, self.delta, np.inf).min(axis=1)
        if self.has_infinite_bus:
            hi, lo = np.maximum(hi, 0.0), np.minimum(lo, 0.0)
        return np.where(np.isfinite(hi - lo), hi - lo, 0.0)

    def is_stable(self, limit: float = math.pi) -> bool:
        """Ground truth: no angle separation reaches ``limit`` over the run."""
        return bool(np.all(self.max_angle_spread() < limit))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "machine_id", "delta_deg", "domega_pu", "pm_pu", "pe_pu"])
            for k, t in enumerate(self.t):
                for j, mid in enumerate(self.machine_ids):
                    w.writerow([f"{t:.6f}", mid, repr(math.degrees(self.delta[k, j])),
                                repr(float(self.domega[k, j])), repr(float(self.pm[k, j])),
                                repr(float(self.pe[k, j]))])


def _grid_steps(t: float, dt: float) -> int:
    n = round(t / dt)
    if abs(n * dt - t) > 1e-9:
        raise SimulationError(f"event time {t} is not a multiple of dt = {dt}")
    return n


class _NetworkPower:
    """Electrical power from Kron-reduced networks, cached per switching state."""

    def __init__(self, network: Network):
        self.network = network
        self._cache: dict = {}

    def __call__(self, topology: Topology, scale: tuple[float, ...]) -> Callable[[np.ndarray], np.ndarray]:
        key = (topology, scale)
        if key not in self._cache:
            reduced = kron_reduce(self.network, topology, scale)
            self._cache[key] = lambda delta, r=reduced: electrical_power(r, delta)
        return self._cache[key]


@dataclass(frozen=True)
class AnalyticSmib:
    """Single machine against an infinite bus with Pe = Pmax sin(delta).

    Pre-fault, fault-on and post-fault stages each have their own Pmax.
    """

    pm: float = 0.8
    pmax_pre: float = 2.0
    pmax_fault: float = 0.0
    pmax_post: float = 1.5
    M: float = 10.0
    D: float = 0.0
    f0: float = 50.0
    machine_id: str = "G1"

    @property
    def omega0(self) -> float:
        return 2 * math.pi * self.f0

    @property
    def delta0(self) -> float:
        if self.pm > self.pmax_pre:
            raise SimulationError("no pre-fault equilibrium")
        return math.asin(self.pm / self.pmax_pre)

    @property
    def delta_sep(self) -> float:
        if self.pm > self.pmax_post:
            raise SimulationError("no stable post-fault equilibrium")
        return math.asin(self.pm / self.pmax_post)

    @property
    def delta_u(self) -> float:
        return math.pi - self.delta_sep

    def pmax(self, topology: Topology) -> float:
        if topology.faulted:
            return self.pmax_fault
        return self.pmax_post if topology.removed_lines else self.pmax_pre

    def __call__(self, topology: Topology, scale: tuple[float, ...]):
        pmax = self.pmax(topology) * scale[0]
        return lambda delta: pmax * np.sin(delta)

    def schedule(self, clear_time: float) -> EventSchedule:
        return EventSchedule.fault_clear(ApplyFault(bus=1, location=0.0), clear_time, ("L2",))

    def potential(self, delta: np.ndarray, stage: str = "post") -> np.ndarray:
        """-integral of (Pm - Pe) d(delta) for one stage, up to a constant."""
        pmax = {"pre": self.pmax_pre, "fault": self.pmax_fault, "post": self.pmax_post}[stage]
        return -self.pm * delta - pmax * np.cos(delta)

    def energy(self, delta, domega, stage: str = "post"):
        return 0.5 * self.M * self.omega0 * np.asarray(domega) ** 2 + self.potential(np.asarray(delta), stage)


PowerModel = Union[Network, AnalyticSmib]


class Simulation:
    """Stateful integrator; events may be added while it runs (closed loop)."""

    def __init__(self, model: PowerModel, dt: float = 1e-3,
                 schedule: EventSchedule | Iterable[tuple[float, Event]] = (),
                 delta0: np.ndarray | None = None):
        if not dt > 0:
            raise SimulationError("dt must be > 0")
        self.dt = dt
        if isinstance(model, AnalyticSmib):
            self.power = model
            self.ids = (model.machine_id,)
            self.f0 = model.f0
            M = np.array([model.M])
            D = np.array([model.D])
            pm = np.array([model.pm])
            d0 = np.array([model.delta0])
            self.infinite = True
        else:
            if any(m.E is None or m.Pm is None for m in model.machines) or delta0 is None:
                ss = steady_state(model)
                model, d0 = ss.network, ss.delta0 if delta0 is None else np.asarray(delta0, float)
            else:
                d0 = np.asarray(delta0, dtype=float)
            self.network = model
            self.power = _NetworkPower(model)
            self.ids = tuple(model.machine_ids)
            self.f0 = model.f0
            M = model.inertia
            D = model.damping
            pm = np.array([m.Pm for m in model.machines], dtype=float)
            self.infinite = model.infinite_bus is not None
        self.w0 = 2 * math.pi * self.f0
        self.M = M.astype(float).copy()
        self.D = D.astype(float).copy()
        self.pm = pm.astype(float).copy()
        self.scale = np.ones(len(self.ids))
        self.active = np.ones(len(self.ids), dtype=bool)
        self.delta = d0.astype(float).copy()
        self.domega = np.zeros(len(self.ids))
        self.topology = Topology.prefault()
        self.step_index = 0
        self._pending: dict[int, list[Event]] = {}
        self._applied: list[tuple[float, Event]] = []
        self._rows: dict[str, list] = {k: [] for k in ("t", "delta", "domega", "pm", "pe", "M")}
        for t, ev in schedule:
            self.add_event(t, ev)
        self._apply_events(0)
        self._record()

    @property
    def t(self) -> float:
        return self.step_index * self.dt

    def add_event(self, t: float, event: Event) -> None:
        n = _grid_steps(t, self.dt)
        if n < self.step_index or (n == self.step_index and self._rows["t"]):
            raise SimulationError(f"cannot schedule an event in the past (t = {t})")
        self._pending.setdefault(n, []).append(event)

    def _apply_events(self, n: int) -> None:
        for ev in self._pending.pop(n, []):
            if isinstance(ev, ApplyFault):
                self.topology = Topology(ev.bus, ev.line, ev.location, self.topology.removed_lines)
            elif isinstance(ev, ClearFault):
                self.topology = Topology.postfault(self.topology.removed_lines | set(ev.remove_lines))
            elif isinstance(ev, ShedGeneration):
                k = self.ids.index(ev.machine)
                keep = 1.0 - ev.fraction
                self.scale[k] *= keep
                self.pm[k] *= keep
                self.M[k] *= keep
                self.D[k] *= keep
                if self.scale[k] <= 0.0:
                    self.active[k] = False
                    self.scale[k] = 0.0
                    self.pm[k] = 0.0
                    self.domega[k] = 0.0
            self._applied.append((n * self.dt, ev))

    def _pe_fn(self):
        return self.power(self.topology, tuple(self.scale))

    def _rhs(self, pe_fn, delta, domega):
        pe = pe_fn(delta)
        safe_M = np.where(self.active, self.M, 1.0)
        ddelta = np.where(self.active, self.w0 * domega, 0.0)
        ddomega = np.where(self.active, (self.pm - pe - self.D * self.w0 * domega) / safe_M, 0.0)
        return ddelta, ddomega

    def step(self) -> None:
        h = self.dt
        f = self._pe_fn()
        d, w = self.delta, self.domega
        k1d, k1w = self._rhs(f, d, w)
        k2d, k2w = self._rhs(f, d + 0.5 * h * k1d, w + 0.5 * h * k1w)
        k3d, k3w = self._rhs(f, d + 0.5 * h * k2d, w + 0.5 * h * k2w)
        k4d, k4w = self._rhs(f, d + h * k3d, w + h * k3w)
        self.delta = d + h / 6.0 * (k1d + 2 * k2d + 2 * k3d + k4d)
        self.domega = w + h / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)
        self.step_index += 1
        if not (np.all(np.isfinite(self.delta)) and np.all(np.isfinite(self.domega))):
            raise NumericalDivergenceError(self.t)
        self._apply_events(self.step_index)
        self._record()

    def run_until(self, t: float) -> None:
        n = _grid_steps(t, self.dt) if abs(round(t / self.dt) * self.dt - t) <= 1e-9 else math.floor(t / self.dt)
        while self.step_index < n:
            self.step()

    def electrical_power(self) -> np.ndarray:
        return self._pe_fn()(self.delta)

    def snapshot(self) -> dict[str, np.ndarray | float]:
        """Latest recorded state (post-event values at event times)."""
        r = self._rows
        return {"t": r["t"][-1], "delta": r["delta"][-1], "domega": r["domega"][-1], "pm": r["pm"][-1],
                "pe": r["pe"][-1], "M": r["M"][-1]}

    def _record(self) -> None:
        r = self._rows
        r["t"].append(self.t)
        r["delta"].append(self.delta.copy())
        r["domega"].append(self.domega.copy())
        r["pm"].append(self.pm.copy())
        r["pe"].append(np.where(self.active, self.electrical_power(), 0.0))
        r["M"].append(self.M.copy())

    def trajectory(self) -> Trajectory:
        r = self._rows
        return Trajectory(
            t=np.array(r["t"]), machine_ids=self.ids, delta=np.array(r["delta"]),
            domega=np.array(r["domega"]), pm=np.array(r["pm"]), pe=np.array(r["pe"]),
            inertia=np.array(r["M"]), f0=self.f0, dt=self.dt,
            schedule=EventSchedule(tuple(self._applied)), has_infinite_bus=self.infinite,
        )


def integrate(model: PowerModel, schedule: EventSchedule | Iterable = (), t_end: float = 3.0,
              dt: float = 1e-3, delta0: np.ndarray | None = None) -> Trajectory:
    """Simulate ``model`` through ``schedule`` up to ``t_end``."""
    sim = Simulation(model, dt, schedule, delta0)
    sim.run_until(t_end)
    return sim.trajectory()


# --- critical clearing time -------------------------------------------------


@dataclass(frozen=True)
class CctResult:
    cct: float
    stable_bound: float
    unstable_bound: float
    delta_sep: float
    delta_u: float


def _first_swing_stable(smib: AnalyticSmib, clear_time: float, dt: float, horizon: float) -> bool:
    """Simulate until the first swing resolves; the fault-on leg uses a fitted step."""
    n_fault = max(1, math.ceil(clear_time / dt)) if clear_time > 0 else 0
    w0, M, pm, D = smib.omega0, smib.M, smib.pm, smib.D

    def rk4(delta, w, pmax, h):
        def f(d, x):
            return w0 * x, (pm - pmax * math.sin(d) - D * w0 * x) / M
        a1, b1 = f(delta, w)
        a2, b2 = f(delta + 0.5 * h * a1, w + 0.5 * h * b1)
        a3, b3 = f(delta + 0.5 * h * a2, w + 0.5 * h * b2)
        a4, b4 = f(delta + h * a3, w + h * b3)
        return delta + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4), w + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4)

    delta, w = smib.delta0, 0.0
    if n_fault:
        h = clear_time / n_fault
        for _ in range(n_fault):
            delta, w = rk4(delta, w, smib.pmax_fault, h)
    du = smib.delta_u
    t = clear_time
    while t < horizon:
        if delta > du:
            return False
        if w <= 0.0:
            return True
        delta, w = rk4(delta, w, smib.pmax_post, dt)
        t += dt
    raise SimulationError("horizon too short to classify the first swing")


def equal_area_cct(smib: AnalyticSmib, resolution: float = 1e-4, dt: float = 1e-4,
                   t_max: float = 2.0, horizon: float = 10.0) -> CctResult:
    """Critical clearing time by bisection on simulated fault duration."""
    if smib.pm > smib.pmax_post:
        raise SimulationError("no stable equilibrium in the post-fault topology")
    d_sep, d_u = smib.delta_sep, smib.delta_u
    lo, hi = 0.0, t_max
    if not _first_swing_stable(smib, lo, dt, horizon):
        return CctResult(0.0, 0.0, 0.0, d_sep, d_u)
    if _first_swing_stable(smib, hi, dt, horizon):
        raise SimulationError(f"still stable with a {t_max} s fault; no CCT below t_max")
    while hi - lo >= resolution:
        mid = 0.5 * (lo + hi)
        if _first_swing_stable(smib, mid, dt, horizon):
            lo = mid
        else:
            hi = mid
    return CctResult(0.5 * (lo + hi), lo, hi, d_sep, d_u)


def critical_clearing_angle(smib: AnalyticSmib) -> float:
    """Equal-area clearing angle: accelerating area equals decelerating area."""
    d0, du = smib.delta0, smib.delta_u
    pf, pp = smib.pmax_fault, smib.pmax_post
    cos_dc = (smib.pm * (du - d0) + pp * math.cos(du) - pf * math.cos(d0)) / (pp - pf)
    if not -1.0 <= cos_dc <= 1.0:
        raise SimulationError("no critical clearing angle (system unconditionally stable or unstable)")
    return math.acos(cos_dc)


def clearing_time_for_angle(smib: AnalyticSmib, delta_c: float) -> float:
    """Fault-on time to reach ``delta_c`` from rest (undamped), by quadrature.

    Uses delta = delta0 + u**2 to remove the endpoint singularity.
    """
    if smib.D != 0.0:
        raise SimulationError("closed-form clearing time assumes D = 0")
    d0, M, w0 = smib.delta0, smib.M, smib.omega0
    if smib.pmax_fault == 0.0:
        return math.sqrt(2 * M * (delta_c - d0) / (w0 * smib.pm))

    def integrand(u):
        d = d0 + u * u
        ke = smib.pm * (d - d0) + smib.pmax_fault * (math.cos(d) - math.cos(d0))
        if u == 0.0:
            slope = smib.pm - smib.pmax_fault * math.sin(d0)
            return 2.0 / (w0 * math.sqrt(2 * slope / (M * w0)))
        return 2 * u / (w0 * math.sqrt(2 * ke / (M * w0)))

    val, _ = quad(integrand, 0.0, math.sqrt(delta_c - d0), epsabs=1e-13, epsrel=1e-12)
    return val


def post_fault_sep(pe_curve: Callable[[float], float], pm: float, guess: float = 0.0) -> float:
    """Root of Pm - Pe(delta) = 0 with positive dPe/d(delta), Newton from ``guess``."""
    def g(d):
        return pm - pe_curve(d)
    root = optimize.newton(g, guess, tol=1e-10, maxiter=100)
    h = 1e-6
    if (pe_curve(root + h) - pe_curve(root - h)) <= 0:
        raise SimulationError("Newton converged to an unstable equilibrium")
    return float(root)
