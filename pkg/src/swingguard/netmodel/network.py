"""Static network description and reduction to machine internal nodes.

Classical machine model: constant EMF ``E`` behind transient reactance
``Xd``. Loads are constant impedance. Angles are radians internally.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

# Bolted three-phase fault stand-in; purely reactive so lossless cases stay lossless.
FAULT_ADMITTANCE = complex(0.0, -1.0e6)

BUS_TYPES = ("pq", "pv", "slack")


class NetworkError(ValueError):
    """Invalid network data."""


class SingularNetworkError(NetworkError):
    """The eliminated block of the augmented admittance matrix is singular."""


@dataclass(frozen=True)
class Machine:
    id: str
    bus: int
    M: float
    D: float = 0.0
    Xd: float = 0.3
    E: float | None = None
    Pm: float | None = None
    area: str = "1"
    delta0: float | None = None

    def __post_init__(self) -> None:
        if not self.M > 0:
            raise NetworkError(f"machine {self.id}: M must be > 0, got {self.M}")
        if not self.Xd > 0:
            raise NetworkError(f"machine {self.id}: Xd must be > 0, got {self.Xd}")
        if not self.D >= 0:
            raise NetworkError(f"machine {self.id}: D must be >= 0, got {self.D}")
        if self.E is not None and not self.E > 0:
            raise NetworkError(f"machine {self.id}: E must be > 0, got {self.E}")


@dataclass(frozen=True)
class Bus:
    """A network node.

    Load is either constant power (``pl``, ``ql``; converted to an admittance
    at the solved voltage) or a fixed shunt admittance (``gl``, ``bl``).
    ``type``, ``vm``, ``va`` and ``pg`` are power-flow setpoints.
    """

    id: int
    type: str = "pq"
    vm: float = 1.0
    va: float = 0.0
    pg: float = 0.0
    pl: float = 0.0
    ql: float = 0.0
    gl: float | None = None
    bl: float | None = None

    def __post_init__(self) -> None:
        if self.type not in BUS_TYPES:
            raise NetworkError(f"bus {self.id}: type must be one of {BUS_TYPES}, got {self.type!r}")

    def load_admittance(self) -> complex:
        if self.gl is not None or self.bl is not None:
            return complex(self.gl or 0.0, self.bl or 0.0)
        return complex(self.pl, -self.ql) / self.vm**2


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: int
    to_bus: int
    r: float = 0.0
    x: float = 0.1
    b: float = 0.0
    in_service: bool = True

    @property
    def series_admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass(frozen=True)
class InfiniteBus:
    bus: int
    v: float = 1.0


@dataclass(frozen=True)
class Topology:
    """Network switching state: an optional fault plus removed lines.

    A fault sits at a bus, or on a line at ``fault_location`` (fraction of
    the line length measured from ``from_bus``).
    """

    fault_bus: int | None = None
    fault_line: str | None = None
    fault_location: float = 0.5
    removed_lines: frozenset = frozenset()

    @classmethod
    def prefault(cls) -> "Topology":
        return cls()

    @classmethod
    def fault(cls, bus: int | None = None, line: str | None = None, location: float = 0.5,
              removed_lines: Iterable[str] = ()) -> "Topology":
        if (bus is None) == (line is None):
            raise NetworkError("a fault needs exactly one of bus or line")
        return cls(bus, line, location, frozenset(removed_lines))

    @classmethod
    def postfault(cls, removed_lines: Iterable[str] = ()) -> "Topology":
        return cls(removed_lines=frozenset(removed_lines))

    @property
    def faulted(self) -> bool:
        return self.fault_bus is not None or self.fault_line is not None


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    machines: tuple[Machine, ...]
    f0: float = 50.0
    base_mva: float = 100.0
    infinite_bus: InfiniteBus | None = None
    name: str = "network"

    def __post_init__(self) -> None:
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "machines", tuple(self.machines))
        self.validate()

    def validate(self) -> None:
        if self.f0 <= 0:
            raise NetworkError(f"f0 must be > 0, got {self.f0}")
        if not self.machines:
            raise NetworkError("network has no machines")
        bus_ids = [b.id for b in self.buses]
        if len(set(bus_ids)) != len(bus_ids):
            raise NetworkError("duplicate bus ids")
        known = set(bus_ids)
        ids = [m.id for m in self.machines]
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate machine ids")
        line_ids = [ln.id for ln in self.lines]
        if len(set(line_ids)) != len(line_ids):
            raise NetworkError("duplicate line ids")
        for m in self.machines:
            if m.bus not in known:
                raise NetworkError(f"machine {m.id}: bus {m.bus} does not exist")
        for ln in self.lines:
            for end in (ln.from_bus, ln.to_bus):
                if end not in known:
                    raise NetworkError(f"line {ln.id}: bus {end} does not exist")
        if self.infinite_bus is not None and self.infinite_bus.bus not in known:
            raise NetworkError(f"infinite bus {self.infinite_bus.bus} does not exist")
        if not self.is_connected():
            raise NetworkError("pre-fault network is not connected")

    def is_connected(self, removed_lines: Iterable[str] = ()) -> bool:
        removed = set(removed_lines)
        adj: dict[int, list[int]] = {b.id: [] for b in self.buses}
        for ln in self.lines:
            if ln.in_service and ln.id not in removed:
                adj[ln.from_bus].append(ln.to_bus)
                adj[ln.to_bus].append(ln.from_bus)
        start = self.buses[0].id
        seen = {start}
        queue = deque([start])
        while queue:
            for nxt in adj[queue.popleft()]:
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return len(seen) == len(adj)

    @property
    def machine_ids(self) -> list[str]:
        return [m.id for m in self.machines]

    @property
    def areas(self) -> dict[str, tuple[str, ...]]:
        out: dict[str, list[str]] = {}
        for m in self.machines:
            out.setdefault(m.area, []).append(m.id)
        return {k: tuple(v) for k, v in out.items()}

    @property
    def inertia(self) -> np.ndarray:
        return np.array([m.M for m in self.machines])

    @property
    def damping(self) -> np.ndarray:
        return np.array([m.D for m in self.machines])

    @property
    def omega0(self) -> float:
        return 2.0 * np.pi * self.f0

    def line(self, line_id: str) -> Line:
        for ln in self.lines:
            if ln.id == line_id:
                return ln
        raise NetworkError(f"unknown line {line_id!r}")

    def machine_index(self, machine_id: str) -> int:
        for k, m in enumerate(self.machines):
            if m.id == machine_id:
                return k
        raise NetworkError(f"unknown machine {machine_id!r}")

    def with_machines(self, machines: Sequence[Machine]) -> "Network":
        return replace(self, machines=tuple(machines))


@dataclass(frozen=True, eq=False)
class ReducedNetwork:
    """Admittance matrix over the retained sources.

    Sources are the machine internal nodes, followed by the infinite bus
    when the network has one. ``E`` holds the matching voltage magnitudes.
    """

    Y: np.ndarray
    E: np.ndarray
    n_machines: int = field(default=-1)

    def __post_init__(self) -> None:
        if self.n_machines < 0:
            object.__setattr__(self, "n_machines", len(self.E))

    @property
    def G(self) -> np.ndarray:
        return self.Y.real

    @property
    def B(self) -> np.ndarray:
        return self.Y.imag


def build_ybus(network: Network, topology: Topology = Topology(), with_loads: bool = True):
    """Bus admittance matrix for a topology.

    Returns ``(Y, index)`` where ``index`` maps bus id to row. A fault on a
    line adds one extra node at the end of the matrix.
    """
    index = {b.id: k for k, b in enumerate(network.buses)}
    n = len(index)
    split = None
    if topology.fault_line is not None:
        ln = network.line(topology.fault_line)
        if ln.id in topology.removed_lines or not ln.in_service:
            raise NetworkError(f"fault on out-of-service line {ln.id}")
        loc = topology.fault_location
        if not 0.0 <= loc <= 1.0:
            raise NetworkError(f"fault location must be in [0, 1], got {loc}")
        split = (ln, loc)
        if 0.0 < loc < 1.0:
            n += 1
    Y = np.zeros((n, n), dtype=complex)

    def add_branch(i: int, j: int, r: float, x: float, b: float) -> None:
        y = 1.0 / complex(r, x)
        Y[i, i] += y + 0.5j * b
        Y[j, j] += y + 0.5j * b
        Y[i, j] -= y
        Y[j, i] -= y

    fault_node = None if topology.fault_bus is None else index[topology.fault_bus]
    for ln in network.lines:
        if not ln.in_service or ln.id in topology.removed_lines:
            continue
        i, j = index[ln.from_bus], index[ln.to_bus]
        if split is not None and ln is split[0]:
            loc = split[1]
            if loc == 0.0:
                fault_node = i
            elif loc == 1.0:
                fault_node = j
            else:
                mid = n - 1
                add_branch(i, mid, ln.r * loc, ln.x * loc, ln.b * loc)
                add_branch(mid, j, ln.r * (1 - loc), ln.x * (1 - loc), ln.b * (1 - loc))
                fault_node = mid
                continue
        add_branch(i, j, ln.r, ln.x, ln.b)
    if with_loads:
        for b in network.buses:
            Y[index[b.id], index[b.id]] += b.load_admittance()
    if fault_node is not None:
        Y[fault_node, fault_node] += FAULT_ADMITTANCE
    return Y, index


def kron_reduce(network: Network, topology: Topology = Topology(),
                machine_scale: Sequence[float] | None = None) -> ReducedNetwork:
    """Reduce the network to the machine internal nodes (plus infinite bus).

    ``machine_scale`` multiplies each machine's internal admittance 1/Xd;
    0 disconnects the machine.
    """
    if any(m.E is None for m in network.machines):
        raise NetworkError("machine EMFs are unresolved; run steady_state() first")
    Ybus, index = build_ybus(network, topology)
    nb = Ybus.shape[0]
    ng = len(network.machines)
    scale = np.ones(ng) if machine_scale is None else np.asarray(machine_scale, dtype=float)

    retained_bus = [] if network.infinite_bus is None else [index[network.infinite_bus.bus]]
    eliminated = [k for k in range(nb) if k not in retained_bus]
    nr = ng + len(retained_bus)

    # Augmented matrix: [internal nodes | retained buses | eliminated buses]
    order = retained_bus + eliminated
    Yb = Ybus[np.ix_(order, order)]
    pos = {bus_row: k for k, bus_row in enumerate(order)}
    A = np.zeros((ng + nb, ng + nb), dtype=complex)
    A[ng:, ng:] = Yb
    for k, m in enumerate(network.machines):
        y = scale[k] / complex(0.0, m.Xd)
        t = ng + pos[index[m.bus]]
        A[k, k] += y
        A[t, t] += y
        A[k, t] -= y
        A[t, k] -= y

    Yrr = A[:nr, :nr]
    Yre = A[:nr, nr:]
    Yer = A[nr:, :nr]
    Yee = A[nr:, nr:]
    if Yee.size:
        try:
            X = np.linalg.solve(Yee, Yer)
        except np.linalg.LinAlgError as exc:
            raise SingularNetworkError(f"cannot eliminate buses for topology {topology}") from exc
        if not np.all(np.isfinite(X)) or np.linalg.cond(Yee) > 1e14:
            raise SingularNetworkError(f"ill-conditioned elimination for topology {topology}")
        Yred = Yrr - Yre @ X
    else:
        Yred = Yrr.copy()
    E = np.array([m.E for m in network.machines]
                 + ([network.infinite_bus.v] if network.infinite_bus else []), dtype=float)
    return ReducedNetwork(Yred, E, ng)


def electrical_power(reduced: ReducedNetwork, delta: np.ndarray) -> np.ndarray:
    """Machine electrical powers for rotor angles ``delta`` (rad).

    Pe_i = E_i^2 G_ii + sum_j E_i E_j (G_ij cos d_ij + B_ij sin d_ij)
    """
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (reduced.n_machines,):
        raise ValueError(f"expected {reduced.n_machines} angles, got shape {delta.shape}")
    n_src = len(reduced.E)
    if n_src > reduced.n_machines:
        delta = np.concatenate([delta, np.zeros(n_src - reduced.n_machines)])
    V = reduced.E * np.exp(1j * delta)
    S = V * np.conj(reduced.Y @ V)
    return S.real[: reduced.n_machines]
