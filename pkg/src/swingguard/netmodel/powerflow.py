"""Newton-Raphson power flow and steady-state initialization."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .network import Network, NetworkError, Topology, build_ybus, electrical_power, kron_reduce

log = logging.getLogger(__name__)


class PowerFlowError(NetworkError):
    """Power flow or steady-state solve did not converge."""


@dataclass(frozen=True, eq=False)
class PowerFlowResult:
    vm: np.ndarray
    va: np.ndarray
    p_inj: np.ndarray
    q_inj: np.ndarray
    iterations: int


@dataclass(frozen=True, eq=False)
class SteadyState:
    """A network with resolved machine EMFs, dispatch and load admittances."""

    network: Network
    delta0: np.ndarray
    powerflow: PowerFlowResult | None = None


def _bus_types(network: Network) -> list[str]:
    types = [b.type for b in network.buses]
    if network.infinite_bus is not None:
        ids = [b.id for b in network.buses]
        types[ids.index(network.infinite_bus.bus)] = "slack"
    return types


def newton_raphson(network: Network, tol: float = 1e-12, max_iter: int = 30) -> PowerFlowResult:
    """Polar-form NR with constant-power loads; one slack bus."""
    Y, index = build_ybus(network, with_loads=False)
    n = len(network.buses)
    types = _bus_types(network)
    if types.count("slack") != 1:
        raise PowerFlowError(f"power flow needs exactly one slack bus, found {types.count('slack')}")
    vm = np.array([b.vm for b in network.buses], dtype=float)
    va = np.array([b.va for b in network.buses], dtype=float)
    if network.infinite_bus is not None:
        k = index[network.infinite_bus.bus]
        vm[k], va[k] = network.infinite_bus.v, 0.0
    p_spec = np.array([b.pg - b.pl for b in network.buses])
    q_spec = np.array([-b.ql for b in network.buses])
    pv = [k for k in range(n) if types[k] == "pv"]
    pq = [k for k in range(n) if types[k] == "pq"]
    pvpq = pv + pq

    for it in range(max_iter + 1):
        V = vm * np.exp(1j * va)
        S = V * np.conj(Y @ V)
        mis = np.concatenate([S.real[pvpq] - p_spec[pvpq], S.imag[pq] - q_spec[pq]])
        if np.max(np.abs(mis), initial=0.0) < tol:
            return PowerFlowResult(vm, va, S.real.copy(), S.imag.copy(), it)
        if it == max_iter:
            break
        # dS/dVa and dS/dVm (polar), as in the standard derivation
        Ibus = Y @ V
        diagV = np.diag(V)
        dS_dVa = 1j * diagV @ np.conj(np.diag(Ibus) - Y @ diagV)
        dS_dVm = diagV @ np.conj(Y @ np.diag(V / vm)) + np.conj(np.diag(Ibus)) @ np.diag(V / vm)
        J = np.block([
            [dS_dVa.real[np.ix_(pvpq, pvpq)], dS_dVm.real[np.ix_(pvpq, pq)]],
            [dS_dVa.imag[np.ix_(pq, pvpq)], dS_dVm.imag[np.ix_(pq, pq)]],
        ])
        dx = np.linalg.solve(J, -mis)
        va[pvpq] += dx[: len(pvpq)]
        vm[pq] += dx[len(pvpq):]
    raise PowerFlowError(f"power flow did not converge in {max_iter} iterations")


def steady_state(network: Network, tol: float = 1e-12) -> SteadyState:
    """Resolve EMFs, mechanical powers and initial rotor angles.

    Two routes: if every machine carries ``E`` and ``Pm`` the angles are
    solved on the reduced pre-fault network directly; otherwise a bus-level
    power flow supplies terminal conditions and ``E``, ``Pm`` follow.
    """
    if all(m.E is not None and m.Pm is not None for m in network.machines):
        return _from_dispatch(network, tol)
    return _from_powerflow(network, tol)


def _from_powerflow(network: Network, tol: float) -> SteadyState:
    pf = newton_raphson(network, tol=tol)
    index = {b.id: k for k, b in enumerate(network.buses)}
    buses = []
    for b, vm in zip(network.buses, pf.vm):
        if b.gl is None and b.bl is None:
            b = replace(b, gl=b.pl / vm**2, bl=-b.ql / vm**2)
        buses.append(b)
    per_bus: dict[int, int] = {}
    for m in network.machines:
        per_bus[m.bus] = per_bus.get(m.bus, 0) + 1
    machines = []
    delta0 = []
    for m in network.machines:
        if per_bus[m.bus] > 1:
            raise PowerFlowError(f"bus {m.bus} hosts several machines; give E and Pm explicitly")
        k = index[m.bus]
        bus = network.buses[k]
        V = pf.vm[k] * np.exp(1j * pf.va[k])
        S_gen = complex(pf.p_inj[k] + bus.pl, pf.q_inj[k] + bus.ql)
        I = np.conj(S_gen / V)
        Eint = V + 1j * m.Xd * I
        machines.append(replace(m, E=float(abs(Eint)), Pm=float(S_gen.real)))
        delta0.append(float(np.angle(Eint)))
    resolved = replace(network, buses=tuple(buses), machines=tuple(machines))
    return SteadyState(resolved, np.array(delta0), pf)


def _from_dispatch(network: Network, tol: float, max_iter: int = 50) -> SteadyState:
    buses = tuple(b if (b.gl is not None or b.bl is not None)
                  else replace(b, gl=b.pl / b.vm**2, bl=-b.ql / b.vm**2) for b in network.buses)
    network = replace(network, buses=buses)
    reduced = kron_reduce(network, Topology.prefault())
    pm = np.array([m.Pm for m in network.machines], dtype=float)
    n = len(pm)
    delta = np.array([m.delta0 if m.delta0 is not None else 0.0 for m in network.machines])
    # Without an infinite bus the first machine holds the angle reference.
    free = list(range(n)) if network.infinite_bus is not None else list(range(1, n))
    for _ in range(max_iter):
        mis = electrical_power(reduced, delta) - pm
        if np.max(np.abs(mis[free]), initial=0.0) < tol:
            break
        J = _dpe_ddelta(reduced, delta)
        delta[free] -= np.linalg.solve(J[np.ix_(free, free)], mis[free])
    else:
        raise PowerFlowError("steady-state angle solve did not converge")
    resid = electrical_power(reduced, delta) - pm
    if np.max(np.abs(resid)) > 1e-8:
        raise PowerFlowError(
            f"dispatch is inconsistent with the network: residual {np.max(np.abs(resid)):.3e}")
    return SteadyState(network, delta)


def _dpe_ddelta(reduced, delta: np.ndarray) -> np.ndarray:
    n = reduced.n_machines
    E = reduced.E
    full = np.concatenate([delta, np.zeros(len(E) - n)])
    G, B = reduced.G, reduced.B
    d = full[:, None] - full[None, :]
    EE = E[:, None] * E[None, :]
    J = EE * (G * np.sin(d) - B * np.cos(d))
    np.fill_diagonal(J, 0.0)
    diag = -J.sum(axis=1)
    J = J[:n, :n].copy()
    J[np.diag_indices(n)] = diag[:n]
    return J

