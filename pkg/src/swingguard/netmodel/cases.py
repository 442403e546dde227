"""Bundled test systems."""

from __future__ import annotations

import numpy as np

from .network import Bus, InfiniteBus, Line, Machine, Network, NetworkError


def smib_network(pm: float = 0.8, pmax_pre: float = 2.0, pmax_post: float = 1.5,
                 M: float = 10.0, D: float = 0.0, E: float = 1.0, V: float = 1.0,
                 Xd: float | None = None, f0: float = 50.0) -> Network:
    """One machine feeding an infinite bus over two parallel lines.

    Line ``L2`` is the one to fault (at its machine end) and remove: the
    pre-fault transfer limit is ``pmax_pre``, the post-fault one ``pmax_post``
    and a bolted fault at the machine terminal drives it to ~0.
    """
    x_pre = E * V / pmax_pre
    x_post = E * V / pmax_post
    if not x_post > x_pre:
        raise NetworkError("pmax_post must be below pmax_pre")
    Xd = 0.4 * x_pre if Xd is None else Xd
    xa = x_post - Xd
    x_par = x_pre - Xd
    if not (xa > 0 and x_par > 0):
        raise NetworkError("Xd too large for the requested transfer limits")
    xb = 1.0 / (1.0 / x_par - 1.0 / xa)
    return Network(
        buses=(Bus(1), Bus(2, type="slack", vm=V)),
        lines=(Line("L1", 1, 2, 0.0, xa), Line("L2", 1, 2, 0.0, xb)),
        machines=(Machine("G1", 1, M=M, D=D, Xd=Xd, E=E, Pm=pm, area="A"),),
        f0=f0,
        infinite_bus=InfiniteBus(2, V),
        name="smib",
    )


def wscc9(damping: float = 0.0, f0: float = 60.0) -> Network:
    """WSCC 3-machine 9-bus system (Anderson & Fouad data, 100 MVA base).

    ``damping`` is the damping-to-inertia rate D*w0/M in 1/s, applied
    uniformly. Areas: A = {G1}, B = {G2, G3}.
    """
    buses = (
        Bus(1, "slack", vm=1.04),
        Bus(2, "pv", vm=1.025, pg=1.63),
        Bus(3, "pv", vm=1.025, pg=0.85),
        Bus(4), Bus(5, pl=1.25, ql=0.50), Bus(6, pl=0.90, ql=0.30),
        Bus(7), Bus(8, pl=1.00, ql=0.35), Bus(9),
    )
    lines = (
        Line("L1-4", 1, 4, 0.0, 0.0576),
        Line("L4-5", 4, 5, 0.010, 0.085, 0.176),
        Line("L4-6", 4, 6, 0.017, 0.092, 0.158),
        Line("L5-7", 5, 7, 0.032, 0.161, 0.306),
        Line("L6-9", 6, 9, 0.039, 0.170, 0.358),
        Line("L7-8", 7, 8, 0.0085, 0.072, 0.149),
        Line("L8-9", 8, 9, 0.0119, 0.1008, 0.209),
        Line("L2-7", 2, 7, 0.0, 0.0625),
        Line("L3-9", 3, 9, 0.0, 0.0586),
    )
    w0 = 2 * np.pi * f0
    H = {"G1": 23.64, "G2": 6.40, "G3": 3.01}
    xd = {"G1": 0.0608, "G2": 0.1198, "G3": 0.1813}
    area = {"G1": "A", "G2": "B", "G3": "B"}
    machines = tuple(
        Machine(g, k + 1, M=2 * H[g], D=damping * 2 * H[g] / w0, Xd=xd[g], area=area[g])
        for k, g in enumerate(("G1", "G2", "G3"))
    )
    return Network(buses, lines, machines, f0=f0, name="wscc9")


def synthetic_multi_area(n_areas: int, per_area: int, seed: int = 0, damping: float = 0.0,
                         f0: float = 50.0) -> Network:
    """Ring of ``n_areas`` areas, each a star of ``per_area`` generators around a load hub."""
    if n_areas < 1 or per_area < 1:
        raise NetworkError("need at least one area and one machine per area")
    rng = np.random.default_rng(seed)
    w0 = 2 * np.pi * f0
    buses: list[Bus] = []
    lines: list[Line] = []
    machines: list[Machine] = []
    next_id = 1
    hubs = []
    for p in range(n_areas):
        hub = next_id
        next_id += 1
        pgs = rng.uniform(0.5, 1.0, per_area)
        load = pgs.sum() * rng.uniform(0.95, 1.05)
        buses.append(Bus(hub, pl=float(load), ql=float(0.2 * load)))
        hubs.append(hub)
        for k in range(per_area):
            gb = next_id
            next_id += 1
            slack = p == 0 and k == 0
            buses.append(Bus(gb, "slack" if slack else "pv", vm=1.02, pg=float(pgs[k])))
            lines.append(Line(f"L{gb}-{hub}", gb, hub, 0.005, float(rng.uniform(0.05, 0.1))))
            H = float(rng.uniform(3.0, 8.0))
            machines.append(Machine(f"A{p + 1}G{k + 1}", gb, M=2 * H, D=damping * 2 * H / w0,
                                    Xd=float(rng.uniform(0.2, 0.3)), area=f"A{p + 1}"))
    if n_areas > 1:
        for p in range(n_areas):
            a, b = hubs[p], hubs[(p + 1) % n_areas]
            if n_areas == 2 and p == 1:
                break
            lines.append(Line(f"T{a}-{b}", a, b, 0.01, 0.1))
    return Network(tuple(buses), tuple(lines), tuple(machines), f0=f0,
                   name=f"synthetic_{n_areas}x{per_area}")
