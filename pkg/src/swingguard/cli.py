"""Command-line entry point: ``swingguard <command> ... --out DIR``.

Every command writes its files under ``--out`` plus a ``manifest.json``
listing them with the hashes of the inputs that produced them. Exit status
is 0 when the run completed (verdicts are data), 1 on a runtime or input
error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

from . import __version__, pmu
from .bench import BenchConfig, BenchError, run_bench, thread_cap
from .detector import DetectorError, write_detection_csv, write_summary
from .equivalence import EquivalenceError, write_equivalents
from .grouping import GroupingError, write_assignments
from .netmodel import NetworkError, ScenarioError, network_from_dict, read_json
from .scenarios import Scenario, bundled_path, config_hash, load_scenario, scheme_from_dict
from .scheme import SchemeError, detect_stream, run_closed_loop
from .simulator import ApplyFault, EventSchedule, SimulationError, integrate, schedule_to_list
from .studies import MITIGATIONS, StudyError, noise_study, sweep_cct

log = logging.getLogger("swingguard")

FAILURES = (ScenarioError, NetworkError, pmu.PmuError, SchemeError, DetectorError, EquivalenceError,
            GroupingError, StudyError, BenchError, SimulationError, OSError)


class UsageError(Exception):
    pass


class Outputs:
    """Tracks files written under ``--out`` and writes the manifest."""

    def __init__(self, root: str, command: str, argv: Sequence[str], seed: int):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.argv = list(argv)
        self.seed = seed
        self.files: list[str] = []
        self.hashes: dict[str, str] = {}

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.root / name

    def write_json(self, name: str, data: Any) -> None:
        self.path(name).write_text(json.dumps(data, indent=2, allow_nan=False) + "\n")

    def hash_file(self, key: str, path: str | Path) -> None:
        self.hashes[key] = hashlib.sha256(Path(path).read_bytes()).hexdigest()

    def hash_config(self, key: str, data: Any) -> None:
        self.hashes[key] = config_hash(data)

    def finish(self) -> None:
        files = []
        for name in self.files:
            data = (self.root / name).read_bytes()
            files.append({"name": name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "seed": self.seed,
            "version": __version__,
            "threads": thread_cap(),
            "files": files,
            "config_hashes": self.hashes,
        }
        (self.root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


# --- argument helpers -----------------------------------------------------------


def _nonempty(path: str, flag: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{flag}: no such file {path!r}")
    if not p.read_text().strip():
        raise UsageError(f"{flag}: file {path!r} is empty")
    return p


def _scenario_path(value: str, flag: str = "--scenario") -> Path:
    """A file path, or the name of a bundled scenario."""
    p = Path(value)
    if p.exists():
        return _nonempty(value, flag)
    if "/" not in value and not value.endswith(".json"):
        try:
            return bundled_path(value)
        except ScenarioError:
            pass
    raise UsageError(f"{flag}: no such file or bundled scenario {value!r}")


def _floats(text: str, flag: str) -> list[float]:
    try:
        out = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated numbers, got {text!r}") from None
    if not out:
        raise UsageError(f"{flag}: empty list")
    return out


def _names(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _load_schedule(path: str) -> EventSchedule:
    from .simulator import schedule_from_list

    data = read_json(_nonempty(path, "--schedule"))
    items = data.get("schedule") if isinstance(data, dict) else data
    if not isinstance(items, list):
        raise ScenarioError(f"{path}: expected a list of events or an object with 'schedule'")
    try:
        return schedule_from_list(items)
    except (ValueError, KeyError) as exc:
        raise ScenarioError(f"{path}: {exc}") from None


def _scenario(args, out: Outputs) -> Scenario:
    path = _scenario_path(args.scenario)
    scenario = load_scenario(path)
    out.hash_file("scenario", path)
    changes: dict[str, Any] = {}
    if getattr(args, "t_end", None) is not None:
        changes["t_end"] = args.t_end
    if getattr(args, "dt", None) is not None:
        changes["dt"] = args.dt
    schedule = scenario.schedule
    if getattr(args, "case", None):
        schedule = scenario.case(args.case)
    if getattr(args, "schedule", None):
        schedule = _load_schedule(args.schedule)
        out.hash_file("schedule", args.schedule)
    changes["schedule"] = schedule
    scenario = replace(scenario, **changes)
    scheme = replace(scenario.scheme, t_end=scenario.t_end, dt=scenario.dt)
    if getattr(args, "cycle", None) is not None:
        scheme = replace(scheme, cycle=args.cycle)
    scenario = replace(scenario, scheme=scheme)
    out.hash_config("effective", {"t_end": scenario.t_end, "dt": scenario.dt,
                                  "schedule": schedule_to_list(schedule), "scheme": scheme.to_dict()})
    return scenario


# --- commands -------------------------------------------------------------------


def cmd_simulate(args, out: Outputs) -> None:
    sc = _scenario(args, out)
    traj = integrate(sc.model, sc.schedule, sc.t_end, sc.dt)
    traj.to_csv(out.path("trajectory.csv"))
    raw = pmu.sample(traj, sc.scheme.cycle)
    pmu.derive(raw, sc.f0).to_csv(out.path("pmu.csv"), raw)
    out.write_json("events.json", {"schedule": schedule_to_list(sc.schedule),
                                   "clear_time_s": sc.schedule.clear_time})
    spread = traj.max_angle_spread()
    out.write_json("simulate.json", {"stable": traj.is_stable(), "samples": len(traj.t),
                                     "max_angle_spread_deg": math.degrees(float(spread.max()))})
    print(f"simulated {len(traj.t)} steps; ground truth {'stable' if traj.is_stable() else 'unstable'}")


def _areas_file(path: Path) -> tuple[dict, dict, float, bool]:
    data = read_json(path)
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: top level must be an object")
    if "machines" in data:
        net = network_from_dict(data)
        return net.areas, {m.id: m.M for m in net.machines}, net.f0, net.infinite_bus is not None
    if data.get("model") == "analytic_smib":
        sc = load_scenario(path)
        return sc.areas, sc.inertia, sc.f0, True
    for key in ("areas", "inertia"):
        if not isinstance(data.get(key), dict):
            raise ScenarioError(f"{path}: field '{key}' must be an object")
    try:
        inertia = {str(k): float(v) for k, v in data["inertia"].items()}
        f0 = float(data.get("f0", 50.0))
    except (TypeError, ValueError):
        raise ScenarioError(f"{path}: field 'inertia' and 'f0' must be numeric") from None
    areas = {str(a): tuple(str(g) for g in ids) for a, ids in data["areas"].items()}
    return areas, inertia, f0, bool(data.get("infinite_bus", False))


def cmd_detect(args, out: Outputs) -> None:
    csv_path = _nonempty(args.pmu_csv, "--pmu-csv")
    out.hash_file("pmu_csv", csv_path)
    areas_arg = _scenario_path(args.areas, "--areas")
    areas, inertia, f0, infinite = _areas_file(areas_arg)
    out.hash_file("areas", areas_arg)
    block: dict = {}
    if args.config:
        block = read_json(_nonempty(args.config, "--config"))
        if not isinstance(block, dict):
            raise ScenarioError(f"{args.config}: top level must be an object")
        out.hash_file("config", args.config)
    block = dict(block)
    active_from = block.pop("active_from_s", None)
    maf_in = int(block.pop("maf_input_window", 1))
    if args.schedule:
        active_from = _load_schedule(args.schedule).clear_time
    if args.active_from is not None:
        active_from = args.active_from
    if args.maf_input is not None:
        maf_in = args.maf_input
    stream = pmu.read_stream_csv(csv_path, f0)
    scheme = scheme_from_dict(block, 1e-3, float(stream.t[-1]), where="config")
    missing = set(stream.machine_ids) - set(inertia)
    if missing:
        raise ScenarioError(f"--areas: no inertia for machines {sorted(missing)}")
    if args.snr_db is not None:
        stream = pmu.add_noise(stream, pmu.NoiseSpec(args.snr_db, args.seed))
    stream = pmu.moving_average(stream, maf_in)
    effective = {"scheme": scheme.to_dict(), "active_from_s": active_from, "snr_db": args.snr_db,
                 "maf_input_window": maf_in}
    out.hash_config("effective", effective)
    res = detect_stream(stream, inertia, areas, scheme, 2 * math.pi * f0,
                        active_from=-math.inf if active_from is None else float(active_from),
                        infinite_bus=infinite)
    write_detection_csv(out.path("detection.csv"), res.samples)
    write_equivalents(out.path("equivalents.csv"), res.equivalents)
    write_assignments(out.path("groups.csv"), res.assignments)
    write_summary(out.path("summary.json"), res.decision,
                  {"timing_ms": res.timing, "samples": len(stream), "effective": effective})
    d = res.decision
    print(f"verdict {d.verdict}" + (f" at t_s={d.t_s:.3f} s" if d.t_s is not None else ""))


def cmd_closed_loop(args, out: Outputs) -> None:
    sc = _scenario(args, out)
    scheme = sc.scheme
    if args.no_control:
        scheme = replace(scheme, control_actions=())
    if args.delay is not None:
        scheme = replace(scheme, control_delay=args.delay)
    report = run_closed_loop(sc.model, sc.schedule, scheme)
    report.write_json(out.path("report.json"))
    write_detection_csv(out.path("detection.csv"), [s.detection for s in report.steps])
    write_equivalents(out.path("equivalents.csv"), [s.equivalent for s in report.steps if s.equivalent])
    write_assignments(out.path("groups.csv"), [s.assignment for s in report.steps])
    report.trajectory.to_csv(out.path("trajectory.csv"))
    print(f"verdict {report.verdict}; final {'stable' if report.final_stable else 'unstable'}")


def cmd_bench(args, out: Outputs) -> None:
    sizes = tuple(int(x) for x in _floats(args.sizes, "--sizes"))
    cfg = BenchConfig(sizes=sizes, areas=args.areas, repetitions=args.repetitions, warmup=args.warmup,
                      concurrent=not args.sequential, seed=args.seed)
    out.hash_config("effective", cfg.__dict__)
    result = run_bench(cfg)
    result.to_csv(out.path("bench.csv"))
    result.write_json(out.path("bench.json"))
    for r in result.rows:
        print(f"N={r.n} P={r.p}: direct {r.t_direct_ms:.3f} ms, two-layer {r.t_twolayer_ms:.3f} ms, "
              f"speedup {r.speedup:.2f}x, messages {r.msgs_twolayer}/{r.msgs_direct}")


def _sweep_fault(args, sc: Scenario) -> tuple[ApplyFault, list[str]]:
    defaults = sc.sweep
    if args.line:
        loc = 0.5 if args.location is None else args.location
        lines = _names(args.remove) if args.remove else [args.line]
        return ApplyFault(line=args.line, location=loc), lines
    bus = args.bus if args.bus is not None else defaults.get("bus")
    line = defaults.get("line")
    if bus is None and line is None:
        raise UsageError("sweep-cct: give --line or --bus (the scenario has no default sweep fault)")
    loc = args.location if args.location is not None else float(defaults.get("location", 0.0 if bus else 0.5))
    lines = _names(args.remove) if args.remove else list(defaults.get("remove_lines", [line] if line else []))
    if bus is not None:
        return ApplyFault(bus=int(bus), location=loc), lines
    return ApplyFault(line=str(line), location=loc), lines


def cmd_sweep(args, out: Outputs) -> None:
    sc = _scenario(args, out)
    fault, lines = _sweep_fault(args, sc)
    out.hash_config("sweep", {"fault": fault.__dict__, "remove_lines": lines, "resolution": args.resolution,
                              "t_max": args.t_max})
    res = sweep_cct(sc, fault, lines, args.resolution, args.t_max)
    res.to_csv(out.path("sweep.csv"))
    out.write_json("sweep.json", res.to_dict())
    print(f"CCT in [{res.stable_bound:.4f}, {res.unstable_bound:.4f}] s; "
          f"{len(res.detector_errors)} detector disagreements over {len(res.cases)} probes")


def cmd_noise(args, out: Outputs) -> None:
    sc = _scenario(args, out)
    mitigations = _names(args.mitigation)
    for m in mitigations:
        if m not in MITIGATIONS:
            raise UsageError(f"--mitigation: unknown mode {m!r}; choose from {', '.join(MITIGATIONS)}")
    indexes = _names(args.index)
    snrs = _floats(args.snr_list, "--snr-list")
    out.hash_config("study", {"snr": snrs, "trials": args.trials, "mitigation": mitigations,
                              "index": indexes, "seed": args.seed})
    unstable = None if args.unstable_case.lower() == "none" else args.unstable_case
    res = noise_study(sc, snrs, args.trials, mitigations, indexes, args.seed, args.stable_case, unstable)
    res.to_csv(out.path("noise.csv"))
    out.write_json("noise.json", res.to_dict())
    for r in res.rows:
        print(f"SNR {r.snr_db:g} dB {r.mitigation} [{r.index}]: false starts {r.false_starts}/{r.trials}, "
              f"missed {r.missed}/{r.trials}")


# --- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swingguard", allow_abbrev=False,
                                     description="Transient instability detection from PMU streams.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("-v", "--verbose", action="store_true")

    def scenario_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--scenario", required=True, help="scenario JSON, or a bundled name (smib, wscc9)")
        p.add_argument("--schedule", help="event schedule JSON replacing the scenario's")
        p.add_argument("--case", help="use a named case schedule from the scenario")
        p.add_argument("--t-end", type=float)
        p.add_argument("--dt", type=float)

    p = sub.add_parser("simulate", allow_abbrev=False, help="integrate a scenario")
    scenario_flags(p)
    p.add_argument("--cycle", type=float, help="PMU recording cycle for pmu.csv (s)")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", allow_abbrev=False, help="run the detection pipeline on a recorded stream")
    p.add_argument("--pmu-csv", required=True)
    p.add_argument("--areas", required=True, help="scenario JSON or {areas, inertia, f0, infinite_bus}")
    p.add_argument("--config", help="scheme settings JSON")
    p.add_argument("--schedule", help="events JSON; detection starts at its clearing time")
    p.add_argument("--active-from", type=float, help="first time (s) the index may fire")
    p.add_argument("--snr-db", type=float, help="add seeded measurement noise at this SNR")
    p.add_argument("--maf-input", type=int, help="moving-average window on the inputs")
    common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("closed-loop", allow_abbrev=False, help="simulate with detection and shedding in the loop")
    scenario_flags(p)
    p.add_argument("--cycle", type=float)
    p.add_argument("--delay", type=float, help="control delay after t_s (s)")
    p.add_argument("--no-control", action="store_true", help="detect only, never shed")
    common(p)
    p.set_defaults(func=cmd_closed_loop)

    p = sub.add_parser("bench-equivalence", allow_abbrev=False, help="direct vs two-layer timing")
    p.add_argument("--sizes", default="100,500,1000,2000")
    p.add_argument("--areas", type=int, default=20)
    p.add_argument("--repetitions", type=int, default=30)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--sequential", action="store_true", help="run area centers in this process")
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep-cct", allow_abbrev=False, help="bracket the CCT and check the detector")
    scenario_flags(p)
    p.add_argument("--line", help="fault this line (and remove it unless --remove is given)")
    p.add_argument("--bus", type=int, help="fault this bus")
    p.add_argument("--location", type=float, help="fault position along the line, 0..1")
    p.add_argument("--remove", help="comma-separated lines removed at clearing")
    p.add_argument("--resolution", type=float, default=1e-3)
    p.add_argument("--t-max", type=float, default=1.0, help="longest fault duration probed (s)")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("noise-study", allow_abbrev=False, help="seeded noise trials on the scenario fixtures")
    scenario_flags(p)
    p.add_argument("--snr-list", default="100,40,30")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--mitigation", default=",".join(MITIGATIONS))
    p.add_argument("--index", default="c", help="comma-separated indexes: c, tau, mu")
    p.add_argument("--stable-case", default="stable")
    p.add_argument("--unstable-case", default="unstable", help="case name, or 'none'")
    common(p)
    p.set_defaults(func=cmd_noise)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        thread_cap()
        out = Outputs(args.out, args.command, argv, args.seed)
        args.func(args, out)
        out.finish()
    except UsageError as exc:
        parser.error(str(exc))
    except FAILURES as exc:
        print(f"swingguard {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
