"""Command line entry point: ``adress run|benchmark|analyze|build-system``.

Every command prints a one-line JSON summary on success. On failure it
prints ``{"error": ..., "type": ...}`` to stderr and exits nonzero.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .analysis import density_profile, energy_drift, temperature_summary
from .build import build_system
from .geometry import PeriodicBox
from .io import ConfigError, RunConfig, load_config, load_run, read_observables, read_xyz, validate_config, \
    write_config, write_coordinates
from .simulation import benchmark, run_simulation, write_benchmark
from .topology import format_topology, load_topology

log = logging.getLogger("adress")


def _int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("worker counts must be >= 1")
    return values


def _box(text):
    parts = [float(v) for v in text.replace(",", " ").split()]
    if len(parts) == 1:
        parts *= 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("box takes 1 or 3 lengths")
    return tuple(parts)


def build_parser():
    p = argparse.ArgumentParser(prog="adress", description="Adaptive-resolution molecular dynamics.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a simulation from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--workers", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--steps", type=int, help="override n_steps")

    b = sub.add_parser("benchmark", help="time runs at several worker counts")
    b.add_argument("--config", required=True)
    b.add_argument("--workers", type=_int_list, default=[1, 2, 4])
    b.add_argument("--reps", type=int, default=8)
    b.add_argument("--steps", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--timing-log")
    b.add_argument("--out", help="CSV report path (default: stdout table)")

    a = sub.add_parser("analyze", help="temperature, energy drift and density profile")
    a.add_argument("--observables", required=True)
    a.add_argument("--trajectory")
    a.add_argument("--config", help="needed with --trajectory (topology, box, regions)")
    a.add_argument("--equilibration", type=float, default=0.0, help="ps discarded from the start")
    a.add_argument("--bins", type=int, default=50)
    a.add_argument("--out", help="output prefix for temperature/density CSVs")

    s = sub.add_parser("build-system", help="build a box of molecules from a template topology")
    s.add_argument("--topology", required=True, help="template topology (molecule and force-field definitions)")
    s.add_argument("--molecules", type=int, required=True)
    s.add_argument("--box", type=_box, required=True)
    s.add_argument("--temperature", type=float, default=323.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--fg-half-width", type=float, default=1.0)
    s.add_argument("--hybrid-width", type=float, default=1.0)
    s.add_argument("--relax-steps", type=int, default=100)
    s.add_argument("--no-velocities", action="store_true",
                   help="store positions only; velocities are then drawn from the run seed at load")
    s.add_argument("--out", required=True, help="output prefix; writes PREFIX.top, PREFIX.xyz, PREFIX.cfg")
    return p


def cmd_run(args):
    cfg, topology, state, vt = load_run(args.config, args.workers, args.seed)
    final, records = run_simulation(cfg, topology, state, vt, args.steps)
    out = {"command": "run", "final_step": final.step, "time_ps": final.time, "workers": cfg.workers}
    if records:
        out["mean_temperature"] = float(np.mean([r.temperature for r in records]))
        out["final_total_energy"] = records[-1].total_energy
    return out


def cmd_benchmark(args):
    cfg, topology, state, vt = load_run(args.config, max(args.workers), args.seed)
    cfg.timing_log = args.timing_log
    cfg.observables = cfg.trajectory = cfg.final_state = None
    rows = benchmark(cfg, topology, state, vt, args.workers, args.reps, args.steps)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_benchmark(rows, fh)
    else:
        write_benchmark(rows, sys.stdout)
    return {"command": "benchmark", "n_sites": topology.n_sites, "rows": rows}


def cmd_analyze(args):
    records = read_observables(args.observables)
    temp = temperature_summary(records, args.equilibration)
    t = np.array([r.time for r in records])
    keep = t - t[0] >= args.equilibration
    out = {"command": "analyze", "temperature_mean": temp.mean, "temperature_std": temp.std,
           "n_samples": temp.n_samples}
    if keep.sum() >= 2:
        drift = energy_drift(t[keep], [r.total_energy for r, k in zip(records, keep) if k])
        out.update(energy_drift=drift.drift, energy_slope=drift.slope, energy_max_deviation=drift.max_deviation)
    if args.out:
        with open(f"{args.out}_temperature.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "temperature"])
            w.writerows(zip(temp.times.tolist(), temp.values.tolist()))
    if args.trajectory:
        if not args.config:
            raise ConfigError(["analyze: --trajectory needs --config"])
        cfg = load_config(args.config)
        errors = [e for e in validate_config(cfg) if not e.startswith("files-exist: coordinates")]
        if errors:
            raise ConfigError(errors)
        topology = load_topology(cfg.topology)
        frames = [f for f in read_xyz(args.trajectory) if f.time - records[0].time >= args.equilibration]
        prof = density_profile([f.positions for f in frames], topology, cfg.periodic_box, cfg.geometry, args.bins)
        out["density_frames"] = prof.n_frames
        out["density_mean"] = float(prof.density.mean())
        if args.out:
            with open(f"{args.out}_density.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["x", "density", "std_error", "region"])
                w.writerows(prof.rows())
    return out


def cmd_build_system(args):
    template = load_topology(args.topology)
    box = PeriodicBox(*args.box)
    topology, state = build_system(template, args.molecules, box, args.temperature, args.seed, args.relax_steps)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    top_path, xyz_path, cfg_path = (prefix.with_name(prefix.name + ext) for ext in (".top", ".xyz", ".cfg"))
    top_path.write_text(format_topology(topology))
    write_coordinates(xyz_path, state, topology.site_element, velocities=not args.no_velocities)
    cfg = RunConfig(str(top_path.resolve()), str(xyz_path.resolve()), box.lengths.tolist(), 0.5 * box.lx,
                    args.fg_half_width, args.hybrid_width, ref_temperature=args.temperature, seed=args.seed,
                    observables=str(prefix.with_name(prefix.name + "_obs.csv").resolve()))
    cfg.box = tuple(cfg.box)
    write_config(cfg, cfg_path)
    warnings = validate_config(cfg, topology)
    for w in warnings:
        log.warning("generated config needs attention: %s", w)
    return {"command": "build-system", "n_molecules": args.molecules, "n_sites": topology.n_sites,
            "files": [str(top_path), str(xyz_path), str(cfg_path)], "warnings": warnings}


COMMANDS = {"run": cmd_run, "benchmark": cmd_benchmark, "analyze": cmd_analyze, "build-system": cmd_build_system}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = COMMANDS[args.command](args)
    except Exception as exc:
        err = {"error": str(exc), "type": type(exc).__name__}
        if isinstance(exc, ConfigError):
            err["errors"] = exc.errors
        print(json.dumps(err), file=sys.stderr)
        return 2 if isinstance(exc, (ConfigError, OSError, ValueError)) else 1
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
