"""Run a configured simulation, streaming observables and frames to disk."""

import contextlib
import csv
import math
import time

import numpy as np

from .io import ObservableRecord, ObservableWriter, write_coordinates, write_xyz_frame
from .parallel import ParallelEngine


def make_engine(cfg, topology, vt, workers=None):
    return ParallelEngine(topology, cfg.periodic_box, cfg.geometry, cfg.integrator,
                          n_workers=workers or cfg.workers, vt=vt, skin=cfg.skin,
                          molecule_radius=cfg.molecule_radius)


def _observe_stride(cfg):
    strides = [s for s in (cfg.observables_interval if cfg.observables else 0,
                           cfg.trajectory_interval if cfg.trajectory else 0) if s > 0]
    return math.gcd(*strides) if strides else 0


def run_simulation(cfg, topology, state, vt, n_steps=None):
    """Run ``cfg.n_steps`` (or ``n_steps``) steps; returns (final state, records).

    Step k is sampled while it is integrated (on-step kinetic energy needs
    the next half-step velocity), so records cover steps 0, interval, ...
    below the final step; the final configuration goes to ``final_state``.
    """
    n_steps = cfg.n_steps if n_steps is None else n_steps
    engine = make_engine(cfg, topology, vt)
    stride = _observe_stride(cfg)
    records = []
    elements = topology.site_element
    box = cfg.periodic_box.lengths.tolist()
    step0 = state.step
    with contextlib.ExitStack() as stack:
        obs_writer = traj = None
        if cfg.observables:
            obs_writer = ObservableWriter(stack.enter_context(open(cfg.observables, "w", newline="")))
        if cfg.trajectory and cfg.trajectory_interval:
            traj = stack.enter_context(open(cfg.trajectory, "w"))

        def on_obs(o):
            k = o.step - step0
            if obs_writer and cfg.observables_interval and k % cfg.observables_interval == 0:
                rec = ObservableRecord.from_reduced(o.step, o.time, o.values)
                records.append(rec)
                obs_writer.write(rec)
            if traj and o.positions is not None and k % cfg.trajectory_interval == 0:
                write_xyz_frame(traj, o.positions, elements, o.step, o.time, box)

        final = engine.run(state, n_steps, observe_every=stride,
                           frame_every=cfg.trajectory_interval if traj else 0,
                           on_observables=on_obs, timing=bool(cfg.timing_log))
    if cfg.final_state:
        write_coordinates(cfg.final_state, final, elements)
    if cfg.timing_log:
        write_timing_log(cfg.timing_log, engine.timings)
    return final, records


def write_timing_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "worker", "phase", "seconds"])
        w.writerows(rows)


def benchmark(cfg, topology, state, vt, worker_counts, reps=8, n_steps=None, warmup_steps=5):
    """Wall-clock throughput per worker count.

    Each repetition starts from the same ``state``; the first ``warmup_steps``
    (untimed) run once per worker count so JIT compilation and thread start-up
    are excluded.
    """
    n_steps = cfg.n_steps if n_steps is None else n_steps
    if n_steps < 1:
        raise ValueError("benchmark needs at least one step")
    rows, timings = [], {}
    for nw in worker_counts:
        engine = make_engine(cfg, topology, vt, nw)
        if warmup_steps:
            engine.run(state, warmup_steps, observe_every=0)
        ns_day, temps = [], []
        for rep in range(reps):
            engine.timings = []
            t_series = []

            def on_obs(o, t_series=t_series):
                t_series.append(ObservableRecord.from_reduced(o.step, o.time, o.values).temperature)

            t0 = time.perf_counter()
            engine.run(state, n_steps, observe_every=max(1, n_steps // 20), on_observables=on_obs,
                       timing=bool(cfg.timing_log))
            wall = time.perf_counter() - t0
            simulated_ns = n_steps * cfg.dt * 1e-3
            ns_day.append(simulated_ns / wall * 86400.0)
            temps.append(float(np.mean(t_series)))
            timings.setdefault(nw, []).extend((rep,) + r for r in engine.timings)
        rows.append(benchmark_row(nw, ns_day, temps))
    if cfg.timing_log:
        with open(cfg.timing_log, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["workers", "rep", "step", "worker", "phase", "seconds"])
            for nw, rs in timings.items():
                w.writerows((nw,) + r for r in rs)
    return rows


BENCHMARK_COLUMNS = ["workers", "reps", "ns_per_day", "ns_per_day_std", "hour_per_ns", "hour_per_ns_std",
                     "temperature_mean", "temperature_std"]


def benchmark_row(workers, ns_per_day, temperatures):
    """One report row. hour/ns is 24 over the mean ns/day; its spread is propagated."""
    ns_per_day = np.asarray(ns_per_day, dtype=float)
    mean = float(ns_per_day.mean())
    std = float(ns_per_day.std(ddof=1)) if ns_per_day.size > 1 else 0.0
    temps = np.asarray(temperatures, dtype=float)
    return {
        "workers": int(workers),
        "reps": int(ns_per_day.size),
        "ns_per_day": mean,
        "ns_per_day_std": std,
        "hour_per_ns": 24.0 / mean,
        "hour_per_ns_std": 24.0 * std / mean**2,
        "temperature_mean": float(temps.mean()),
        "temperature_std": float(temps.std(ddof=1)) if temps.size > 1 else 0.0,
    }


def write_benchmark(rows, stream):
    w = csv.DictWriter(stream, BENCHMARK_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
