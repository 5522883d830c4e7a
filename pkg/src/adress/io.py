"""Run configuration, XYZ coordinate/trajectory files and observable CSVs.

The run configuration is an INI file (see ``configs/butane/run.cfg``).
Relative paths inside it are resolved against the directory of the config
file.
"""

import configparser
import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .geometry import KB, PeriodicBox
from .integrator import IntegratorParams, maxwell_boltzmann
from .multiscale import TransitionPotential, TransitionTableError
from .parallel import halo_width, max_workers
from .state import SimState
from .switching import SwitchingGeometry
from .topology import TopologyError, load_topology


class ConfigError(ValueError):
    """All validation failures of a run configuration, not just the first."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class RunConfig:
    topology: str
    coordinates: str
    box: tuple
    fg_center_x: float
    fg_half_width: float
    hybrid_width: float
    dt: float = 0.002
    friction: float = 0.5
    ref_temperature: float = 323.0
    seed: int = 0
    thermostat: bool = True
    n_steps: int = 1000
    workers: int = 1
    skin: float = 0.1
    molecule_radius: float = 0.3
    observables: str = None
    observables_interval: int = 10
    trajectory: str = None
    trajectory_interval: int = 0
    final_state: str = None
    timing_log: str = None
    transition_table: str = None

    @property
    def periodic_box(self):
        return PeriodicBox(*self.box)

    @property
    def geometry(self):
        return SwitchingGeometry(self.fg_center_x, self.fg_half_width, self.hybrid_width)

    @property
    def integrator(self):
        return IntegratorParams(self.dt, self.friction, self.ref_temperature, self.seed, self.thermostat)


# section, key, RunConfig field, parser
_SCHEMA = [
    ("system", "topology", "topology", "path"),
    ("system", "coordinates", "coordinates", "path"),
    ("system", "box", "box", "box"),
    ("switching", "fg_center_x", "fg_center_x", float),
    ("switching", "fg_half_width", "fg_half_width", float),
    ("switching", "hybrid_width", "hybrid_width", float),
    ("integrator", "dt", "dt", float),
    ("integrator", "friction", "friction", float),
    ("integrator", "ref_temperature", "ref_temperature", float),
    ("integrator", "seed", "seed", int),
    ("integrator", "thermostat", "thermostat", "bool"),
    ("integrator", "n_steps", "n_steps", int),
    ("parallel", "workers", "workers", int),
    ("neighbor", "skin", "skin", float),
    ("neighbor", "molecule_radius", "molecule_radius", float),
    ("output", "observables", "observables", "path"),
    ("output", "observables_interval", "observables_interval", int),
    ("output", "trajectory", "trajectory", "path"),
    ("output", "trajectory_interval", "trajectory_interval", int),
    ("output", "final_state", "final_state", "path"),
    ("output", "timing_log", "timing_log", "path"),
    ("transition", "table", "transition_table", "path"),
]
_REQUIRED = {"topology", "coordinates", "box", "fg_center_x", "fg_half_width", "hybrid_width"}


def _key_lines(text):
    """(section, key) -> line number, for error messages."""
    where, section = {}, None
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip().lower()
        elif "=" in s and not s.startswith((";", "#")):
            where[(section, s.split("=", 1)[0].strip().lower())] = lineno
    return where


def parse_config(text, base_dir=Path("."), source="<config>"):
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError([f"parse error: {exc}"]) from None
    lines = _key_lines(text)
    known = {(s, k) for s, k, _, _ in _SCHEMA}
    errors = []
    for section in parser.sections():
        for key in parser[section]:
            if (section, key) not in known:
                errors.append(f"{source}:{lines.get((section, key), '?')}: unknown key [{section}] {key}")
    values = {}
    for section, key, name, kind in _SCHEMA:
        if not parser.has_option(section, key):
            if name in _REQUIRED:
                errors.append(f"{source}: missing required key [{section}] {key}")
            continue
        raw = parser.get(section, key).strip()
        at = f"{source}:{lines.get((section, key), '?')}"
        try:
            if kind == "path":
                p = Path(raw)
                values[name] = str(p if p.is_absolute() else (base_dir / p).resolve())
            elif kind == "box":
                parts = [float(x) for x in raw.replace(",", " ").split()]
                if len(parts) == 1:
                    parts *= 3
                if len(parts) != 3:
                    raise ValueError("box needs 1 or 3 lengths")
                values[name] = tuple(parts)
            elif kind == "bool":
                values[name] = parser.getboolean(section, key)
            elif kind is int:
                values[name] = int(raw)
            else:
                values[name] = float(raw)
        except ValueError as exc:
            errors.append(f"{at}: bad value for [{section}] {key}: {exc}")
    if errors:
        raise ConfigError(errors)
    return RunConfig(**values)


def format_config(cfg):
    parser = configparser.ConfigParser()
    data = asdict(cfg)
    for section, key, name, kind in _SCHEMA:
        value = data[name]
        if value is None:
            continue
        if not parser.has_section(section):
            parser.add_section(section)
        if kind == "box":
            value = " ".join(repr(float(v)) for v in value)
        elif kind == "bool":
            value = "on" if value else "off"
        elif kind is float:
            value = repr(float(value))
        parser.set(section, key, str(value))
    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in parser[section].items()]
        lines.append("")
    return "\n".join(lines)


def write_config(cfg, path):
    Path(path).write_text(format_config(cfg))


def load_config(path):
    path = Path(path)
    return parse_config(path.read_text(), path.parent.resolve(), str(path))


def validate_config(cfg, topology=None):
    """Every cross-field precondition; returns a list of violations."""
    errors = []
    for name in ("topology", "coordinates", "transition_table"):
        p = getattr(cfg, name)
        if p is not None and not Path(p).is_file():
            errors.append(f"files-exist: {name} file {p} not found")
    box = None
    try:
        box = cfg.periodic_box
    except ValueError as exc:
        errors.append(f"box-positive: {exc}")
    geom = None
    try:
        geom = cfg.geometry
    except ValueError as exc:
        errors.append(f"switching-geometry: {exc}")
    try:
        cfg.integrator
    except ValueError as exc:
        errors.append(f"integrator: {exc}")
    if cfg.n_steps < 0:
        errors.append("integrator: n_steps must be >= 0")
    if cfg.workers < 1:
        errors.append("workers: need at least one worker")
    if cfg.skin <= 0:
        errors.append("neighbor: skin must be > 0")
    if cfg.molecule_radius <= 0:
        errors.append("neighbor: molecule_radius must be > 0")
    for name in ("observables_interval", "trajectory_interval"):
        if getattr(cfg, name) < 0:
            errors.append(f"output: {name} must be >= 0")
    if box is not None and geom is not None:
        if not geom.fits(box):
            errors.append(
                f"region-fit: 2*(fg_half_width + hybrid_width) = {2 * geom.outer_radius:g} nm "
                f"exceeds box x length {box.lx:g} nm"
            )
        if topology is not None:
            cut = max(topology.fg_cutoff, topology.cg_cutoff)
            if box.lx < 2 * geom.outer_radius + cut:
                errors.append(
                    f"box-cutoff: box x {box.lx:g} nm < 2*(h + L) + cutoff = {2 * geom.outer_radius + cut:g} nm"
                )
            for axis, length in zip("xyz", box.lengths):
                if length < 2 * (cut + cfg.skin):
                    errors.append(f"min-image: box {axis} {length:g} nm < 2*(cutoff + skin) = {2 * (cut + cfg.skin):g} nm")
            if cfg.workers > 1 and cfg.skin > 0 and cfg.molecule_radius > 0:
                width = halo_width(topology, cfg.skin, cfg.molecule_radius)
                if box.lx / cfg.workers < width:
                    errors.append(
                        f"slab-width: {cfg.workers} workers give {box.lx / cfg.workers:g} nm slabs, below the "
                        f"{width:g} nm halo; at most {max_workers(box, width)} workers fit"
                    )
    return errors


def load_run(path, workers=None, seed=None):
    """Load and validate a run; returns (config, topology, state, transition)."""
    cfg = load_config(path)
    if workers is not None:
        cfg.workers = workers
    if seed is not None:
        cfg.seed = seed
    errors = validate_config(cfg)
    topology = None
    if Path(cfg.topology).is_file():
        try:
            topology = load_topology(cfg.topology)
        except TopologyError as exc:
            errors.append(f"topology: {exc}")
    if topology is not None:
        errors += [e for e in validate_config(cfg, topology) if e not in errors]
    vt = TransitionPotential.zero()
    if cfg.transition_table and Path(cfg.transition_table).is_file():
        try:
            vt = TransitionPotential.load(cfg.transition_table)
        except TransitionTableError as exc:
            errors.append(f"transition-table: {exc}")
    state = None
    if topology is not None and Path(cfg.coordinates).is_file():
        try:
            frame = read_xyz(cfg.coordinates)[-1]
        except ValueError as exc:
            errors.append(f"coordinates: {exc}")
        else:
            if frame.positions.shape[0] != topology.n_sites:
                errors.append(
                    f"coordinates: {frame.positions.shape[0]} sites in {cfg.coordinates}, "
                    f"topology has {topology.n_sites}"
                )
            else:
                vel = frame.velocities
                if vel is None:
                    vel = maxwell_boltzmann(topology.site_mass, cfg.ref_temperature, np.random.default_rng(cfg.seed))
                if errors == [] or all(not e.startswith("box-positive") for e in errors):
                    try:
                        state = SimState(cfg.periodic_box.wrap(frame.positions), vel, cfg.periodic_box,
                                         frame.step, frame.time)
                    except ValueError as exc:
                        errors.append(f"coordinates: {exc}")
    if errors:
        raise ConfigError(errors)
    return cfg, topology, state, vt


# ----------------------------------------------------------------------------
# XYZ


@dataclass
class XyzFrame:
    elements: list
    positions: np.ndarray
    velocities: np.ndarray = None
    step: int = 0
    time: float = 0.0
    box: tuple = None


def write_xyz_frame(stream, positions, elements, step=0, time=0.0, box=None, velocities=None, digits=9):
    """One XYZ frame in nm: count line, comment line, ``element x y z [vx vy vz]``."""
    n = positions.shape[0]
    comment = f"step={int(step)} time={float(time)!r}"
    if box is not None:
        comment += " box=" + ",".join(repr(float(v)) for v in box)
    lines = [str(n), comment]
    fmt = f"{{:.{digits}g}}"
    for i in range(n):
        row = [elements[i]] + [fmt.format(v) for v in positions[i]]
        if velocities is not None:
            row += [fmt.format(v) for v in velocities[i]]
        lines.append(" ".join(row))
    stream.write("\n".join(lines) + "\n")


def write_trajectory(state, stream, elements):
    write_xyz_frame(stream, state.positions, elements, state.step, state.time, state.box.lengths.tolist())


def write_coordinates(path, state, elements, velocities=True):
    """Full-precision coordinates (and velocities), readable as initial input.

    Without velocities, :func:`load_run` draws Maxwell-Boltzmann velocities
    from the configured seed.
    """
    with open(path, "w") as fh:
        write_xyz_frame(fh, state.positions, elements, state.step, state.time, state.box.lengths.tolist(),
                        state.velocities if velocities else None, digits=17)


def _parse_comment(line):
    out = {}
    for tok in line.split():
        if "=" in tok:
            k, v = tok.split("=", 1)
            out[k] = v
    return out


def read_xyz(path):
    frames = []
    with open(path) as fh:
        lines = fh.read().splitlines()
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        try:
            n = int(lines[i].strip())
        except ValueError:
            raise ValueError(f"{path}:{i + 1}: expected a site count, got {lines[i]!r}") from None
        if i + 2 + n > len(lines):
            raise ValueError(f"{path}:{i + 1}: frame truncated ({n} sites announced)")
        meta = _parse_comment(lines[i + 1])
        rows = [lines[i + 2 + k].split() for k in range(n)]
        ncol = {len(r) for r in rows}
        if not ncol <= {4, 7} or len(ncol) > 1:
            raise ValueError(f"{path}:{i + 3}: rows need 4 or 7 columns")
        elements = [r[0] for r in rows]
        try:
            data = np.array([[float(x) for x in r[1:]] for r in rows]).reshape(n, -1)
        except ValueError:
            raise ValueError(f"{path}:{i + 3}: non-numeric coordinate") from None
        box = tuple(float(v) for v in meta["box"].split(",")) if "box" in meta else None
        frames.append(XyzFrame(
            elements, data[:, :3].copy(), data[:, 3:6].copy() if data.shape[1] == 6 else None,
            int(meta.get("step", 0)), float(meta.get("time", 0.0)), box,
        ))
        i += 2 + n
    if not frames:
        raise ValueError(f"{path}: no frames")
    return frames


# ----------------------------------------------------------------------------
# observables


@dataclass
class ObservableRecord:
    step: int
    time: float  # ps
    temperature: float  # K
    potential: float  # V^m, kJ/mol
    fg_nonbonded: float
    cg_nonbonded: float
    fg_bonded: float
    cg_bonded: float
    transition: float
    kinetic: float
    total_energy: float
    n_fg: int
    n_hybrid: int
    n_cg: int

    @classmethod
    def from_reduced(cls, step, time, values, n_constraints=0):
        comps = ("fg_nonbonded", "cg_nonbonded", "fg_bonded", "cg_bonded", "transition")
        pot = sum(values[c] for c in comps)
        ndf = 3 * values["n_sites"] - n_constraints
        return cls(step, time, 2.0 * values["kinetic"] / (ndf * KB), pot,
                   *(values[c] for c in comps), values["kinetic"], pot + values["kinetic"],
                   values["n_fg"], values["n_hybrid"], values["n_cg"])


OBSERVABLE_COLUMNS = [f.name for f in fields(ObservableRecord)]


class ObservableWriter:
    def __init__(self, stream):
        self.stream = stream
        self.writer = csv.writer(stream, lineterminator="\n")
        self.writer.writerow(OBSERVABLE_COLUMNS)

    def write(self, record):
        self.writer.writerow([_fmt(getattr(record, c)) for c in OBSERVABLE_COLUMNS])


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_observables(record, stream, header=False):
    w = csv.writer(stream, lineterminator="\n")
    if header:
        w.writerow(OBSERVABLE_COLUMNS)
    w.writerow([_fmt(getattr(record, c)) for c in OBSERVABLE_COLUMNS])


def read_observables(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != OBSERVABLE_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        out = []
        for row in reader:
            kw = {}
            for f in fields(ObservableRecord):
                kw[f.name] = int(row[f.name]) if f.type is int or f.type == "int" else float(row[f.name])
            out.append(ObservableRecord(**kw))
    return out
