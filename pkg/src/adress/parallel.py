"""Slab domain decomposition along x with message-passing workers.

Each worker owns the whole molecules whose COM lies in its slab
``[x_lo, x_hi)``. Per step it runs, in lockstep with the others::

    send/receive halos -> forces -> integrate owned sites -> migrate

Workers share nothing mutable: positions cross slab boundaries only as
:class:`HaloMessage` values dropped into the neighbor's inbox queue. The
workers are threads; the compiled kernels release the GIL so the force and
integration phases run concurrently. A message can be packed into bytes
(:meth:`HaloMessage.to_bytes`), which is all a multi-process transport
would need.
"""

import logging
import queue
import struct
import threading
import time
from dataclasses import dataclass

import numpy as np

from .forcefields import ForceFieldError
from .integrator import IntegrationError, integrate_sites
from .multiscale import MultiscaleCalculator
from .state import SimState
from .topology import molecule_coms

log = logging.getLogger(__name__)

HALO = 0
MIGRATE = 1
ABORT = 2
_KIND_NAMES = {HALO: "halo", MIGRATE: "migrate", ABORT: "abort"}


class DecompositionError(ValueError):
    pass


class ProtocolError(RuntimeError):
    pass


class _Aborted(Exception):
    pass


def halo_width(topology, skin, molecule_radius):
    """COM distance beyond which no molecule can interact with a slab."""
    return max(topology.fg_cutoff + 2.0 * molecule_radius, topology.cg_cutoff) + skin


def max_workers(box, width):
    return max(1, int(np.floor(box.lx / width)))


@dataclass
class HaloMessage:
    step: int
    sender: int
    kind: int
    mol_ids: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray = None

    # step, sender, kind, n_molecules, n_sites, has_velocities
    HEADER = struct.Struct("<qiiqqi")

    @property
    def n_records(self):
        return int(self.mol_ids.shape[0])

    def header(self):
        return self.HEADER.pack(self.step, self.sender, self.kind, self.n_records,
                                int(self.positions.shape[0]), 0 if self.velocities is None else 1)

    def to_bytes(self):
        parts = [self.header(), self.mol_ids.astype("<i8").tobytes(), self.positions.astype("<f8").tobytes()]
        if self.velocities is not None:
            parts.append(self.velocities.astype("<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data):
        if len(data) < cls.HEADER.size:
            raise ProtocolError(f"message of {len(data)} bytes is shorter than its header")
        step, sender, kind, n_mol, n_sites, has_vel = cls.HEADER.unpack_from(data)
        expected = cls.HEADER.size + 8 * n_mol + 24 * n_sites * (2 if has_vel else 1)
        if len(data) != expected:
            raise ProtocolError(f"message length {len(data)} does not match header ({expected} bytes)")
        off = cls.HEADER.size
        ids = np.frombuffer(data, "<i8", n_mol, off).astype(np.int64)
        off += 8 * n_mol
        pos = np.frombuffer(data, "<f8", 3 * n_sites, off).reshape(n_sites, 3).copy()
        off += 24 * n_sites
        vel = None
        if has_vel:
            vel = np.frombuffer(data, "<f8", 3 * n_sites, off).reshape(n_sites, 3).copy()
        return cls(step, sender, kind, ids, pos, vel)

    @property
    def nbytes(self):
        n = self.HEADER.size + 8 * self.n_records + 24 * self.positions.shape[0]
        return n + (0 if self.velocities is None else 24 * self.positions.shape[0])


def _site_rows(topology, mol_ids):
    """Concatenated global site indices of ``mol_ids`` (in that order)."""
    if len(mol_ids) == 0:
        return np.zeros(0, dtype=np.int64)
    n = topology.mol_nsites[mol_ids]
    starts = topology.mol_start[mol_ids]
    offs = np.repeat(np.cumsum(n) - n, n)
    return np.repeat(starts, n) + (np.arange(int(n.sum())) - offs)


def _block_offsets(topology, mol_ids):
    n = topology.mol_nsites[mol_ids]
    off = np.zeros(len(mol_ids), dtype=np.int64)
    if len(mol_ids):
        np.cumsum(n[:-1], out=off[1:])
    return off, n


def _gather_blocks(topology, mol_ids, arr, order):
    """Rows of ``arr`` (blocks per molecule, in ``mol_ids`` order) reordered by ``order``."""
    off, n = _block_offsets(topology, mol_ids)
    n_o = n[order]
    rows = np.repeat(off[order], n_o) + (np.arange(int(n_o.sum())) - np.repeat(np.cumsum(n_o) - n_o, n_o))
    return arr[rows]


class WorkerSlab:
    """One worker's slab, owned molecules and halo copies."""

    def __init__(self, worker_id, n_workers, x_lo, x_hi, topology, box, width):
        self.worker_id = worker_id
        self.n_workers = n_workers
        self.x_lo = x_lo
        self.x_hi = x_hi
        self.topology = topology
        self.box = box
        self.halo_width = width
        self.owned = np.zeros(0, dtype=np.int64)
        self.positions = np.zeros((0, 3))
        self.velocities = np.zeros((0, 3))
        self.halo_ids = np.zeros(0, dtype=np.int64)
        self.halo_positions = np.zeros((0, 3))
        self.inbox = queue.Queue()
        self._pending = []
        self.bytes_sent = 0
        self.messages_sent = 0
        self.halo_changed = True

    @property
    def left(self):
        return (self.worker_id - 1) % self.n_workers

    @property
    def right(self):
        return (self.worker_id + 1) % self.n_workers

    def set_owned(self, mol_ids, positions, velocities):
        order = np.argsort(mol_ids, kind="stable")
        self.positions = np.ascontiguousarray(_gather_blocks(self.topology, mol_ids, positions, order))
        self.velocities = np.ascontiguousarray(_gather_blocks(self.topology, mol_ids, velocities, order))
        self.owned = np.asarray(mol_ids, dtype=np.int64)[order]

    def owned_coms(self):
        off, n = _block_offsets(self.topology, self.owned)
        mass = self.topology.site_mass[_site_rows(self.topology, self.owned)]
        com, _ = molecule_coms(self.positions, off, n, mass, self.box.lengths)
        return com

    def slab_of(self, x):
        w = np.floor(np.asarray(x) / (self.box.lx / self.n_workers)).astype(np.int64)
        return np.clip(w, 0, self.n_workers - 1)

    # -- messaging ----------------------------------------------------------

    def post(self, msg):
        self.inbox.put(msg)

    def _send(self, peers, target, msg):
        self.bytes_sent += msg.nbytes
        self.messages_sent += 1
        log.debug("worker %d -> %d %s step %d: %d molecules, %d bytes", self.worker_id, target,
                  _KIND_NAMES[msg.kind], msg.step, msg.n_records, msg.nbytes)
        peers[target].post(msg)

    def _recv(self, kind, step, count, timeout=None):
        got = []
        keep = []
        for msg in self._pending:
            (got if (msg.kind, msg.step) == (kind, step) else keep).append(msg)
        self._pending = keep
        while len(got) < count:
            try:
                msg = self.inbox.get(timeout=timeout)
            except queue.Empty:
                raise ProtocolError(f"worker {self.worker_id}: timed out waiting for {_KIND_NAMES[kind]} step {step}")
            if msg.kind == ABORT:
                raise _Aborted()
            if msg.step < step or msg.step > step + 1:
                raise ProtocolError(
                    f"worker {self.worker_id} at step {step} got {_KIND_NAMES[msg.kind]} message "
                    f"for step {msg.step} from worker {msg.sender}"
                )
            if (msg.kind, msg.step) == (kind, step):
                got.append(msg)
            else:
                self._pending.append(msg)
        return sorted(got, key=lambda m: m.sender)

    def _subset(self, mask):
        ids = self.owned[mask]
        off, n = _block_offsets(self.topology, self.owned)
        rows = np.repeat(off[mask], n[mask]) + (
            np.arange(int(n[mask].sum())) - np.repeat(np.cumsum(n[mask]) - n[mask], n[mask])
        )
        return ids, rows

    def send_halos(self, step, peers, coms=None):
        if self.n_workers == 1:
            return
        if coms is None:
            coms = self.owned_coms()
        lx = self.box.lx
        x = coms[:, 0]
        near_lo = np.mod(x - self.x_lo, lx) < self.halo_width
        near_hi = np.mod(self.x_hi - x, lx) <= self.halo_width
        for target, mask in ((self.left, near_lo), (self.right, near_hi)):
            ids, rows = self._subset(mask)
            self._send(peers, target, HaloMessage(step, self.worker_id, HALO, ids.copy(), self.positions[rows].copy()))

    def receive_halos(self, step, timeout=None):
        if self.n_workers == 1:
            if self.halo_ids.size:
                self.halo_changed = True
            self.halo_ids = np.zeros(0, dtype=np.int64)
            self.halo_positions = np.zeros((0, 3))
            return
        msgs = self._recv(HALO, step, 2, timeout)
        ids = np.concatenate([m.mol_ids for m in msgs])
        pos = np.concatenate([m.positions for m in msgs]) if ids.size else np.zeros((0, 3))
        uniq, first = np.unique(ids, return_index=True)
        new_pos = _gather_blocks(self.topology, ids, pos, first)
        self.halo_changed = not np.array_equal(uniq, self.halo_ids)
        self.halo_ids = uniq
        self.halo_positions = np.ascontiguousarray(new_pos)

    def local_view(self):
        """Sorted visible molecule ids, owned mask and matching site positions."""
        ids = np.concatenate([self.owned, self.halo_ids])
        if np.intersect1d(self.owned, self.halo_ids).size:
            raise ProtocolError(f"worker {self.worker_id}: a molecule is both owned and in the halo")
        pos = np.concatenate([self.positions, self.halo_positions])
        order = np.argsort(ids, kind="stable")
        owned = np.zeros(ids.shape[0], dtype=np.bool_)
        owned[: self.owned.shape[0]] = True
        return ids[order], owned[order], np.ascontiguousarray(_gather_blocks(self.topology, ids, pos, order))

    def send_migrations(self, step, peers, coms=None):
        if self.n_workers == 1:
            return
        if coms is None:
            coms = self.owned_coms()
        dest = self.slab_of(coms[:, 0])
        bad = (dest != self.worker_id) & (dest != self.left) & (dest != self.right)
        if bad.any():
            m = int(self.owned[np.flatnonzero(bad)[0]])
            raise DecompositionError(
                f"molecule {m} jumped more than one slab in one step (worker {self.worker_id} -> "
                f"{int(dest[bad][0])}); reduce dt or use fewer workers"
            )
        leaving = dest != self.worker_id
        targets = (self.left, self.right)
        for side, target in enumerate(targets):
            if self.left == self.right:
                mask = leaving if side == 0 else np.zeros_like(leaving)
            else:
                mask = dest == target
                mask &= leaving
            ids, rows = self._subset(mask)
            self._send(peers, target, HaloMessage(step, self.worker_id, MIGRATE, ids.copy(),
                                                  self.positions[rows].copy(), self.velocities[rows].copy()))
        if leaving.any():
            ids, rows = self._subset(~leaving)
            self.owned, self.positions, self.velocities = ids, self.positions[rows], self.velocities[rows]

    def receive_migrations(self, step, timeout=None):
        if self.n_workers == 1:
            return
        msgs = self._recv(MIGRATE, step, 2, timeout)
        incoming = [m for m in msgs if m.n_records]
        if not incoming:
            return
        ids = np.concatenate([self.owned] + [m.mol_ids for m in incoming])
        pos = np.concatenate([self.positions] + [m.positions for m in incoming])
        vel = np.concatenate([self.velocities] + [m.velocities for m in incoming])
        if np.unique(ids).size != ids.size:
            raise ProtocolError(f"worker {self.worker_id}: duplicated molecule after migration")
        self.set_owned(ids, pos, vel)


def decompose(box, n_workers, topology, state, width):
    """Equal-width x slabs, molecules assigned whole by COM."""
    if n_workers < 1:
        raise DecompositionError("need at least one worker")
    slab = box.lx / n_workers
    if n_workers > 1 and slab < width:
        raise DecompositionError(
            f"{n_workers} workers give {slab:.3f} nm slabs, narrower than the {width:.3f} nm halo; "
            f"at most {max_workers(box, width)} workers fit this box"
        )
    slabs = [WorkerSlab(w, n_workers, w * slab, box.lx if w == n_workers - 1 else (w + 1) * slab,
                        topology, box, width) for w in range(n_workers)]
    pos = box.wrap(state.positions)
    com, _ = molecule_coms(pos, topology.mol_start, topology.mol_nsites, topology.site_mass, box.lengths)
    owner = slabs[0].slab_of(com[:, 0])
    for s in slabs:
        ids = np.flatnonzero(owner == s.worker_id)
        rows = _site_rows(topology, ids)
        s.set_owned(ids, pos[rows], state.velocities[rows])
    return slabs


def halo_exchange(slabs, step):
    """Run one complete halo exchange over all slabs (serial driver)."""
    for s in slabs:
        s.send_halos(step, slabs)
    for s in slabs:
        s.receive_halos(step, timeout=0)


def migrate(slabs, step):
    for s in slabs:
        s.send_migrations(step, slabs)
    for s in slabs:
        s.receive_migrations(step, timeout=0)


def reduce_observables(partials, n_workers=None):
    """Sum per-worker dicts of scalars in ascending worker id order.

    ``partials`` maps worker id -> {name: value}.
    """
    if n_workers is None:
        n_workers = len(partials)
    missing = [w for w in range(n_workers) if w not in partials]
    if missing:
        raise ProtocolError(f"missing observable contributions from workers {missing}")
    keys = list(partials[0])
    out = {}
    for k in keys:
        acc = 0
        for w in range(n_workers):
            acc = acc + partials[w][k]
        out[k] = acc
    return out


def gather_state(slabs, topology, box, step, time_):
    pos = np.empty((topology.n_sites, 3))
    vel = np.empty((topology.n_sites, 3))
    for s in slabs:
        rows = _site_rows(topology, s.owned)
        pos[rows] = s.positions
        vel[rows] = s.velocities
    return SimState(pos, vel, box, step, time_)


@dataclass
class StepObservables:
    step: int
    time: float
    values: dict  # reduced scalars
    positions: np.ndarray = None  # full frame when requested


class ParallelEngine:
    """Bulk-synchronous multi-worker driver with a single I/O coordinator."""

    def __init__(self, topology, box, geom, params, n_workers=1, vt=None, skin=0.1, molecule_radius=0.3,
                 timeout=600.0):
        self.topology = topology
        self.box = box
        self.geom = geom
        self.params = params
        self.n_workers = n_workers
        self.vt = vt
        self.skin = skin
        self.molecule_radius = molecule_radius
        self.width = halo_width(topology, skin, molecule_radius)
        self.timeout = timeout
        self.timings = []
        self.message_stats = {}

    def run(self, state, n_steps, observe_every=1, frame_every=0, on_observables=None, timing=False):
        """Advance ``state`` by ``n_steps``; returns the final gathered state.

        ``on_observables(StepObservables)`` is called on the coordinator
        thread every ``observe_every`` steps (and carries positions every
        ``frame_every`` steps).
        """
        slabs = decompose(self.box, self.n_workers, self.topology, state, self.width)
        coord = queue.Queue()
        step0 = state.step
        errors = []

        def worker_main(slab):
            try:
                self._worker_loop(slab, slabs, coord, step0, n_steps, observe_every, frame_every, timing)
            except _Aborted:
                pass
            except BaseException as exc:  # propagate to the coordinator
                errors.append(exc)
                coord.put(("error", slab.worker_id, exc))
                for other in slabs:
                    other.post(HaloMessage(-1, slab.worker_id, ABORT, np.zeros(0, dtype=np.int64), np.zeros((0, 3))))

        threads = [threading.Thread(target=worker_main, args=(s,), name=f"adress-worker-{s.worker_id}", daemon=True)
                   for s in slabs]
        for t in threads:
            t.start()
        try:
            self._coordinate(coord, step0, n_steps, observe_every, frame_every, on_observables)
        finally:
            for t in threads:
                t.join()
        if errors:
            raise errors[0]
        self.message_stats = {s.worker_id: (s.messages_sent, s.bytes_sent) for s in slabs}
        return gather_state(slabs, self.topology, self.box, step0 + n_steps, (step0 + n_steps) * self.params.dt)

    def _coordinate(self, coord, step0, n_steps, observe_every, frame_every, on_observables):
        pending = {}
        done = 0
        while done < self.n_workers:
            item = coord.get()
            tag = item[0]
            if tag == "error":
                return
            if tag == "done":
                _, wid, rows = item
                self.timings.extend(rows)
                done += 1
                continue
            _, step, wid, partial, frame = item
            bucket = pending.setdefault(step, {})
            bucket[wid] = (partial, frame)
            if len(bucket) == self.n_workers:
                del pending[step]
                values = reduce_observables({w: p for w, (p, _) in bucket.items()}, self.n_workers)
                positions = None
                if any(f is not None for _, f in bucket.values()):
                    positions = np.empty((self.topology.n_sites, 3))
                    for _, (ids, pos) in bucket.values():
                        positions[_site_rows(self.topology, ids)] = pos
                if on_observables is not None:
                    on_observables(StepObservables(step, step * self.params.dt, values, positions))

    def _worker_loop(self, slab, slabs, coord, step0, n_steps, observe_every, frame_every, timing):
        calc = MultiscaleCalculator(self.topology, self.box, self.geom, self.vt, self.skin)
        top = self.topology
        L = self.box.lengths
        timeout = self.timeout
        rows_log = []
        clock = time.perf_counter
        for step in range(step0, step0 + n_steps):
            t0 = clock()
            slab.send_halos(step, slabs)
            slab.receive_halos(step, timeout)
            t1 = clock()
            mols, owned, pos = slab.local_view()
            res = calc.compute(mols, owned, pos)
            if res.max_site_radius > self.molecule_radius:
                raise DecompositionError(
                    f"a molecule extends {res.max_site_radius:.3f} nm from its COM, beyond the "
                    f"molecule_radius bound {self.molecule_radius} nm used for the halo width"
                )
            if res.min_pair_distance <= 0.0:
                raise ForceFieldError("overlapping sites (zero pair distance)")
            if len(top.cg_bond_idx):
                self._check_cg_bonds(mols, owned)
            forces = res.forces.total
            t2 = clock()
            gids = _site_rows(top, slab.owned)
            mass = top.site_mass[gids]
            frame = None
            observe = observe_every and (step - step0) % observe_every == 0
            if observe and frame_every and (step - step0) % frame_every == 0:
                frame = (slab.owned.copy(), slab.positions.copy())
            try:
                ke = integrate_sites(slab.positions, slab.velocities, forces, mass, gids.astype(np.uint64),
                                     step, self.params, L)
            except IntegrationError:
                raise
            t3 = clock()
            slab.send_migrations(step, slabs)
            slab.receive_migrations(step, timeout)
            t4 = clock()
            if observe:
                e = res.energy
                counts = np.bincount(res.regions, minlength=3)
                partial = {
                    "fg_nonbonded": e.fg_nonbonded, "cg_nonbonded": e.cg_nonbonded, "fg_bonded": e.fg_bonded,
                    "cg_bonded": e.cg_bonded, "transition": e.transition, "kinetic": ke,
                    "n_fg": int(counts[0]), "n_hybrid": int(counts[1]), "n_cg": int(counts[2]),
                    "n_sites": int(gids.shape[0]),
                }
                coord.put(("obs", step, slab.worker_id, partial, frame))
            if timing:
                w = slab.worker_id
                rows_log += [(step, w, "halo", t1 - t0), (step, w, "force", t2 - t1),
                             (step, w, "integrate", t3 - t2), (step, w, "migrate", t4 - t3)]
        coord.put(("done", slab.worker_id, rows_log))

    def _check_cg_bonds(self, mols, owned):
        present = set(mols.tolist())
        own = set(mols[owned].tolist())
        for i, j in self.topology.cg_bond_idx.tolist():
            if (i in own and j not in present) or (j in own and i not in present):
                raise DecompositionError(f"CG bond {i}-{j} spans beyond the halo")
