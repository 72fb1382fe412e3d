"""Boundary-modified operator-string sampler for region density matrices.

The partition function being sampled keeps imaginary time periodic on the
environment B and cuts it open on region A: worldlines of A sites carry
free edge states at time 0 (the ket side) and beta (the bra side). The
relative frequency of an edge-state pair is the matrix element estimator:

    rho_A(bra, ket)  ~  N(bra, ket) / N_total.

Updates are the standard two-step sweep: a diagonal insert/remove pass at
fixed string length, then a deterministic operator-loop pass in which
loops either close, wrap around the periodic environment lines, or
terminate on the open A edges (flipping the edge spins they touch).
Magnetization of the two edge states matches on every valid
configuration; the sampler checks this on each snapshot.
"""

from __future__ import annotations

import logging
import struct
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .accumulator import RdmAccumulator, RunMetadata
from .errors import CheckpointError, GeometryError
from .lattice import Bipartition, LatticeSpec, RotationMask, rotation_mask

log = logging.getLogger(__name__)

_MAGIC = b"SSERDM1"
_VERSION = 1
_THERM_CHUNK = 20_000


@dataclass(frozen=True)
class BoundarySnapshot:
    """One sampled edge-state pair of region A.

    ``c_a`` is the bra-side key (time beta), ``c_a_prime`` the ket side
    (time 0). ``weight_sign`` is always +1 for the sign-free couplings this
    sampler accepts; the field exists so downstream schemas stay stable.
    """

    c_a: int
    c_a_prime: int
    weight_sign: int = 1


@dataclass
class SimState:
    """Complete sampler state; everything needed to resume bit-exactly."""

    lattice: LatticeSpec
    bipartition: Bipartition
    mask: RotationMask
    beta: float
    seed: int
    spins: np.ndarray
    bra: np.ndarray
    ops: np.ndarray
    n_ops: int
    rng: np.ndarray
    n_therm_done: int = 0
    n_samples_done: int = 0
    stats: np.ndarray = field(default_factory=lambda: np.zeros(K.STAT_SIZE, np.int64))

    def __post_init__(self):
        i, j, coupling = self.lattice.bond_arrays()
        self._bond_i = i.astype(np.int64)
        self._bond_j = j.astype(np.int64)
        nb = self.lattice.n_bonds
        self._beta_w = self.beta * nb * np.abs(coupling) / 2.0
        self._need_anti = (coupling > 0).astype(np.int8)
        self._rule_flip = np.where(coupling > 0, 1, 3).astype(np.int64)
        in_a = np.zeros(self.lattice.n_sites, np.int8)
        for s in self.bipartition.a_sites:
            in_a[s] = 1
        self._in_a = in_a
        self._a_sites = np.asarray(self.bipartition.a_sites, np.int64)
        self._work = np.empty(self.lattice.n_sites, np.int8)

    @property
    def n_slots(self) -> int:
        return self.ops.size

    def _step_cap(self) -> int:
        return 16 * self.n_slots + 4096

    def metadata(self) -> RunMetadata:
        return RunMetadata.for_run(self.lattice, self.bipartition, self.beta, (self.seed,))


@dataclass(frozen=True)
class RunStats:
    """Sampling diagnostics for one chain."""

    seed: int
    n_therm: int
    n_samples: int
    n_slots: int
    mean_n_ops: float
    max_n_ops: int
    insert_rate: float
    remove_rate: float
    loops_per_sweep: float
    steps_per_sweep: float
    edge_loop_fraction: float
    wall_seconds: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def init_simulation(
    lattice: LatticeSpec,
    bipartition: Bipartition,
    beta: float,
    seed: int,
    mask: RotationMask | None = None,
    m0: int | None = None,
) -> SimState:
    """Set up a chain: random edge states, empty operator string.

    The rotation mask is constructed (and the coupling pattern thereby
    checked to be sign-free) even though the kernels only consume coupling
    signs; a frustrated pattern raises before any sampling happens.
    """
    if beta <= 0:
        raise GeometryError(f"beta must be positive, got {beta}")
    if mask is None:
        mask = rotation_mask(lattice)
    if bipartition.n_a > 31:
        raise GeometryError("region keys are packed in pairs into int64; |A| <= 31")
    rng = K.seed_state(seed)
    spins = np.empty(lattice.n_sites, np.int8)
    K.random_spins(rng, spins)
    bra = spins.copy()
    n_slots = m0 if m0 is not None else max(20, lattice.n_bonds)
    ops = np.full(n_slots, -1, np.int64)
    return SimState(lattice, bipartition, mask, float(beta), int(seed), spins, bra, ops, 0, rng)


def diagonal_update(state: SimState) -> None:
    """One insert/remove pass over the operator string (fixed length)."""
    state.n_ops = K._diagonal_update(
        state.spins, state._work, state.ops, state.n_ops, state._beta_w,
        state._bond_i, state._bond_j, state._need_anti, state.rng, state.stats,
    )


def loop_update(state: SimState) -> None:
    """One deterministic loop pass, including free-line and edge flips."""
    n4 = 4 * state.n_slots
    X = np.empty(n4, np.int64)
    wrapflag = np.empty(n4, np.uint8)
    visited = np.empty(n4, np.uint8)
    vfirst = np.empty(state.lattice.n_sites, np.int64)
    vlast = np.empty(state.lattice.n_sites, np.int64)
    K._build_links(state.ops, state._bond_i, state._bond_j, state._in_a, X, wrapflag, vfirst, vlast)
    err = K._loop_update(
        state.ops, state._rule_flip, X, wrapflag, visited, vfirst,
        state.spins, state.bra, state._in_a, state._bond_i, state._bond_j,
        state.rng, state._step_cap(), state.stats,
    )
    if err != 0:
        raise RuntimeError("loop traversal exceeded its step cap; sampler state is corrupt")


def sweep_and_snapshot(state: SimState) -> BoundarySnapshot:
    """Run one full sweep and read off the edge-state pair."""
    n, err = K._sweep_once(
        state.spins, state.bra, state._work, state.ops, state.n_ops, state._beta_w,
        state._bond_i, state._bond_j, state._need_anti, state._rule_flip,
        state._in_a, state.rng, state._step_cap(), state.stats,
    )
    if err != 0:
        raise RuntimeError("loop traversal exceeded its step cap; sampler state is corrupt")
    state.n_ops = n
    c_ket = _pack(state.spins, state._a_sites)
    c_bra = _pack(state.bra, state._a_sites)
    return BoundarySnapshot(c_a=c_bra, c_a_prime=c_ket)


def _pack(values: np.ndarray, a_sites: np.ndarray) -> int:
    key = 0
    for t, s in enumerate(a_sites):
        key |= int(values[s]) << t
    return key


def thermalize(state: SimState, n_sweeps: int) -> None:
    """Equilibrate, letting the operator string grow to its working length."""
    done = 0
    while done < n_sweeps:
        chunk = min(_THERM_CHUNK, n_sweeps - done)
        ops, n, err = K._thermalize(
            state.spins, state.bra, state._work, state.ops, state.n_ops,
            state._beta_w, state._bond_i, state._bond_j, state._need_anti,
            state._rule_flip, state._in_a, chunk, state.rng, state._step_cap(), state.stats,
        )
        state.ops = ops
        state.n_ops = n
        if err != 0:
            raise RuntimeError("loop traversal exceeded its step cap during thermalization")
        done += chunk
    state.n_therm_done += n_sweeps
    log.info(
        "thermalized %d sweeps: n_ops=%d, slots=%d", n_sweeps, state.n_ops, state.n_slots
    )


def run(
    state: SimState,
    n_therm: int,
    n_samples: int,
    accumulator: RdmAccumulator | None = None,
    n_bins: int = 32,
    checkpoint_path: str | None = None,
    checkpoint_every_bins: int = 0,
) -> tuple[RdmAccumulator, RunStats]:
    """Thermalize then sample ``n_samples`` sweeps into binned counts.

    Every sweep contributes one snapshot. ``n_samples`` is rounded down to
    a multiple of ``n_bins`` so bins stay equal-sized for the jackknife.
    Pass an existing accumulator to append further bins (e.g. to extend a
    restored chain).
    """
    if n_bins < 1:
        raise GeometryError(f"need at least one bin, got {n_bins}")
    bin_size = n_samples // n_bins
    if bin_size < 1:
        raise GeometryError(f"{n_samples} samples cannot fill {n_bins} bins")
    if bin_size * n_bins != n_samples:
        log.warning(
            "rounding %d samples down to %d (%d bins of %d)",
            n_samples, bin_size * n_bins, n_bins, bin_size,
        )
    t0 = time.perf_counter()
    stats0 = state.stats.copy()
    if n_therm > 0:
        thermalize(state, n_therm)
    if accumulator is None:
        accumulator = RdmAccumulator(state.metadata(), bin_size)
    n_sum = 0
    # start tables small; the kernel doubles them at 60% load
    cap = 1 << min(14, max(8, 2 * state.bipartition.n_a))
    for b in range(n_bins):
        keys = np.full(cap, -1, np.int64)
        vals = np.zeros(cap, np.int64)
        n, keys, vals, used, err = K._sample_bin(
            state.spins, state.bra, state._work, state.ops, state.n_ops,
            state._beta_w, state._bond_i, state._bond_j, state._need_anti,
            state._rule_flip, state._in_a, state._a_sites, bin_size,
            state.rng, state._step_cap(), state.stats, keys, vals, 0,
        )
        state.n_ops = n
        if err == 1:
            raise RuntimeError("loop traversal exceeded its step cap while sampling")
        if err == 2:
            raise RuntimeError(
                "edge states landed in different magnetization sectors; update logic is broken"
            )
        live = keys >= 0
        accumulator.record_bin_arrays(state.seed, keys[live], vals[live], bin_size)
        state.n_samples_done += bin_size
        n_sum += n
        if checkpoint_path and checkpoint_every_bins and (b + 1) % checkpoint_every_bins == 0:
            checkpoint(state, checkpoint_path)
    wall = time.perf_counter() - t0
    d = state.stats - stats0
    sweeps = max(1, int(d[K.STAT_SWEEPS]))
    stats = RunStats(
        seed=state.seed,
        n_therm=n_therm,
        n_samples=bin_size * n_bins,
        n_slots=state.n_slots,
        mean_n_ops=n_sum / max(1, n_bins),
        max_n_ops=int(state.stats[K.STAT_MAX_N]),
        insert_rate=float(d[K.STAT_INS]) / max(1, int(d[K.STAT_INS_TRY])),
        remove_rate=float(d[K.STAT_REM]) / max(1, int(d[K.STAT_REM_TRY])),
        loops_per_sweep=float(d[K.STAT_LOOPS]) / sweeps,
        steps_per_sweep=float(d[K.STAT_STEPS]) / sweeps,
        edge_loop_fraction=float(d[K.STAT_EDGE_LOOPS]) / max(1, int(d[K.STAT_LOOPS])),
        wall_seconds=wall,
    )
    log.info("sampled %d sweeps in %.1fs (%s)", bin_size * n_bins, wall, f"seed={state.seed}")
    return accumulator, stats


def run_chains(
    lattice: LatticeSpec,
    bipartition: Bipartition,
    beta: float,
    seeds: tuple[int, ...],
    n_therm: int,
    n_samples_per_chain: int,
    n_bins: int = 32,
) -> tuple[RdmAccumulator, list[RunStats]]:
    """Run independent chains sequentially and merge their accumulators."""
    from .accumulator import merge

    merged: RdmAccumulator | None = None
    all_stats = []
    for seed in seeds:
        state = init_simulation(lattice, bipartition, beta, seed)
        acc, stats = run(state, n_therm, n_samples_per_chain, n_bins=n_bins)
        all_stats.append(stats)
        merged = acc if merged is None else merge(merged, acc)
    assert merged is not None
    return merged, all_stats


def _pack_bytes(*chunks: bytes) -> bytes:
    return b"".join(chunks)


def checkpoint(state: SimState, path: str) -> None:
    """Write the full sampler state, little-endian, with a trailing CRC."""
    lat = state.lattice
    bp = state.bipartition
    parts = [
        struct.pack("<dqqqq", state.beta, state.seed, state.n_therm_done,
                    state.n_samples_done, state.n_ops),
        struct.pack("<II", lat.n_sites, lat.n_bonds),
    ]
    for i, j, coupling in lat.bonds:
        parts.append(struct.pack("<IId", i, j, coupling))
    geom = lat.geometry.encode()
    parts.append(struct.pack("<B", len(geom)) + geom)
    parts.append(struct.pack("<B", len(lat.shape)) + struct.pack(f"<{len(lat.shape)}I", *lat.shape))
    parts.append(struct.pack("<B", 1 if lat.periodic else 0))
    cut = bp.cut.encode()
    parts.append(struct.pack("<B", len(cut)) + cut)
    parts.append(struct.pack("<I", bp.n_a) + struct.pack(f"<{bp.n_a}i", *bp.a_sites))
    parts.append(struct.pack("<I", len(bp.b_sites)))
    if bp.b_sites:
        parts.append(struct.pack(f"<{len(bp.b_sites)}i", *bp.b_sites))
    if bp.block_shape is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<BII", 1, *bp.block_shape))
    parts.append(state.rng.astype("<u8").tobytes())
    parts.append(struct.pack("<I", state.spins.size) + state.spins.astype("<i1").tobytes())
    parts.append(state.bra.astype("<i1").tobytes())
    parts.append(struct.pack("<q", state.ops.size) + state.ops.astype("<i8").tobytes())
    parts.append(state.stats.astype("<i8").tobytes())
    payload = _pack_bytes(*parts)
    blob = _MAGIC + struct.pack("<B", _VERSION) + payload + struct.pack("<I", zlib.crc32(payload))
    with open(path, "wb") as fh:
        fh.write(blob)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint file is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def restore(path: str) -> SimState:
    """Rebuild a SimState from a checkpoint, bit-exact including the RNG."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_MAGIC) + 5 or blob[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path} is not a sampler checkpoint")
    version = blob[len(_MAGIC)]
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    payload = blob[len(_MAGIC) + 1 : -4]
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc:
        raise CheckpointError(f"{path} failed its integrity check")
    r = _Reader(payload)
    beta, seed, n_therm_done, n_samples_done, n_ops = r.unpack("<dqqqq")
    n_sites, n_bonds = r.unpack("<II")
    bonds = tuple(r.unpack("<IId") for _ in range(n_bonds))
    (glen,) = r.unpack("<B")
    geometry = r.take(glen).decode()
    (slen,) = r.unpack("<B")
    shape = r.unpack(f"<{slen}I") if slen else ()
    (periodic,) = r.unpack("<B")
    lattice = LatticeSpec(n_sites, bonds, geometry, shape, bool(periodic))
    (clen,) = r.unpack("<B")
    cut = r.take(clen).decode()
    (n_a,) = r.unpack("<I")
    a_sites = r.unpack(f"<{n_a}i")
    (n_b,) = r.unpack("<I")
    b_sites = r.unpack(f"<{n_b}i") if n_b else ()
    (has_block,) = r.unpack("<B")
    block_shape = tuple(r.unpack("<II")) if has_block else None
    bipartition = Bipartition(a_sites, b_sites, cut, block_shape)
    rng = np.frombuffer(r.take(32), "<u8").copy()
    (ns,) = r.unpack("<I")
    spins = np.frombuffer(r.take(ns), "<i1").copy()
    bra = np.frombuffer(r.take(ns), "<i1").copy()
    (n_slots,) = r.unpack("<q")
    ops = np.frombuffer(r.take(8 * n_slots), "<i8").copy()
    stats = np.frombuffer(r.take(8 * K.STAT_SIZE), "<i8").copy()
    if r.pos != len(payload):
        raise CheckpointError(f"{path} carries {len(payload) - r.pos} unexpected trailing bytes")
    state = SimState(
        lattice, bipartition, rotation_mask(lattice), beta, seed, spins, bra, ops,
        int(n_ops), rng, int(n_therm_done), int(n_samples_done), stats,
    )
    return state
