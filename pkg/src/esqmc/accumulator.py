"""Binned accumulation of sampled region-density-matrix elements.

Counts are keyed by the packed edge-state pair ``(bra << n_a) | ket`` and
kept per bin so that errors (and leave-one-out spectra) come from a
jackknife over time-ordered bins. Finalization symmetrizes counts across
transposed key pairs, normalizes by the integer diagonal trace, and keeps
the bins attached to the result for downstream resampling.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AccumulatorError
from .lattice import Bipartition, LatticeSpec

log = logging.getLogger(__name__)

MIN_ERROR_BINS = 32
ELEMENT_ERROR_MAX_REGION = 12


def _digest(lattice: LatticeSpec, bipartition: Bipartition, beta: float) -> str:
    h = hashlib.sha256()
    h.update(repr((lattice.n_sites, lattice.bonds, bipartition.a_sites, beta)).encode())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class RunMetadata:
    """Identity of a run; accumulators only merge when these match."""

    n_sites: int
    n_a: int
    beta: float
    digest: str
    seeds: tuple[int, ...]

    @classmethod
    def for_run(
        cls, lattice: LatticeSpec, bipartition: Bipartition, beta: float, seeds: tuple[int, ...]
    ) -> "RunMetadata":
        return cls(lattice.n_sites, bipartition.n_a, float(beta),
                   _digest(lattice, bipartition, beta), tuple(seeds))

    def compatible(self, other: "RunMetadata") -> bool:
        return (
            self.n_sites == other.n_sites
            and self.n_a == other.n_a
            and self.beta == other.beta
            and self.digest == other.digest
        )


@dataclass(frozen=True)
class _Bin:
    seed: int
    index: int
    keys: np.ndarray
    counts: np.ndarray
    n_snapshots: int


class RdmAccumulator:
    """Collects snapshot counts into equal-sized, time-ordered bins."""

    def __init__(self, meta: RunMetadata, bin_size: int):
        if bin_size < 1:
            raise AccumulatorError(f"bin size must be positive, got {bin_size}")
        self.meta = meta
        self.bin_size = int(bin_size)
        self.bins: list[_Bin] = []
        self._open: dict[int, int] = {}
        self._open_count = 0
        self._bin_counter: dict[int, int] = {}

    @property
    def n_a(self) -> int:
        return self.meta.n_a

    @property
    def n_samples(self) -> int:
        return sum(b.n_snapshots for b in self.bins) + self._open_count

    @property
    def n_bins(self) -> int:
        return len(self.bins)

    def record(self, snapshot) -> None:
        """Add one snapshot; the bin auto-closes at ``bin_size``."""
        key = (snapshot.c_a << self.n_a) | snapshot.c_a_prime
        self._open[key] = self._open.get(key, 0) + 1
        self._open_count += 1
        if self._open_count >= self.bin_size:
            self.close_bin()

    def close_bin(self) -> None:
        if self._open_count == 0:
            return
        keys = np.fromiter(self._open.keys(), np.int64, len(self._open))
        counts = np.fromiter(self._open.values(), np.int64, len(self._open))
        order = np.argsort(keys)
        seed = self.meta.seeds[0] if self.meta.seeds else 0
        self._append_bin(seed, keys[order], counts[order], self._open_count)
        self._open = {}
        self._open_count = 0

    def record_bin_arrays(
        self, seed: int, keys: np.ndarray, counts: np.ndarray, n_snapshots: int
    ) -> None:
        """Adopt one whole bin from the sampling kernel (unsorted ok)."""
        if self._open_count:
            raise AccumulatorError("cannot adopt a kernel bin while a streaming bin is open")
        order = np.argsort(keys)
        self._append_bin(seed, np.asarray(keys)[order], np.asarray(counts)[order], n_snapshots)

    def _append_bin(self, seed: int, keys: np.ndarray, counts: np.ndarray, n_snapshots: int):
        index = self._bin_counter.get(seed, 0)
        self._bin_counter[seed] = index + 1
        self.bins.append(_Bin(seed, index, keys, counts, int(n_snapshots)))

    def schmidt_gap_series(self) -> list[tuple[int, float]]:
        """Schmidt gap (two lowest entanglement levels) after each bin.

        A cheap convergence monitor: the gap settles long before deep
        spectral levels do. Uses cumulative counts up to each bin boundary.
        """
        out = []
        total: dict[int, int] = {}
        seen = 0
        for b in self.bins:
            for k, c in zip(b.keys.tolist(), b.counts.tolist()):
                total[k] = total.get(k, 0) + c
            seen += b.n_snapshots
            keys = np.fromiter(total.keys(), np.int64, len(total))
            counts = np.fromiter(total.values(), np.int64, len(total))
            lam = _top_two_eigenvalues(keys, counts, self.n_a)
            if lam is None:
                continue
            out.append((seen, float(-np.log(lam[1]) + np.log(lam[0]))))
        return out

    def finalize(self, require_errors: bool = True) -> "SampledRDM":
        """Symmetrize, normalize by the diagonal trace, attach errors.

        Element errors come from a leave-one-bin-out jackknife and need at
        least ``MIN_ERROR_BINS`` closed bins; they are only computed for
        regions of at most ``ELEMENT_ERROR_MAX_REGION`` sites (the error
        table is dense over observed keys).
        """
        self.close_bin()
        if not self.bins:
            raise AccumulatorError("no samples recorded")
        if require_errors and len(self.bins) < MIN_ERROR_BINS:
            raise AccumulatorError(
                f"{len(self.bins)} bins < {MIN_ERROR_BINS}; pass require_errors=False "
                "or record more bins"
            )
        n_a = self.n_a
        union = np.unique(np.concatenate([b.keys for b in self.bins]))
        union = np.unique(np.concatenate([union, _transpose_keys(union, n_a)]))
        perm = np.searchsorted(union, _transpose_keys(union, n_a))
        counts = np.zeros(union.size, np.float64)
        for b in self.bins:
            counts[np.searchsorted(union, b.keys)] += b.counts
        bad = _popcount(union >> n_a) != _popcount(union & ((1 << n_a) - 1))
        if counts[bad].any():
            raise AccumulatorError("counts found outside magnetization-matched blocks")
        sym = 0.5 * (counts + counts[perm])
        diag = (union >> n_a) == (union & ((1 << n_a) - 1))
        trace = counts[diag].sum()
        if trace <= 0:
            raise AccumulatorError("no diagonal counts; cannot normalize")
        probs = sym / trace
        errors = None
        can_do_errors = len(self.bins) >= MIN_ERROR_BINS and n_a <= ELEMENT_ERROR_MAX_REGION
        if can_do_errors:
            errors = self._jackknife_element_errors(union, perm, sym, trace, diag)
        return SampledRDM(
            n_a=n_a,
            keys=union,
            probs=probs,
            errors=errors,
            trace_count=int(round(trace)),
            n_samples=self.n_samples,
            meta=self.meta,
            bins=tuple(self.bins),
            _transpose_perm=perm,
            _sym_counts=sym,
        )

    def _jackknife_element_errors(self, union, perm, sym, trace, diag) -> np.ndarray:
        n_bins = len(self.bins)
        mean = np.zeros(union.size)
        sq = np.zeros(union.size)
        for b in self.bins:
            c = np.zeros(union.size)
            c[np.searchsorted(union, b.keys)] = b.counts
            c_sym = 0.5 * (c + c[perm])
            t_b = c[diag].sum()
            loo = (sym - c_sym) / (trace - t_b)
            mean += loo
            sq += loo * loo
        mean /= n_bins
        var = (n_bins - 1) / n_bins * (sq - n_bins * mean * mean)
        return np.sqrt(np.clip(var, 0.0, None))


def merge(a: RdmAccumulator, b: RdmAccumulator) -> RdmAccumulator:
    """Combine two accumulators over the same system into one.

    Key-wise commutative: bins are reordered canonically by (seed, index),
    so ``merge(a, b)`` and ``merge(b, a)`` finalize identically. Seed sets
    must not overlap (identical streams must not be double-counted).
    """
    if not a.meta.compatible(b.meta):
        raise AccumulatorError("accumulators describe different systems")
    if a.bin_size != b.bin_size:
        raise AccumulatorError(f"bin sizes differ: {a.bin_size} vs {b.bin_size}")
    overlap = set(a.meta.seeds) & set(b.meta.seeds)
    if overlap and a.bins and b.bins:
        raise AccumulatorError(f"seed(s) {sorted(overlap)} appear on both sides of merge")
    a.close_bin()
    b.close_bin()
    seeds = tuple(sorted(set(a.meta.seeds) | set(b.meta.seeds)))
    out = RdmAccumulator(replace(a.meta, seeds=seeds), a.bin_size)
    out.bins = sorted(a.bins + b.bins, key=lambda x: (x.seed, x.index))
    for bn in out.bins:
        out._bin_counter[bn.seed] = max(out._bin_counter.get(bn.seed, 0), bn.index + 1)
    return out


def _transpose_keys(keys: np.ndarray, n_a: int) -> np.ndarray:
    mask = (1 << n_a) - 1
    return ((keys & mask) << n_a) | (keys >> n_a)


def _popcount(x: np.ndarray) -> np.ndarray:
    x = x.copy()
    out = np.zeros_like(x)
    while x.any():
        out += x & 1
        x >>= 1
    return out


def _top_two_eigenvalues(keys, counts, n_a):
    diag = (keys >> n_a) == (keys & ((1 << n_a) - 1))
    trace = counts[diag].sum()
    if trace < 2:
        return None
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    rows = keys >> n_a
    cols = keys & ((1 << n_a) - 1)
    mat = sp.coo_matrix(
        (counts / trace, (rows, cols)), shape=(1 << n_a, 1 << n_a)
    ).tocsr()
    mat = 0.5 * (mat + mat.T)
    dim = 1 << n_a
    if dim <= 256:
        lam = np.linalg.eigvalsh(mat.toarray())
        lam = np.sort(lam)[::-1]
    else:
        try:
            lam = spla.eigsh(mat, k=2, which="LA", return_eigenvectors=False)
        except Exception:
            return None
        lam = np.sort(lam)[::-1]
    if lam.size < 2 or lam[1] <= 0:
        return None
    return lam[:2]


@dataclass(frozen=True)
class SampledRDM:
    """Finalized sampled matrix: unit trace, exactly symmetric, binned.

    ``keys`` are sorted packed pairs; ``probs`` the normalized symmetric
    elements; ``errors`` per-element jackknife standard errors (None for
    large regions). The source bins ride along so spectra can be
    jackknifed by re-finalizing leave-one-out replicates.
    """

    n_a: int
    keys: np.ndarray
    probs: np.ndarray
    errors: np.ndarray | None
    trace_count: int
    n_samples: int
    meta: RunMetadata
    bins: tuple
    _transpose_perm: np.ndarray
    _sym_counts: np.ndarray

    def matrix(self):
        """Sparse CSR matrix over the full 2^n_a region basis."""
        import scipy.sparse as sp

        rows = self.keys >> self.n_a
        cols = self.keys & ((1 << self.n_a) - 1)
        return sp.coo_matrix(
            (self.probs, (rows, cols)), shape=(1 << self.n_a, 1 << self.n_a)
        ).tocsr()

    def dense(self) -> np.ndarray:
        if self.n_a > 13:
            raise AccumulatorError(f"refusing to densify a 2^{self.n_a} matrix")
        return self.matrix().toarray()

    def element(self, bra: int, ket: int) -> tuple[float, float | None]:
        """(value, error) of one matrix element."""
        key = (bra << self.n_a) | ket
        pos = np.searchsorted(self.keys, key)
        if pos >= self.keys.size or self.keys[pos] != key:
            return 0.0, None
        err = float(self.errors[pos]) if self.errors is not None else None
        return float(self.probs[pos]), err

    def sz_sectors(self):
        """Yield (n_up, sector_basis_keys, dense-or-sparse block) per sector.

        The block is indexed by the full fixed-magnetization basis of the
        region (not just observed keys), so dimensions match theory
        counts. Sectors with no observed weight are skipped.
        """
        from .oracle import sector_basis

        occupied = np.unique(_popcount(self.keys >> self.n_a)[self.probs != 0])
        for n_up in occupied.tolist():
            basis = sector_basis(self.n_a, n_up)
            yield n_up, basis, _block_from_keys(
                self.keys, self.probs, basis, self.n_a
            )

    def replicate_probs(self, drop: int) -> np.ndarray:
        """Leave-one-bin-out normalized elements, aligned with ``keys``."""
        b = self.bins[drop]
        c = np.zeros(self.keys.size)
        c[np.searchsorted(self.keys, b.keys)] = b.counts
        c_sym = 0.5 * (c + c[self._transpose_perm])
        diag = (self.keys >> self.n_a) == (self.keys & ((1 << self.n_a) - 1))
        t_b = c[diag].sum()
        return (self._sym_counts - c_sym) / (self.trace_count - t_b)


def _block_from_keys(keys, values, basis, n_a):
    """Extract one magnetization block as dense (small) or CSR (large)."""
    import scipy.sparse as sp

    rows_all = keys >> n_a
    cols_all = keys & ((1 << n_a) - 1)
    pos = np.searchsorted(basis, rows_all)
    pos = np.clip(pos, 0, basis.size - 1)
    inside = (basis[pos] == rows_all)
    pos_c = np.searchsorted(basis, cols_all)
    pos_c = np.clip(pos_c, 0, basis.size - 1)
    inside &= (basis[pos_c] == cols_all) & (values != 0)
    r = pos[inside]
    c = pos_c[inside]
    v = values[inside]
    if basis.size <= 4096:
        out = np.zeros((basis.size, basis.size))
        out[r, c] = v
        return out
    return sp.coo_matrix((v, (r, c)), shape=(basis.size, basis.size)).tocsr()
