"""Entanglement spectra from region density matrices.

The pipeline is: split the matrix into fixed-magnetization blocks, project
each block onto momentum sectors of the cyclic region translation, solve
each projected block (dense below a dimension threshold, Lanczos above),
convert eigenvalues to levels xi = -ln(lambda), label total spin from
quadratic-Casimir expectations, and attach jackknife errors by
re-solving leave-one-bin-out replicates of the sampled matrix.

Momentum convention: a sector-k eigenvector v satisfies T v = e^{+i 2 pi
k / g} v with T the elementary translation. Reported k is shifted to the
physical frame when the sampling basis was sublattice rotated (the shift
is sector-dependent; see ``momentum_frame_shift``).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import RdmNotPositiveError, SolverError
from .lattice import Bipartition, RotationMask, SymmetryMap, momentum_frame_shift, translate_keys
from .oracle import sector_basis

log = logging.getLogger(__name__)

DENSE_THRESHOLD = 4096
_EIG_RESIDUAL_TOL = 1e-10
_MULT_TOL = 1e-8
SPIN_QUALITY_LIMIT = 0.25


@dataclass(frozen=True)
class EsLevel:
    """One entanglement level with its quantum numbers."""

    xi: float
    lam: float
    sz: float
    k: int | None
    s_est: float | None
    s_quality: float | None
    multiplicity: int
    xi_err: float | None


@dataclass
class EntanglementSpectrum:
    """A solved spectrum plus provenance.

    ``levels`` are sorted by xi ascending. ``frame`` records whether
    momenta are physical or raw sampling-basis labels. ``meta`` carries
    scalars worth echoing (trace, dropped weight, floors, residuals).
    """

    levels: list[EsLevel]
    n_a: int
    g: int | None
    frame: str
    meta: dict = field(default_factory=dict)

    @property
    def xi0(self) -> float:
        return self.levels[0].xi if self.levels else math.nan

    def xi_exc(self, level: EsLevel) -> float:
        return level.xi - self.xi0

    def select(self, sz: float | None = None, k: int | None = None,
               s: float | None = None) -> list[EsLevel]:
        out = []
        for lv in self.levels:
            if sz is not None and lv.sz != sz:
                continue
            if k is not None and lv.k != k:
                continue
            if s is not None and (lv.s_est is None or lv.s_est != s):
                continue
            out.append(lv)
        return out

    def lowest_band(self, sz: float | None = 0.0) -> list[tuple[int, float]]:
        """(k, xi) of the lowest level at each momentum, within one sz sector."""
        best: dict[int, float] = {}
        for lv in self.levels:
            if lv.k is None or (sz is not None and lv.sz != sz):
                continue
            if lv.k not in best or lv.xi < best[lv.k]:
                best[lv.k] = lv.xi
        return sorted(best.items())

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "sz", "S", "xi", "xi_exc", "err", "mult"])
            for lv in self.levels:
                w.writerow([
                    "" if lv.k is None else lv.k,
                    f"{lv.sz:g}",
                    "" if lv.s_est is None else f"{lv.s_est:g}",
                    f"{lv.xi:.12g}",
                    f"{self.xi_exc(lv):.12g}",
                    "" if lv.xi_err is None else f"{lv.xi_err:.6g}",
                    lv.multiplicity,
                ])

    @classmethod
    def from_csv(cls, path: str) -> "EntanglementSpectrum":
        levels = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                xi = float(row["xi"])
                levels.append(EsLevel(
                    xi=xi,
                    lam=math.exp(-xi),
                    sz=float(row["sz"]),
                    k=int(row["k"]) if row["k"] != "" else None,
                    s_est=float(row["S"]) if row["S"] != "" else None,
                    s_quality=None,
                    multiplicity=int(row["mult"]),
                    xi_err=float(row["err"]) if row["err"] != "" else None,
                ))
        levels.sort(key=lambda lv: lv.xi)
        ks = {lv.k for lv in levels if lv.k is not None}
        return cls(levels, n_a=0, g=(max(ks) + 1 if ks else None), frame="unknown")


@dataclass(frozen=True)
class DenseRDM:
    """Adapter giving a plain dense matrix the sampled-RDM interface."""

    n_a: int
    rho: np.ndarray
    errors = None
    bins: tuple = ()

    @classmethod
    def from_matrix(cls, rho: np.ndarray) -> "DenseRDM":
        n_a = int(round(np.log2(rho.shape[0])))
        if 1 << n_a != rho.shape[0]:
            raise SolverError(f"matrix dimension {rho.shape[0]} is not a power of two")
        return cls(n_a, np.asarray(rho, float))

    def sz_sectors(self):
        full = np.arange(1 << self.n_a)
        pops = _popcount(full)
        for n_up in range(self.n_a + 1):
            basis = full[pops == n_up]
            block = self.rho[np.ix_(basis, basis)]
            if np.abs(block).max() == 0.0:
                continue
            yield n_up, basis.astype(np.int64), block


def _popcount(x: np.ndarray) -> np.ndarray:
    x = np.array(x, copy=True)
    out = np.zeros_like(x)
    while x.any():
        out += x & 1
        x >>= 1
    return out


@dataclass
class _SectorCache:
    basis: np.ndarray
    orbits: list[np.ndarray]
    projectors: dict[int, sp.csc_matrix]
    s2: sp.csr_matrix | None = None


def _orbit_decomposition(basis: np.ndarray, symmetry: SymmetryMap) -> list[np.ndarray]:
    perm = symmetry.perms[1 % symmetry.order]
    translated = translate_keys(basis, perm)
    tpos = np.searchsorted(basis, translated)
    if not np.array_equal(basis[tpos], translated):
        raise SolverError("translation leaves the magnetization sector; bad symmetry map")
    seen = np.zeros(basis.size, bool)
    orbits = []
    for start in range(basis.size):
        if seen[start]:
            continue
        orbit = [start]
        seen[start] = True
        cur = tpos[start]
        while cur != start:
            orbit.append(cur)
            seen[cur] = True
            cur = tpos[cur]
        orbits.append(np.asarray(orbit, np.int64))
    return orbits


def momentum_project(
    block: np.ndarray | sp.spmatrix,
    basis: np.ndarray,
    symmetry: SymmetryMap,
    cache: _SectorCache | None = None,
) -> tuple[dict[int, np.ndarray], float, _SectorCache]:
    """Split one magnetization block over momentum sectors.

    Returns ({k: dense hermitian rho_k}, symmetry_residual, cache). The
    residual is the largest element of rho - T rho T^dagger; it is exact
    zero noise for oracle matrices and a statistical diagnostic for
    sampled ones (projection enforces the symmetry either way).
    """
    g = symmetry.order
    if cache is None:
        orbits = _orbit_decomposition(basis, symmetry)
        projectors = {}
        for k in range(g):
            rows, vals = [], []
            for orbit in orbits:
                ell = orbit.size
                if (k * ell) % g != 0:
                    continue
                amps = np.exp(-2j * np.pi * k * np.arange(ell) / g) / math.sqrt(ell)
                rows.append(orbit)
                vals.append(amps)
            if not rows:
                continue
            cols_count = len(rows)
            data = np.concatenate(vals)
            row_idx = np.concatenate(rows)
            col_ptr = np.zeros(cols_count + 1, np.int64)
            col_ptr[1:] = np.cumsum([r.size for r in rows])
            projectors[k] = sp.csc_matrix(
                (data, row_idx, col_ptr), shape=(basis.size, cols_count)
            )
        cache = _SectorCache(basis, orbits, projectors)
        total = sum(p.shape[1] for p in cache.projectors.values())
        if total != basis.size:
            raise SolverError(
                f"momentum sectors sum to {total}, expected {basis.size}"
            )
    perm = symmetry.perms[1 % symmetry.order]
    translated = translate_keys(basis, perm)
    tpos = np.searchsorted(basis, translated)
    if sp.issparse(block):
        shuffled = block[tpos][:, tpos]
        residual = float(np.abs((block - shuffled)).max()) if block.nnz else 0.0
    else:
        shuffled = block[np.ix_(tpos, tpos)]
        residual = float(np.abs(block - shuffled).max())
    out = {}
    for k, proj in cache.projectors.items():
        if sp.issparse(block):
            rp = block @ proj
            rk = (proj.conj().T @ rp).toarray()
        else:
            rp = block @ proj.toarray()
            rk = proj.conj().T.toarray() @ rp
        out[k] = 0.5 * (rk + rk.conj().T)
    return out, residual, cache


def eig_levels(
    matrix: np.ndarray | sp.spmatrix,
    top_k: int | None = None,
    dense_threshold: int = DENSE_THRESHOLD,
) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs sorted by descending eigenvalue.

    Dense below ``dense_threshold``; sparse Lanczos for the requested
    ``top_k`` above it, with an explicit residual check (the iterative
    path must not silently return garbage).
    """
    dim = matrix.shape[0]
    if dim <= dense_threshold:
        dense = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
        vals, vecs = scipy.linalg.eigh(dense)
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
        if top_k is not None:
            vals, vecs = vals[:top_k], vecs[:, :top_k]
        return vals, vecs
    if top_k is None:
        raise SolverError(
            f"dimension {dim} exceeds the dense threshold; pass top_k for the iterative path"
        )
    k = min(top_k, dim - 2)
    try:
        vals, vecs = spla.eigsh(matrix, k=k, which="LA")
    except spla.ArpackNoConvergence as err:
        raise SolverError(f"Lanczos failed on a {dim}-dimensional block") from err
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    for c in range(vals.size):
        r = np.linalg.norm(matrix @ vecs[:, c] - vals[c] * vecs[:, c])
        if r > _EIG_RESIDUAL_TOL * max(1.0, abs(vals[c])):
            raise SolverError(f"iterative eigenpair residual {r:.2e} above tolerance")
    return vals, vecs


def _s2_matrix(basis: np.ndarray, n_a: int, site_signs: np.ndarray) -> sp.csr_matrix:
    """Quadratic Casimir of region A on a fixed-magnetization basis.

    S^2 = Sz^2 + n/2 + sum_{i != j} m_i m_j S+_i S-_j, with m the frame
    signs (all +1 in the physical basis). Built once per sector and cached.
    """
    dim = basis.size
    n_up = int(_popcount(basis[:1])[0]) if dim else 0
    sz = n_up - n_a / 2.0
    index = {int(s): r for r, s in enumerate(basis)}
    rows, cols, vals = [], [], []
    for r, s in enumerate(basis):
        s = int(s)
        ups = [i for i in range(n_a) if (s >> i) & 1]
        downs = [i for i in range(n_a) if not (s >> i) & 1]
        for i in downs:
            for j in ups:
                target = s | (1 << i)
                target &= ~(1 << j)
                rows.append(index[target])
                cols.append(r)
                vals.append(float(site_signs[i] * site_signs[j]))
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim))
    mat += sp.diags(np.full(dim, sz * sz + n_a / 2.0))
    return mat


def spin_label(q: float, sz: float, n_a: int) -> tuple[float | None, float]:
    """Nearest valid total spin for a Casimir expectation ``q = <S^2>``.

    Valid spins run |sz|, |sz|+1, ... with the parity fixed by region
    size. Returns (S, distance); S is None when the distance exceeds the
    quality limit.
    """
    q = max(q, 0.0)
    s_cont = 0.5 * (-1.0 + math.sqrt(1.0 + 4.0 * q))
    base = abs(sz)
    steps = max(0, round(s_cont - base))
    s_round = base + steps
    quality = abs(s_cont - s_round)
    if quality > SPIN_QUALITY_LIMIT:
        return None, quality
    return s_round, quality


def solve_spectrum(
    rdm,
    symmetry: SymmetryMap | None = None,
    bipartition: Bipartition | None = None,
    mask: RotationMask | None = None,
    top_k: int | None = None,
    lambda_floor: float | None = None,
    dense_threshold: int = DENSE_THRESHOLD,
    jackknife: str = "auto",
    jackknife_max_bins: int = 64,
    label_spin: bool = True,
) -> EntanglementSpectrum:
    """Full spectrum extraction from a region density matrix.

    ``rdm`` is either a finalized sampled matrix or a ``DenseRDM``. When
    ``bipartition`` and ``mask`` are given, the matrix is treated as living
    in the sublattice-rotated sampling frame: spin labels use the rotated
    Casimir and momenta are shifted to the physical frame sector by
    sector. ``jackknife`` is "auto" (full for regions up to 12 sites, the
    sz = 0 sector otherwise), "full", "sz0", or "none"; it needs the rdm
    to carry bins.

    Raises
    ------
    RdmNotPositiveError
        If an eigenvalue is more negative than the statistical floor.
    """
    n_a = rdm.n_a
    g = symmetry.order if symmetry is not None else None
    site_signs = np.ones(n_a)
    rotated = bipartition is not None and mask is not None
    if rotated:
        site_signs = np.array(
            [-1.0 if mask.flip[s] else 1.0 for s in bipartition.a_sites]
        )
    floor = lambda_floor
    errors = getattr(rdm, "errors", None)
    trace_count = getattr(rdm, "trace_count", None)
    if floor is None:
        if errors is not None and errors.size:
            floor = max(1e-12, 3.0 * float(np.median(errors[errors > 0])))
        elif trace_count:
            # single-count resolution of the sampled matrix
            floor = max(1e-12, 3.0 / trace_count)
        else:
            floor = 1e-12
    psd_tol = 1e-10
    if errors is not None and errors.size:
        psd_tol = max(psd_tol, 3.0 * math.sqrt(float((errors**2).sum())))
    elif trace_count:
        # no element-error table (large region): allow negative excursions
        # at the multinomial noise scale instead of demanding exactness
        psd_tol = max(psd_tol, 6.0 / math.sqrt(trace_count))

    caches: dict[int, _SectorCache] = {}
    residuals: dict[int, float] = {}
    dropped_weight = 0.0
    lam_min = 0.0
    frame_ok = True
    levels: list[EsLevel] = []

    def emit(n_up, sz, k_label, lam, expand_vec, basis, s2_cache={}):
        nonlocal dropped_weight
        if lam < floor:
            dropped_weight += max(lam, 0.0)
            return
        s_est = s_quality = None
        if label_spin:
            if n_up not in s2_cache:
                s2_cache[n_up] = _s2_matrix(basis, n_a, site_signs)
            vec = expand_vec()
            q = float(np.real(np.vdot(vec, s2_cache[n_up] @ vec)))
            s_est, s_quality = spin_label(q, sz, n_a)
        levels.append(EsLevel(
            xi=-math.log(lam), lam=lam, sz=sz, k=k_label,
            s_est=s_est, s_quality=s_quality, multiplicity=1, xi_err=None,
        ))

    for n_up, basis, block in rdm.sz_sectors():
        sz = n_up - n_a / 2.0
        if symmetry is not None:
            per_k, resid, cache = momentum_project(block, basis, symmetry)
            caches[n_up] = cache
            residuals[n_up] = resid
            shift = 0
            if rotated:
                shift = momentum_frame_shift(bipartition, mask, symmetry, n_up)
                if shift is None:
                    frame_ok = False
                    shift = 0
            for k, rho_k in per_k.items():
                vals, vecs = eig_levels(rho_k, top_k, dense_threshold)
                lam_min = min(lam_min, float(vals.min()))
                k_label = (k + shift) % g
                proj = cache.projectors[k]
                for c in range(vals.size):
                    emit(n_up, sz, k_label, float(vals[c]),
                         lambda c=c: proj @ vecs[:, c], basis)
        else:
            vals, vecs = eig_levels(block, top_k, dense_threshold)
            lam_min = min(lam_min, float(vals.min()))
            for c in range(vals.size):
                emit(n_up, sz, None, float(vals[c]), lambda c=c: vecs[:, c], basis)

    if lam_min < -psd_tol:
        raise RdmNotPositiveError(
            f"eigenvalue {lam_min:.3e} below -{psd_tol:.3e}; matrix is not "
            "positive within statistics (undersampled or inconsistent input)"
        )

    levels.sort(key=lambda lv: lv.xi)
    levels = _collapse_multiplets(levels)

    spectrum = EntanglementSpectrum(
        levels=levels,
        n_a=n_a,
        g=g,
        frame="physical" if frame_ok else "sampling",
        meta={
            "lambda_floor": floor,
            "psd_tol": psd_tol,
            "dropped_weight": dropped_weight,
            "symmetry_residuals": residuals,
            "n_samples": getattr(rdm, "n_samples", None),
        },
    )
    if jackknife != "none" and getattr(rdm, "bins", None):
        _attach_jackknife_errors(
            spectrum, rdm, symmetry, bipartition, mask, caches, floor,
            top_k, dense_threshold, jackknife, jackknife_max_bins,
        )
    return spectrum


def _collapse_multiplets(levels: list[EsLevel]) -> list[EsLevel]:
    """Merge rows identical in (sz, k, S) with xi equal to solver precision."""
    out: list[EsLevel] = []
    for lv in levels:
        if out:
            last = out[-1]
            if (
                abs(lv.xi - last.xi) < _MULT_TOL
                and lv.sz == last.sz
                and lv.k == last.k
                and lv.s_est == last.s_est
            ):
                out[-1] = EsLevel(
                    last.xi, last.lam, last.sz, last.k, last.s_est,
                    last.s_quality, last.multiplicity + 1, last.xi_err,
                )
                continue
        out.append(lv)
    return out


def _group_bins(n_bins: int, target: int) -> list[np.ndarray]:
    groups = min(target, n_bins)
    edges = np.linspace(0, n_bins, groups + 1).astype(int)
    return [np.arange(edges[i], edges[i + 1]) for i in range(groups)]


def _attach_jackknife_errors(
    spectrum, rdm, symmetry, bipartition, mask, caches, floor,
    top_k, dense_threshold, mode, max_bins,
) -> None:
    """Leave-one-group-out errors on levels, paired by order within sector.

    Bins are regrouped into at most ``max_bins`` consecutive groups so the
    resampling stays cheap on long runs. Levels whose replicate falls
    below the eigenvalue floor are treated as missing; errors are withheld
    when more than 20% of replicates go missing.
    """
    n_a = rdm.n_a
    if mode == "auto":
        mode = "full" if n_a <= 12 else "sz0"
    wanted_nup = None
    if mode == "sz0":
        wanted_nup = {n_a // 2} if n_a % 2 == 0 else {n_a // 2, (n_a + 1) // 2}

    n_bins = len(rdm.bins)
    groups = _group_bins(n_bins, max_bins)
    n_groups = len(groups)
    if n_groups < 8:
        log.warning("only %d bin groups; jackknife errors skipped", n_groups)
        return

    # index levels by (n_up, k) with their order rank
    slots: dict[tuple, list[int]] = {}
    for idx, lv in enumerate(spectrum.levels):
        n_up = int(lv.sz + n_a / 2.0)
        if wanted_nup is not None and n_up not in wanted_nup:
            continue
        slots.setdefault((n_up, lv.k), []).append(idx)
    for key in slots:
        slots[key].sort(key=lambda i: spectrum.levels[i].xi)
    if not slots:
        return

    sector_info = {}
    for n_up, basis, _block in rdm.sz_sectors():
        if wanted_nup is not None and n_up not in wanted_nup:
            continue
        rows = rdm.keys >> n_a
        cols = rdm.keys & ((1 << n_a) - 1)
        pos_r = np.searchsorted(basis, rows)
        pos_r = np.clip(pos_r, 0, basis.size - 1)
        ok = basis[pos_r] == rows
        pos_c = np.searchsorted(basis, cols)
        pos_c = np.clip(pos_c, 0, basis.size - 1)
        ok &= basis[pos_c] == cols
        sector_info[n_up] = (basis, np.nonzero(ok)[0], pos_r[ok], pos_c[ok])

    shift_of = {}
    if symmetry is not None and bipartition is not None and mask is not None:
        for n_up in sector_info:
            shift_of[n_up] = momentum_frame_shift(bipartition, mask, symmetry, n_up)

    reps: dict[tuple, list[list[float]]] = {key: [] for key in slots}
    g = symmetry.order if symmetry is not None else None
    for group in groups:
        probs = _group_replicate_probs(rdm, group)
        for n_up, (basis, sel, pr, pc) in sector_info.items():
            dim = basis.size
            if dim <= dense_threshold:
                block = np.zeros((dim, dim))
                block[pr, pc] = probs[sel]
            else:
                block = sp.coo_matrix((probs[sel], (pr, pc)), shape=(dim, dim)).tocsr()
            if symmetry is not None:
                cache = caches.get(n_up)
                per_k, _, cache = momentum_project(block, basis, symmetry, cache)
                caches[n_up] = cache
                shift = shift_of.get(n_up, 0)
                for k, rho_k in per_k.items():
                    k_label = k if shift is None else (k + shift) % g
                    key = (n_up, k_label)
                    if key not in reps:
                        continue
                    vals, _ = eig_levels(rho_k, top_k, dense_threshold)
                    reps[key].append([-math.log(v) if v >= floor else math.nan
                                      for v in vals])
            else:
                key = (n_up, None)
                if key not in reps:
                    continue
                vals, _ = eig_levels(block, top_k, dense_threshold)
                reps[key].append([-math.log(v) if v >= floor else math.nan
                                  for v in vals])

    new_levels = list(spectrum.levels)
    for key, level_idx in slots.items():
        series = reps.get(key, [])
        if len(series) != n_groups:
            continue
        for rank, idx in enumerate(level_idx):
            vals = np.array([s[rank] if rank < len(s) else math.nan for s in series])
            good = np.isfinite(vals)
            if good.sum() < 0.8 * n_groups:
                continue
            m = vals[good].mean()
            b = good.sum()
            var = (b - 1) / b * ((vals[good] - m) ** 2).sum()
            lv = new_levels[idx]
            new_levels[idx] = EsLevel(
                lv.xi, lv.lam, lv.sz, lv.k, lv.s_est, lv.s_quality,
                lv.multiplicity, float(math.sqrt(var)),
            )
    spectrum.levels = new_levels
    spectrum.meta["jackknife_groups"] = n_groups


def _group_replicate_probs(rdm, group: np.ndarray) -> np.ndarray:
    """Normalized elements with one consecutive group of bins left out."""
    c = np.zeros(rdm.keys.size)
    for b_idx in group:
        b = rdm.bins[b_idx]
        c[np.searchsorted(rdm.keys, b.keys)] += b.counts
    c_sym = 0.5 * (c + c[rdm._transpose_perm])
    diag = (rdm.keys >> rdm.n_a) == (rdm.keys & ((1 << rdm.n_a) - 1))
    t_b = c[diag].sum()
    return (rdm._sym_counts - c_sym) / (rdm.trace_count - t_b)
