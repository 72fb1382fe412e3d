"""Exact-diagonalization oracle for small systems.

Everything here is an independent reference path: sector-resolved sparse
Hamiltonians, ground states, exact reduced density matrices (zero and finite
temperature), and dynamic spectral functions. The QMC pipeline never calls
into this module; tests and the ``oracle``/``compare`` CLI verbs do.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import GeometryError, SolverError
from .lattice import Bipartition, LatticeSpec

log = logging.getLogger(__name__)

_DENSE_THERMAL_LIMIT = 14  # full-spectrum eigh up to 2^14 states, sector by sector
_RESIDUAL_TOL = 1e-10


def sector_basis(n_sites: int, n_up: int) -> np.ndarray:
    """All n_sites-bit states with n_up set bits, ascending."""
    if not 0 <= n_up <= n_sites:
        raise GeometryError(f"occupation {n_up} outside 0..{n_sites}")
    states = np.arange(1 << n_sites, dtype=np.int64)
    return states[_popcount(states) == n_up]


def _popcount(x: np.ndarray) -> np.ndarray:
    x = x.copy()
    out = np.zeros_like(x)
    while x.any():
        out += x & 1
        x >>= 1
    return out


def build_hamiltonian(lattice: LatticeSpec, basis: np.ndarray) -> sp.csr_matrix:
    """Heisenberg Hamiltonian restricted to a fixed-S^z basis.

    H = sum_b J_b S_i . S_j with S.S = S^z S^z + (1/2)(S+ S- + S- S+).
    """
    dim = basis.size
    index = {int(s): r for r, s in enumerate(basis)}
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    diag = np.zeros(dim)
    for i, j, coupling in lattice.bonds:
        bi = np.int64(1) << i
        bj = np.int64(1) << j
        for r, s in enumerate(basis):
            si = (s >> i) & 1
            sj = (s >> j) & 1
            diag[r] += coupling * (0.25 if si == sj else -0.25)
            if si != sj:
                flipped = int(s ^ bi ^ bj)
                rows.append(index[flipped])
                cols.append(r)
                vals.append(0.5 * coupling)
    ham = sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim))
    ham += sp.diags(diag)
    return ham


@dataclass(frozen=True)
class GroundStateVector:
    """Ground state scattered into the full 2^n basis.

    ``gap`` is the distance to the next level across the searched sectors,
    0.0 when the ground level is degenerate.
    """

    amplitudes: np.ndarray
    energy: float
    n_sites: int
    sector_n_up: int
    gap: float
    degenerate: bool


def ground_state(lattice: LatticeSpec, sectors: tuple[int, ...] | None = None) -> GroundStateVector:
    """Lowest eigenstate of the lattice Hamiltonian.

    Searches fixed-S^z sectors (all of them by default for n <= 12, else
    the half-filling sector and its neighbors, where Heisenberg ground
    states live) and returns the overall lowest state with the gap to the
    next level. The eigenvector residual ||Hv - Ev|| must pass 1e-10.
    """
    n = lattice.n_sites
    if sectors is None:
        if n <= 12:
            sectors = tuple(range(n + 1))
        else:
            sectors = tuple(sorted({n // 2 - 1, n // 2, (n + 1) // 2, n // 2 + 1}))
    found: list[tuple[float, int, np.ndarray, np.ndarray]] = []
    for n_up in sectors:
        basis = sector_basis(n, n_up)
        ham = build_hamiltonian(lattice, basis)
        dim = basis.size
        if dim <= 512:
            vals, vecs = np.linalg.eigh(ham.toarray())
            take = min(dim, 4)
            for r in range(take):
                found.append((float(vals[r]), n_up, vecs[:, r], basis))
        else:
            k = min(4, dim - 1)
            try:
                vals, vecs = spla.eigsh(ham, k=k, which="SA")
            except spla.ArpackNoConvergence as err:
                raise SolverError(f"Lanczos failed in sector n_up={n_up}") from err
            order = np.argsort(vals)
            for r in order:
                found.append((float(vals[r]), n_up, vecs[:, r], basis))
    found.sort(key=lambda item: item[0])
    energy, n_up, vec, basis = found[0]
    gap = found[1][0] - energy if len(found) > 1 else np.inf
    degenerate = gap < 1e-8
    ham = build_hamiltonian(lattice, basis)
    residual = float(np.linalg.norm(ham @ vec - energy * vec))
    if residual > _RESIDUAL_TOL * max(1.0, abs(energy)):
        raise SolverError(f"ground-state residual {residual:.2e} exceeds tolerance")
    full = np.zeros(1 << n)
    full[basis] = vec
    return GroundStateVector(full, energy, n, n_up, float(max(gap, 0.0)), degenerate)


def region_index_maps(n_sites: int, bipartition: Bipartition) -> tuple[np.ndarray, np.ndarray]:
    """Split every full-basis state into (A key, B key) indices."""
    states = np.arange(1 << n_sites, dtype=np.int64)
    a_of = np.zeros(states.size, np.int64)
    for t, site in enumerate(bipartition.a_sites):
        a_of |= ((states >> site) & 1) << t
    b_of = np.zeros(states.size, np.int64)
    for t, site in enumerate(bipartition.b_sites):
        b_of |= ((states >> site) & 1) << t
    return a_of, b_of


def exact_rdm(state: GroundStateVector | np.ndarray, bipartition: Bipartition) -> np.ndarray:
    """Reduced density matrix of region A by partial trace over B.

    Accepts a GroundStateVector or a raw full-basis amplitude vector.
    Returns the dense (2^|A|, 2^|A|) matrix in the canonical A key basis.
    """
    psi = state.amplitudes if isinstance(state, GroundStateVector) else np.asarray(state)
    n = int(round(np.log2(psi.size)))
    if 1 << n != psi.size:
        raise GeometryError(f"state length {psi.size} is not a power of two")
    a_of, b_of = region_index_maps(n, bipartition)
    d_a = bipartition.a_dim
    d_b = 1 << len(bipartition.b_sites)
    mat = np.zeros((d_a, d_b))
    mat[a_of, b_of] = psi
    return mat @ mat.T


def thermal_rdm(
    lattice: LatticeSpec, bipartition: Bipartition, beta: float
) -> tuple[np.ndarray, float]:
    """Finite-temperature reduced density matrix, exact full-spectrum path.

    Diagonalizes every S^z sector completely (dense), Boltzmann-weights all
    eigenstates, and partial-traces each one. Only sensible for
    n <= 14. Returns (rho_a, e0) with e0 the ground energy; rho_a has unit
    trace by construction up to roundoff and is re-normalized exactly.
    """
    n = lattice.n_sites
    if n > _DENSE_THERMAL_LIMIT:
        raise GeometryError(f"thermal_rdm is a dense full-spectrum path, n={n} too large")
    a_of, b_of = region_index_maps(n, bipartition)
    d_a = bipartition.a_dim
    d_b = 1 << len(bipartition.b_sites)
    pieces = []
    e0 = np.inf
    for n_up in range(n + 1):
        basis = sector_basis(n, n_up)
        ham = build_hamiltonian(lattice, basis).toarray()
        vals, vecs = np.linalg.eigh(ham)
        e0 = min(e0, float(vals[0]))
        pieces.append((basis, vals, vecs))
    rho = np.zeros((d_a, d_a))
    mat = np.empty((d_a, d_b))
    for basis, vals, vecs in pieces:
        weights = np.exp(-beta * (vals - e0))
        keep = weights > 1e-300
        a_idx = a_of[basis]
        b_idx = b_of[basis]
        for r in np.nonzero(keep)[0]:
            mat[:] = 0.0
            mat[a_idx, b_idx] = vecs[:, r]
            rho += weights[r] * (mat @ mat.T)
    rho /= np.trace(rho)
    return rho, e0


def energy_gap(lattice: LatticeSpec) -> float:
    """Gap from the ground state to the first excited state (any sector)."""
    return ground_state(lattice).gap


@dataclass(frozen=True)
class SpectralCurve:
    """A broadened spectral function with its underlying poles.

    ``total_weight`` is the exact frequency integral (sum of pole weights
    over pi); peak positions are excitation energies relative to the
    reference state.
    """

    omegas: np.ndarray
    values: np.ndarray
    peak_positions: np.ndarray
    peak_weights: np.ndarray
    eta: float

    @property
    def total_weight(self) -> float:
        return float(self.peak_weights.sum() / np.pi)

    def dominant_peak(self, min_fraction: float = 0.01) -> float:
        """Position of the lowest pole carrying at least min_fraction of the weight."""
        total = self.peak_weights.sum()
        if total <= 0:
            raise SolverError("spectral curve carries no weight")
        big = self.peak_weights >= min_fraction * total
        if not big.any():
            raise SolverError("no pole above the weight threshold")
        return float(self.peak_positions[big].min())


def spectral_function(
    energies: np.ndarray,
    vectors: np.ndarray,
    operator: np.ndarray | sp.spmatrix,
    omegas: np.ndarray,
    eta: float = 0.05,
    reference: int = 0,
    weights: np.ndarray | None = None,
) -> SpectralCurve:
    """Lorentzian-broadened excitation spectrum of an operator.

    S(omega) = (1/pi) sum_n w_n |<n|O|ref>|^2 L_eta(omega - (E_n - E_ref))
    with L_eta the unit-normalized Lorentzian. ``w_n = 1`` by default;
    pass Boltzmann factors via ``weights`` for a thermally weighted curve.
    The exact integral is preserved on the returned curve as
    ``total_weight``.
    """
    energies = np.asarray(energies, float)
    target = operator @ vectors[:, reference]
    amps = vectors.conj().T @ target
    strengths = np.abs(amps) ** 2
    if weights is not None:
        strengths = strengths * np.asarray(weights, float)
    positions = energies - energies[reference]
    values = np.zeros_like(omegas, dtype=float)
    for pos, s in zip(positions, strengths):
        if s == 0.0:
            continue
        values += s * (eta / np.pi) / ((omegas - pos) ** 2 + eta**2)
    values /= np.pi
    return SpectralCurve(np.asarray(omegas, float), values, positions, strengths, eta)


def sz_momentum_operator(
    n_sites_or_positions: int | np.ndarray,
    k_index: int,
    basis: np.ndarray,
    signs: np.ndarray | None = None,
) -> np.ndarray:
    """Diagonal of S^z(k) = sum_r e^{i k r} S^z_r on a packed basis.

    ``k_index`` counts in units of 2*pi/g with g the number of positions.
    Pass per-position ``signs`` to build the operator in a rotated frame.
    Returns a complex diagonal (1d array aligned with ``basis``).
    """
    if isinstance(n_sites_or_positions, (int, np.integer)):
        positions = np.arange(int(n_sites_or_positions))
    else:
        positions = np.asarray(n_sites_or_positions)
    g = positions.size
    phases = np.exp(2j * np.pi * k_index * np.arange(g) / g)
    if signs is not None:
        phases = phases * np.asarray(signs, float)
    diag = np.zeros(basis.size, complex)
    for pos, phase in zip(positions, phases):
        diag += phase * (((basis >> int(pos)) & 1) - 0.5)
    return diag


def entanglement_spectral_function(
    rho: np.ndarray,
    k_index: int,
    omegas: np.ndarray,
    eta: float = 0.05,
    lam_floor: float = 1e-12,
    signs: np.ndarray | None = None,
) -> SpectralCurve:
    """Spectral function of S^z(k) under the entanglement generator -ln(rho).

    Diagonalizes the region density matrix, maps eigenvalues to levels
    xi = -ln(lambda) (clamping lambda below ``lam_floor`` so zero-weight
    states park at a finite high level and the sum rule stays exact), and
    broadens transitions from the lowest level of the S^z_A = 0 sector.
    ``signs`` rotates the operator into the sampling frame when needed.
    """
    rho = np.asarray(rho, float)
    d = rho.shape[0]
    n_a = int(round(np.log2(d)))
    if 1 << n_a != d:
        raise GeometryError(f"density matrix dimension {d} is not a power of two")
    lam, vecs = np.linalg.eigh(rho)
    lam = np.clip(lam, lam_floor, None)
    xi = -np.log(lam)
    order = np.argsort(xi)
    xi = xi[order]
    vecs = vecs[:, order]
    basis = np.arange(d, dtype=np.int64)
    sz_diag = _popcount(basis) - n_a / 2.0
    sz_of_vec = (vecs**2 * sz_diag[:, None]).sum(axis=0)
    in_zero = np.abs(sz_of_vec) < 0.25
    if not in_zero.any():
        raise SolverError("no S^z_A = 0 eigenvector to anchor the spectral function")
    reference = int(np.nonzero(in_zero)[0][0])
    diag = sz_momentum_operator(n_a, k_index, basis, signs)
    return spectral_function(xi, vecs, sp.diags(diag), omegas, eta=eta, reference=reference)


def hamiltonian_spectral_function(
    lattice: LatticeSpec,
    k_index: int,
    omegas: np.ndarray,
    eta: float = 0.05,
    n_up: int | None = None,
) -> SpectralCurve:
    """Dynamic S^z structure factor of a small lattice, fully exact.

    Diagonalizes the n_up sector (half filling by default) densely and
    broadens the |<n| S^z(k) |0>|^2 poles. Intended for n <= 14.
    """
    n = lattice.n_sites
    if n > _DENSE_THERMAL_LIMIT:
        raise GeometryError(f"dense spectral path needs n <= {_DENSE_THERMAL_LIMIT}, got {n}")
    if n_up is None:
        n_up = n // 2
    basis = sector_basis(n, n_up)
    ham = build_hamiltonian(lattice, basis).toarray()
    vals, vecs = np.linalg.eigh(ham)
    gs_sector = ground_state(lattice)
    if abs(vals[0] - gs_sector.energy) > 1e-8:
        log.warning(
            "sector n_up=%d ground level %.6f differs from global %.6f",
            n_up,
            vals[0],
            gs_sector.energy,
        )
    diag = sz_momentum_operator(n, k_index, basis)
    op = sp.diags(diag)
    return spectral_function(vals, vecs, op, omegas, eta=eta, reference=0)
