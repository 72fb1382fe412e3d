"""Lattices, bipartitions, and symmetry data for spin-1/2 Heisenberg models.

Site states are packed into integer bitstrings. For the full system, bit ``i``
holds the spin of site ``i``. For a region A, bit ``t`` holds the spin of
``a_sites[t]``; ``a_sites`` is kept in canonical row-major order so packed
region keys are reproducible across runs and machines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, SignProblemError

Bond = tuple[int, int, float]


@dataclass(frozen=True)
class LatticeSpec:
    """A spin-1/2 lattice: sites, couplings, and geometry metadata.

    Parameters
    ----------
    n_sites : int
        Number of spin-1/2 sites.
    bonds : tuple of (int, int, float)
        Heisenberg couplings ``J_ij S_i . S_j``. Positive J is
        antiferromagnetic. Duplicate site pairs are allowed (they arise on
        two-rung ladders and two-site tori, where both windings of a
        periodic pair survive) and act as independent bonds.
    geometry : str
        ``"ladder"``, ``"square"``, or ``"custom"``.
    shape : tuple of int
        ``(L,)`` for ladders, ``(Lx, Ly)`` for square lattices.
    periodic : bool
        Whether the constructor applied periodic boundaries.
    """

    n_sites: int
    bonds: tuple[Bond, ...]
    geometry: str = "custom"
    shape: tuple[int, ...] = ()
    periodic: bool = True

    def __post_init__(self):
        if self.n_sites < 2:
            raise GeometryError(f"need at least 2 sites, got {self.n_sites}")
        for i, j, coupling in self.bonds:
            if not (0 <= i < self.n_sites and 0 <= j < self.n_sites):
                raise GeometryError(f"bond ({i},{j}) outside 0..{self.n_sites - 1}")
            if i == j:
                raise GeometryError(f"bond ({i},{j}) couples a site to itself")
            if coupling == 0.0:
                raise GeometryError(f"bond ({i},{j}) has zero coupling")

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    def bond_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return bonds as (site_i, site_j, J) numpy arrays."""
        if not self.bonds:
            return (np.zeros(0, np.int32), np.zeros(0, np.int32), np.zeros(0, np.float64))
        i, j, coupling = zip(*self.bonds)
        return (np.asarray(i, np.int32), np.asarray(j, np.int32), np.asarray(coupling, np.float64))


def ladder_couplings(theta: float, rescaled: bool = True) -> tuple[float, float]:
    """Map a coupling angle to ``(j_leg, j_rung)``.

    The angle parametrizes the leg/rung ratio as ``tan(theta) = j_rung/j_leg``
    with antiferromagnetic rungs throughout; legs are antiferromagnetic below
    ``pi/2`` and ferromagnetic above it. With ``rescaled=True`` the raw pair
    ``(cos(theta), sin(theta))`` is divided by ``|cos(theta)|``, so legs carry
    unit strength: ``(1, tan(theta))`` in the antiferromagnetic sector and
    ``(-1, |tan(theta)|)`` in the ferromagnetic one.
    """
    if not 0.0 < theta < math.pi or abs(theta - math.pi / 2) < 1e-12:
        raise GeometryError(f"theta must lie in (0, pi) excluding pi/2, got {theta}")
    if rescaled:
        return math.copysign(1.0, math.cos(theta)), abs(math.tan(theta))
    return math.cos(theta), math.sin(theta)


def build_ladder(length: int, j_leg: float, j_rung: float, periodic: bool = True) -> LatticeSpec:
    """Build a two-leg ladder of ``2 * length`` sites.

    Site ``2*x + leg`` sits at rung ``x`` on leg ``leg``. With periodic
    boundaries the lattice has ``2 * length`` leg bonds and ``length`` rung
    bonds. ``length = 2`` produces doubled leg bonds (both windings of each
    periodic pair), which is intentional.

    Parameters
    ----------
    length : int
        Number of rungs, at least 2.
    j_leg, j_rung : float
        Couplings along the legs and across the rungs.
    periodic : bool
        Close the legs into rings.
    """
    if length < 2:
        raise GeometryError(f"ladder length must be >= 2, got {length}")
    bonds: list[Bond] = []
    n_leg = length if periodic else length - 1
    for x in range(n_leg):
        nxt = (x + 1) % length
        for leg in (0, 1):
            if j_leg != 0.0:
                bonds.append((2 * x + leg, 2 * nxt + leg, j_leg))
    for x in range(length):
        if j_rung != 0.0:
            bonds.append((2 * x, 2 * x + 1, j_rung))
    return LatticeSpec(2 * length, tuple(bonds), "ladder", (length,), periodic)


def build_square(lx: int, ly: int, j: float = 1.0, periodic: bool = True) -> LatticeSpec:
    """Build an ``lx`` x ``ly`` square lattice with uniform coupling.

    Site ``y*lx + x`` sits at column ``x``, row ``y``. A periodic lattice
    carries ``2*lx*ly`` bonds; edge lengths of 2 produce doubled bonds.
    """
    if lx < 2 or ly < 2:
        raise GeometryError(f"square lattice needs lx, ly >= 2, got ({lx},{ly})")
    if j == 0.0:
        raise GeometryError("square lattice coupling must be nonzero")
    bonds: list[Bond] = []
    for y in range(ly):
        for x in range(lx):
            s = y * lx + x
            if periodic or x + 1 < lx:
                bonds.append((s, y * lx + (x + 1) % lx, j))
            if periodic or y + 1 < ly:
                bonds.append((s, ((y + 1) % ly) * lx + x, j))
    return LatticeSpec(lx * ly, tuple(bonds), "square", (lx, ly), periodic)


@dataclass(frozen=True)
class Bipartition:
    """An ordered split of the lattice into region A and environment B.

    ``a_sites`` order is canonical: packed region keys use bit ``t`` for
    ``a_sites[t]``, so two runs over the same cut produce directly
    comparable matrices.
    """

    a_sites: tuple[int, ...]
    b_sites: tuple[int, ...]
    cut: str = "custom"
    block_shape: tuple[int, int] | None = None

    def __post_init__(self):
        if not self.a_sites:
            raise GeometryError("region A is empty")
        both = set(self.a_sites) & set(self.b_sites)
        if both:
            raise GeometryError(f"sites {sorted(both)} appear in both A and B")
        if len(set(self.a_sites)) != len(self.a_sites):
            raise GeometryError("region A lists a site twice")

    @property
    def n_a(self) -> int:
        return len(self.a_sites)

    @property
    def a_dim(self) -> int:
        return 1 << len(self.a_sites)

    def a_bit_of_site(self, n_sites: int) -> np.ndarray:
        """Map site index to its bit position in region keys (-1 outside A)."""
        out = np.full(n_sites, -1, np.int32)
        for t, s in enumerate(self.a_sites):
            out[s] = t
        return out


def make_bipartition(
    lattice: LatticeSpec,
    cut: str,
    *,
    leg: int = 0,
    row: int = 0,
    block: tuple[int, int] | None = None,
    origin: tuple[int, int] = (0, 0),
) -> Bipartition:
    """Carve region A out of a lattice along a named cut.

    Parameters
    ----------
    cut : str
        ``"chain"``: one full leg of a ladder. ``"ring"``: one full row of a
        square lattice. ``"block"``: a ``w x h`` rectangle of a square
        lattice anchored at ``origin``.
    leg, row, block, origin
        Cut placement. ``block`` is required for the block cut.

    Returns
    -------
    Bipartition
        ``a_sites`` in row-major order; translation symmetry along the cut
        is preserved for chain and ring cuts.
    """
    if cut == "chain":
        if lattice.geometry != "ladder":
            raise GeometryError(f"chain cut needs a ladder, got {lattice.geometry}")
        if leg not in (0, 1):
            raise GeometryError(f"ladder leg must be 0 or 1, got {leg}")
        length = lattice.shape[0]
        a = tuple(2 * x + leg for x in range(length))
    elif cut == "ring":
        if lattice.geometry != "square":
            raise GeometryError(f"ring cut needs a square lattice, got {lattice.geometry}")
        lx, ly = lattice.shape
        if not 0 <= row < ly:
            raise GeometryError(f"row {row} outside 0..{ly - 1}")
        a = tuple(row * lx + x for x in range(lx))
    elif cut == "block":
        if lattice.geometry != "square":
            raise GeometryError(f"block cut needs a square lattice, got {lattice.geometry}")
        if block is None:
            raise GeometryError("block cut needs block=(w, h)")
        w, h = block
        lx, ly = lattice.shape
        if not (1 <= w <= lx and 1 <= h <= ly):
            raise GeometryError(f"block {w}x{h} does not fit in {lx}x{ly}")
        x0, y0 = origin
        a = tuple(
            ((y0 + dy) % ly) * lx + (x0 + dx) % lx for dy in range(h) for dx in range(w)
        )
        if len(set(a)) != len(a):
            raise GeometryError(f"block {w}x{h} wraps onto itself on a {lx}x{ly} lattice")
    else:
        raise GeometryError(f"unknown cut {cut!r}")
    b = tuple(s for s in range(lattice.n_sites) if s not in set(a))
    shape = tuple(block) if cut == "block" else None
    return Bipartition(a, b, cut, shape)


@dataclass(frozen=True)
class RotationMask:
    """Sublattice-rotation assignment making all couplings loop-friendly.

    ``flip[i]`` marks sites whose spin frame is rotated by pi about z.
    Antiferromagnetic bonds connect opposite marks, ferromagnetic bonds
    equal marks; every off-diagonal matrix element is then non-positive
    and the sampled weights are sign-free.
    """

    flip: tuple[bool, ...]

    def signs(self) -> np.ndarray:
        """Per-site signs: -1 on rotated sites, +1 elsewhere."""
        return np.where(np.asarray(self.flip), -1, 1).astype(np.int8)


def rotation_mask(lattice: LatticeSpec) -> RotationMask:
    """Two-color the lattice so every bond becomes sign-free.

    Runs a BFS over bonds demanding opposite colors across J > 0 and equal
    colors across J < 0. A parity conflict means the coupling pattern is
    frustrated in the QMC sense and is rejected.

    Raises
    ------
    SignProblemError
        If no consistent assignment exists.
    """
    color = np.full(lattice.n_sites, -1, np.int8)
    adj: list[list[tuple[int, int]]] = [[] for _ in range(lattice.n_sites)]
    for i, j, coupling in lattice.bonds:
        want = 1 if coupling > 0 else 0
        adj[i].append((j, want))
        adj[j].append((i, want))
    for root in range(lattice.n_sites):
        if color[root] >= 0:
            continue
        color[root] = 0
        queue = [root]
        while queue:
            u = queue.pop()
            for v, want in adj[u]:
                target = color[u] ^ want
                if color[v] < 0:
                    color[v] = target
                    queue.append(v)
                elif color[v] != target:
                    raise SignProblemError(
                        f"bond ({u},{v}) is frustrated: no sublattice rotation "
                        "removes the sign problem for this coupling pattern"
                    )
    return RotationMask(tuple(bool(c) for c in color))


def rotation_signs_on_keys(bipartition: Bipartition, mask: RotationMask) -> np.ndarray:
    """Diagonal of the rotation on region-A basis keys.

    Entry ``k`` is ``(-1) ** (number of up spins of key k on rotated sites)``.
    Conjugating a physical-basis matrix by this diagonal gives the matrix in
    the sampling frame; eigenvalues are unchanged.
    """
    n_a = bipartition.n_a
    flip_bits = sum(1 << t for t, s in enumerate(bipartition.a_sites) if mask.flip[s])
    keys = np.arange(1 << n_a, dtype=np.int64)
    masked = keys & flip_bits
    par = np.zeros(1 << n_a, np.int64)
    while masked.any():
        par ^= masked & 1
        masked >>= 1
    return np.where(par, -1.0, 1.0)


@dataclass(frozen=True)
class SymmetryMap:
    """Cyclic translations of region A, as permutations of A bit positions.

    ``perms[r][t]`` is the bit position that bit ``t`` moves to under the
    r-th power of the elementary translation. ``perms[0]`` is the identity.
    """

    perms: tuple[tuple[int, ...], ...]

    @property
    def order(self) -> int:
        return len(self.perms)


def translations_of_a(lattice: LatticeSpec, bipartition: Bipartition) -> SymmetryMap | None:
    """Cyclic translation group of region A, or None if the cut has none.

    Chain and ring cuts translate along their length; block cuts return
    None. The elementary translation is verified to map A-internal bonds
    onto A-internal bonds with equal couplings.
    """
    if bipartition.cut == "chain":
        g = lattice.shape[0]
    elif bipartition.cut == "ring":
        g = lattice.shape[0]
    else:
        return None
    if g != bipartition.n_a:
        raise GeometryError("cut length does not match region size")
    perms = tuple(tuple((t + r) % g for t in range(g)) for r in range(g))
    _check_bond_covariance(lattice, bipartition, perms[1 % g])
    return SymmetryMap(perms)


def _check_bond_covariance(
    lattice: LatticeSpec, bipartition: Bipartition, perm: tuple[int, ...]
) -> None:
    # translation must permute the A-internal bond set, couplings included
    bit_of = {s: t for t, s in enumerate(bipartition.a_sites)}
    internal = {}
    for i, j, coupling in lattice.bonds:
        if i in bit_of and j in bit_of:
            key = tuple(sorted((bit_of[i], bit_of[j])))
            internal[key] = internal.get(key, 0.0) + coupling
    for (ti, tj), coupling in internal.items():
        image = tuple(sorted((perm[ti], perm[tj])))
        if abs(internal.get(image, 0.0) - coupling) > 1e-12:
            raise GeometryError(
                "region A is not translation covariant: bond "
                f"{(ti, tj)} maps to {image} with a different coupling"
            )


def translate_keys(keys: np.ndarray, perm: tuple[int, ...]) -> np.ndarray:
    """Apply a bit permutation to packed region keys."""
    out = np.zeros_like(keys)
    for t, dest in enumerate(perm):
        out |= ((keys >> t) & 1) << dest
    return out


def momentum_frame_shift(
    bipartition: Bipartition, mask: RotationMask, symmetry: SymmetryMap, n_up: int
) -> int | None:
    """Momentum offset (units of 2*pi/g) between sampling and physical frames.

    The sublattice rotation D conjugates the translation: T D T^-1 equals D
    when the mask is uniform along A, and (-1)^(N_up) D when it alternates
    under the elementary translation. An eigenvector sampled at momentum
    index k in a sector with ``n_up`` up spins therefore sits at physical
    index ``(k + shift) % g`` with shift 0 (uniform mask, or alternating
    with even occupation) or g/2 (alternating with odd occupation).
    Returns None when the mask pattern fits neither case.
    """
    g = symmetry.order
    if g < 2:
        return 0
    perm = symmetry.perms[1]
    site_of_bit = list(bipartition.a_sites)
    inv = [0] * g
    for t, dest in enumerate(perm):
        inv[dest] = t
    diffs = {
        mask.flip[site_of_bit[t]] ^ mask.flip[site_of_bit[inv[t]]] for t in range(g)
    }
    if diffs == {False}:
        return 0
    if diffs == {True} and g % 2 == 0:
        return (n_up % 2) * (g // 2)
    return None
