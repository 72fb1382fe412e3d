"""Geometry builders, bipartitions, rotation masks, translation symmetry."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esqmc import lattice
from esqmc.errors import GeometryError, SignProblemError

J_RUNG = 1.7320508075688767


def bond_set(lat):
    return [(min(i, j), max(i, j)) for i, j, _ in lat.bonds]


class TestCouplings:
    def test_rescaled_theta(self):
        jl, jr = lattice.ladder_couplings(np.pi / 3)
        assert jl == pytest.approx(1.0)
        assert jr == pytest.approx(np.tan(np.pi / 3))

    def test_raw_theta(self):
        jl, jr = lattice.ladder_couplings(np.pi / 4, rescaled=False)
        assert jl == pytest.approx(np.cos(np.pi / 4))
        assert jr == pytest.approx(np.sin(np.pi / 4))

    def test_ferromagnetic_leg_sector(self):
        jl, jr = lattice.ladder_couplings(2 * np.pi / 3)
        assert jl < 0 < jr


class TestLadder:
    def test_counts(self):
        lat = lattice.build_ladder(4, 1.0, J_RUNG)
        assert lat.n_sites == 8
        assert len(lat.bonds) == 12  # 2L legs + L rungs
        assert len(set(bond_set(lat))) == 12

    def test_open_legs(self):
        lat = lattice.build_ladder(4, 1.0, J_RUNG, periodic=False)
        assert len(lat.bonds) == 10

    def test_two_rungs_doubles_leg_bonds(self):
        # periodic wrap on two sites puts two parallel bonds on each leg
        lat = lattice.build_ladder(2, 1.0, J_RUNG)
        assert lat.n_sites == 4
        assert len(lat.bonds) == 6

    def test_couplings_assigned(self):
        lat = lattice.build_ladder(4, -1.0, J_RUNG)
        js = {round(j, 12) for _, _, j in lat.bonds}
        assert js == {-1.0, round(J_RUNG, 12)}

    def test_too_short(self):
        with pytest.raises(GeometryError):
            lattice.build_ladder(1, 1.0, 1.0)

    @given(length=st.integers(3, 20), periodic=st.booleans())
    @settings(max_examples=25, deadline=None)
    def test_bonds_reference_valid_sites(self, length, periodic):
        lat = lattice.build_ladder(length, 1.0, 2.0, periodic)
        n_leg = 2 * length if periodic else 2 * (length - 1)
        assert len(lat.bonds) == n_leg + length
        for i, j, _ in lat.bonds:
            assert 0 <= i < lat.n_sites and 0 <= j < lat.n_sites and i != j
        assert len(set(bond_set(lat))) == len(lat.bonds)


class TestSquare:
    def test_counts(self):
        lat = lattice.build_square(4, 4, 1.0)
        assert lat.n_sites == 16
        assert len(lat.bonds) == 32  # 2 per site under full periodicity

    @given(lx=st.integers(3, 8), ly=st.integers(3, 8))
    @settings(max_examples=20, deadline=None)
    def test_torus_bond_count(self, lx, ly):
        lat = lattice.build_square(lx, ly, 1.0)
        assert len(lat.bonds) == 2 * lx * ly
        for i, j, _ in lat.bonds:
            assert 0 <= i < lat.n_sites and 0 <= j < lat.n_sites

    def test_open_boundaries(self):
        lat = lattice.build_square(3, 3, 1.0, periodic=False)
        assert len(lat.bonds) == 12


class TestBipartition:
    def test_chain_cut_selects_one_leg(self):
        lat = lattice.build_ladder(4, 1.0, J_RUNG)
        bip = lattice.make_bipartition(lat, "chain")
        assert bip.n_a == 4
        assert set(bip.a_sites) | set(bip.b_sites) == set(range(8))
        assert not set(bip.a_sites) & set(bip.b_sites)
        # leg 0 sites sit at even indices in the interleaved layout
        assert all(s % 2 == 0 for s in bip.a_sites)

    def test_chain_cut_other_leg(self):
        lat = lattice.build_ladder(4, 1.0, J_RUNG)
        bip = lattice.make_bipartition(lat, "chain", leg=1)
        assert all(s % 2 == 1 for s in bip.a_sites)

    def test_ring_cut_selects_one_row(self):
        lat = lattice.build_square(4, 4, 1.0)
        bip = lattice.make_bipartition(lat, "ring", row=2)
        assert bip.n_a == 4
        assert set(bip.a_sites) == {8, 9, 10, 11}

    def test_block_cut(self):
        lat = lattice.build_square(4, 4, 1.0)
        bip = lattice.make_bipartition(lat, "block", block=(2, 2), origin=(1, 1))
        assert bip.n_a == 4
        assert set(bip.a_sites) == {5, 6, 9, 10}

    def test_oversized_block_rejected(self):
        lat = lattice.build_square(4, 4, 1.0)
        with pytest.raises(GeometryError):
            lattice.make_bipartition(lat, "block", block=(5, 2))

    def test_unknown_cut(self):
        lat = lattice.build_square(4, 4, 1.0)
        with pytest.raises(GeometryError):
            lattice.make_bipartition(lat, "diagonal")

    def test_bit_mapping_is_positional(self):
        lat = lattice.build_ladder(4, 1.0, J_RUNG)
        bip = lattice.make_bipartition(lat, "chain")
        bit_of = bip.a_bit_of_site(lat.n_sites)
        for t, site in enumerate(bip.a_sites):
            assert bit_of[site] == t
        assert all(bit_of[s] == -1 for s in bip.b_sites)


class TestRotationMask:
    def test_afm_ladder_is_two_colorable(self):
        lat = lattice.build_ladder(6, 1.0, J_RUNG)
        mask = lattice.rotation_mask(lat)
        signs = mask.signs()
        for i, j, coupling in lat.bonds:
            if coupling > 0:
                assert signs[i] * signs[j] == -1
            else:
                assert signs[i] * signs[j] == 1

    def test_fm_legs_colored_uniformly_along_leg(self):
        lat = lattice.build_ladder(6, -1.0, J_RUNG)
        mask = lattice.rotation_mask(lat)
        signs = mask.signs()
        for i, j, coupling in lat.bonds:
            expected = -1 if coupling > 0 else 1
            assert signs[i] * signs[j] == expected

    def test_odd_afm_cycle_has_no_mask(self):
        tri = lattice.LatticeSpec(
            3, ((0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)), "triangle", (3,), True
        )
        with pytest.raises(SignProblemError):
            lattice.rotation_mask(tri)

    def test_odd_periodic_square_has_no_mask(self):
        lat = lattice.build_square(3, 3, 1.0)
        with pytest.raises(SignProblemError):
            lattice.rotation_mask(lat)

    def test_signs_on_keys(self):
        lat = lattice.build_ladder(4, 1.0, J_RUNG)
        bip = lattice.make_bipartition(lat, "chain")
        mask = lattice.rotation_mask(lat)
        signs = lattice.rotation_signs_on_keys(bip, mask)
        assert signs.shape == (16,)
        assert set(np.unique(signs)) <= {-1.0, 1.0}
        assert signs[0] == 1.0
        # sign of a key factorizes over set bits
        for key in range(16):
            prod = 1.0
            for t in range(4):
                if key >> t & 1:
                    prod *= signs[1 << t]
            assert signs[key] == prod


class TestTranslations:
    def test_chain_cut_translations(self):
        lat = lattice.build_ladder(4, 1.0, J_RUNG)
        bip = lattice.make_bipartition(lat, "chain")
        sym = lattice.translations_of_a(lat, bip)
        assert sym is not None and sym.order == 4

    def test_each_translation_preserves_internal_bonds(self):
        lat = lattice.build_ladder(6, 1.0, J_RUNG)
        bip = lattice.make_bipartition(lat, "chain")
        sym = lattice.translations_of_a(lat, bip)
        bit_of = bip.a_bit_of_site(lat.n_sites)
        internal = {}
        for i, j, j_val in lat.bonds:
            if bit_of[i] >= 0 and bit_of[j] >= 0:
                a, b = int(bit_of[i]), int(bit_of[j])
                internal[(min(a, b), max(a, b))] = j_val
        assert internal
        for perm in sym.perms:
            for (i, j), j_val in internal.items():
                a, b = perm[i], perm[j]
                assert internal[(min(a, b), max(a, b))] == j_val

    def test_block_cut_has_no_cyclic_translation(self):
        lat = lattice.build_square(4, 4, 1.0)
        bip = lattice.make_bipartition(lat, "block", block=(2, 2))
        assert lattice.translations_of_a(lat, bip) is None

    def test_translate_keys_roundtrip(self):
        lat = lattice.build_ladder(4, 1.0, J_RUNG)
        bip = lattice.make_bipartition(lat, "chain")
        sym = lattice.translations_of_a(lat, bip)
        keys = np.arange(16, dtype=np.int64)
        once = lattice.translate_keys(keys, sym.perms[1])
        assert sorted(once.tolist()) == sorted(keys.tolist())
        cycled = keys
        for _ in range(sym.order):
            cycled = lattice.translate_keys(cycled, sym.perms[1])
        assert np.array_equal(cycled, keys)


class TestFrameShift:
    def test_alternating_mask_shift_depends_on_sector_parity(self):
        lat = lattice.build_ladder(4, 1.0, J_RUNG)
        bip = lattice.make_bipartition(lat, "chain")
        mask = lattice.rotation_mask(lat)
        sym = lattice.translations_of_a(lat, bip)
        assert lattice.momentum_frame_shift(bip, mask, sym, n_up=2) == 0
        assert lattice.momentum_frame_shift(bip, mask, sym, n_up=3) == 2

    def test_uniform_mask_never_shifts(self):
        lat = lattice.build_ladder(4, -1.0, J_RUNG)
        bip = lattice.make_bipartition(lat, "chain")
        mask = lattice.rotation_mask(lat)
        sym = lattice.translations_of_a(lat, bip)
        for n_up in range(5):
            assert lattice.momentum_frame_shift(bip, mask, sym, n_up) == 0
