"""Shared fixtures: small systems, their exact solutions, one short sampling run."""

import numpy as np
import pytest

import esqmc
from esqmc import lattice, oracle, sse

J_LEG = 1.0
J_RUNG = 1.7320508075688767  # tan(pi/3)


@pytest.fixture(scope="session")
def ladder4():
    lat = lattice.build_ladder(4, J_LEG, J_RUNG, periodic=True)
    bip = lattice.make_bipartition(lat, "chain")
    mask = lattice.rotation_mask(lat)
    sym = lattice.translations_of_a(lat, bip)
    return lat, bip, mask, sym


@pytest.fixture(scope="session")
def ladder4_gs(ladder4):
    lat, _, _, _ = ladder4
    return oracle.ground_state(lat)


@pytest.fixture(scope="session")
def ladder4_rho(ladder4, ladder4_gs):
    _, bip, _, _ = ladder4
    return oracle.exact_rdm(ladder4_gs, bip)


@pytest.fixture(scope="session")
def ladder4_oracle_spectrum(ladder4, ladder4_rho):
    _, _, _, sym = ladder4
    return esqmc.solve_spectrum(
        esqmc.DenseRDM.from_matrix(ladder4_rho), symmetry=sym, lambda_floor=1e-10
    )


@pytest.fixture(scope="session")
def qmc4(ladder4):
    """One deterministic 4e5-snapshot sampling run on the 4-rung ladder."""
    lat, bip, mask, _ = ladder4
    state = sse.init_simulation(lat, bip, beta=16.0, seed=7, mask=mask)
    acc, stats = sse.run(state, n_therm=20_000, n_samples=400_000, n_bins=40)
    return acc, stats


@pytest.fixture(scope="session")
def qmc4_rdm(qmc4):
    acc, _ = qmc4
    return acc.finalize()


@pytest.fixture(scope="session")
def qmc4_spectrum(ladder4, qmc4_rdm):
    _, bip, mask, sym = ladder4
    return esqmc.solve_spectrum(
        qmc4_rdm, symmetry=sym, bipartition=bip, mask=mask, jackknife="full"
    )


@pytest.fixture()
def dimer():
    return lattice.LatticeSpec(2, ((0, 1, 1.0),), "chain", (2,), False)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
