"""Entanglement spectra of spin-1/2 Heisenberg systems from QMC-sampled RDMs."""

from .accumulator import RdmAccumulator, RunMetadata, SampledRDM, merge
from .config import RunConfig, build_system, list_presets, load_config, parse_config
from .errors import (
    AccumulatorError,
    CheckpointError,
    ConfigError,
    EsqmcError,
    GeometryError,
    RdmNotPositiveError,
    SignProblemError,
    SolverError,
)
from .fits import (
    FitResult,
    chi_perp_from_slope,
    extrapolate_velocity,
    fit_groundlevel_scaling,
    fit_linear_band,
    fit_quadratic,
    fit_sine_dispersion,
    fit_tos,
)
from .lattice import (
    Bipartition,
    LatticeSpec,
    RotationMask,
    SymmetryMap,
    build_ladder,
    build_square,
    ladder_couplings,
    make_bipartition,
    momentum_frame_shift,
    rotation_mask,
    rotation_signs_on_keys,
    translate_keys,
    translations_of_a,
)
from .oracle import (
    GroundStateVector,
    SpectralCurve,
    energy_gap,
    entanglement_spectral_function,
    exact_rdm,
    ground_state,
    hamiltonian_spectral_function,
    sector_basis,
    spectral_function,
    sz_momentum_operator,
    thermal_rdm,
)
from .pipeline import (
    PipelineResult,
    compare_spectra,
    export_comparison,
    export_rdm,
    fit_spectrum,
    load_rdm,
    oracle_spectrum,
    run_pipeline,
)
from .spectrum import (
    DenseRDM,
    EntanglementSpectrum,
    EsLevel,
    momentum_project,
    solve_spectrum,
    spin_label,
)
from .sse import (
    BoundarySnapshot,
    RunStats,
    SimState,
    checkpoint,
    init_simulation,
    restore,
    run,
    run_chains,
    sweep_and_snapshot,
    thermalize,
)

__version__ = "0.1.0"

__all__ = [
    "AccumulatorError",
    "Bipartition",
    "BoundarySnapshot",
    "CheckpointError",
    "ConfigError",
    "DenseRDM",
    "EntanglementSpectrum",
    "EsLevel",
    "EsqmcError",
    "FitResult",
    "GeometryError",
    "GroundStateVector",
    "LatticeSpec",
    "PipelineResult",
    "RdmAccumulator",
    "RdmNotPositiveError",
    "RotationMask",
    "RunConfig",
    "RunMetadata",
    "RunStats",
    "SampledRDM",
    "SignProblemError",
    "SimState",
    "SolverError",
    "SpectralCurve",
    "SymmetryMap",
    "build_ladder",
    "build_square",
    "build_system",
    "checkpoint",
    "chi_perp_from_slope",
    "compare_spectra",
    "energy_gap",
    "entanglement_spectral_function",
    "exact_rdm",
    "export_comparison",
    "export_rdm",
    "extrapolate_velocity",
    "fit_groundlevel_scaling",
    "fit_linear_band",
    "fit_quadratic",
    "fit_sine_dispersion",
    "fit_spectrum",
    "fit_tos",
    "ground_state",
    "hamiltonian_spectral_function",
    "init_simulation",
    "ladder_couplings",
    "list_presets",
    "load_config",
    "load_rdm",
    "make_bipartition",
    "merge",
    "momentum_frame_shift",
    "momentum_project",
    "oracle_spectrum",
    "parse_config",
    "restore",
    "rotation_mask",
    "rotation_signs_on_keys",
    "run",
    "run_chains",
    "run_pipeline",
    "sector_basis",
    "solve_spectrum",
    "spectral_function",
    "spin_label",
    "sweep_and_snapshot",
    "sz_momentum_operator",
    "thermal_rdm",
    "thermalize",
    "translate_keys",
    "translations_of_a",
    "__version__",
]
