"""Exception types shared across the package."""


class EsqmcError(Exception):
    """Base class for package errors."""


class GeometryError(EsqmcError):
    """Invalid lattice geometry or bipartition request."""


class SignProblemError(EsqmcError):
    """Coupling pattern admits no sign-free sublattice rotation."""


class CheckpointError(EsqmcError):
    """Checkpoint file is missing, corrupt, or from an incompatible version."""


class AccumulatorError(EsqmcError):
    """Inconsistent accumulator operation (metadata mismatch, too few bins)."""


class SolverError(EsqmcError):
    """Eigensolver failed to converge or produced unusable output."""


class RdmNotPositiveError(SolverError):
    """Sampled matrix has negative eigenvalues beyond the statistical tolerance."""


class ConfigError(EsqmcError):
    """Run configuration is missing required keys or contains unknown ones."""
