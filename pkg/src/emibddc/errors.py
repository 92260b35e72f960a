"""Exception types shared across the package."""


class EmiBddcError(Exception):
    """Base class for all package errors."""


class ConfigError(EmiBddcError):
    """Invalid configuration value or unknown configuration key."""


class MeshError(EmiBddcError):
    """Invalid mesh request or inconsistent mesh data."""


class TopologyError(EmiBddcError):
    """Broken interface topology (non-manifold faces, bad adjacency)."""


class AssemblyError(EmiBddcError):
    """Degenerate element geometry or inconsistent operator data."""


class ConstraintError(EmiBddcError):
    """Degenerate or rank-deficient primal constraint."""


class FactorizationError(EmiBddcError):
    """A sparse factorization failed (singular or indefinite block)."""


class SolverError(EmiBddcError):
    """Krylov solver detected an invalid operator or failed state."""


class VerificationError(EmiBddcError):
    """A self-check of the verification harness failed."""
