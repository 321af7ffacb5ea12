"""
Exception types shared across the lab modules.

The CLI maps `VerificationFailure` to exit code 2 and every other `LabError`
to exit code 1.
"""


class LabError(Exception):
    """Base class for all lab errors."""


class InvalidRegionError(LabError):
    """Region descriptor with non-finite or non-positive size."""


class SingularityError(LabError):
    """Kernel evaluated at the origin."""


class OnPoleError(LabError):
    """Potential evaluated on (or numerically at) a cloud point."""


class InvalidKernelConfig(LabError):
    """Kernel parameters outside their admissible range."""


class DomainError(LabError):
    """Parameter outside the range where a formula is defined."""


class PreconditionError(LabError):
    """Inputs violate a documented precondition of the operation."""


class BoundVacuousError(LabError):
    """A probability bound whose factors are non-positive at these parameters."""


class EigenSolverError(LabError):
    """Eigenvalue solver failed to converge or produced an unusable result."""


class IllPosedError(LabError):
    """Discount gamma does not exceed the principal eigenvalue."""


class CloudFormatError(LabError):
    """Malformed point cloud file."""


class ConfigError(LabError):
    """Invalid configuration file or settings."""


class VerificationFailure(LabError):
    """A numerical verification did not hold."""
