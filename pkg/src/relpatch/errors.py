"""Exception types shared across the package."""


class RelPatchError(Exception):
    """Base class for all package errors."""


class DimensionError(RelPatchError, ValueError):
    """Shapes or sizes do not agree."""


class NumericError(RelPatchError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class ConfigurationError(RelPatchError, ValueError):
    """Inconsistent or incomplete configuration."""


class InfeasibleError(RelPatchError, ValueError):
    """The requested geometry cannot be realized on the grid."""


class IngestionError(RelPatchError, OSError):
    """A dataset file is missing or malformed."""


class LoadError(RelPatchError, OSError):
    """A checkpoint cannot be read or does not match the expected model."""
