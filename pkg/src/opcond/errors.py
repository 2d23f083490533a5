"""Exception types shared across the library."""


class OpcondError(Exception):
    """Base class for all library errors."""


class InvalidArgument(OpcondError, ValueError):
    """A parameter is outside its admissible range."""


class InvalidMesh(OpcondError, ValueError):
    """A mesh violates a structural precondition (empty, degenerate, ...)."""


class UnsupportedDegree(OpcondError, ValueError):
    """Requested polynomial degree is not supported."""


class UnsupportedConfiguration(OpcondError, ValueError):
    """Operator requested in a configuration it does not support."""


class CoercivityRisk(OpcondError, ValueError):
    """Kernel scale too small to guarantee positive definiteness."""


class RescaleRequired(OpcondError, ValueError):
    """Operator is only defined on the reference domain (0, 1)."""


class ShapeMismatch(OpcondError, ValueError):
    """Dimensions of composed operators do not line up."""


class LanczosBreakdown(OpcondError, RuntimeError):
    """Lanczos could not continue after the allowed number of restarts."""


class IndefiniteOperator(OpcondError, RuntimeError):
    """A negative Ritz value was found where an SPD pair was required."""


class FactorizationError(OpcondError, RuntimeError):
    """Cholesky factorization failed (matrix not positive definite)."""


class ConfigError(OpcondError, ValueError):
    """Experiment configuration file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
