"""Exception types shared across the package.

Every failure mode that callers are expected to handle gets its own class;
the CLI maps them onto stable exit codes (see ``graphmbo.cli``).
"""


class GraphMboError(Exception):
    """Base class for all package errors."""


class ConfigError(GraphMboError):
    """Invalid experiment configuration or CLI input."""


class DimensionError(GraphMboError):
    """A vector or field does not match the graph/grid it is used with."""


class IsolatedVertexError(GraphMboError):
    """A vertex ended up with zero degree; the graph assumptions require d_i > 0."""


class QuadratureError(GraphMboError):
    """Adaptive quadrature failed to reach the requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class ToleranceError(GraphMboError):
    """A numerical routine stopped without meeting its accuracy target."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConvergenceError(GraphMboError):
    """An iterative solver exhausted its iteration budget."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class PaddingError(GraphMboError):
    """Grid box too small for the requested convolution time."""

    def __init__(self, message, required_half_width=None):
        super().__init__(message)
        self.required_half_width = required_half_width


class UnsupportedDensityError(GraphMboError):
    """Density model cannot be sampled (evaluator-only custom densities)."""


class SigmaValidationError(GraphMboError):
    """Surface-tension matrix violates one of its structural conditions.

    ``violations`` is a list of human-readable strings, each naming the failed
    condition and witness indices.
    """

    def __init__(self, violations):
        super().__init__("invalid surface-tension matrix: " + "; ".join(violations))
        self.violations = list(violations)


class MethodError(GraphMboError):
    """Requested method is not applicable to the given inputs."""
