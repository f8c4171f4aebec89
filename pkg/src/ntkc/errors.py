"""Exception types shared across the package."""


class NtkcError(Exception):
    """Base class for package errors."""


class ModelError(NtkcError, ValueError):
    """Invalid mixture model (weights, covariance PSD, shapes)."""


class FormatError(NtkcError, ValueError):
    """Malformed external file (IDX magic, CSV layout, binary header)."""


class DegenerateInputError(NtkcError, ValueError):
    """Input is structurally valid but degenerate (all-zero data, collapsed tau)."""


class NumericError(NtkcError, RuntimeError):
    """A numerical routine failed (non-finite values, no convergence).

    ``partial`` may carry the best estimate available at failure time.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class InfeasibleTargetsError(NtkcError, ValueError):
    """Coefficient inversion produced an impossible target (negative square)."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class NoSolutionError(NtkcError, RuntimeError):
    """Least-squares solve did not reach the residual tolerance.

    ``best`` carries the best candidate found across all restarts.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class CompressionError(NtkcError, RuntimeError):
    """Network compression failed at a specific layer."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer
