"""Exception types shared across the package."""


class CcamaxError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(CcamaxError, ValueError):
    """Invalid inputs: malformed files, bad shapes, out-of-range options."""


class NumericalError(CcamaxError, RuntimeError):
    """Numerical failure during computation."""


class IllConditionedError(NumericalError):
    """A covariance block is singular or too ill-conditioned to invert."""


class InternalConsistencyError(NumericalError):
    """An internal identity was violated beyond floating-point slack."""


class DegenerateStreamError(NumericalError):
    """Every update of the one-step stream was degenerate (zero coherence)."""


class SearchSpaceError(ValidationError):
    """Exhaustive search was requested over too many subset combinations."""
