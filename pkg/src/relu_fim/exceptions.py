class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DimensionError(ValueError):
    """Array shapes do not agree."""


class DenseCapError(MemoryError):
    """A dense p x p matrix was requested above the configured size cap."""


class ConvergenceError(RuntimeError):
    """An iterative eigensolver did not converge.

    ``estimates`` holds the best Ritz values found before giving up.
    """

    def __init__(self, message, estimates=None):
        super().__init__(message)
        self.estimates = estimates


class RunMismatchError(ValueError):
    """Inputs to a certificate do not come from the same run."""
