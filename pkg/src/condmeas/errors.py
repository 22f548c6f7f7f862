"""Exception types shared across the package."""


class InvalidInput(ValueError):
    """Raised when arguments violate an operation's preconditions."""


class DomainError(ValueError):
    """Raised when a kernel or formula is evaluated outside its domain."""


class SolverError(RuntimeError):
    """The capacity solver ran out of iterations before reaching its tolerance."""

    def __init__(self, message, gap, iterations):
        super().__init__(f"{message} (gap={gap:.3e}, iterations={iterations})")
        self.gap = gap
        self.iterations = iterations


class ResourceError(RuntimeError):
    """An exact enumeration would exceed the configured size limit."""


class MissingCubeError(KeyError):
    """A hit cube has no entry in the hitting-probability table."""
