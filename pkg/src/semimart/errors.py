"""Exception hierarchy shared across the package.

Every error carries a plain-text message; the CLI maps these classes to
exit codes (parameter errors -> 2, invariant failures -> 1).
"""


class SemimartError(Exception):
    """Base class for all package errors."""


class ParameterError(SemimartError, ValueError):
    """A caller-supplied argument is out of range or malformed."""


class StructuralError(SemimartError, ValueError):
    """Objects that must share a space/grid do not."""


class PreconditionError(SemimartError, ValueError):
    """A documented operation precondition does not hold."""


class ResourceLimitError(SemimartError, ValueError):
    """A size guard (tree level cap, ladder cap) was exceeded."""


class InvariantViolation(SemimartError, AssertionError):
    """A verified contract failed at runtime; indicates a genuine bug
    or numerically hostile input, never a user mistake."""


class ConvergenceError(SemimartError, RuntimeError):
    """The convex-combination extraction did not stabilise.

    Carries the distance diagnostics so the failure is auditable.
    """

    def __init__(self, message, distances=None):
        super().__init__(message)
        self.distances = list(distances) if distances is not None else []
