"""Exception types shared across the package."""


class SlravpError(Exception):
    """Base class for all package errors."""


class InputError(SlravpError):
    """Malformed or inconsistent problem data (dimensions, schema, weights)."""


class SingularGramError(SlravpError):
    """The banded Gram matrix of the inner least-norm problem is numerically
    singular (a Cholesky pivot fell below tolerance).

    This signals that the kernel matrix produces a rank-deficient constraint
    system; callers may retry with a different kernel/permutation or fall back
    to the dense pseudo-inverse oracle for small problems.
    """

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class SizeCapError(SlravpError):
    """A dense code path was invoked on a problem above its size cap."""


class InfeasibleError(SlravpError):
    """The inner least-norm system is rank deficient and inconsistent."""
