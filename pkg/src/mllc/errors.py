"""Exception types shared across the package.

Input/contract violations raise InputError (CLI exit code 2); numerical
breakdowns that abort a computation raise NumericalError (exit code 3).
Non-convergence is not an exception: fits return with converged=False.
"""


class MllcError(Exception):
    """Base class for all package errors."""


class InputError(MllcError, ValueError):
    """Invalid data, schema, options, or a violated precondition."""


class NumericalError(MllcError, RuntimeError):
    """Non-finite likelihood or other unrecoverable numerical failure."""
