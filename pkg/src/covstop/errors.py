"""Error taxonomy shared across the package.

Contract violations map to CLI exit code 2, numerical failures to exit
code 3.
"""


class CovstopError(Exception):
    """Base class for all package errors."""


class ContractError(CovstopError, ValueError):
    """An input violated a documented precondition or invariant."""


class NumericalError(CovstopError, RuntimeError):
    """A numerical operation failed (singular solve, non-convergence)."""
