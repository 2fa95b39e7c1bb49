# app/core/exceptions.py

"""
Error hierarchy shared by the numerical services, the CLI and the HTTP API.

Numerical routines raise these; non-convergence is reported through result
flags instead.
"""

from typing import Optional


class BlochBandsError(Exception):
    """Base class for all errors raised by this package"""


class InvalidInputError(BlochBandsError, ValueError):
    """An argument violates a documented precondition"""


class DimensionMismatchError(InvalidInputError):
    """Shapes of operators, vectors or rasters do not fit together"""


class NotPositiveDefiniteError(BlochBandsError, ArithmeticError):
    """A Cholesky factorization broke down"""


class ContractViolation(BlochBandsError, RuntimeError):
    """A spot check found an input that breaks an operation's contract"""


class OracleSizeError(InvalidInputError):
    """Dense problem is larger than the configured oracle limit"""


class ConfigError(InvalidInputError):
    """Run configuration could not be parsed or validated"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}" if line is not None else message)
