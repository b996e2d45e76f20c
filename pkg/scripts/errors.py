"""
Fuzzy Shape Registration - Error Types
Shared exception hierarchy for geometry, energy, solver, voxelizer and file I/O
"""

from typing import Optional


class RegistrationError(Exception):
    """Base class for every error raised by the registration toolkit"""


class InvalidParameterError(RegistrationError, ValueError):
    """A parameter is outside its documented domain"""


class DegenerateInputError(RegistrationError, ValueError):
    """Input geometry is empty, too small or has zero extent"""


class NumericalError(RegistrationError, ArithmeticError):
    """Residuals or Jacobian entries became non-finite"""


class OptimizationError(RegistrationError):
    """
    Levenberg-Marquardt could not make progress

    The best parameters seen so far travel with the exception so callers can
    still report a transform.
    """

    def __init__(self, message: str, theta=None, stats=None):
        super().__init__(message)
        self.theta = theta
        self.stats = stats


class ParseError(RegistrationError, ValueError):
    """Malformed input file"""

    def __init__(self, message: str, path=None, line: Optional[int] = None):
        location = str(path) if path is not None else "<input>"
        if line is not None:
            location = f"{location}:{line}"
        super().__init__(f"{location}: {message}")
        self.path = path
        self.line = line
