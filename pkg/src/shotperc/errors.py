"""
Exception hierarchy for shotperc.

Every error raised on purpose by the library derives from ShotPercError and
from the builtin category callers would already catch (ValueError for bad
arguments, ArithmeticError for numerical trouble, ...).
"""


class ShotPercError(Exception):
    """Base class for all shotperc errors"""


class InvalidArgumentError(ShotPercError, ValueError):
    """An argument is outside the operation's domain"""


class PreconditionError(ShotPercError, ValueError):
    """An operation precondition does not hold (e.g. padding too small)"""


class NumericalConsistencyError(ShotPercError, ArithmeticError):
    """Two numerical paths disagree, or an iteration cannot bracket its target"""


class GeometryError(ShotPercError, AssertionError):
    """A generated geometry violates its own invariant"""


class ConfigError(ShotPercError, ValueError):
    """Invalid experiment configuration"""

    def __init__(self, message: str, problems=None):
        super().__init__(message)
        self.problems = list(problems or [])


class ReportError(ShotPercError, OSError):
    """Writing or reading a report failed"""
