"""
Exception hierarchy for the bath characterization toolkit.
"""

from typing import Sequence


class QBathError(Exception):
    """Base class for every error raised by qbath"""


class ConfigValidationError(QBathError, ValueError):
    """Configuration rejected before any run starts"""


class HilbertSpaceError(QBathError, ValueError):
    """Label collision, unknown label or dimension mismatch"""


class NonHermitianError(QBathError, ValueError):
    """An operator that must be Hermitian is not"""


class ModelError(QBathError, ValueError):
    """Malformed bath model or a model unsuitable for the requested operation"""


class TimeOrderingError(QBathError, ValueError):
    """Times that must be strictly increasing are not"""


class MissingCorrelationError(QBathError, KeyError):
    """A correlation needed by a computation is absent from the tensor"""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing correlation"


class GridMismatchError(QBathError, ValueError):
    """Two time grids that must coincide do not"""


class ReconstructionError(QBathError, ValueError):
    """Measurement data cannot yield the requested correlation estimate"""


class NumericalInvariantError(QBathError, ArithmeticError):
    """A numerical invariant was violated"""


class RankDeficiencyError(NumericalInvariantError):
    """The design matrix cannot identify every targeted correlation"""

    def __init__(self, message: str, unidentifiable: Sequence = ()):
        super().__init__(message)
        self.unidentifiable = tuple(unidentifiable)


class ZeroProbabilityBranchError(NumericalInvariantError):
    """A sampled outcome had (numerically) zero probability"""


class GridTooCoarseError(NumericalInvariantError):
    """Estimated quadrature error exceeds the requested tolerance"""
