"""
Exception hierarchy shared by every layer of entdim
"""
from typing import List, Optional, Sequence, Tuple


class EntdimError(Exception):
    """Base class for all entdim errors"""


class DimensionError(EntdimError, ValueError):
    """Operand shapes or subsystem dimensions do not agree"""


class DomainError(EntdimError, ValueError):
    """Parameter outside the range where the operation is defined"""


class ContractViolation(EntdimError, ValueError):
    """Input breaks a precondition such as Hermiticity"""


class MeasurementValidationError(EntdimError, ValueError):
    """A measurement setting is not a valid POVM or basis"""


class AssemblyError(EntdimError):
    """The conic program cannot be assembled"""


class ExtractionError(EntdimError):
    """A solved program does not yield a valid protocol"""


class SimulationError(EntdimError):
    """Sampling reached a conditional the policy does not define"""


class IncompleteDataError(EntdimError):
    """Experimental data lacks setting pairs the policy needs"""

    def __init__(self, missing: Sequence[Tuple[int, int]]):
        self.missing: List[Tuple[int, int]] = list(missing)
        pairs = ", ".join(f"({x + 1},{y + 1})" for x, y in self.missing)
        super().__init__(f"missing setting pairs (x,y): {pairs}")


class DocumentError(EntdimError):
    """An input document is malformed"""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(message)
