"""
Exception hierarchy for the lattice BV engine.

Operations that compute raise these; operations that check (validators,
suites) report failures as data and only raise on malformed input.
"""
from typing import Optional


class BVLatticeError(Exception):
    """Base class for every engine error."""


class TruncationMismatchError(BVLatticeError):
    """Two operands carry different ℏ truncation orders."""

    def __init__(self, left: int, right: int):
        super().__init__(f"truncation mismatch: {left} != {right}")
        self.left = left
        self.right = right


class UnassignedGeneratorError(BVLatticeError):
    """evaluate() met an even generator without a value."""


class NegativeHbarPowerError(BVLatticeError):
    """A division by ℏ^k would leave a negative power of ℏ."""

    def __init__(self, message: str, order: Optional[int] = None):
        super().__init__(message)
        self.order = order


class ModelValidationError(BVLatticeError):
    """A model specification violates a structural invariant."""


class SymmetryError(ModelValidationError):
    pass


class RetardedSupportError(ModelValidationError):
    pass


class GreenIdentityError(ModelValidationError):
    pass


class LagrangianAxiomError(BVLatticeError):
    """A Lagrangian rule failed the sampled support or additivity axiom."""


class GradingError(BVLatticeError):
    """Wrong parity, ghost number or antifield number for an operation."""


class SupportError(BVLatticeError):
    """A functional escapes the window where the Green identities hold."""


class PreconditionError(BVLatticeError):
    """A documented precondition of an operation does not hold."""


class RenMapError(BVLatticeError):
    """A renormalization map is malformed."""


class NotMultilocalError(BVLatticeError):
    """A functional cannot be written as a multilocal tensor of the requested rank."""


class AnomalyLocalityError(BVLatticeError):
    """The extracted anomaly is not local."""

    def __init__(self, message: str, order: Optional[int] = None):
        super().__init__(message)
        self.order = order


class ModelLoadError(BVLatticeError):
    """A model file could not be parsed; carries the offending field path."""

    def __init__(self, message: str, path: Optional[str] = None, field: Optional[str] = None):
        location = ''
        if path:
            location += f"{path}: "
        if field:
            location += f"[{field}] "
        super().__init__(f"{location}{message}")
        self.path = path
        self.field = field
