"""Exception hierarchy shared by all refsys modules."""


class RefsysError(Exception):
    """Base class for library errors."""


class ValidationError(RefsysError, ValueError):
    """An input violates a documented precondition (Hermiticity, completeness, ...)."""


class DimensionError(ValidationError):
    """Operand dimensions do not match."""


class CapacityError(RefsysError):
    """A dense object would exceed the supported dimension."""


class UndefinedConditionError(RefsysError):
    """The validity condition is undefined, e.g. for a zero-norm component."""


class ContractViolation(RefsysError):
    """A split was requested for a value whose validity condition fails."""
