class AprError(Exception):
    """Base class for errors raised by this package."""


class DomainError(AprError, ValueError):
    """An input lies outside the domain of an operation."""


class ContractError(AprError, ValueError):
    """Operands violate a shape or modality contract."""


class FormatError(AprError, ValueError):
    """A file or wire payload could not be parsed."""


class TrainingDiverged(AprError, RuntimeError):
    """A non-finite value appeared during training."""
