"""Exception types shared across the package."""


class PeltError(Exception):
    """Base class for all library errors."""


class ShapeError(PeltError):
    """Tensor dimensions do not agree."""


class ConfigError(PeltError):
    """Invalid or inconsistent configuration."""


class ContractError(PeltError):
    """A documented precondition was violated by the caller."""


class LengthError(PeltError):
    """A sequence exceeds the model's maximum length."""


class NumericalError(PeltError):
    """A computation produced non-finite values."""


class DivergenceError(NumericalError):
    """Training loss became non-finite."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class FormatError(PeltError):
    """A serialized file has the wrong magic, version or layout."""


class CorruptionError(FormatError):
    """A serialized file ended before its declared payload."""


class FingerprintError(PeltError):
    """A lookup table does not belong to the checkpoint in use."""


class NoOccurrencesError(PeltError):
    """An entity has no occurrences to aggregate."""

    def __init__(self, entity_id):
        self.entity_id = entity_id
        super().__init__(f"no occurrences for entity {entity_id!r}")


class DegenerateDirectionError(PeltError):
    """The summed output representations have zero norm."""
