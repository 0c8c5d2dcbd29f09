"""Exception types shared across the library."""


class AvFusionError(Exception):
    """Base class for all library errors."""


class ShapeError(AvFusionError, ValueError):
    """Operands have incompatible dimensions."""


class DegenerateInputError(AvFusionError, ValueError):
    """Input is structurally valid but degenerate (zero vector, empty list, ...)."""


class DegenerateBatchError(AvFusionError, ValueError):
    """A train-mode batch is too small for batch statistics."""


class ConfigurationError(AvFusionError, ValueError):
    """A configuration value is out of its allowed range."""


class LabelError(AvFusionError, ValueError):
    """A class label is outside the valid range."""


class ConsistencyError(AvFusionError, ValueError):
    """A cache or state object does not match the model it is used with."""


class PersistenceError(AvFusionError, ValueError):
    """A file could not be parsed or does not match the expected format."""


class CheckpointKindError(PersistenceError):
    """A checkpoint was loaded into the wrong head kind."""
