"""Exception types shared across the package."""


class AanError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(AanError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class NumericError(AanError, ValueError):
    """Non-finite values where finite values are required."""


class ParameterError(AanError, ValueError):
    """A configuration value is outside its legal range."""


class ContractError(AanError, ValueError):
    """A caller violated an operation's contract."""


class FeatureSchemaError(AanError, ValueError):
    """A feature file disagrees with the declared modality schema."""


class FeatureCompletenessError(FeatureSchemaError):
    """A manifest clip has no feature row in a modality file."""


class ManifestParseError(AanError, ValueError):
    """A manifest file could not be parsed; carries the offending row."""


class LabelRangeError(AanError, ValueError):
    """An affect label lies outside its declared range."""


class TrainingError(AanError, RuntimeError):
    """Training diverged; carries the epoch at which it happened."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
