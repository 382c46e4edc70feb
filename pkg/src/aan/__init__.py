"""Self-attention models for predicting viewer valence/arousal from movie features."""

from .errors import (
    AanError,
    ContractError,
    DimensionError,
    FeatureCompletenessError,
    FeatureSchemaError,
    LabelRangeError,
    ManifestParseError,
    NumericError,
    ParameterError,
    TrainingError,
)
from .tensor import Tape, Tensor, backward, grad_check

__version__ = "0.1.0"

__all__ = [
    "AanError",
    "ContractError",
    "DimensionError",
    "FeatureCompletenessError",
    "FeatureSchemaError",
    "LabelRangeError",
    "ManifestParseError",
    "NumericError",
    "ParameterError",
    "TrainingError",
    "Tape",
    "Tensor",
    "backward",
    "grad_check",
    "__version__",
]
