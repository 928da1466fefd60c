"""Dataset-shift toolkit: shift samplers, importance weighting, weighted ERM
and importance-weighted set-to-set matching."""

from .core import (
    Hypothesis,
    HypothesisKind,
    LabeledDataset,
    LossKind,
    ShiftSpec,
    ShiftType,
    WeightVector,
    empirical_risk,
    pointwise_loss,
    predict,
    weighted_empirical_risk,
)
from .errors import DataError, NumericError, ShiftBenchError

__version__ = "0.1.0"
