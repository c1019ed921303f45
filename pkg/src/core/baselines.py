"""Non-learned forecasts: the train-split prior and span persistence."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .dataset import SpanSample
from .errors import GeometryMismatchError
from .models import LEVELS
from .network import Forecast


@dataclass(frozen=True, eq=False)
class GlobalPrior:
    """Per-level mean occupancy of the training targets."""

    soft: np.ndarray
    levels: Tuple[str, ...] = LEVELS
    threshold: float = 0.5

    def forecast(self, sample: SpanSample) -> Forecast:
        if self.soft.shape[-1] != sample.resolution:
            raise GeometryMismatchError("resolution", sample.resolution, self.soft.shape[-1])
        return Forecast(self.soft, self.levels, sample.origin, sample.cube_length_m, sample.resolution, self.threshold)


def baseline_global_prior(
    train_samples: Sequence[SpanSample], levels: Tuple[str, ...] = LEVELS, threshold: float = 0.5
) -> GlobalPrior:
    if not train_samples:
        raise ValueError("global prior needs at least one training sample")
    total = np.zeros_like(train_samples[0].target_array(levels), dtype=np.float64)
    for sample in train_samples:
        total += sample.target_array(levels)
    return GlobalPrior(total / len(train_samples), levels, threshold)


def baseline_persistence(sample: SpanSample, levels: Tuple[str, ...] = LEVELS, threshold: float = 0.5) -> Forecast:
    """Future span = union of the input frames at each level."""
    soft = np.stack(
        [np.any([span.levels[level].to_dense() for span in sample.inputs], axis=0) for level in levels]
    ).astype(np.float32)
    return Forecast(soft, levels, sample.origin, sample.cube_length_m, sample.resolution, threshold)
