"""Artifact fraction and good/bad labelling from ground-truth masks."""
from __future__ import annotations

from enum import Enum

import numpy as np


class Quality(str, Enum):
    GOOD = "good"
    BAD = "bad"


def artifact_fraction(mask) -> float:
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        raise ValueError("empty mask")
    return float(np.count_nonzero(mask) / mask.size)


def classify_binary(y: float, good_threshold: float = 0.0) -> Quality:
    """Good iff ``y <= good_threshold`` (the boundary counts as good)."""
    if not 0.0 <= good_threshold <= 1.0:
        raise ValueError("good_threshold must lie in [0, 1]")
    if not 0.0 <= y <= 1.0:
        raise ValueError("y must lie in [0, 1]")
    return Quality.GOOD if y <= good_threshold else Quality.BAD
