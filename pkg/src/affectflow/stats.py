"""Small numeric helpers shared across stages."""

from __future__ import annotations

import math
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

import numpy as np


def nearest_rank(values: Sequence[float] | np.ndarray, percent: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    data = np.sort(np.asarray(values, dtype=float))
    if data.size == 0:
        raise ValueError("percentile of empty data")
    if not 0 <= percent <= 100:
        raise ValueError("percent must lie in [0, 100]")
    rank = max(1, math.ceil(percent / 100.0 * data.size))
    return float(data[rank - 1])


def nearest_rank_sorted(sorted_values: np.ndarray, percent: float, axis: int = 0) -> np.ndarray:
    """Vectorised nearest-rank over an axis that is already sorted."""
    n = sorted_values.shape[axis]
    rank = max(1, math.ceil(percent / 100.0 * n))
    return np.take(sorted_values, rank - 1, axis=axis)


def round_half_away(value: float) -> int:
    return int(Decimal(repr(value)).quantize(Decimal(1), rounding=ROUND_HALF_UP))
