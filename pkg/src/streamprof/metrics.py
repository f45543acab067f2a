"""Prediction error and strategy ranking helpers."""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

DEFAULT_EPSILON = 1e-12


def smape(actual, predicted, epsilon: float = DEFAULT_EPSILON) -> float:
    """Ratio-of-sums SMAPE, ``sum|p - y| / sum(y + p)``, bounded in [0, 1].

    Predictions are floored at ``epsilon`` so the denominator stays positive.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    y = np.asarray(actual, dtype=float).ravel()
    p = np.asarray(predicted, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("smape of an empty vector")
    if y.shape != p.shape:
        raise ValueError(f"length mismatch: {y.size} actual vs {p.size} predicted")
    if np.any(~(y > 0)):
        raise ValueError("actual values must be positive")
    p = np.maximum(p, epsilon)
    return float(np.abs(p - y).sum() / (y + p).sum())


def count_wins(table: Sequence[Mapping[str, float]], tolerance: float = 0.0) -> dict:
    """Tally per strategy how many cells it (near-)wins.

    ``table`` holds one mapping ``strategy -> smape`` per cell. A strategy wins
    a cell when its SMAPE is at most ``(1 + tolerance)`` times the cell minimum.
    NaN entries (failed sessions) never win.
    """
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    if not table:
        raise ValueError("empty win table")
    wins = {}
    for cell in table:
        for name in cell:
            wins.setdefault(name, 0)
        finite = [v for v in cell.values() if np.isfinite(v)]
        if not finite:
            continue
        bound = (1.0 + tolerance) * min(finite)
        for name, value in cell.items():
            if np.isfinite(value) and value <= bound:
                wins[name] += 1
    return wins
