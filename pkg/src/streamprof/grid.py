"""The discrete set of CPU limits a job may be profiled at."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import ConfigError, GridExhausted

_TOL = 1e-9
# decimals kept when materialising grid values, strips float noise such as 0.30000000000000004
_DECIMALS = 10


@dataclass(frozen=True)
class LimitGrid:
    """Evenly spaced CPU limits ``l_min, l_min + delta, ..., l_max`` in vCPU."""

    l_min: float
    l_max: float
    delta: float = 0.1

    def __post_init__(self):
        if not (self.delta > 0 and self.l_min > 0 and self.l_max > 0):
            raise ConfigError("grid bounds and delta must be positive")
        if not self.l_min < self.l_max:
            raise ConfigError(f"l_min ({self.l_min}) must be < l_max ({self.l_max})")
        if self.l_min < self.delta - _TOL:
            raise ConfigError(f"l_min ({self.l_min}) must be >= delta ({self.delta})")
        steps = (self.l_max - self.l_min) / self.delta
        if abs(steps - round(steps)) > 1e-6:
            raise ConfigError(
                f"l_max - l_min = {self.l_max - self.l_min} is not a multiple of delta={self.delta}"
            )

    @cached_property
    def size(self) -> int:
        return int(round((self.l_max - self.l_min) / self.delta)) + 1

    @cached_property
    def values(self) -> np.ndarray:
        vals = np.round(self.l_min + self.delta * np.arange(self.size), _DECIMALS)
        vals.setflags(write=False)
        return vals

    def value(self, index: int) -> float:
        if not 0 <= index < self.size:
            raise IndexError(f"grid index {index} out of range [0, {self.size})")
        return float(self.values[index])

    def index(self, limit: float) -> int:
        """Index of an on-grid ``limit``; raises ValueError when off-grid or out of range."""
        k = (limit - self.l_min) / self.delta
        kr = int(round(k))
        if abs(k - kr) > 1e-6 or not 0 <= kr < self.size:
            raise ValueError(f"CPU limit {limit} is not on grid {self}")
        return kr

    def contains(self, limit: float) -> bool:
        try:
            self.index(limit)
        except ValueError:
            return False
        return True

    def snap_index(self, x: float) -> int:
        """Nearest grid index to ``x`` (ties round up), clamped into range."""
        k = math.floor((x - self.l_min) / self.delta + 0.5 + _TOL)
        return min(max(k, 0), self.size - 1)

    def snap(self, x: float) -> float:
        return self.value(self.snap_index(x))

    def to_dict(self) -> dict:
        return {"l_min": self.l_min, "l_max": self.l_max, "delta": self.delta}

    def nearest_free(self, index: int, taken) -> int:
        """Closest index not in ``taken``, preferring the smaller limit on equal distance.

        Raises GridExhausted when every grid point is taken.
        """
        taken = set(taken)
        if index not in taken:
            return index
        for offset in range(1, self.size):
            for cand in (index - offset, index + offset):
                if 0 <= cand < self.size and cand not in taken:
                    return cand
        raise GridExhausted("all grid limits have been profiled")
