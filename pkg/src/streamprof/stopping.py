"""Early stopping for a single probe via a Student-t confidence interval on the mean."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, NamedTuple

from scipy.special import stdtrit

from .exceptions import ConfigError


@dataclass(frozen=True)
class StoppingRule:
    """Stop once ``ci_width < lam * mean`` (after ``min_samples``) or at ``max_samples``."""

    confidence_level: float = 0.95
    lam: float = 0.10
    min_samples: int = 30
    max_samples: int = 10000

    def __post_init__(self):
        if not 0 < self.confidence_level < 1:
            raise ConfigError("confidence_level must lie in (0, 1)")
        if not 0 < self.lam < 1:
            raise ConfigError("lambda must lie in (0, 1)")
        if self.min_samples < 2:
            raise ConfigError("min_samples must be >= 2")
        if self.min_samples > self.max_samples:
            raise ConfigError("min_samples must not exceed max_samples")

    @classmethod
    def fixed(cls, n_samples: int, confidence_level: float = 0.95) -> "StoppingRule":
        """Rule that always consumes exactly ``n_samples`` samples."""
        return cls(confidence_level=confidence_level, lam=0.5, min_samples=n_samples, max_samples=n_samples)

    def to_dict(self) -> dict:
        return {
            "confidence_level": self.confidence_level,
            "lambda": self.lam,
            "min_samples": self.min_samples,
            "max_samples": self.max_samples,
        }


class Stats(NamedTuple):
    mean: float
    variance: float
    n: int


class RunningStats:
    """Welford accumulator for mean and unbiased variance."""

    __slots__ = ("n", "mean", "_m2", "total")

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self._m2 = 0.0
        self.total = 0.0

    def push(self, x: float) -> None:
        self.n += 1
        self.total += x
        delta = x - self.mean
        self.mean += delta / self.n
        self._m2 += delta * (x - self.mean)

    @property
    def variance(self) -> float:
        return self._m2 / (self.n - 1) if self.n > 1 else 0.0

    def stats(self) -> Stats:
        return Stats(self.mean, self.variance, self.n)


def running_stats(samples: Iterable[float]) -> Stats:
    acc = RunningStats()
    for x in samples:
        acc.push(float(x))
    if acc.n == 0:
        raise ValueError("running_stats needs at least one sample")
    return acc.stats()


@lru_cache(maxsize=65536)
def t_quantile(q: float, df: int) -> float:
    """Student-t quantile; inverse regularized incomplete beta under the hood."""
    return float(stdtrit(df, q))


def ci_width(mean: float, variance: float, n: int, confidence_level: float) -> float:
    """Full width ``|b - a|`` of the two-sided t interval for the mean."""
    if n < 2:
        raise ValueError("the t interval needs n >= 2")
    if variance <= 0:
        return 0.0
    t = t_quantile((1.0 + confidence_level) / 2.0, n - 1)
    return 2.0 * t * math.sqrt(variance / n)


def should_stop(stats, rule: StoppingRule) -> bool:
    mean, variance, n = stats
    if not mean > 0:
        raise ValueError("per-sample runtimes must have a positive mean")
    if n < rule.min_samples:
        return False
    if n >= rule.max_samples:
        return True
    return ci_width(mean, variance, n, rule.confidence_level) < rule.lam * mean
