"""Choosing which CPU limits to profile.

``initial_limits`` picks the parallel start set, ``synthetic_target`` turns the
probe at the smallest of them into the runtime target, and the strategy
classes propose one further limit per profiling step.
"""
from __future__ import annotations

import math
import warnings
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from . import model as rm
from .exceptions import ConfigError, GridExhausted, InfeasibleConfiguration, NumericalFailure
from .grid import LimitGrid
from .model import ProfilePoint, RuntimeModel
from .stopping import StoppingRule

STANDARD_FRACTIONS = (0.025, 0.05, 0.075, 0.1, 0.125, 0.15)
SYNTHETIC_FLOOR = 0.2


class ConfigurationWarning(UserWarning):
    pass


def initial_limits(p: float, n: int, grid: LimitGrid) -> tuple:
    """CPU limits to profile in parallel before any sequential step.

    The first element is always the synthetic-target limit. Every element is
    snapped to ``grid`` (nearest, ties up) before later elements are derived
    from it, so remainders stay on the grid and the sum never exceeds
    ``l_max``.
    """
    if n not in (2, 3, 4):
        raise ConfigError(f"n_initial must be 2, 3 or 4, got {n}")
    if not 0 < p < 1:
        raise ConfigError(f"synthetic-target fraction must lie in (0, 1), got {p}")
    if not any(math.isclose(p, s) for s in STANDARD_FRACTIONS):
        warnings.warn(f"non-standard synthetic-target fraction p={p}", ConfigurationWarning, stacklevel=2)
    l_min, l_max = grid.l_min, grid.l_max
    if n == 4 and l_max < 4 * l_min:
        raise InfeasibleConfiguration(f"4 unique limits >= {l_min} cannot sum to <= {l_max}")

    chosen: list[int] = []

    def take(x: float) -> float:
        if x < l_min - grid.delta / 2 or x > l_max + grid.delta / 2:
            raise InfeasibleConfiguration(f"initial limit {x:.6g} falls outside [{l_min}, {l_max}]")
        idx = grid.snap_index(x)
        if idx in chosen:
            idx += 1
            if idx in chosen or idx >= grid.size:
                raise InfeasibleConfiguration(f"cannot make initial limit {x:.6g} unique")
        chosen.append(idx)
        return grid.value(idx)

    l_p = take(max(SYNTHETIC_FLOOR, l_max * p))
    if n == 2:
        take(l_max - l_p)
    elif n == 3 and l_max > 1:
        l_m = take((l_min + l_max) / 2)
        take(l_max - l_m - l_p)
    elif n == 3:
        take((l_p + l_max) / 4)
        take(l_max / 2)
    else:
        l_q = take((l_p + l_max) / 4)
        l_qm = take((l_p + l_q) / 2)
        take(l_max - l_qm - l_q - l_p)

    limits = tuple(grid.value(i) for i in chosen)
    if sum(limits) > l_max + 1e-9:
        raise InfeasibleConfiguration(f"initial limits {limits} sum above l_max={l_max}")
    return limits


def synthetic_target(point: ProfilePoint, grid: Optional[LimitGrid] = None,
                     rule: Optional[StoppingRule] = None) -> float:
    """Runtime target for all sequential steps: the mean runtime observed at ``l_p``."""
    if rule is not None and point.n_samples < rule.min_samples:
        raise ValueError(
            f"probe at {point.cpu_limit} used {point.n_samples} samples, below min_samples={rule.min_samples}"
        )
    if grid is not None and math.isclose(point.cpu_limit, grid.l_min):
        warnings.warn(
            f"synthetic target sits on the smallest limit {grid.l_min}; profiling will be slow",
            ConfigurationWarning,
            stacklevel=2,
        )
    return point.mean_runtime


class SelectionStrategy:
    """Base class: tracks observations and the set of profiled grid indices."""

    name = "base"

    def __init__(self, grid: LimitGrid, target_runtime: float,
                 observed: Iterable[ProfilePoint] = (), seed: int = 0):
        if not target_runtime > 0:
            raise ValueError("target runtime must be positive")
        self.grid = grid
        self.target_runtime = float(target_runtime)
        self.seed = int(seed)
        self.observed: list[ProfilePoint] = []
        self._taken: dict[int, ProfilePoint] = {}
        for point in observed:
            self.observe(point)

    def observe(self, point: ProfilePoint) -> None:
        idx = self.grid.index(point.cpu_limit)
        if idx in self._taken:
            raise ValueError(f"limit {point.cpu_limit} was already profiled")
        self._taken[idx] = point
        self.observed.append(point)

    @property
    def free_indices(self) -> list:
        return [i for i in range(self.grid.size) if i not in self._taken]

    def next_limit(self) -> float:
        raise NotImplementedError


class NestedModelingStrategy(SelectionStrategy):
    """Fit the tiered runtime model and invert it at the target runtime.

    Each refit is warm-started from the previous model.
    """

    name = "nms"

    def __init__(self, *args, **kwargs):
        self.model: Optional[RuntimeModel] = None
        self.last_inversion: Optional[rm.Inversion] = None
        self._fitted_on = 0
        super().__init__(*args, **kwargs)

    def next_limit(self) -> float:
        if not self.observed:
            raise ValueError("NMS needs at least one observation")
        if len(self._taken) >= self.grid.size:
            raise GridExhausted("all grid limits have been profiled")
        if self._fitted_on != len(self.observed):
            self.model = rm.fit(self.observed, warm_start=self.model)
            self._fitted_on = len(self.observed)
        self.last_inversion = rm.invert(self.model, self.target_runtime, self.grid)
        idx = self.grid.nearest_free(self.grid.index(self.last_inversion.limit), self._taken)
        return self.grid.value(idx)


class BinarySearchStrategy(SelectionStrategy):
    """Halve a bracket of grid indices around the limit that meets the target."""

    name = "bs"

    def __init__(self, grid: LimitGrid, *args, **kwargs):
        self.lo = 0
        self.hi = grid.size - 1
        self._pending: Optional[int] = None
        super().__init__(grid, *args, **kwargs)

    @property
    def width(self) -> int:
        return max(self.hi - self.lo + 1, 0)

    def _narrow(self, mid: int, runtime: float) -> None:
        # too slow -> needs more CPU; otherwise the limit can shrink
        if runtime > self.target_runtime:
            self.lo = mid + 1
        else:
            self.hi = mid - 1

    def observe(self, point: ProfilePoint) -> None:
        super().observe(point)
        idx = self.grid.index(point.cpu_limit)
        if idx == self._pending:
            self._narrow(idx, point.mean_runtime)
            self._pending = None

    def next_limit(self) -> float:
        while self.lo <= self.hi:
            mid = (self.lo + self.hi) // 2
            if mid in self._taken:
                self._narrow(mid, self._taken[mid].mean_runtime)
                continue
            self._pending = mid
            return self.grid.value(mid)
        raise GridExhausted("binary-search bracket is empty")


def matern52(x1, x2, length_scale: float, variance: float) -> np.ndarray:
    h = np.abs(np.subtract.outer(np.asarray(x1, float), np.asarray(x2, float)))
    s = math.sqrt(5.0) * h / length_scale
    return variance * (1.0 + s + s * s / 3.0) * np.exp(-s)


def _cholesky_with_jitter(K: np.ndarray, variance: float, retries: int = 3) -> np.ndarray:
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-8 * variance
    eye = np.eye(len(K))
    for _ in range(retries):
        try:
            return np.linalg.cholesky(K + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalFailure("kernel matrix is singular even after jitter")


class GaussianProcess:
    """Exact GP regression with a Matern-5/2 kernel and a constant prior mean."""

    def __init__(self, length_scale: float, signal_variance: float,
                 noise_variance: float = 1e-4, mean: float = 0.0):
        self.length_scale = length_scale
        self.signal_variance = signal_variance
        self.noise_variance = noise_variance
        self.mean = mean

    def fit(self, X, y) -> "GaussianProcess":
        self.X_ = np.asarray(X, float).ravel()
        y = np.asarray(y, float).ravel()
        K = matern52(self.X_, self.X_, self.length_scale, self.signal_variance)
        K[np.diag_indices_from(K)] += self.noise_variance
        self.L_ = _cholesky_with_jitter(K, self.signal_variance)
        resid = y - self.mean
        self.alpha_ = np.linalg.solve(self.L_.T, np.linalg.solve(self.L_, resid))
        self.log_marginal_likelihood_ = float(
            -0.5 * resid @ self.alpha_ - np.log(np.diag(self.L_)).sum() - 0.5 * len(y) * math.log(2 * math.pi)
        )
        return self

    def predict(self, X):
        X = np.asarray(X, float).ravel()
        Ks = matern52(X, self.X_, self.length_scale, self.signal_variance)
        mu = self.mean + Ks @ self.alpha_
        v = np.linalg.solve(self.L_, Ks.T)
        var = np.maximum(self.signal_variance - np.sum(v * v, axis=0), 0.0)
        return mu, np.sqrt(var)


def expected_improvement(mu, sigma, best: float) -> np.ndarray:
    mu = np.asarray(mu, float)
    sigma = np.asarray(sigma, float)
    gain = mu - best
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, gain / sigma, 0.0)
    ei = gain * ndtr(z) + sigma * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    return np.where(sigma > 0, ei, np.maximum(gain, 0.0))


def constrained_score(runtime: float, target: float) -> float:
    """Normalised observation for BO: ``r/t`` if the target is met, ``-r/t`` otherwise."""
    ratio = runtime / target
    return ratio if runtime <= target else -ratio


class BayesOptStrategy(SelectionStrategy):
    """GP-based Bayesian optimisation with expected improvement over free grid limits."""

    name = "bo"
    length_scale_factors = (0.25, 0.1, 0.5)  # first entry wins likelihood ties
    noise_variance = 1e-4

    def __init__(self, *args, **kwargs):
        self.gp: Optional[GaussianProcess] = None
        super().__init__(*args, **kwargs)

    def _scale(self, limits):
        return (np.asarray(limits, float) - self.grid.l_min) / (self.grid.l_max - self.grid.l_min)

    def next_limit(self) -> float:
        if not self.observed:
            raise ValueError("BO needs at least one observation")
        free = self.free_indices
        if not free:
            raise GridExhausted("all grid limits have been profiled")
        x = self._scale([pt.cpu_limit for pt in self.observed])
        y = np.array([constrained_score(pt.mean_runtime, self.target_runtime) for pt in self.observed])
        variance = max(float(np.var(y, ddof=1)) if len(y) > 1 else 0.0, 1e-6)
        mean = float(y.mean())
        best = None
        for factor in self.length_scale_factors:
            gp = GaussianProcess(factor, variance, self.noise_variance, mean).fit(x, y)
            if best is None or gp.log_marginal_likelihood_ > best.log_marginal_likelihood_:
                best = gp
        self.gp = best
        cand = self.grid.values[free]
        mu, sigma = best.predict(self._scale(cand))
        ei = expected_improvement(mu, sigma, float(y.max()))
        return float(cand[int(np.argmax(ei))])


class RandomStrategy(SelectionStrategy):
    """Uniform draw over unprofiled limits; a pure function of (seed, #observations)."""

    name = "random"

    def next_limit(self) -> float:
        free = self.free_indices
        if not free:
            raise GridExhausted("all grid limits have been profiled")
        rng = np.random.default_rng([self.seed, len(self.observed)])
        return self.grid.value(free[int(rng.integers(len(free)))])


STRATEGIES = {
    "nms": NestedModelingStrategy,
    "bs": BinarySearchStrategy,
    "bo": BayesOptStrategy,
    "random": RandomStrategy,
}
_ALIASES = {
    "nested": "nms",
    "binary": "bs",
    "binarysearch": "bs",
    "bayes": "bo",
    "bayesopt": "bo",
}


def strategy_key(kind: str) -> str:
    key = kind.strip().lower().replace("_", "").replace("-", "")
    key = _ALIASES.get(key, key)
    if key not in STRATEGIES:
        raise ConfigError(f"unknown strategy {kind!r}; choose from {sorted(STRATEGIES)}")
    return key


def make_strategy(kind: str, grid: LimitGrid, target_runtime: float,
                  observed: Sequence[ProfilePoint] = (), seed: int = 0) -> SelectionStrategy:
    return STRATEGIES[strategy_key(kind)](grid, target_runtime, observed, seed=seed)
