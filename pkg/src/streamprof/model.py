"""Tiered runtime model: evaluation, damped least-squares fitting and inversion.

The model family grows with the number of profiled limits ``|R|``::

    tier 1   R^-1
    tier 2   a * R^-1
    tier 3   a * R^-b
    tier 4   a * R^-b + c
    tier 5   a * (R * d)^-b + c

Inactive parameters keep their neutral values ``a=1, b=1, c=0, d=1`` so every
tier can be evaluated with the tier-5 expression.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .exceptions import FitError
from .grid import LimitGrid

MAX_TIER = 5
PARAM_NAMES = ("a", "b", "c", "d")
NEUTRAL = {"a": 1.0, "b": 1.0, "c": 0.0, "d": 1.0}
ACTIVE = {
    1: (),
    2: ("a",),
    3: ("a", "b"),
    4: ("a", "b", "c"),
    5: ("a", "b", "c", "d"),
}

# Levenberg-Marquardt controls
MAX_ITER = 200
REL_TOL = 1e-10
_MU_INIT = 1e-3
_MU_MAX = 1e16


@dataclass(frozen=True)
class RuntimeModel:
    tier: int = 1
    a: float = 1.0
    b: float = 1.0
    c: float = 0.0
    d: float = 1.0

    def __post_init__(self):
        if self.tier not in ACTIVE:
            raise ValueError(f"tier must be in 1..5, got {self.tier}")
        if not (self.a > 0 and self.b > 0 and self.d > 0 and self.c >= 0):
            raise ValueError(f"invalid parameters for {self!r}")

    @property
    def active(self) -> tuple:
        return ACTIVE[self.tier]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RuntimeModel":
        return cls(tier=int(data["tier"]), **{k: float(data[k]) for k in PARAM_NAMES})

    def to_json(self) -> str:
        # repr of a float is the shortest string that round-trips exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "RuntimeModel":
        return cls.from_dict(json.loads(text))

    def __call__(self, limit):
        return evaluate(self, limit)


@dataclass(frozen=True)
class ProfilePoint:
    """Outcome of profiling one CPU limit."""

    cpu_limit: float
    mean_runtime: float
    n_samples: int = 1
    sample_variance: float = 0.0
    ci_width: float = 0.0

    def __post_init__(self):
        if not self.cpu_limit > 0:
            raise ValueError(f"cpu_limit must be positive, got {self.cpu_limit}")
        if not self.mean_runtime > 0:
            raise ValueError(f"mean_runtime must be positive, got {self.mean_runtime}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.sample_variance < 0 or self.ci_width < 0:
            raise ValueError("variance and CI width must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


class FitResult(NamedTuple):
    model: RuntimeModel
    ssr: float
    n_iter: int
    converged: bool

    @property
    def residual_norm(self) -> float:
        return math.sqrt(self.ssr)


class Inversion(NamedTuple):
    limit: float
    reachable: bool


def evaluate(model: RuntimeModel, limit):
    """Predicted runtime per sample (seconds) at ``limit`` vCPU. Accepts scalars or arrays."""
    arr = np.asarray(limit, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("CPU limit must be positive")
    if model.tier == 1:
        out = 1.0 / arr
    elif model.tier == 2:
        out = model.a / arr
    elif model.tier == 3:
        out = model.a * arr ** -model.b
    elif model.tier == 4:
        out = model.a * arr ** -model.b + model.c
    else:
        out = model.a * (arr * model.d) ** -model.b + model.c
    return float(out) if out.ndim == 0 else out


def select_tier(n_points: int) -> int:
    if n_points < 1:
        raise ValueError("need at least one profiled point")
    return min(int(n_points), MAX_TIER)


def _curve(p: np.ndarray, names: Sequence[str], R: np.ndarray):
    """Value and Jacobian of the tier-5 expression w.r.t. the parameters in ``names``."""
    vals = dict(NEUTRAL)
    vals.update(zip(names, p))
    a, b, c, d = (vals[k] for k in PARAM_NAMES)
    Rd = R * d
    u = Rd ** -b
    f = a * u + c
    cols = {
        "a": u,
        "b": -a * u * np.log(Rd),
        "c": np.ones_like(R),
        "d": -a * b * u / d,
    }
    J = np.column_stack([cols[k] for k in names])
    return f, J


def _bounds(names, y_min):
    table = {
        "a": (1e-9, 1e9),
        "b": (1e-3, 10.0),
        "c": (0.0, y_min),
        "d": (1e-3, 1e3),
    }
    lo = np.array([table[k][0] for k in names])
    hi = np.array([table[k][1] for k in names])
    return lo, hi


def _cold_start(R: np.ndarray, y: np.ndarray) -> dict:
    y_min = float(y.min())
    return {
        "a": float(y.max() * R.min()),
        "b": 1.0,
        "c": min(0.9 * y_min, np.nextafter(y_min, 0.0)),
        "d": 1.0,
    }


def _levenberg_marquardt(R, y, names, p0, lo, hi):
    p = np.clip(np.asarray(p0, dtype=float), lo, hi)
    f, J = _curve(p, names, R)
    r = f - y
    ssr = float(r @ r)
    if not np.isfinite(ssr):
        raise FitError("non-finite residual at the initial parameters", last_params=None)
    mu = _MU_INIT
    n_iter = 0
    converged = False
    while n_iter < MAX_ITER:
        n_iter += 1
        if ssr == 0.0:
            converged = True
            break
        A = J.T @ J
        g = J.T @ r
        # Marquardt scaling keeps the step invariant to parameter units
        diag = np.maximum(np.diag(A), 1e-12 * max(np.diag(A).max(), 1e-300))
        accepted = False
        while mu <= _MU_MAX:
            try:
                step = np.linalg.solve(A + mu * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            p_new = np.clip(p + step, lo, hi)
            f_new, J_new = _curve(p_new, names, R)
            r_new = f_new - y
            ssr_new = float(r_new @ r_new)
            if not np.isfinite(ssr_new):
                raise FitError("non-finite residual during damped step", last_params=p.copy())
            if ssr_new < ssr:
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            converged = True  # no descent direction left at machine precision
            break
        rel_change = (ssr - ssr_new) / ssr
        p, J, r, ssr = p_new, J_new, r_new, ssr_new
        mu = max(mu / 10.0, 1e-12)
        if rel_change < REL_TOL:
            converged = True
            break
    return p, ssr, n_iter, converged


def _validate_points(points: Sequence[ProfilePoint]):
    if not points:
        raise ValueError("cannot fit a runtime model without profiled points")
    R = np.array([pt.cpu_limit for pt in points], dtype=float)
    y = np.array([pt.mean_runtime for pt in points], dtype=float)
    if len(np.unique(R)) != len(R):
        raise ValueError("duplicate CPU limits in fit input")
    return R, y


def fit_curve(limits, runtimes, warm_start: Optional[RuntimeModel] = None) -> FitResult:
    """Least-squares fit of the tier matching ``len(limits)``; see :func:`fit`."""
    R = np.asarray(limits, dtype=float).ravel()
    y = np.asarray(runtimes, dtype=float).ravel()
    if R.size == 0:
        raise ValueError("cannot fit a runtime model without profiled points")
    if R.shape != y.shape:
        raise ValueError("limits and runtimes differ in length")
    if not (np.all(R > 0) and np.all(y > 0) and np.all(np.isfinite(R)) and np.all(np.isfinite(y))):
        raise ValueError("limits and runtimes must be positive and finite")
    if len(np.unique(R)) != len(R):
        raise ValueError("duplicate CPU limits in fit input")

    tier = select_tier(R.size)
    if tier == 1:
        model = RuntimeModel(tier=1)
        r = 1.0 / R - y
        return FitResult(model, float(r @ r), 0, True)
    if tier == 2:
        a = float(np.sum(y / R) / np.sum(1.0 / R**2))
        model = RuntimeModel(tier=2, a=a)
        r = a / R - y
        return FitResult(model, float(r @ r), 0, True)

    names = ACTIVE[tier]
    if warm_start is not None:
        start = {k: (getattr(warm_start, k) if k in warm_start.active else NEUTRAL[k]) for k in names}
    else:
        start = _cold_start(R, y)
    lo, hi = _bounds(names, float(y.min()))
    p0 = [start[k] for k in names]
    p, ssr, n_iter, converged = _levenberg_marquardt(R, y, names, p0, lo, hi)
    model = RuntimeModel(tier=tier, **dict(zip(names, map(float, p))))
    return FitResult(model, ssr, n_iter, converged)


def fit(points: Sequence[ProfilePoint], warm_start: Optional[RuntimeModel] = None) -> RuntimeModel:
    """Fit the tier selected by the number of points.

    With ``warm_start``, parameters shared with the new tier start from the
    previous values and newly activated ones from their neutral values.
    """
    R, y = _validate_points(points)
    return fit_curve(R, y, warm_start).model


def invert_unclamped(model: RuntimeModel, target_runtime: float) -> float:
    """CPU limit at which ``model`` predicts ``target_runtime``.

    Raises ValueError when the target is at or below the asymptotic floor ``c``.
    """
    t = float(target_runtime)
    if not t > 0:
        raise ValueError("target runtime must be positive")
    if model.tier == 1:
        return 1.0 / t
    if model.tier == 2:
        return model.a / t
    if model.tier == 3:
        return (t / model.a) ** (-1.0 / model.b)
    if t <= model.c:
        raise ValueError(f"target {t} is not above the runtime floor c={model.c}")
    R = ((t - model.c) / model.a) ** (-1.0 / model.b)
    return R / model.d if model.tier == 5 else R


def invert(model: RuntimeModel, target_runtime: float, grid: LimitGrid) -> Inversion:
    """Smallest-runtime-meeting limit snapped to ``grid`` (nearest, ties up).

    Unreachable targets (below the floor ``c``) map to ``grid.l_max`` with
    ``reachable=False``.
    """
    try:
        R = invert_unclamped(model, target_runtime)
    except ValueError:
        if not target_runtime > 0:
            raise
        return Inversion(grid.l_max, False)
    if not math.isfinite(R):
        R = grid.l_max if R > 0 else grid.l_min
    return Inversion(grid.snap(R), True)

