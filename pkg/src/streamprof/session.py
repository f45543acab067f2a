"""Profiling sessions and strategy benchmarks."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from . import model as rm
from .exceptions import ConfigError, GridExhausted, OracleError, ProfilingError
from .grid import LimitGrid
from .metrics import count_wins, smape
from .model import ProfilePoint, RuntimeModel
from .oracle import JobOracle, ProbeResult, probe
from .selection import initial_limits, make_strategy, strategy_key, synthetic_target
from .stopping import StoppingRule

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
WIN_TOLERANCE = 0.10


@dataclass(frozen=True)
class ProfilingConfig:
    grid: LimitGrid = field(default_factory=lambda: LimitGrid(0.1, 4.0, 0.1))
    n_initial: int = 3
    p: float = 0.05
    strategy: str = "nms"
    stopping: StoppingRule = field(default_factory=StoppingRule)
    max_steps: int = 8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strategy", strategy_key(self.strategy))
        if self.n_initial not in (2, 3, 4):
            raise ConfigError(f"n_initial must be 2, 3 or 4, got {self.n_initial}")
        if self.max_steps < self.n_initial:
            raise ConfigError(f"max_steps ({self.max_steps}) must be >= n_initial ({self.n_initial})")

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "n_initial": self.n_initial,
            "p": self.p,
            "strategy": self.strategy,
            "stopping": self.stopping.to_dict(),
            "max_steps": self.max_steps,
            "seed": self.seed,
        }


@dataclass
class ProbeRecord:
    step: int
    point: ProfilePoint
    duration: float
    parallel: bool

    def to_dict(self) -> dict:
        return {"step": self.step, "parallel": self.parallel, "duration": self.duration, **self.point.to_dict()}


@dataclass
class SessionReport:
    """Everything a session observed.

    ``models[k]``, ``residual_norms[k]``, ``time_by_step[k]`` and
    ``smape_by_step[k]`` describe the state after ``n_initial + k`` probes.
    """

    config: ProfilingConfig
    probes: list = field(default_factory=list)
    models: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)
    time_by_step: list = field(default_factory=list)
    smape_by_step: list = field(default_factory=list)
    target_runtime: float = math.nan
    stop_reason: str = "max_steps"
    oracle: dict = field(default_factory=dict)

    @property
    def model(self) -> RuntimeModel:
        return self.models[-1]

    @property
    def total_time(self) -> float:
        return self.time_by_step[-1] if self.time_by_step else 0.0

    @property
    def steps(self) -> list:
        return [self.config.n_initial + k for k in range(len(self.models))]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "version": __version__,
            "config": self.config.to_dict(),
            "oracle": self.oracle,
            "target_runtime": self.target_runtime,
            "total_time": self.total_time,
            "stop_reason": self.stop_reason,
            "probes": [p.to_dict() for p in self.probes],
            "steps": [
                {
                    "step": step,
                    "model": m.to_dict(),
                    "residual_norm": rn,
                    "time_seconds": t,
                    "smape": s,
                }
                for step, m, rn, t, s in zip(
                    self.steps,
                    self.models,
                    self.residual_norms,
                    self.time_by_step,
                    self.smape_by_step or [None] * len(self.models),
                )
            ],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _probe_initial(oracle: JobOracle, limits, rule) -> list:
    if oracle.supports_parallel and len(limits) > 1:
        with ThreadPoolExecutor(max_workers=len(limits)) as pool:
            return list(pool.map(lambda lim: probe(oracle, lim, rule), limits))
    return [probe(oracle, lim, rule) for lim in limits]


def run_session(oracle: JobOracle, config: ProfilingConfig, reference=None) -> SessionReport:
    """Profile ``oracle``: parallel initial probes, then one strategy-chosen probe per step.

    The initial phase is accounted at the duration of its slowest probe; every
    later probe adds its full duration. ``reference`` holds true runtimes over
    the full grid; when given, each step's model is scored by SMAPE against it.
    """
    grid = config.grid
    if oracle.grid != grid:
        raise ConfigError(f"oracle grid {oracle.grid} differs from configured grid {grid}")
    if reference is not None:
        reference = np.asarray(reference, dtype=float)
        if reference.shape != (grid.size,):
            raise ConfigError(f"reference must hold {grid.size} runtimes, got shape {reference.shape}")
    rule = config.stopping
    report = SessionReport(config=config, oracle=oracle.describe())

    limits = initial_limits(config.p, config.n_initial, grid)
    try:
        results: list[ProbeResult] = _probe_initial(oracle, limits, rule)
    except OracleError as exc:
        raise type(exc)(f"initial phase: {exc}") from exc
    for step, res in enumerate(results, start=1):
        report.probes.append(ProbeRecord(step, res.point, res.duration, True))
    points = [res.point for res in results]
    elapsed = max(res.duration for res in results)

    report.target_runtime = synthetic_target(points[0], grid, rule)
    fitted = rm.fit_curve([pt.cpu_limit for pt in points], [pt.mean_runtime for pt in points])

    def record(fitted):
        report.models.append(fitted.model)
        report.residual_norms.append(fitted.residual_norm)
        report.time_by_step.append(elapsed)
        if reference is not None:
            report.smape_by_step.append(smape(reference, rm.evaluate(fitted.model, grid.values)))

    record(fitted)
    strategy = make_strategy(config.strategy, grid, report.target_runtime, points, seed=config.seed)
    warm = config.strategy == "nms"

    while len(report.probes) < config.max_steps:
        step = len(report.probes) + 1
        try:
            limit = strategy.next_limit()
        except GridExhausted:
            report.stop_reason = "exhausted"
            log.info("strategy %s exhausted the grid at step %d", config.strategy, step)
            break
        try:
            res = probe(oracle, limit, rule)
        except OracleError as exc:
            raise type(exc)(f"step {step} (limit {limit:g}): {exc}") from exc
        strategy.observe(res.point)
        points.append(res.point)
        report.probes.append(ProbeRecord(step, res.point, res.duration, False))
        elapsed += res.duration
        fitted = rm.fit_curve(
            [pt.cpu_limit for pt in points],
            [pt.mean_runtime for pt in points],
            warm_start=fitted.model if warm else None,
        )
        record(fitted)
    return report


def cell_seed(master_seed: int, config_index: int, repetition: int) -> int:
    """Independent 32-bit seed for one benchmark cell, derived from the master seed."""
    return int(np.random.SeedSequence([master_seed, config_index, repetition]).generate_state(1)[0])


@dataclass
class BenchmarkReport:
    strategies: list
    configs: list
    repetitions: int
    master_seed: int
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def steps(self) -> list:
        return sorted({r["step"] for r in self.rows})

    def smape_cells(self) -> dict:
        """``(config, repetition, step) -> {strategy: smape}``."""
        cells = {}
        for r in self.rows:
            cells.setdefault((r["config"], r["repetition"], r["step"]), {})[r["strategy"]] = r["smape"]
        for f in self.failures:
            for key, cell in cells.items():
                if key[0] == f["config"] and key[1] == f["repetition"]:
                    cell.setdefault(f["strategy"], math.nan)
        return cells

    def wins(self) -> list:
        """Win tallies per (strategy, step) at 0% and 10% tolerance."""
        cells = self.smape_cells()
        out = []
        for step in self.steps():
            table = [cell for key, cell in sorted(cells.items()) if key[2] == step]
            w0 = count_wins(table, 0.0)
            w10 = count_wins(table, WIN_TOLERANCE)
            for s in self.strategies:
                out.append({"strategy": s, "step": step, "wins_0": w0.get(s, 0), "wins_10": w10.get(s, 0)})
        return out

    def summary(self) -> list:
        out = []
        for s in self.strategies:
            for step in self.steps():
                sel = [r for r in self.rows if r["strategy"] == s and r["step"] == step]
                sm = np.array([r["smape"] for r in sel])
                tm = np.array([r["time_seconds"] for r in sel])
                out.append({
                    "strategy": s,
                    "step": step,
                    "n": len(sel),
                    "median_smape": float(np.median(sm)) if len(sel) else math.nan,
                    "median_time_seconds": float(np.median(tm)) if len(sel) else math.nan,
                    "mean_time_seconds": float(np.mean(tm)) if len(sel) else math.nan,
                })
        return out

    def median_smape(self, strategy: str, step: int) -> float:
        vals = [r["smape"] for r in self.rows if r["strategy"] == strategy and r["step"] == step]
        return float(np.median(vals)) if vals else math.nan

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "version": __version__,
            "master_seed": self.master_seed,
            "repetitions": self.repetitions,
            "strategies": self.strategies,
            "configs": [c.to_dict() for c in self.configs],
            "summary": self.summary(),
            "wins": self.wins(),
            "failures": self.failures,
            "rows": self.rows,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def csv_tables(self) -> dict:
        """File name -> CSV text for the flat plotting tables."""
        return {
            "smape_by_step.csv": _csv(
                ("config", "strategy", "step", "repetition", "smape", "time_seconds"), self.rows
            ),
            "time_by_step.csv": _csv(
                ("strategy", "step", "n", "median_smape", "median_time_seconds", "mean_time_seconds"),
                self.summary(),
            ),
            "wins.csv": _csv(("strategy", "step", "wins_0", "wins_10"), self.wins()),
        }

    def write(self, outdir) -> list:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        written = []
        (outdir / "bench.json").write_text(self.to_json(indent=2), encoding="utf-8")
        written.append(outdir / "bench.json")
        for name, text in self.csv_tables().items():
            (outdir / name).write_text(text, encoding="utf-8", newline="")
            written.append(outdir / name)
        return written


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\r\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def run_benchmark(
    oracle_factory: Callable[[ProfilingConfig, int], JobOracle],
    configs: Sequence[ProfilingConfig],
    strategies: Sequence[str],
    repetitions: int,
    master_seed: int = 0,
) -> BenchmarkReport:
    """Run every (config, strategy, repetition) session.

    Within a (config, repetition) cell all strategies see the same oracle seed,
    so they share the initial probes. Steps a strategy never reached (grid
    exhausted) repeat its last model's SMAPE and time.
    """
    if repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    if not strategies:
        raise ConfigError("at least one strategy is required")
    keys = [strategy_key(s) for s in strategies]
    bench = BenchmarkReport(keys, list(configs), repetitions, master_seed)
    for ci, base in enumerate(configs):
        last_step = base.max_steps
        for rep in range(repetitions):
            seed = cell_seed(master_seed, ci, rep)
            for key in keys:
                config = replace(base, strategy=key, seed=seed)
                try:
                    oracle = oracle_factory(config, seed)
                    reference = oracle.reference() if hasattr(oracle, "reference") else None
                    report = run_session(oracle, config, reference)
                except ProfilingError as exc:
                    bench.failures.append(
                        {"config": ci, "strategy": key, "repetition": rep, "error": f"{type(exc).__name__}: {exc}"}
                    )
                    continue
                smapes = report.smape_by_step or [math.nan] * len(report.models)
                for step in range(base.n_initial, last_step + 1):
                    k = min(step - base.n_initial, len(report.models) - 1)
                    bench.rows.append({
                        "config": ci,
                        "strategy": key,
                        "step": step,
                        "repetition": rep,
                        "smape": float(smapes[k]),
                        "time_seconds": float(report.time_by_step[k]),
                    })
    return bench
