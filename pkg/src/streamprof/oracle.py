"""Black-box job backends that emit per-sample runtimes under a CPU limit."""
from __future__ import annotations

import csv
import math
import shlex
import subprocess
import threading
import time
from collections import defaultdict
from pathlib import Path
from typing import Iterator, NamedTuple, Optional

import numpy as np

from .exceptions import (
    CommandOutputError,
    CommandTimeout,
    ConfigError,
    SchemaError,
    TraceExhausted,
)
from .grid import LimitGrid
from .model import ProfilePoint, RuntimeModel, evaluate
from .stopping import RunningStats, StoppingRule, ci_width, should_stop

TRACE_COLUMNS = ("cpu_limit", "sample_index", "runtime_seconds")
_CHUNK = 1024


class JobOracle:
    """A job that can be run under a CPU limit and reports per-sample runtimes.

    Subclasses implement :meth:`samples`. ``wall_clock`` marks oracles whose
    probe duration is measured rather than simulated.
    """

    supports_parallel = False
    wall_clock = False

    def __init__(self, grid: LimitGrid):
        self.grid = grid

    def check_limit(self, limit: float) -> int:
        return self.grid.index(limit)

    def samples(self, limit: float) -> Iterator[float]:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"type": type(self).__name__, "grid": self.grid.to_dict()}


class SyntheticOracle(JobOracle):
    """Ground-truth curve with multiplicative log-normal noise.

    Sample ``i`` at a limit is ``eval(truth, limit) * exp(eps_i)``, with the
    noise stream seeded by ``(seed, grid index)`` so it is reproducible.
    """

    supports_parallel = True

    def __init__(self, truth: RuntimeModel, grid: LimitGrid, sigma_noise: float = 0.0, seed: int = 0):
        super().__init__(grid)
        if sigma_noise < 0:
            raise ConfigError("sigma_noise must be non-negative")
        self.truth = truth
        self.sigma_noise = float(sigma_noise)
        self.seed = int(seed)

    def samples(self, limit: float) -> Iterator[float]:
        idx = self.check_limit(limit)
        base = evaluate(self.truth, self.grid.value(idx))
        if self.sigma_noise == 0:
            while True:
                yield base
        rng = np.random.default_rng([self.seed, idx])
        while True:
            chunk = base * np.exp(self.sigma_noise * rng.standard_normal(_CHUNK))
            yield from chunk.tolist()

    def reference(self) -> np.ndarray:
        return evaluate(self.truth, self.grid.values)

    def describe(self) -> dict:
        return {
            "type": "synthetic",
            "truth": self.truth.to_dict(),
            "sigma_noise": self.sigma_noise,
            "seed": self.seed,
            "grid": self.grid.to_dict(),
        }


class TraceOracle(JobOracle):
    """Replays recorded per-sample runtimes; each probe starts at the first sample."""

    supports_parallel = True

    def __init__(self, series: dict, grid: LimitGrid, path: Optional[str] = None):
        super().__init__(grid)
        self.series = {k: np.asarray(v, dtype=float) for k, v in series.items()}
        self.path = path

    def samples(self, limit: float) -> Iterator[float]:
        idx = self.check_limit(limit)
        data = self.series.get(idx)
        if data is None:
            raise TraceExhausted(f"trace has no samples at limit {limit}")
        yield from data.tolist()
        raise TraceExhausted(f"trace at limit {limit} ran out after {len(data)} samples")

    def reference(self) -> np.ndarray:
        return np.array([self.series[i].mean() for i in range(self.grid.size)])

    def describe(self) -> dict:
        return {"type": "trace", "path": self.path, "grid": self.grid.to_dict()}


class CommandOracle(JobOracle):
    """Runs an external command per probe and reads one runtime (seconds) per output line.

    ``template`` may reference ``{limit}``; CPU throttling is the command's job.
    The child is killed once the stopping rule fires or ``timeout`` elapses.
    If the output ends before the rule fires, the command is started again.
    """

    wall_clock = True

    def __init__(self, template: str, grid: LimitGrid, timeout: float = 3600.0, parallel: bool = False):
        super().__init__(grid)
        if "{limit}" not in template:
            raise ConfigError("command template must contain a {limit} placeholder")
        self.template = template
        self.timeout = float(timeout)
        self.supports_parallel = bool(parallel)

    def _argv(self, limit: float) -> list:
        return shlex.split(self.template.format(limit=f"{limit:g}"))

    def samples(self, limit: float) -> Iterator[float]:
        self.check_limit(limit)
        argv = self._argv(limit)
        deadline = time.monotonic() + self.timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise CommandTimeout(f"command for limit {limit} exceeded {self.timeout}s")
            proc = subprocess.Popen(argv, stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True)
            timer = threading.Timer(remaining, proc.kill)
            timer.start()
            emitted = 0
            try:
                for lineno, line in enumerate(proc.stdout, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        value = float(line)
                    except ValueError:
                        raise CommandOutputError(
                            f"line {lineno} of command output is not a runtime: {line!r}"
                        ) from None
                    if not value > 0 or not math.isfinite(value):
                        raise CommandOutputError(f"line {lineno}: runtime must be positive, got {value}")
                    emitted += 1
                    yield value
            finally:
                timer.cancel()
                if proc.poll() is None:
                    proc.kill()
                proc.wait()
            if time.monotonic() >= deadline:
                raise CommandTimeout(f"command for limit {limit} exceeded {self.timeout}s")
            if emitted == 0:
                raise CommandOutputError(f"command for limit {limit} produced no runtimes")

    def describe(self) -> dict:
        return {
            "type": "command",
            "template": self.template,
            "timeout": self.timeout,
            "parallel": self.supports_parallel,
            "grid": self.grid.to_dict(),
        }


class ProbeResult(NamedTuple):
    point: ProfilePoint
    duration: float


def probe(oracle: JobOracle, limit: float, rule: StoppingRule) -> ProbeResult:
    """Profile one CPU limit until the stopping rule fires.

    Duration is the sum of per-sample runtimes for simulated oracles and the
    measured wall time for wall-clock oracles.
    """
    oracle.check_limit(limit)
    acc = RunningStats()
    started = time.perf_counter()
    stream = oracle.samples(limit)
    try:
        for x in stream:
            acc.push(x)
            if should_stop(acc.stats(), rule):
                break
    finally:
        stream.close()
    elapsed = time.perf_counter() - started
    mean, var, n = acc.stats()
    point = ProfilePoint(
        cpu_limit=oracle.grid.value(oracle.check_limit(limit)),
        mean_runtime=mean,
        n_samples=n,
        sample_variance=var,
        ci_width=ci_width(mean, var, n, rule.confidence_level),
    )
    return ProbeResult(point, elapsed if oracle.wall_clock else acc.total)


def infer_grid(limits) -> LimitGrid:
    """Grid spanned by the distinct ``limits``; spacing must be uniform."""
    values = np.unique(np.asarray(limits, dtype=float))
    if values.size < 2:
        raise SchemaError("a trace needs at least two distinct CPU limits")
    gaps = np.diff(values)
    delta = float(gaps.min())
    if np.any(np.abs(gaps - delta) > 1e-9):
        raise SchemaError(f"CPU limits are not uniformly spaced (gaps {sorted(set(np.round(gaps, 9)))})")
    delta = round(delta, 10)
    return LimitGrid(float(values[0]), float(values[-1]), delta)


def load_trace(path, format: str = "csv") -> TraceOracle:
    """Load a ``cpu_limit,sample_index,runtime_seconds`` CSV into a :class:`TraceOracle`."""
    if format != "csv":
        raise ConfigError(f"unsupported trace format {format!r}")
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"trace file not found: {path}")
    rows = defaultdict(dict)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in TRACE_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        for row_no, row in enumerate(reader, start=2):
            try:
                limit = float(row["cpu_limit"])
                index = int(row["sample_index"])
                runtime = float(row["runtime_seconds"])
            except (TypeError, ValueError):
                raise SchemaError(f"{path}: row {row_no} is not numeric") from None
            if not limit > 0:
                raise SchemaError(f"{path}: row {row_no} has non-positive cpu_limit {limit}")
            if not (runtime > 0 and math.isfinite(runtime)):
                raise SchemaError(f"{path}: row {row_no} has non-positive runtime {runtime}")
            key = round(limit, 10)
            if index in rows[key]:
                raise SchemaError(
                    f"{path}: row {row_no} duplicates (cpu_limit={limit}, sample_index={index}) "
                    f"from row {rows[key][index][0]}"
                )
            rows[key][index] = (row_no, runtime)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    grid = infer_grid(list(rows))
    series = {}
    for key, by_index in rows.items():
        series[grid.index(key)] = [by_index[i][1] for i in sorted(by_index)]
    return TraceOracle(series, grid, path=str(path))


def write_trace(oracle: JobOracle, path, samples_per_limit: int) -> int:
    """Record ``samples_per_limit`` samples at every grid limit; returns rows written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_rows = 0
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for limit in oracle.grid.values.tolist():
            stream = oracle.samples(limit)
            for i in range(samples_per_limit):
                writer.writerow((f"{limit:g}", i, repr(next(stream))))
                n_rows += 1
            stream.close()
    return n_rows
