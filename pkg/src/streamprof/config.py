"""JSON session configuration: parsing, flag overrides and oracle construction."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from .exceptions import ConfigError
from .grid import LimitGrid
from .model import RuntimeModel
from .oracle import CommandOracle, JobOracle, SyntheticOracle, load_trace
from .session import ProfilingConfig
from .stopping import StoppingRule

DEFAULT_STRATEGIES = ("nms", "bs", "bo", "random")


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def _field(section: dict, key: str, cast, default=None, where: str = ""):
    if key not in section:
        if default is None:
            raise ConfigError(f"missing field {where}{key}")
        return default
    try:
        return cast(section[key])
    except (TypeError, ValueError):
        raise ConfigError(f"field {where}{key} has invalid value {section[key]!r}") from None


def parse_stopping(data: dict) -> StoppingRule:
    base = StoppingRule()
    return StoppingRule(
        confidence_level=_field(data, "confidence_level", float, base.confidence_level, "stopping."),
        lam=_field(data, "lambda", float, base.lam, "stopping."),
        min_samples=_field(data, "min_samples", int, base.min_samples, "stopping."),
        max_samples=_field(data, "max_samples", int, base.max_samples, "stopping."),
    )


def parse_grid(data: dict) -> LimitGrid:
    return LimitGrid(
        _field(data, "l_min", float, where="grid."),
        _field(data, "l_max", float, where="grid."),
        _field(data, "delta", float, 0.1, "grid."),
    )


def parse_truth(data: dict) -> RuntimeModel:
    try:
        return RuntimeModel(
            tier=5, **{k: _field(data, k, float, {"a": None, "b": None, "c": 0.0, "d": 1.0}[k], "oracle.truth.")
                       for k in "abcd"}
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"oracle.truth: {exc}") from None


def build_oracle(block: dict, grid: Optional[LimitGrid], seed: int = 0) -> JobOracle:
    """Instantiate the oracle described by the ``oracle`` config block."""
    kind = block.get("type")
    if kind == "synthetic":
        if grid is None:
            raise ConfigError("a synthetic oracle needs a grid block")
        return SyntheticOracle(
            parse_truth(block.get("truth", {})),
            grid,
            _field(block, "sigma_noise", float, 0.0, "oracle."),
            seed,
        )
    if kind == "trace":
        oracle = load_trace(_field(block, "path", str, where="oracle."))
        if grid is not None and grid != oracle.grid:
            raise ConfigError(f"configured grid {grid} does not match trace grid {oracle.grid}")
        return oracle
    if kind == "command":
        if grid is None:
            raise ConfigError("a command oracle needs a grid block")
        return CommandOracle(
            _field(block, "template", str, where="oracle."),
            grid,
            timeout=_field(block, "timeout", float, 3600.0, "oracle."),
            parallel=bool(block.get("parallel", False)),
        )
    raise ConfigError(f"oracle.type must be synthetic, trace or command, got {kind!r}")


def resolve(data: dict, overrides: Optional[dict] = None):
    """Merge flag ``overrides`` into the file ``data``.

    Returns ``(config, oracle, raw)`` where ``raw`` is the fully resolved
    dictionary echoed into reports.
    """
    raw = json.loads(json.dumps(data))
    raw.setdefault("stopping", {})
    raw.setdefault("oracle", {})
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("confidence_level", "lambda", "min_samples", "max_samples"):
            raw["stopping"][key] = value
        elif key == "sigma_noise":
            raw["oracle"][key] = value
        else:
            raw[key] = value

    seed = _field(raw, "seed", int, 0)
    grid = parse_grid(raw["grid"]) if "grid" in raw else None
    oracle = build_oracle(raw["oracle"], grid, seed)
    grid = oracle.grid
    raw["grid"] = grid.to_dict()
    config = ProfilingConfig(
        grid=grid,
        n_initial=_field(raw, "n_initial", int, 3),
        p=_field(raw, "p", float, 0.05),
        strategy=_field(raw, "strategy", str, "nms"),
        stopping=parse_stopping(raw["stopping"]),
        max_steps=_field(raw, "max_steps", int, 8),
        seed=seed,
    )
    raw.update(config.to_dict())
    return config, oracle, raw


def oracle_factory(oracle_block: dict):
    """Factory for benchmarks: rebuilds the oracle with each cell's seed.

    Traces carry no randomness and are loaded once.
    """
    if oracle_block.get("type") == "trace":
        shared = build_oracle(oracle_block, None)

        def make(config: ProfilingConfig, seed: int) -> JobOracle:
            return shared
        return make

    def make(config: ProfilingConfig, seed: int) -> JobOracle:
        return build_oracle(oracle_block, config.grid, seed)
    return make
