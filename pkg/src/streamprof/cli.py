"""Command-line entry point: ``streamprof {profile,fit,bench,simulate}``.

Exit codes: 0 success, 2 configuration/input errors, 3 oracle or runtime errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from . import model as rm
from .config import DEFAULT_STRATEGIES, oracle_factory, read_json, resolve
from .exceptions import ConfigError, ProfilingError, SchemaError
from .model import ProfilePoint, RuntimeModel
from .oracle import SyntheticOracle, write_trace
from .session import SCHEMA_VERSION, run_benchmark, run_session

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("streamprof")


def _overrides(args) -> dict:
    return {
        "strategy": getattr(args, "strategy", None),
        "p": args.p,
        "n_initial": args.n_initial,
        "seed": args.seed,
        "max_steps": args.max_steps,
        "min_samples": args.min_samples,
        "max_samples": args.max_samples,
        "lambda": args.lam,
        "confidence_level": args.confidence,
        "sigma_noise": args.sigma_noise,
    }


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def cmd_profile(args) -> int:
    config, oracle, raw = resolve(read_json(args.config), _overrides(args))
    reference = oracle.reference() if hasattr(oracle, "reference") else None
    report = run_session(oracle, config, reference)
    out = Path(args.out)
    payload = report.to_dict()
    payload["effective_config"] = raw
    _write_json(out / "session.json", payload)
    _write_json(out / "model.json", report.model.to_dict())
    print(report.model.to_json())
    if args.target_runtime is not None:
        inv = rm.invert(report.model, args.target_runtime, config.grid)
        if inv.reachable:
            print(f"recommended_cpu_limit={inv.limit:g}")
        else:
            print(f"recommended_cpu_limit={inv.limit:g} (target-unreachable)")
    return EXIT_OK


def cmd_bench(args) -> int:
    data = read_json(args.config)
    config, _, raw = resolve(data, _overrides(args))
    bench_cfg = data.get("bench", {})
    strategies = args.strategies.split(",") if args.strategies else bench_cfg.get("strategies", DEFAULT_STRATEGIES)
    repetitions = args.repetitions or int(bench_cfg.get("repetitions", 50))
    if not strategies:
        raise ConfigError("bench needs at least one strategy")
    report = run_benchmark(oracle_factory(raw["oracle"]), [config], list(strategies), repetitions,
                           master_seed=config.seed)
    out = Path(args.out)
    report.write(out)
    bench = json.loads((out / "bench.json").read_text(encoding="utf-8"))
    bench["effective_config"] = raw
    _write_json(out / "bench.json", bench)
    for row in report.wins():
        print(f"{row['strategy']:>7} step {row['step']}: wins_0={row['wins_0']} wins_10={row['wins_10']}")
    if report.failures:
        log.warning("%d sessions failed; see bench.json", len(report.failures))
    return EXIT_OK


def cmd_simulate(args) -> int:
    config, oracle, raw = resolve(read_json(args.config), _overrides(args))
    if not isinstance(oracle, SyntheticOracle):
        raise ConfigError("simulate needs oracle.type = synthetic")
    samples = args.samples or int(read_json(args.config).get("simulate", {}).get("samples_per_limit", 1000))
    out = Path(args.out)
    n_rows = write_trace(oracle, out / "trace.csv", samples)
    _write_json(out / "simulate.json", {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "effective_config": raw,
        "samples_per_limit": samples,
        "rows": n_rows,
    })
    print(f"wrote {n_rows} rows to {out / 'trace.csv'}")
    return EXIT_OK


def read_points(path) -> list:
    """Read a ``cpu_limit,mean_runtime`` CSV into profile points."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"points file not found: {path}")
    points, seen = [], {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ("cpu_limit", "mean_runtime") if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        for row_no, row in enumerate(reader, start=2):
            try:
                limit, runtime = float(row["cpu_limit"]), float(row["mean_runtime"])
            except (TypeError, ValueError):
                raise SchemaError(f"{path}: row {row_no} is not numeric") from None
            if not (limit > 0 and runtime > 0):
                raise SchemaError(f"{path}: row {row_no} must have positive cpu_limit and mean_runtime")
            key = round(limit, 10)
            if key in seen:
                raise SchemaError(f"{path}: row {row_no} duplicates cpu_limit {limit} from row {seen[key]}")
            seen[key] = row_no
            points.append(ProfilePoint(limit, runtime))
    if not points:
        raise SchemaError(f"{path}: no data rows")
    return points


def cmd_fit(args) -> int:
    points = read_points(args.points)
    model: RuntimeModel = rm.fit(points)
    text = json.dumps(model.to_dict(), indent=2)
    if args.out:
        _write_json(Path(args.out) / "model.json", model.to_dict())
    print(text)
    return EXIT_OK


def _add_session_flags(p: argparse.ArgumentParser, strategy: bool = True) -> None:
    p.add_argument("--config", required=True, help="session config (JSON)")
    p.add_argument("--out", default=".", help="output directory")
    if strategy:
        p.add_argument("--strategy", choices=DEFAULT_STRATEGIES)
    p.add_argument("--p", type=float, help="synthetic-target fraction of l_max")
    p.add_argument("--n-initial", type=int, choices=(2, 3, 4))
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--min-samples", type=int)
    p.add_argument("--max-samples", type=int)
    p.add_argument("--lambda", dest="lam", type=float, help="CI width as a fraction of the mean")
    p.add_argument("--confidence", type=float)
    p.add_argument("--sigma-noise", type=float, help="override synthetic oracle noise")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamprof", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="run one profiling session")
    _add_session_flags(p)
    p.add_argument("--target-runtime", type=float, help="print the CPU limit meeting this runtime (s/sample)")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("bench", help="compare selection strategies over repeated sessions")
    _add_session_flags(p, strategy=False)
    p.add_argument("--strategies", help="comma-separated, e.g. nms,bs,bo,random")
    p.add_argument("--repetitions", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("simulate", help="write a trace CSV sampled from a synthetic oracle")
    _add_session_flags(p, strategy=False)
    p.add_argument("--samples", type=int, help="samples per CPU limit")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a model to a cpu_limit,mean_runtime CSV")
    p.add_argument("points")
    p.add_argument("--out", help="also write model.json here")
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProfilingError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
