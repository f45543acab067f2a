import math
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from streamprof import LimitGrid, RuntimeModel, StoppingRule, SyntheticOracle, evaluate, load_trace, probe
from streamprof.exceptions import (
    CommandOutputError,
    CommandTimeout,
    ConfigError,
    SchemaError,
    TraceExhausted,
)
from streamprof.oracle import CommandOracle, TraceOracle, write_trace


def write_csv(path, rows, header="cpu_limit,sample_index,runtime_seconds"):
    path.write_text(header + "\n" + "\n".join(",".join(map(str, r)) for r in rows) + "\n", encoding="utf-8")
    return path


class TestSynthetic:
    def test_noiseless_stops_at_gate(self, grid, truth):
        rule = StoppingRule(min_samples=30)
        res = probe(SyntheticOracle(truth, grid, 0.0), 0.5, rule)
        assert res.point.n_samples == 30
        assert res.point.mean_runtime == pytest.approx(evaluate(truth, 0.5), rel=1e-15)
        assert res.point.ci_width == 0.0
        assert res.duration == pytest.approx(30 * evaluate(truth, 0.5), rel=1e-9)

    def test_off_grid(self, grid, truth):
        with pytest.raises(ValueError):
            probe(SyntheticOracle(truth, grid), 0.25, StoppingRule())

    def test_deterministic(self, grid, truth):
        rule = StoppingRule(0.95, 0.02, 30, 5000)
        a = probe(SyntheticOracle(truth, grid, 0.1, seed=4), 0.7, rule)
        b = probe(SyntheticOracle(truth, grid, 0.1, seed=4), 0.7, rule)
        assert a == b
        c = probe(SyntheticOracle(truth, grid, 0.1, seed=5), 0.7, rule)
        assert c.point.mean_runtime != a.point.mean_runtime

    def test_lognormal_mean(self, grid, truth):
        sigma = 0.05
        res = probe(SyntheticOracle(truth, grid, sigma, seed=1), 1.0, StoppingRule.fixed(100_000))
        # Monte-Carlo oracle: independent draws of the same distribution
        mc = evaluate(truth, 1.0) * np.exp(sigma * np.random.default_rng(99).standard_normal(100_000)).mean()
        expected = evaluate(truth, 1.0) * math.exp(sigma**2 / 2)
        assert abs(res.point.mean_runtime - expected) / evaluate(truth, 1.0) < 0.01
        assert abs(mc - expected) / evaluate(truth, 1.0) < 0.01

    def test_concurrent_probes_match_sequential(self, grid, truth):
        oracle = SyntheticOracle(truth, grid, 0.1, seed=2)
        rule = StoppingRule(0.95, 0.05, 30, 2000)
        limits = [0.2, 0.9, 1.7, 3.3]
        seq = [probe(oracle, x, rule) for x in limits]
        with ThreadPoolExecutor(4) as pool:
            par = list(pool.map(lambda x: probe(oracle, x, rule), limits))
        assert seq == par


class TestTrace:
    def test_load_and_replay(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = []
        data = {}
        for limit in (0.1, 0.2, 0.3):
            data[limit] = rng.uniform(0.5, 1.5, 10_000)
            rows += [(limit, i, repr(float(v))) for i, v in enumerate(data[limit])]
        oracle = load_trace(write_csv(tmp_path / "t.csv", rows))
        assert oracle.grid == LimitGrid(0.1, 0.3, 0.1)
        res = probe(oracle, 0.2, StoppingRule(0.95, 0.001, 30, 1000))
        assert res.point.n_samples == 1000
        assert res.point.mean_runtime == pytest.approx(data[0.2][:1000].mean(), rel=1e-12)
        # each probe replays from the start
        again = probe(oracle, 0.2, StoppingRule(0.95, 0.001, 30, 1000))
        assert again == res

    def test_rows_out_of_order(self, tmp_path):
        rows = [(0.2, 1, 2.0), (0.1, 0, 5.0), (0.2, 0, 1.0), (0.1, 1, 6.0)]
        oracle = load_trace(write_csv(tmp_path / "t.csv", rows))
        stream = oracle.samples(0.2)
        assert [next(stream), next(stream)] == [1.0, 2.0]

    def test_grid_inference(self, tmp_path):
        rows = [(round(0.1 * k, 1), 0, 1.0) for k in range(1, 41)]
        assert load_trace(write_csv(tmp_path / "t.csv", rows)).grid == LimitGrid(0.1, 4.0, 0.1)

    def test_non_uniform(self, tmp_path):
        rows = [(0.1, 0, 1.0), (0.2, 0, 1.0), (0.4, 0, 1.0)]
        with pytest.raises(SchemaError, match="uniform"):
            load_trace(write_csv(tmp_path / "t.csv", rows))

    def test_negative_runtime_names_row(self, tmp_path):
        rows = [(0.1, 0, 1.0), (0.2, 0, -1.0)]
        with pytest.raises(SchemaError, match="row 3"):
            load_trace(write_csv(tmp_path / "t.csv", rows))

    def test_duplicate_rows(self, tmp_path):
        rows = [(0.1, 0, 1.0), (0.2, 0, 1.0), (0.1, 0, 2.0)]
        with pytest.raises(SchemaError, match="row 4"):
            load_trace(write_csv(tmp_path / "t.csv", rows))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="nope.csv"):
            load_trace(tmp_path / "nope.csv")

    def test_exhausted(self, tmp_path):
        rows = [(x, i, 1.0 + 0.1 * (i % 2)) for x in (0.1, 0.2) for i in range(10)]
        oracle = load_trace(write_csv(tmp_path / "t.csv", rows))
        with pytest.raises(TraceExhausted):
            probe(oracle, 0.1, StoppingRule(min_samples=30))

    def test_simulate_roundtrip(self, tmp_path, grid, truth):
        synthetic = SyntheticOracle(truth, grid, 0.05, seed=8)
        path = tmp_path / "trace.csv"
        assert write_trace(synthetic, path, 50) == 40 * 50
        trace = load_trace(path)
        assert trace.grid == grid
        rule = StoppingRule.fixed(50)
        for x in (0.1, 1.3, 4.0):
            assert probe(trace, x, rule).point.mean_runtime == pytest.approx(
                probe(synthetic, x, rule).point.mean_runtime, rel=1e-15
            )


def script(tmp_path, body):
    path = tmp_path / "job.py"
    path.write_text(body, encoding="utf-8")
    return f"{sys.executable} {path} {{limit}}"


class TestCommand:
    def test_reads_runtimes(self, tmp_path):
        template = script(tmp_path, "import sys\nfor i in range(100):\n    print(1.0 / float(sys.argv[1]))\n")
        oracle = CommandOracle(template, LimitGrid(0.5, 2.0, 0.5))
        res = probe(oracle, 0.5, StoppingRule(min_samples=30))
        assert res.point.n_samples == 30
        assert res.point.mean_runtime == pytest.approx(2.0)
        assert res.duration > 0

    def test_restarts_short_output(self, tmp_path):
        template = script(tmp_path, "for i in range(7):\n    print(0.5)\n")
        oracle = CommandOracle(template, LimitGrid(0.5, 1.0, 0.5))
        assert probe(oracle, 1.0, StoppingRule(min_samples=30)).point.n_samples == 30

    def test_unparsable(self, tmp_path):
        oracle = CommandOracle(script(tmp_path, "print('oops')\n"), LimitGrid(0.5, 1.0, 0.5))
        with pytest.raises(CommandOutputError, match="line 1"):
            probe(oracle, 0.5, StoppingRule())

    def test_timeout(self, tmp_path):
        template = script(tmp_path, "import time\nprint(1.0, flush=True)\ntime.sleep(30)\n")
        oracle = CommandOracle(template, LimitGrid(0.5, 1.0, 0.5), timeout=0.5)
        with pytest.raises(CommandTimeout):
            probe(oracle, 0.5, StoppingRule())

    def test_template_needs_placeholder(self):
        with pytest.raises(ConfigError):
            CommandOracle("echo 1", LimitGrid(0.5, 1.0, 0.5))


def test_trace_oracle_reference():
    oracle = TraceOracle({0: [1.0, 3.0], 1: [2.0]}, LimitGrid(0.1, 0.2, 0.1))
    np.testing.assert_allclose(oracle.reference(), [2.0, 2.0])
