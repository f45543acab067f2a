import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chi2
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import ConstantKernel, Matern, WhiteKernel

from streamprof import (
    ConfigError,
    GridExhausted,
    InfeasibleConfiguration,
    LimitGrid,
    ProfilePoint,
    RuntimeModel,
    evaluate,
    initial_limits,
    make_strategy,
    synthetic_target,
)
from streamprof.exceptions import NumericalFailure
from streamprof.selection import (
    STANDARD_FRACTIONS,
    BayesOptStrategy,
    BinarySearchStrategy,
    ConfigurationWarning,
    GaussianProcess,
    NestedModelingStrategy,
    RandomStrategy,
    constrained_score,
    expected_improvement,
    matern52,
)
from streamprof.stopping import StoppingRule

L_MAX = (1.0, 2.0, 4.0, 8.0, 16.0)


# (0.3, 0.6, 0.5) leaves 0.6 for the last run, which collides and is bumped to 0.7 (sum 2.1)
INFEASIBLE = {(0.125, 4, 2), (0.15, 4, 2)}


class TestInitialLimits:
    def test_hand_trace_n3(self, grid):
        assert initial_limits(0.05, 3, grid) == (0.2, 2.1, 1.7)

    @pytest.mark.parametrize("p, expected", [(0.025, 0.2), (0.05, 0.2), (0.075, 0.2), (0.1, 0.2),
                                             (0.125, 0.3), (0.15, 0.3)])
    def test_synthetic_limit_two_cores(self, p, expected):
        assert initial_limits(p, 2, LimitGrid(0.1, 2.0, 0.1))[0] == expected

    def test_synthetic_limit_sixteen_cores(self):
        assert initial_limits(0.025, 3, LimitGrid(0.1, 16.0, 0.1))[0] == 0.4

    def test_small_cpu_branch(self):
        assert initial_limits(0.05, 3, LimitGrid(0.1, 1.0, 0.1)) == (0.2, 0.3, 0.5)

    def test_four_runs_perturbs_duplicates(self):
        limits = initial_limits(0.05, 4, LimitGrid(0.1, 1.0, 0.1))
        assert limits == (0.2, 0.3, 0.4, 0.1)

    @pytest.mark.parametrize("p, n, l_max", list(itertools.product(STANDARD_FRACTIONS, (2, 3, 4), L_MAX)))
    def test_sum_constraint_sweep(self, p, n, l_max):
        grid = LimitGrid(0.1, l_max, 0.1)
        if (p, n, l_max) in INFEASIBLE:
            with pytest.raises(InfeasibleConfiguration):
                initial_limits(p, n, grid)
            return
        limits = initial_limits(p, n, grid)
        assert len(limits) == n
        assert len(set(limits)) == n
        assert sum(limits) <= l_max + 1e-9
        assert all(grid.contains(x) for x in limits)

    def test_four_runs_need_room(self):
        with pytest.raises(InfeasibleConfiguration):
            initial_limits(0.05, 4, LimitGrid(0.1, 0.3, 0.1))

    def test_bad_n(self, grid):
        with pytest.raises(ConfigError):
            initial_limits(0.05, 5, grid)

    def test_non_standard_fraction_warns(self, grid):
        with pytest.warns(ConfigurationWarning):
            initial_limits(0.3, 2, grid)


class TestSyntheticTarget:
    def test_identity(self, grid):
        assert synthetic_target(ProfilePoint(0.2, 1.84, 30), grid) == 1.84

    def test_smallest_limit_warns(self, grid):
        with pytest.warns(ConfigurationWarning):
            synthetic_target(ProfilePoint(0.1, 3.0, 30), grid)

    def test_too_few_samples(self, grid):
        with pytest.raises(ValueError):
            synthetic_target(ProfilePoint(0.2, 1.0, 5), grid, StoppingRule(min_samples=30))


class TestNMS:
    def test_dedup_prefers_smaller(self, grid):
        s = NestedModelingStrategy(grid, 5.0, [ProfilePoint(0.2, 5.0)])
        assert s.next_limit() == 0.1

    def test_recovers_target_limit(self, grid, truth):
        obs = [ProfilePoint(r, evaluate(truth, r)) for r in (0.2, 1.0, 2.0, 3.0, 4.0)]
        s = NestedModelingStrategy(grid, evaluate(truth, 0.4), obs)
        assert s.next_limit() == 0.4
        assert s.model.tier == 5

    def test_warm_start_chain(self, grid, truth):
        obs = [ProfilePoint(r, evaluate(truth, r)) for r in (0.2, 2.1, 1.7)]
        s = NestedModelingStrategy(grid, obs[0].mean_runtime, obs)
        s.next_limit()
        first = s.model
        s.observe(ProfilePoint(0.1, evaluate(truth, 0.1)))
        s.next_limit()
        assert first.tier == 3 and s.model.tier == 4

    def test_exhausted(self):
        small = LimitGrid(0.1, 0.3, 0.1)
        s = NestedModelingStrategy(small, 1.0, [ProfilePoint(x, 1.0 / x) for x in (0.1, 0.2, 0.3)])
        with pytest.raises(GridExhausted):
            s.next_limit()


class TestBinarySearch:
    def test_fresh_bracket(self, grid):
        assert BinarySearchStrategy(grid, 1.0).next_limit() == 2.0

    def test_slow_probe_moves_up(self, grid):
        s = BinarySearchStrategy(grid, 1.0)
        s.next_limit()
        s.observe(ProfilePoint(2.0, 1.5))
        assert s.next_limit() == 3.0

    def test_fast_probe_moves_down(self, grid):
        s = BinarySearchStrategy(grid, 1.0)
        s.next_limit()
        s.observe(ProfilePoint(2.0, 0.5))
        assert s.next_limit() == 1.0

    def test_profiled_mid_is_skipped(self, grid):
        s = BinarySearchStrategy(grid, 1.0, [ProfilePoint(2.0, 0.5)])
        assert s.next_limit() == 1.0

    def test_exhausts_on_single_profiled_point(self):
        s = BinarySearchStrategy(LimitGrid(0.1, 0.2, 0.1), 1.0)
        s.next_limit()
        s.observe(ProfilePoint(0.1, 2.0))
        s.next_limit()
        s.observe(ProfilePoint(0.2, 2.0))
        with pytest.raises(GridExhausted):
            s.next_limit()

    def test_width_strictly_shrinks(self, grid, truth):
        s = BinarySearchStrategy(grid, evaluate(truth, 0.7))
        widths = [s.width]
        while True:
            try:
                x = s.next_limit()
            except GridExhausted:
                break
            s.observe(ProfilePoint(x, evaluate(truth, x)))
            widths.append(s.width)
        assert all(b < a for a, b in zip(widths, widths[1:]))
        assert 0.7 in [p.cpu_limit for p in s.observed]


def _sklearn_posterior(x, y, xs, ell, var, noise, mean):
    kernel = ConstantKernel(var, "fixed") * Matern(ell, "fixed", nu=2.5) + WhiteKernel(noise, "fixed")
    gpr = GaussianProcessRegressor(kernel, optimizer=None, alpha=1e-12).fit(x[:, None], y - mean)
    mu, sd = gpr.predict(xs[:, None], return_std=True)
    # WhiteKernel adds observation noise to the predictive std; remove it
    return mu + mean, np.sqrt(np.maximum(sd**2 - noise, 0.0))


class TestBayesOpt:
    def test_kernel_matches_sklearn(self):
        x = np.linspace(0, 1, 7)
        ours = matern52(x, x, 0.3, 2.0)
        ref = (ConstantKernel(2.0) * Matern(0.3, nu=2.5))(x[:, None])
        np.testing.assert_allclose(ours, ref, rtol=1e-12)

    def test_posterior_matches_sklearn(self):
        rng = np.random.default_rng(1)
        x, y = rng.uniform(0, 1, 6), rng.normal(size=6)
        xs = np.linspace(0, 1, 25)
        mu, sd = GaussianProcess(0.25, 1.5, 1e-4, 0.3).fit(x, y).predict(xs)
        mu_ref, sd_ref = _sklearn_posterior(x, y, xs, 0.25, 1.5, 1e-4, 0.3)
        np.testing.assert_allclose(mu, mu_ref, rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(sd, sd_ref, rtol=1e-5, atol=1e-6)

    def test_transform(self):
        assert constrained_score(1.0, 1.0) == 1.0
        assert constrained_score(0.5, 1.0) == 0.5
        assert constrained_score(2.0, 1.0) == -2.0

    @given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
    def test_transform_sign(self, r, t):
        y = constrained_score(r, t)
        assert (y > 0) == (r <= t)
        assert abs(y) == pytest.approx(r / t)

    @pytest.mark.parametrize("observed_at, farthest", [(0.2, 4.0), (2.1, 0.1), (3.5, 0.1)])
    def test_single_observation_explores_farthest(self, grid, observed_at, farthest):
        s = BayesOptStrategy(grid, 1.0, [ProfilePoint(observed_at, 0.8)])
        choice = s.next_limit()
        # brute force: EI at every free grid point from an independent posterior
        x = (np.array([observed_at]) - 0.1) / 3.9
        free = np.array([v for v in grid.values if v != observed_at])
        mu, sd = _sklearn_posterior(x, np.array([0.8]), (free - 0.1) / 3.9, 0.25, 1e-6, 1e-4, 0.8)
        ei = expected_improvement(mu, sd, 0.8)
        assert choice == farthest == free[np.argmax(ei)]

    def test_duplicate_inputs_use_jitter(self):
        gp = GaussianProcess(0.25, 1.0, noise_variance=0.0, mean=0.0)
        gp.fit([0.5, 0.5], [1.0, 1.0])
        mu, sd = gp.predict([0.1, 0.5, 0.9])
        assert np.all(np.isfinite(mu)) and np.all(np.isfinite(sd))

    def test_jitter_exhaustion(self):
        gp = GaussianProcess(0.25, 1.0, noise_variance=-10.0)
        with pytest.raises(NumericalFailure):
            gp.fit([0.1, 0.9], [0.0, 1.0])

    def test_returns_free_grid_point(self, grid, truth):
        obs = [ProfilePoint(r, evaluate(truth, r)) for r in (0.2, 2.1, 1.7)]
        s = BayesOptStrategy(grid, obs[0].mean_runtime, obs)
        x = s.next_limit()
        assert grid.contains(x) and x not in (0.2, 2.1, 1.7)


class TestRandom:
    def test_single_candidate(self):
        small = LimitGrid(0.5, 0.7, 0.1)
        s = RandomStrategy(small, 1.0, [ProfilePoint(0.5, 1.0), ProfilePoint(0.6, 1.0)], seed=3)
        assert s.next_limit() == 0.7

    def test_deterministic(self, grid):
        a = RandomStrategy(grid, 1.0, [ProfilePoint(0.2, 1.0)], seed=11)
        b = RandomStrategy(grid, 1.0, [ProfilePoint(0.2, 1.0)], seed=11)
        assert a.next_limit() == a.next_limit() == b.next_limit()

    def test_uniform_over_free_limits(self, grid):
        draws = [RandomStrategy(grid, 1.0, [ProfilePoint(0.2, 1.0)], seed=s).next_limit() for s in range(1000)]
        free = [v for v in grid.values.tolist() if v != 0.2]
        assert set(draws) <= set(free)
        counts = np.array([draws.count(v) for v in free])
        expected = len(draws) / len(free)
        stat = ((counts - expected) ** 2 / expected).sum()
        assert stat < chi2.ppf(0.99, len(free) - 1)

    def test_exhausted(self):
        small = LimitGrid(0.1, 0.2, 0.1)
        s = RandomStrategy(small, 1.0, [ProfilePoint(0.1, 1.0), ProfilePoint(0.2, 1.0)])
        with pytest.raises(GridExhausted):
            s.next_limit()


@pytest.mark.parametrize("kind", ["nms", "bs", "bo", "random", "BinarySearch", "BayesOpt"])
def test_every_proposal_is_fresh_and_on_grid(grid, truth, kind):
    obs = [ProfilePoint(r, evaluate(truth, r)) for r in (0.2, 2.1, 1.7)]
    s = make_strategy(kind, grid, obs[0].mean_runtime, obs, seed=5)
    for _ in range(6):
        try:
            x = s.next_limit()
        except GridExhausted:
            break
        assert grid.contains(x)
        assert x not in [p.cpu_limit for p in s.observed]
        s.observe(ProfilePoint(x, evaluate(truth, x)))


def test_unknown_strategy(grid):
    with pytest.raises(ConfigError):
        make_strategy("simplex", grid, 1.0)
