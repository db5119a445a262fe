"""
Unit tests for rewards, the optimizer and the selection training loop
"""

import os
import sys
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np

# Add parent directory to path to import modules
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from segsel.config import RewardConfig, RewardStrategy, SyntheticRouteConfig, TrainConfig
from segsel.errors import ConfigurationError, DataError, NumericalError
from segsel.evaluation.metrics import prediction_errors
from segsel.evaluation.synthetic import generate_synthetic_route
from segsel.learning.features import (
    FEATURE_DIM, FeatureScaler, SelectionState, assemble_state, route_features,
)
from segsel.learning.policy import (
    EpisodeStep, apply_actions, backward, compute_bounds, forward, greedy_actions, init_params,
    sample_actions,
)
from segsel.learning.training import (
    SgdState, build_benchmark_table, compute_reward, dprl_train, epoch_gradient, load_benchmark_table,
    load_checkpoint, lr_at, read_convergence_log, reward_atr, reward_bcr, reward_ier,
    save_benchmark_table, save_checkpoint, selection_size, sgd_step, write_convergence_log,
)
from segsel.utils import rng_stream

SMALL_ROUTE = SyntheticRouteConfig(
    n_segments=20, hotspot_indices=(3, 8, 13), trips_train=30, trips_test=10, seed=1,
)
SMALL_TRAIN = TrainConfig(epochs=3, batch_size=8, seed=5)
ATR = RewardConfig(strategy=RewardStrategy.ATR)


class TestRewards(unittest.TestCase):
    """Test cases for the three reward strategies"""

    def test_bcr(self):
        self.assertEqual(reward_bcr([1, 3], [2, 2]), 0.5)
        self.assertEqual(reward_bcr([1, 1], [2, 2]), 1.0)
        self.assertEqual(reward_bcr([3, 3], [2, 2]), 0.0)

    def test_bcr_length_mismatch(self):
        with self.assertRaises(DataError):
            reward_bcr([1, 2, 3], [1, 2])

    def test_ier(self):
        self.assertAlmostEqual(reward_ier([0.5, 2], epsilon=0.0), 1.25)
        self.assertAlmostEqual(reward_ier([0.0], epsilon=0.1), 10.0)
        self.assertAlmostEqual(reward_ier([1.0, 1.0], epsilon=1e-12), 1.0, places=9)

    def test_ier_rejects_negative_errors(self):
        with self.assertRaises(DataError):
            reward_ier([-1.0])

    def test_atr(self):
        self.assertEqual(reward_atr([0, 0]), 0.0)
        self.assertEqual(reward_atr([1, 3]), -2.0)
        self.assertEqual(reward_atr([3, 1]), reward_atr([1, 3]))

    def test_smaller_errors_never_lower_reward(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            big = rng.exponential(2.0, size=10)
            small = big * rng.uniform(0, 1, size=10)
            self.assertGreaterEqual(reward_atr(small), reward_atr(big))
            self.assertGreaterEqual(reward_ier(small), reward_ier(big))

    def test_bcr_needs_benchmark(self):
        with self.assertRaises(ConfigurationError):
            compute_reward(np.ones(3), RewardConfig(strategy=RewardStrategy.BCR))


class TestOptimizer(unittest.TestCase):
    """Test cases for lr_at and sgd_step"""

    def setUp(self):
        params = init_params(4, 2, np.random.default_rng(0))
        self.ones = type(params)(**{name: np.ones_like(v) for name, v in params.items()})

    def test_schedule(self):
        cfg = TrainConfig()
        self.assertEqual(lr_at(cfg, 0), 1e-3)
        self.assertEqual(lr_at(cfg, 39), 1e-3)
        self.assertAlmostEqual(lr_at(cfg, 40), 1e-4, places=15)
        self.assertAlmostEqual(lr_at(cfg, 59), 1e-4, places=15)
        self.assertAlmostEqual(lr_at(cfg, 60), 1e-5, places=15)

    def test_weight_decay_only(self):
        cfg = TrainConfig()
        out = sgd_step(self.ones, self.ones.zeros_like(), SgdState(self.ones.zeros_like()), cfg, 0)
        for _, value in out.items():
            np.testing.assert_allclose(value, 0.9999995, rtol=0, atol=1e-15)

    def test_weight_decay_rides_the_momentum_buffer(self):
        """L2 decay is added to the gradient, so it accumulates in the velocity"""
        cfg = TrainConfig()
        state = SgdState(self.ones.zeros_like())
        zero = self.ones.zeros_like()
        p1 = sgd_step(self.ones, zero, state, cfg, 0)
        p2 = sgd_step(p1, zero, state, cfg, 1)
        v1 = cfg.weight_decay * 1.0
        v2 = cfg.momentum * v1 + cfg.weight_decay * (1.0 - cfg.lr * v1)
        np.testing.assert_allclose(p2.fc1_w, 1.0 - cfg.lr * v1 - cfg.lr * v2, rtol=0, atol=1e-15)

    def test_plain_gradient_descent(self):
        cfg = TrainConfig(momentum=0.0, weight_decay=0.0)
        grads = type(self.ones)(**{name: np.full_like(v, 2.0) for name, v in self.ones.items()})
        out = sgd_step(self.ones, grads, SgdState(self.ones.zeros_like()), cfg, 0)
        for _, value in out.items():
            np.testing.assert_array_equal(value, 1.0 - 1e-3 * 2.0)

    def test_momentum_accumulates(self):
        cfg = TrainConfig(weight_decay=0.0)
        grads = type(self.ones)(**{name: np.ones_like(v) for name, v in self.ones.items()})
        state = SgdState(self.ones.zeros_like())
        p1 = sgd_step(self.ones, grads, state, cfg, 0)
        p2 = sgd_step(p1, grads, state, cfg, 1)
        np.testing.assert_allclose(p2.conv_b, 1.0 - 1e-3 * 1.0 - 1e-3 * 1.9)

    def test_non_finite_gradient(self):
        grads = self.ones.zeros_like()
        grads.fc1_w[0, 0] = np.nan
        with self.assertRaises(NumericalError) as ctx:
            sgd_step(self.ones, grads, SgdState(self.ones.zeros_like()), TrainConfig(), 7)
        self.assertEqual(ctx.exception.layer, "fc1_w")
        self.assertEqual(ctx.exception.epoch, 7)


class TestEpochGradient(unittest.TestCase):
    """Test cases for the per-epoch policy gradient"""

    def setUp(self):
        rng = np.random.default_rng(11)
        self.params = init_params(12, 4, rng)
        self.states = [
            assemble_state(rng.normal(size=(12, FEATURE_DIM)), SelectionState.from_indices(range(12), (1, 4, 7, 10)))
            for _ in range(3)
        ]
        self.inner = [
            EpisodeStep(state, sample_actions(forward(self.params, state), rng), reward)
            for state, reward in zip(self.states[:2], (0.4, -0.2))
        ]
        self.greedy = greedy_actions(forward(self.params, self.states[2]))

    def test_post_loop_step_joins_the_update(self):
        final = EpisodeStep(self.states[2], self.greedy, 0.9)
        grads = epoch_gradient(self.params, self.inner, final)
        expected = backward(self.params, self.inner + [final])
        for (name, g), (_, e) in zip(grads.items(), expected.items()):
            np.testing.assert_allclose(g, e, rtol=0, atol=1e-15, err_msg=name)

    def test_post_loop_reward_changes_the_gradient(self):
        low = epoch_gradient(self.params, self.inner, EpisodeStep(self.states[2], self.greedy, 0.0))
        high = epoch_gradient(self.params, self.inner, EpisodeStep(self.states[2], self.greedy, 5.0))
        changed = [not np.allclose(a, b) for (_, a), (_, b) in zip(low.items(), high.items())]
        self.assertTrue(any(changed))


class TestTrainingLoop(unittest.TestCase):
    """Test cases for dprl_train on a small synthetic route"""

    @classmethod
    def setUpClass(cls):
        cls.grid, cls.train, cls.test = generate_synthetic_route(SMALL_ROUTE)

    def test_selection_size(self):
        self.assertEqual(len(self.grid.interpolation_indices), 16)
        self.assertEqual(selection_size(self.grid, 2 / 3), 10)
        with self.assertRaises(ConfigurationError):
            selection_size(self.grid, 0.01)

    def test_zero_epochs_keeps_random_selection(self):
        result = dprl_train(self.train, self.grid, replace(SMALL_TRAIN, epochs=0), ATR)
        expected = SelectionState.random(self.grid, 10, rng_stream(5, "selection-init"))
        self.assertEqual(result.selection.indices, expected.indices)
        self.assertEqual(result.log, [])
        self.assertEqual(set(result.model.indices),
                         set(expected.indices) | set(self.grid.landmark_indices))

    def test_default_commit_is_chained_selection_plus_greedy_step(self):
        """One epoch under the default rule commits the sampled chain followed by the greedy move"""
        config = replace(SMALL_TRAIN, epochs=1)
        self.assertEqual(TrainConfig().commit, "last")
        result = dprl_train(self.train, self.grid, config, ATR)

        seed, m = 5, 10
        landmarks = set(self.grid.landmark_indices)
        scaler = FeatureScaler.fit(route_features(self.grid, self.train))
        current = SelectionState.random(self.grid, m, rng_stream(seed, "selection-init"))
        params = init_params(len(self.grid.interpolation_indices), m, rng_stream(seed, "params"))
        sampling = rng_stream(seed, "sampling")
        rows = np.sort(rng_stream(seed, "batch").choice(self.train.n_trips, size=8, replace=False))
        features = scaler.transform(route_features(self.grid, self.train, rows).mean(axis=0))
        for _ in range(config.action_iterations):
            actions = sample_actions(forward(params, assemble_state(features, current)), sampling)
            bounds = compute_bounds(current.indices, self.grid.last_index)
            current = current.with_indices(apply_actions(current.indices, actions, bounds, landmarks))
        greedy = greedy_actions(forward(params, assemble_state(features, current)))
        bounds = compute_bounds(current.indices, self.grid.last_index)
        expected = apply_actions(current.indices, greedy, bounds, landmarks)

        self.assertEqual(tuple(result.selection.indices), tuple(sorted(expected)))

    def test_best_commit_is_opt_in(self):
        result = dprl_train(self.train, self.grid, replace(SMALL_TRAIN, commit="best"), ATR)
        self.assertEqual(len(result.log), 3)
        with self.assertRaises(ConfigurationError):
            dprl_train(self.train, self.grid, replace(SMALL_TRAIN, commit="first"), ATR)

    def test_log_and_selection_invariants(self):
        result = dprl_train(self.train, self.grid, SMALL_TRAIN, ATR)
        self.assertEqual(len(result.log), 3)
        self.assertEqual([r.epoch for r in result.log], [0, 1, 2])
        for record in result.log:
            self.assertTrue(np.isfinite(record.train_mae) and record.train_mae >= 0)
            self.assertTrue(np.isfinite(record.reward_mean))
        indices = result.selection.indices
        self.assertEqual(len(indices), 10)
        self.assertTrue(all(b > a for a, b in zip(indices, indices[1:])))
        self.assertFalse(set(indices) & set(self.grid.landmark_indices))

    def test_same_seed_same_run(self):
        a = dprl_train(self.train, self.grid, SMALL_TRAIN, ATR)
        b = dprl_train(self.train, self.grid, SMALL_TRAIN, ATR)
        self.assertEqual(a.log, b.log)
        self.assertEqual(a.selection.indices, b.selection.indices)
        for (name, x), (_, y) in zip(a.params.items(), b.params.items()):
            self.assertEqual(x.tobytes(), y.tobytes(), name)

    def test_missing_seed(self):
        with self.assertRaises(ConfigurationError):
            dprl_train(self.train, self.grid, replace(SMALL_TRAIN, seed=None), ATR)

    def test_bcr_without_benchmark(self):
        with self.assertRaises(ConfigurationError):
            dprl_train(self.train, self.grid, SMALL_TRAIN, RewardConfig(strategy=RewardStrategy.BCR))

    def test_bcr_with_all_segments_benchmark(self):
        table = build_benchmark_table(self.train, self.grid)
        result = dprl_train(self.train, self.grid, replace(SMALL_TRAIN, epochs=2),
                            RewardConfig(strategy=RewardStrategy.BCR), table)
        for record in result.log:
            self.assertTrue(0.0 <= record.reward_mean <= 1.0)

    def test_ier_and_last_commit(self):
        result = dprl_train(self.train, self.grid, replace(SMALL_TRAIN, commit="last", use_mask=False),
                            RewardConfig(strategy=RewardStrategy.IER))
        self.assertEqual(len(result.log), 3)
        self.assertFalse(result.use_mask)

    def test_checkpoint_reproduces_held_out_mae(self):
        result = dprl_train(self.train, self.grid, SMALL_TRAIN, ATR)
        before = prediction_errors(result.model, self.test, self.grid).mean()
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "checkpoint.json"
            save_checkpoint(result, path)
            restored = load_checkpoint(path)
        after = prediction_errors(restored.model, self.test, self.grid).mean()
        self.assertEqual(before, after)
        self.assertEqual(restored.selection.indices, result.selection.indices)
        self.assertEqual(restored.seed, 5)

    def test_convergence_log_file(self):
        result = dprl_train(self.train, self.grid, SMALL_TRAIN, ATR)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "convergence.csv"
            write_convergence_log(result.log, path, "abc123")
            first_line = path.read_text(encoding="utf-8").splitlines()[0]
            records = read_convergence_log(path)
        self.assertEqual(first_line, "# config_digest: abc123")
        self.assertEqual(records, result.log)

    def test_benchmark_table_file(self):
        table = build_benchmark_table(self.train, self.grid)
        self.assertEqual(len(table), self.train.n_trips * 10)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "benchmark.csv"
            save_benchmark_table(table, path)
            again = load_benchmark_table(path)
        self.assertEqual(again, table)


if __name__ == '__main__':
    unittest.main()
