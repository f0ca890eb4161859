"""Tests for the disturbance-dependent linear dynamics."""

import numpy as np
import pytest

from cvar_filter.risk import DistributionError
from cvar_filter.system import (
    DimensionError,
    LinearStochasticSystem,
    Outcome,
    OutcomeIndexError,
    clip_control,
    rollout_rng,
    sample_outcome,
    step,
    successor_value_distribution,
    successors,
)


class TestConstruction:
    """Tests for system validation."""

    def test_dimensions(self, line_system):
        assert (line_system.n, line_system.m, line_system.num_outcomes) == (1, 1, 3)
        assert line_system.probs.sum() == pytest.approx(1.0)

    def test_outcome_rejects_non_square_a(self):
        with pytest.raises(DimensionError):
            Outcome([[1.0, 0.0]], [[1.0]], [0.0])

    def test_mismatched_outcomes(self):
        with pytest.raises(DimensionError):
            LinearStochasticSystem(
                (Outcome([[1.0]], [[1.0]], [0.0]), Outcome(np.eye(2), np.eye(2), [0.0, 0.0])),
                [0.5, 0.5],
                [-1.0],
                [1.0],
            )

    def test_bad_probs(self):
        with pytest.raises(DistributionError):
            LinearStochasticSystem.additive([[1.0]], [[1.0]], [[0.0], [1.0]], [-1.0], [1.0], probs=[0.5, 0.4])

    def test_inverted_bounds(self):
        with pytest.raises(ValueError, match="u_lower"):
            LinearStochasticSystem.additive([[1.0]], [[1.0]], [[0.0]], [1.0], [-1.0])

    def test_bound_length(self):
        with pytest.raises(DimensionError):
            LinearStochasticSystem.additive([[1.0]], [[1.0]], [[0.0]], [-1.0, -1.0], [1.0, 1.0])


class TestStep:
    """Tests for successor computation."""

    def test_step_matches_successors(self):
        rng = np.random.default_rng(1)
        outcomes = tuple(
            Outcome(rng.normal(size=(3, 3)), rng.normal(size=(3, 2)), rng.normal(size=3)) for _ in range(4)
        )
        sys = LinearStochasticSystem(outcomes, [0.1, 0.2, 0.3, 0.4], [-1.0, -1.0], [1.0, 1.0])
        x, u = rng.normal(size=3), rng.normal(size=2)
        rows = successors(sys, x, u)
        assert rows.shape == (4, 3)
        for i, o in enumerate(outcomes):
            np.testing.assert_allclose(step(sys, x, u, i), o.A @ x + o.B @ u + o.G)
            np.testing.assert_allclose(rows[i], step(sys, x, u, i))

    def test_step_is_affine(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            n, m, k = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 6))
            outcomes = tuple(
                Outcome(rng.normal(size=(n, n)), rng.normal(size=(n, m)), rng.normal(size=n)) for _ in range(k)
            )
            sys = LinearStochasticSystem(outcomes, np.full(k, 1.0 / k), -np.ones(m), np.ones(m))
            x1, x2 = rng.normal(size=n), rng.normal(size=n)
            u1, u2 = rng.normal(size=m), rng.normal(size=m)
            theta = float(rng.uniform(-2.0, 3.0))
            for i in range(k):
                combined = step(sys, theta * x1 + (1 - theta) * x2, theta * u1 + (1 - theta) * u2, i)
                expected = theta * step(sys, x1, u1, i) + (1 - theta) * step(sys, x2, u2, i)
                np.testing.assert_allclose(combined, expected, rtol=1e-10, atol=1e-10)

    def test_outcome_index_out_of_range(self, line_system):
        with pytest.raises(OutcomeIndexError):
            step(line_system, [0.0], [0.0], 3)
        with pytest.raises(OutcomeIndexError):
            step(line_system, [0.0], [0.0], -1)

    def test_wrong_state_length(self, line_system):
        with pytest.raises(DimensionError):
            step(line_system, [0.0, 1.0], [0.0], 0)

    def test_value_distribution(self, line_system, wall_barrier):
        d = successor_value_distribution(line_system, [0.5], [0.1], lambda x: 1.0 - x[0])
        np.testing.assert_allclose(d.values, [0.5, 0.4, 0.3])

    def test_clip_control(self, line_system):
        assert clip_control(line_system, [2.5]).tolist() == [1.0]
        assert clip_control(line_system, [-0.3]).tolist() == [-0.3]


class TestSampling:
    """Tests for outcome sampling and per-rollout random streams."""

    def test_frequencies_match_probabilities(self):
        W = [[0.0], [1.0], [2.0]]
        sys = LinearStochasticSystem.additive([[1.0]], [[1.0]], W, [-1.0], [1.0], probs=[0.2, 0.0, 0.8])
        rng = np.random.default_rng(0)
        draws = np.array([sample_outcome(sys, rng) for _ in range(20000)])
        assert not np.any(draws == 1)
        assert np.mean(draws == 0) == pytest.approx(0.2, abs=0.02)

    def test_rollout_streams_are_reproducible(self):
        a = rollout_rng(7, 3).random(5)
        b = rollout_rng(7, 3).random(5)
        np.testing.assert_array_equal(a, b)

    def test_rollout_streams_differ(self):
        assert not np.array_equal(rollout_rng(7, 0).random(5), rollout_rng(7, 1).random(5))
        assert not np.array_equal(rollout_rng(7, 0).random(5), rollout_rng(8, 0).random(5))
