"""Tests for barrier expressions, the one-step condition and nested CVaR verification."""

import numpy as np
import pytest

from cvar_filter.barrier import (
    BarrierCertificate,
    BarrierError,
    CompositionMode,
    LinearBarrier,
    MaxBarrier,
    MinBarrier,
    NegBarrier,
    TreeBudgetError,
    barrier_from_dict,
    barrier_to_dict,
    composite_condition_check,
    dimension,
    evaluate,
    negate_to_leaves,
    nested_cvar_verify,
    one_step_cvar_margin,
)
from cvar_filter.risk import RiskLevelError, TailConvention
from cvar_filter.safety_filter import FilterRequest, FilterSettings, solve_filter
from cvar_filter.system import LinearStochasticSystem


class TestExpressions:
    """Tests for evaluation and rewriting of barrier trees."""

    def test_linear(self, wall_barrier):
        assert evaluate(wall_barrier, [0.25]) == pytest.approx(0.75)

    def test_composition(self):
        a = LinearBarrier([1.0, 0.0], 0.0)
        b = LinearBarrier([0.0, 1.0], 1.0)
        x = [2.0, -3.0]
        assert evaluate(MinBarrier((a, b)), x) == pytest.approx(-2.0)
        assert evaluate(MaxBarrier((a, b)), x) == pytest.approx(2.0)
        assert evaluate(NegBarrier(MinBarrier((a, b))), x) == pytest.approx(2.0)

    def test_zero_row_rejected(self):
        with pytest.raises(BarrierError, match="all-zero"):
            LinearBarrier([0.0, 0.0], 1.0)

    def test_empty_composition_rejected(self):
        with pytest.raises(BarrierError):
            MinBarrier(())

    def test_dimension_mismatch(self):
        tree = MinBarrier((LinearBarrier([1.0], 0.0), LinearBarrier([1.0, 1.0], 0.0)))
        with pytest.raises(BarrierError, match="disagree"):
            dimension(tree)
        with pytest.raises(BarrierError):
            evaluate(LinearBarrier([1.0, 1.0], 0.0), [1.0])

    def test_negation_pushed_to_leaves(self):
        rng = np.random.default_rng(6)
        a, b, c = (LinearBarrier(rng.normal(size=3), rng.normal()) for _ in range(3))
        tree = NegBarrier(MinBarrier((a, NegBarrier(MaxBarrier((b, c))))))
        rewritten = negate_to_leaves(tree)
        assert isinstance(rewritten, MaxBarrier)
        for _ in range(50):
            x = rng.normal(size=3)
            assert evaluate(rewritten, x) == pytest.approx(evaluate(tree, x))

    def test_dict_round_trip(self):
        tree = MinBarrier((LinearBarrier([1.0, 0.0], 0.5), NegBarrier(LinearBarrier([0.0, 2.0], -1.0))))
        data = barrier_to_dict(tree)
        assert data == {"min": [{"H": [1.0, 0.0], "offset": 0.5}, {"neg": {"H": [0.0, 2.0], "offset": -1.0}}]}
        assert barrier_to_dict(barrier_from_dict(data)) == data

    def test_from_dict_rejects_unknown_kind(self):
        with pytest.raises(BarrierError, match="unknown"):
            barrier_from_dict({"xor": []})
        with pytest.raises(BarrierError, match="unknown"):
            barrier_from_dict({"H": [1.0], "offset": 0.0, "scale": 2.0})


class TestCertificate:
    """Tests for alpha/beta validation."""

    @pytest.mark.parametrize("alpha", [0.0, 1.0, 1.2])
    def test_alpha_range(self, alpha):
        with pytest.raises(BarrierError):
            BarrierCertificate(alpha, 0.5)

    def test_beta_range(self):
        with pytest.raises(RiskLevelError):
            BarrierCertificate(0.5, 1.0)

    def test_round_trip(self):
        cert = BarrierCertificate(0.9, 0.1)
        assert BarrierCertificate.from_dict(cert.to_dict()) == cert


class TestOneStepMargin:
    """Tests for the one-step CVaR barrier condition."""

    def test_worked_example(self, line_system, wall_barrier, third_cert):
        # h(x+) = 0.5 - u - w; the worst third of the mass is w = 0.1
        margin = one_step_cvar_margin(wall_barrier, line_system, [0.5], [-0.05], third_cert)
        assert margin == pytest.approx(0.0, abs=1e-12)
        assert one_step_cvar_margin(wall_barrier, line_system, [0.5], [0.6], third_cert) == pytest.approx(-0.65)

    def test_upper_tail_is_more_optimistic(self, line_system, wall_barrier, third_cert):
        lower = one_step_cvar_margin(wall_barrier, line_system, [0.5], [0.0], third_cert)
        upper = one_step_cvar_margin(wall_barrier, line_system, [0.5], [0.0], third_cert, TailConvention.UPPER_TAIL)
        assert upper == pytest.approx(lower + 0.2)

    @pytest.mark.parametrize("tail", [TailConvention.LOWER_TAIL, TailConvention.UPPER_TAIL])
    def test_ordered_barriers_keep_ordered_cvar(self, tail):
        rng = np.random.default_rng(14)
        cert = BarrierCertificate(alpha=0.9, beta=0.3)
        for _ in range(100):
            n, m, k = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(2, 7))
            sys = LinearStochasticSystem.additive(
                rng.normal(size=(n, n)), rng.normal(size=(n, m)), rng.normal(size=(k, n)), -np.ones(m), np.ones(m)
            )
            upper_barrier = LinearBarrier(rng.normal(size=n) + 0.1, float(rng.normal()))
            lower_barriers = (
                MinBarrier((upper_barrier, LinearBarrier(rng.normal(size=n) + 0.1, float(rng.normal())))),
                LinearBarrier(upper_barrier.H, upper_barrier.offset - float(rng.uniform(0.0, 2.0))),
            )
            x, u = rng.normal(size=n), rng.uniform(-1.0, 1.0, size=m)
            upper_cvar = one_step_cvar_margin(upper_barrier, sys, x, u, cert, tail) + cert.alpha * evaluate(
                upper_barrier, x
            )
            for lower_barrier in lower_barriers:
                assert evaluate(lower_barrier, x) <= evaluate(upper_barrier, x)
                lower_cvar = one_step_cvar_margin(lower_barrier, sys, x, u, cert, tail) + cert.alpha * evaluate(
                    lower_barrier, x
                )
                assert lower_cvar <= upper_cvar + 1e-9

    def test_composite_modes(self):
        sys = LinearStochasticSystem.additive(np.eye(2), np.eye(2), [[0.1, 0.0], [-0.1, 0.0]], [-1, -1], [1, 1])
        a = LinearBarrier([1.0, 0.0], 1.0)
        b = LinearBarrier([0.0, 1.0], 1.0)
        cert = BarrierCertificate(0.5, 0.5)
        x, u = [0.0, 0.0], [0.0, 0.0]
        conj = composite_condition_check([a, b], CompositionMode.CONJUNCTION, sys, x, u, cert)
        disj = composite_condition_check([a, b], "disjunction", sys, x, u, cert)
        assert conj == pytest.approx(one_step_cvar_margin(MinBarrier((a, b)), sys, x, u, cert))
        assert disj == pytest.approx(one_step_cvar_margin(MaxBarrier((a, b)), sys, x, u, cert))
        assert conj <= disj


# =============================================================================
# NESTED CVaR
# =============================================================================


def random_benign_system(rng, n, num_outcomes):
    """Fully actuated system with wide control bounds so the filter always finds a safe control."""
    A = 0.9 * np.eye(n) + 0.05 * rng.normal(size=(n, n))
    B = np.eye(n) + 0.1 * rng.normal(size=(n, n))
    W = rng.uniform(-0.2, 0.2, size=(num_outcomes, n))
    probs = rng.dirichlet(np.ones(num_outcomes))
    return LinearStochasticSystem.additive(A, B, W, -20.0 * np.ones(n), 20.0 * np.ones(n), probs=probs / probs.sum())


def random_atom_through(rng, x0):
    H = rng.normal(size=x0.size)
    return LinearBarrier(H, -float(H @ x0) + rng.uniform(0.1, 2.0))


def filtered_policy(sys, barrier, cert, rng):
    """Unsafe-leaning legacy law passed through the filter, memoized per node."""
    push = -rng.uniform(0.5, 2.0, size=sys.m)
    gain = 0.1 * rng.normal(size=(sys.m, sys.n))
    cache = {}

    def policy(x, t):
        key = (t, x.tobytes())
        if key not in cache:
            u_legacy = np.clip(push + gain @ x, sys.u_lower, sys.u_upper)
            result = solve_filter(FilterRequest(x, u_legacy, barrier, cert), sys, FilterSettings())
            cache[key] = result.u_star
        return cache[key]

    return policy


class TestNestedVerify:
    """Tests for exact nested CVaR over the scenario tree."""

    def test_horizon_zero(self, line_system, wall_barrier, third_cert):
        report = nested_cvar_verify(wall_barrier, line_system, lambda x, t: [0.0], [0.5], third_cert, 0)
        assert len(report.rows) == 1
        assert report.rows[0].nested == pytest.approx(0.5)
        assert report.min_one_step_margin is None
        assert report.all_hold

    def test_constant_policy_closed_form(self, line_system, wall_barrier, third_cert):
        # with u = 0 the value after t steps has lower-tail CVaR h0 - 0.1 t at beta = 1/3
        report = nested_cvar_verify(wall_barrier, line_system, lambda x, t: [0.0], [0.0], third_cert, 3)
        assert [row.t for row in report.rows] == [0, 1, 2, 3]
        for row in report.rows:
            assert row.nested == pytest.approx(1.0 - 0.1 * row.t)
        assert report.nodes == 1 + 3 + 9 + 27

    def test_violating_policy_fails(self, line_system, wall_barrier, third_cert):
        report = nested_cvar_verify(wall_barrier, line_system, lambda x, t: [0.6], [0.5], third_cert, 2)
        assert not report.all_hold
        assert report.min_one_step_margin < 0

    def test_zero_probability_branches_pruned(self, wall_barrier, third_cert):
        sys = LinearStochasticSystem.additive([[1.0]], [[1.0]], [[-0.1], [5.0], [0.1]], [-1.0], [1.0], [0.5, 0.0, 0.5])
        report = nested_cvar_verify(wall_barrier, sys, lambda x, t: [0.0], [0.0], third_cert, 2)
        assert report.nodes == 1 + 2 + 4

    def test_budget(self, line_system, wall_barrier, third_cert):
        with pytest.raises(TreeBudgetError) as excinfo:
            nested_cvar_verify(wall_barrier, line_system, lambda x, t: [0.0], [0.0], third_cert, 5, node_budget=100)
        assert excinfo.value.required == 243
        assert excinfo.value.budget == 100

    def test_filtered_closed_loop_keeps_decay_bound(self):
        rng = np.random.default_rng(31)
        for _ in range(25):
            n = int(rng.integers(1, 4))
            sys = random_benign_system(rng, n, int(rng.integers(1, 4)))
            x0 = rng.normal(size=n)
            barrier = random_atom_through(rng, x0)
            cert = BarrierCertificate(float(rng.uniform(0.1, 0.95)), float(rng.uniform(0.05, 0.95)))
            report = nested_cvar_verify(barrier, sys, filtered_policy(sys, barrier, cert, rng), x0, cert, 4)
            assert report.min_one_step_margin >= -1e-9
            assert report.all_hold, report.rows

    def test_conjunction_keeps_every_component_safe(self):
        rng = np.random.default_rng(32)
        for _ in range(15):
            n = int(rng.integers(1, 4))
            sys = random_benign_system(rng, n, int(rng.integers(1, 4)))
            x0 = rng.normal(size=n)
            components = (random_atom_through(rng, x0), random_atom_through(rng, x0))
            barrier = MinBarrier(components)
            cert = BarrierCertificate(float(rng.uniform(0.1, 0.95)), float(rng.uniform(0.05, 0.95)))
            policy = filtered_policy(sys, barrier, cert, rng)
            report = nested_cvar_verify(barrier, sys, policy, x0, cert, 4)
            assert report.min_one_step_margin >= -1e-9
            for component in components:
                for row in nested_cvar_verify(component, sys, policy, x0, cert, 4).rows:
                    assert row.nested >= -1e-9

    @pytest.mark.slow
    def test_filtered_closed_loop_full_size(self):
        rng = np.random.default_rng(33)
        for _ in range(50):
            n = int(rng.integers(1, 4))
            sys = random_benign_system(rng, n, int(rng.integers(1, 5)))
            x0 = rng.normal(size=n)
            barrier = random_atom_through(rng, x0)
            cert = BarrierCertificate(float(rng.uniform(0.1, 0.95)), float(rng.uniform(0.05, 0.95)))
            report = nested_cvar_verify(barrier, sys, filtered_policy(sys, barrier, cert, rng), x0, cert, 5)
            assert report.all_hold, report.rows
