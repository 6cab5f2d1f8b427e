"""Wheel-bandit environment, pre-training tasks and agents."""
from __future__ import annotations

import math

import numpy as np
import pytest

from npkit import bandit as wb
from npkit.errors import DomainError
from npkit.model import NeuralProcess, NPConfig


def test_disk_samples():
    X = wb.sample_X(np.random.default_rng(0), 10 ** 5)
    norms = np.hypot(X[:, 0], X[:, 1])
    assert norms.max() <= 1.0
    assert np.abs(X.mean(axis=0)).max() < 0.01
    assert abs((norms <= 0.5).mean() - 0.25) < 0.01
    assert wb.sample_X(np.random.default_rng(0)).shape == (2,)


@pytest.mark.parametrize("X, delta, arm", [
    ((0.0, 0.0), 0.3, 1), ((0.9, 0.1), 0.5, 2), ((-0.9, 0.1), 0.5, 3), ((-0.6, -0.6), 0.5, 4),
    ((0.6, -0.6), 0.5, 5), ((0.6, 0.0), 0.6, 1),
])
def test_optimal_arm(X, delta, arm):
    assert wb.optimal_arm(np.array(X), delta) == arm


def test_boundary_is_inside():
    angle = 0.7
    X = np.array([0.5 * math.cos(angle), 0.5 * math.sin(angle)])
    delta = float(np.hypot(*X))
    assert wb.optimal_arm(X, delta) == 1


def test_outside_unit_disk_rejected():
    with pytest.raises(DomainError):
        wb.optimal_arm(np.array([0.9, 0.9]), 0.5)


def test_invalid_arm_and_delta(rng):
    with pytest.raises(DomainError):
        wb.reward(np.zeros(2), 6, 0.5, rng)
    with pytest.raises(DomainError):
        wb.WheelProblem(1.0)


def test_reward_law_enumeration():
    inside, outside = np.array([0.1, 0.1]), np.array([0.8, 0.3])  # outside belongs to arm 2
    delta = 0.5
    for arm in range(1, 6):
        expected_in = 1.2 if arm == 1 else 1.0
        expected_out = 1.2 if arm == 1 else (50.0 if arm == 2 else 1.0)
        assert wb.expected_rewards(inside[None], [arm], delta)[0] == expected_in
        assert wb.expected_rewards(outside[None], [arm], delta)[0] == expected_out


@pytest.mark.parametrize("X, arm, mean", [((0.1, 0.0), 1, 1.2), ((0.8, 0.3), 2, 50.0), ((0.8, 0.3), 4, 1.0)])
def test_reward_sample_means(X, arm, mean):
    rng = np.random.default_rng(arm)
    draws = np.array([wb.reward(np.array(X), arm, 0.5, rng) for _ in range(10 ** 4)])
    assert abs(draws.mean() - mean) < 1e-3
    assert abs(draws.std() - 0.01) < 1e-3


def test_oracle_policy_has_zero_expected_regret():
    X = wb.sample_X(np.random.default_rng(1), 1000)
    for delta in wb.DELTAS:
        gap = wb.optimal_expected_reward(X, delta) - wb.expected_rewards(X, wb.optimal_arms(X, delta), delta)
        assert not gap.any()


def test_uniform_closed_form_matches_enumeration():
    for delta in (0.3, 0.5, 0.99):
        inside = np.mean([1.2 - m for m in (1.2, 1.0, 1.0, 1.0, 1.0)])
        outside = np.mean([50.0 - m for m in (1.2, 50.0, 1.0, 1.0, 1.0)])
        assert wb.uniform_expected_step_regret(delta) == pytest.approx(
            delta ** 2 * inside + (1 - delta ** 2) * outside, rel=1e-12)
    assert wb.uniform_expected_step_regret(1 - 1e-9) == pytest.approx(0.16, abs=1e-6)


def test_uniform_agent_regret_matches_expectation():
    rng = np.random.default_rng(3)
    per_step = np.concatenate([wb.run_uniform_agent(0.7, 2000, rng).per_step for _ in range(10)])
    se = per_step.std() / math.sqrt(len(per_step))
    assert abs(per_step.mean() - wb.uniform_expected_step_regret(0.7)) < 3 * se


def test_uniform_regret_decreases_with_delta():
    # more of the disk lies inside the low-regret region as delta grows
    assert wb.uniform_expected_step_regret(0.95) < wb.uniform_expected_step_regret(0.5)
    rng = np.random.default_rng(4)
    low = np.mean([wb.run_uniform_agent(0.5, 500, rng).cumulative_regret for _ in range(20)])
    high = np.mean([wb.run_uniform_agent(0.95, 500, rng).cumulative_regret for _ in range(20)])
    assert high < low


def test_uniform_seeds_differ():
    a = wb.run_uniform_agent(0.5, 50, np.random.default_rng(1))
    b = wb.run_uniform_agent(0.5, 50, np.random.default_rng(2))
    assert a.cumulative_regret != b.cumulative_regret


def test_pretrain_tasks_shape_and_law():
    tasks = wb.pretrain_tasks(np.random.default_rng(0), n_problems=64)
    assert len(tasks) == 64
    assert all(t.n_context == 512 and t.n_target == 562 for t in tasks)
    assert all((t.xs[:, 2:].sum(axis=1) == 1).all() for t in tasks)
    rewards = np.exp(np.concatenate([t.ys[:, 0] for t in tasks]))
    levels = np.array([1.0, 1.2, 50.0])
    nearest = levels[np.argmin(np.abs(rewards[:, None] - levels[None]), axis=1)]
    for level in levels:
        sel = rewards[nearest == level]
        assert abs(sel.mean() - level) < 3 * 0.01 / math.sqrt(len(sel)) + 1e-12
    arm1 = np.concatenate([np.exp(t.ys[t.xs[:, 2] == 1, 0]) for t in tasks])
    assert abs(arm1.mean() - 1.2) < 3 * arm1.std() / math.sqrt(len(arm1))


def test_features_and_reward_encoding():
    f = wb.features(np.array([[0.1, -0.2], [0.3, 0.4]]), [1, 5])
    np.testing.assert_array_equal(f, [[0.1, -0.2, 1, 0, 0, 0, 0], [0.3, 0.4, 0, 0, 0, 0, 1]])
    assert wb.encode_reward([50.0])[0] == pytest.approx(math.log(50.0))
    assert np.isfinite(wb.encode_reward([-0.5])).all()


def _tiny_model():
    return NeuralProcess(NPConfig(x_dim=7, r_dim=4, z_dim=3, encoder_hidden=(8,), latent_hidden=(8,),
                                  decoder_hidden=(8,)), seed=0)


def test_np_agent_horizon_one_bounded():
    model = _tiny_model()
    for seed in range(20):
        report = wb.run_np_agent(model, 0.5, 1, np.random.default_rng(seed))
        # one step can lose at most the 49.0 outside gap, plus reward noise
        assert report.cumulative_regret <= 49.0 + 5 * wb.REWARD_STD


def test_np_agent_history_cap():
    model = _tiny_model()
    report = wb.run_np_agent(model, 0.7, 30, np.random.default_rng(0), history_cap=8)
    assert len(report.per_step) == 30 and np.isfinite(report.simple_regret)
    with pytest.raises(DomainError):
        wb.run_np_agent(model, 0.7, 0, np.random.default_rng(0))


def test_evaluate_bandit_normalisation():
    rows = wb.evaluate_bandit(_tiny_model(), [0.5, 0.9], 2, 10, np.random.default_rng(0))
    uniform = [r for r in rows if r["agent"] == "uniform"]
    assert len(rows) == 8 and all(r["mean"] == 100.0 for r in uniform)
    assert {r["metric"] for r in rows} == {"cumulative_regret", "simple_regret"}
    with pytest.raises(DomainError):
        wb.evaluate_bandit(_tiny_model(), [], 2, 10, np.random.default_rng(0))
    with pytest.raises(DomainError):
        wb.evaluate_bandit(_tiny_model(), [0.5], 1, 10, np.random.default_rng(0))


def test_regret_report_normalize():
    report = wb.RegretReport(5.0, 0.2).normalize(50.0, 0.4)
    assert report.normalized_cumulative == 10.0 and report.normalized_simple == 50.0
