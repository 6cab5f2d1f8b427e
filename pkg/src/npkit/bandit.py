"""The wheel bandit, neural-process pre-training data, and Thompson-sampling agents.

Contexts ``X`` are uniform on the unit disk. Arm 1 always pays N(1.2, 0.01^2).
Outside the radius-``delta`` disk the quadrant arm pays N(50, 0.01^2); every
other arm pays N(1.0, 0.01^2). Quadrants map to arms 2..5 in the order
(+,+), (-,+), (-,-), (+,-).

The network sees tuples ``(X1, X2, onehot(arm))`` with ``log(reward)`` as the
output; the log keeps the 1.0 / 1.2 / 50 levels on comparable scales.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .gp import FunctionTask

N_ARMS = 5
SAFE_MEAN, LOW_MEAN, HIGH_MEAN = 1.2, 1.0, 50.0
REWARD_STD = 0.01
HISTORY_CAP = 512
SIMPLE_REGRET_CONTEXTS = 200
DELTAS = (0.5, 0.7, 0.9, 0.95, 0.99)


@dataclass
class WheelProblem:
    delta: float

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise DomainError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass
class RegretReport:
    cumulative_regret: float
    simple_regret: float
    per_step: np.ndarray = field(repr=False, default=None)
    normalized_cumulative: float | None = None
    normalized_simple: float | None = None

    def normalize(self, uniform_cumulative: float, uniform_simple: float) -> "RegretReport":
        self.normalized_cumulative = 100.0 * self.cumulative_regret / uniform_cumulative
        self.normalized_simple = 100.0 * self.simple_regret / uniform_simple
        return self


def sample_X(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Uniform on the closed unit disk (polar draw with sqrt-distributed radius)."""
    n = 1 if size is None else size
    radius = np.sqrt(rng.uniform(0.0, 1.0, n))
    angle = rng.uniform(0.0, 2.0 * math.pi, n)
    pts = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
    return pts[0] if size is None else pts


def _quadrant_arm(X) -> np.ndarray:
    x1, x2 = X[..., 0], X[..., 1]
    return np.where(x2 >= 0, np.where(x1 >= 0, 2, 3), np.where(x1 < 0, 4, 5))


def optimal_arms(X, delta: float) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    norm = np.hypot(X[..., 0], X[..., 1])
    if (norm > 1.0 + 1e-12).any():
        raise DomainError("context lies outside the unit disk")
    return np.where(norm <= delta, 1, _quadrant_arm(X))


def optimal_arm(X, delta: float) -> int:
    """Arm 1 inside the ``delta`` disk (boundary included), the quadrant arm outside."""
    return int(optimal_arms(np.asarray(X, dtype=np.float64)[None, :], delta)[0])


def expected_rewards(X, arms, delta: float) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    arms = np.asarray(arms)
    if ((arms < 1) | (arms > N_ARMS)).any():
        raise DomainError(f"arm index must lie in 1..{N_ARMS}")
    best = optimal_arms(X, delta)
    return np.where(arms == 1, SAFE_MEAN, np.where(arms == best, HIGH_MEAN, LOW_MEAN))


def reward(X, arm: int, delta: float, rng: np.random.Generator) -> float:
    mean = float(expected_rewards(np.asarray(X)[None, :], np.array([arm]), delta)[0])
    return mean + REWARD_STD * float(rng.standard_normal())


def optimal_expected_reward(X, delta: float) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return np.where(np.hypot(X[..., 0], X[..., 1]) <= delta, SAFE_MEAN, HIGH_MEAN)


def features(X, arms) -> np.ndarray:
    """Network inputs ``(X1, X2, onehot(arm))`` for aligned rows of contexts and arms."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    arms = np.asarray(arms, dtype=np.intp).reshape(-1)
    onehot = np.zeros((len(arms), N_ARMS))
    onehot[np.arange(len(arms)), arms - 1] = 1.0
    return np.hstack([X, onehot])


def encode_reward(r) -> np.ndarray:
    return np.log(np.maximum(np.asarray(r, dtype=np.float64), 1e-6))


def pretrain_tasks(rng: np.random.Generator, n_problems: int = 64, n_points: int = 562,
                   n_context: int = 512) -> list[FunctionTask]:
    """One pre-training batch: ``n_problems`` wheels with ``delta ~ U(0, 1)``.

    Each task holds ``n_points`` uniformly-armed tuples; the first ``n_context``
    are the context and all of them are targets.
    """
    if not 0 <= n_context <= n_points:
        raise DomainError("n_context must lie in [0, n_points]")
    tasks = []
    for _ in range(n_problems):
        delta = rng.uniform(0.0, 1.0)
        X = sample_X(rng, n_points)
        arms = rng.integers(1, N_ARMS + 1, size=n_points)
        r = expected_rewards(X, arms, delta) + REWARD_STD * rng.standard_normal(n_points)
        tasks.append(FunctionTask(features(X, arms), encode_reward(r)[:, None], np.arange(n_context)))
    return tasks


# --- agents ------------------------------------------------------------------------

class _History:
    """Most recent encoded observations, capped at ``cap`` rows."""

    def __init__(self, model, cap: int):
        self.model, self.cap = model, cap
        self.rows: list[np.ndarray] = []

    def add(self, X, arm, r):
        pair = np.hstack([features(X, [arm]), encode_reward([[r]])])
        self.rows.append(self.model.encode_rows(pair)[0])
        if len(self.rows) > self.cap:
            self.rows.pop(0)

    def representation(self) -> np.ndarray:
        if not self.rows:
            return np.zeros(self.model.config.r_dim)
        return np.mean(self.rows, axis=0)


def _candidate_inputs(X) -> np.ndarray:
    return features(np.repeat(np.atleast_2d(X), N_ARMS, axis=0), np.arange(1, N_ARMS + 1))


def _greedy_arms(model, z, contexts) -> np.ndarray:
    n = len(contexts)
    inputs = features(np.repeat(contexts, N_ARMS, axis=0), np.tile(np.arange(1, N_ARMS + 1), n))
    means, _ = model.decode_many(z[None, :], inputs)
    return np.argmax(means[0, :, 0].reshape(n, N_ARMS), axis=1) + 1


def _simple_regret(policy, delta: float, rng: np.random.Generator) -> float:
    contexts = sample_X(rng, SIMPLE_REGRET_CONTEXTS)
    arms = policy(contexts)
    gap = optimal_expected_reward(contexts, delta) - expected_rewards(contexts, arms, delta)
    return float(gap.mean())


def run_np_agent(model, delta: float, horizon: int, rng: np.random.Generator,
                 history_cap: int = HISTORY_CAP) -> RegretReport:
    """Thompson sampling with one latent draw per step; regret is against expected optimal reward."""
    WheelProblem(delta)
    if horizon < 1:
        raise DomainError("horizon must be at least 1")
    history = _History(model, history_cap)
    per_step = np.empty(horizon)
    for t in range(horizon):
        X = sample_X(rng)
        q = model.latent(history.representation())
        z = q.mu + q.sigma * rng.standard_normal(q.mu.shape)
        means, _ = model.decode_many(z[None, :], _candidate_inputs(X))
        arm = int(np.argmax(means[0, :, 0])) + 1
        r = reward(X, arm, delta, rng)
        per_step[t] = float(optimal_expected_reward(X, delta)) - r
        history.add(X, arm, r)
    final = model.latent(history.representation())
    simple = _simple_regret(lambda c: _greedy_arms(model, final.mu, c), delta, rng)
    return RegretReport(float(per_step.sum()), simple, per_step)


def run_uniform_agent(delta: float, horizon: int, rng: np.random.Generator) -> RegretReport:
    WheelProblem(delta)
    if horizon < 1:
        raise DomainError("horizon must be at least 1")
    X = sample_X(rng, horizon)
    arms = rng.integers(1, N_ARMS + 1, size=horizon)
    r = expected_rewards(X, arms, delta) + REWARD_STD * rng.standard_normal(horizon)
    per_step = optimal_expected_reward(X, delta) - r
    simple = _simple_regret(lambda c: rng.integers(1, N_ARMS + 1, size=len(c)), delta, rng)
    return RegretReport(float(per_step.sum()), simple, per_step)


def uniform_expected_step_regret(delta: float) -> float:
    """Closed-form per-step regret of the uniform agent: 0.16 inside the disk, 39.2 outside."""
    inside = delta ** 2
    return inside * (SAFE_MEAN - LOW_MEAN) * 4 / 5 + (1 - inside) * (HIGH_MEAN - (SAFE_MEAN + 3 * LOW_MEAN) / 4) * 4 / 5


def _mean_se(values) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    se = values.std(ddof=1) / math.sqrt(len(values)) if len(values) > 1 else 0.0
    return float(values.mean()), float(se)


def evaluate_bandit(model, deltas, n_trials: int, horizon: int, rng: np.random.Generator,
                    agents=("np", "uniform")) -> list[dict]:
    """Table rows ``(delta, agent, metric, mean, stderr, n_trials)`` normalised to the uniform agent."""
    if not len(deltas):
        raise DomainError("evaluate_bandit needs at least one delta")
    if n_trials < 2:
        raise DomainError("n_trials must be at least 2 for standard errors")
    rows = []
    for delta in deltas:
        raw = {agent: [] for agent in agents}
        for seed in rng.integers(2 ** 63, size=n_trials):
            trial_rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(int(seed)).spawn(len(agents))]
            for agent, trng in zip(agents, trial_rngs):
                if agent == "np":
                    raw[agent].append(run_np_agent(model, delta, horizon, trng))
                else:
                    raw[agent].append(run_uniform_agent(delta, horizon, trng))
        for metric, attr in (("cumulative_regret", "cumulative_regret"), ("simple_regret", "simple_regret")):
            base, _ = _mean_se([getattr(r, attr) for r in raw["uniform"]])
            for agent in agents:
                mean, se = _mean_se([getattr(r, attr) for r in raw[agent]])
                rows.append({"delta": delta, "agent": agent, "metric": metric,
                             "mean": 100.0 * mean / base, "stderr": 100.0 * se / base,
                             "raw_mean": mean, "n_trials": n_trials})
    return rows
