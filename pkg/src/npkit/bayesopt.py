"""Thompson-sampling minimisation of 1-D functions on a grid.

Three proposers share one loop: neural-process function draws, exact GP
posterior draws with the generating kernel, and random search without
replacement. Success means hitting ``global_min + tol`` on the grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gp
from .errors import DomainError

METHODS = ("np", "gp_oracle", "random")
GRID_SIZE = 256
INTERVAL = (-2.0, 2.0)
TOL_FRACTION = 0.02


@dataclass
class BOProblem:
    grid: np.ndarray
    values: np.ndarray
    kernel: gp.RBFKernel
    tol_fraction: float = TOL_FRACTION

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64).reshape(-1)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.grid.size == 0 or self.grid.shape != self.values.shape:
            raise DomainError("a BO problem needs matching, non-empty grid and values")

    @property
    def global_min(self) -> float:
        return float(self.values.min())

    @property
    def tol(self) -> float:
        return self.tol_fraction * float(self.values.max() - self.values.min())

    def solved_by(self, y: float) -> bool:
        return y <= self.global_min + self.tol


@dataclass
class BOTrace:
    xs: list = field(default_factory=list)
    ys: list = field(default_factory=list)
    indices: list = field(default_factory=list)
    steps_to_min: int = 0

    def context_pairs(self) -> np.ndarray:
        return np.column_stack([self.xs, self.ys]) if self.xs else np.zeros((0, 2))


def make_problem(kernel: gp.RBFKernel, rng: np.random.Generator, grid_size: int = GRID_SIZE,
                 interval=INTERVAL, tol_fraction: float = TOL_FRACTION) -> BOProblem:
    """Objective is a noise-free draw of the latent function; ``kernel`` keeps its noise for the oracle."""
    grid = np.linspace(interval[0], interval[1], grid_size)
    latent = gp.RBFKernel(kernel.lengthscale, kernel.signal_variance, 0.0)
    return BOProblem(grid, gp.sample_prior(grid, latent, rng), kernel, tol_fraction)


def np_thompson_step(model, context_pairs, grid, rng: np.random.Generator) -> float:
    """Grid point minimising the mean of one posterior function draw (lowest index on ties)."""
    return float(np.asarray(grid)[_np_index(model, context_pairs, grid, rng)])


def _np_index(model, context_pairs, grid, rng) -> int:
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    if grid.size == 0:
        raise DomainError("Thompson step needs a non-empty grid")
    q = model.posterior(context_pairs)
    z = q.mu + q.sigma * rng.standard_normal(q.mu.shape)
    means, _ = model.decode_many(z[None, :], grid[:, None])
    return int(np.argmin(means[0, :, 0]))


def _gp_index(problem: BOProblem, trace: BOTrace, rng) -> int:
    if trace.xs:
        draw = gp.sample_posterior(np.array(trace.xs), np.array(trace.ys), problem.kernel,
                                   problem.grid, rng)
    else:
        latent = gp.RBFKernel(problem.kernel.lengthscale, problem.kernel.signal_variance, 0.0)
        draw = gp.sample_prior(problem.grid, latent, rng)
    return int(np.argmin(draw))


def run_bo(method: str, problem: BOProblem, budget: int, rng: np.random.Generator,
           model=None) -> BOTrace:
    """Propose, evaluate and extend the context until success or ``budget`` evaluations."""
    if method not in METHODS:
        raise DomainError(f"unknown BO method {method!r}; choose from {METHODS}")
    if budget < 1:
        raise DomainError("budget must be at least 1")
    if method == "np" and model is None:
        raise DomainError("the np method needs a trained model")
    order = rng.permutation(problem.grid.size) if method == "random" else None
    trace = BOTrace(steps_to_min=budget)
    for step in range(1, budget + 1):
        if method == "random":
            idx = int(order[(step - 1) % problem.grid.size])
        elif method == "gp_oracle":
            idx = _gp_index(problem, trace, rng)
        else:
            idx = _np_index(model, trace.context_pairs(), problem.grid, rng)
        y = float(problem.values[idx])
        trace.indices.append(idx)
        trace.xs.append(float(problem.grid[idx]))
        trace.ys.append(y)
        if problem.solved_by(y):
            trace.steps_to_min = step
            break
    return trace


def _stderr(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    return float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0


def compare(methods, n_trials: int, rng: np.random.Generator, model=None,
            kernel_range: gp.KernelRange | None = None, grid_size: int = GRID_SIZE,
            budget: int | None = None) -> tuple[list[dict], list[dict]]:
    """Run every method on the same ``n_trials`` problems.

    Returns per-trial rows and one summary row per method, with steps
    normalised by random search on the same problems.
    """
    if n_trials < 1:
        raise DomainError("n_trials must be at least 1")
    methods = list(dict.fromkeys(list(methods) + ["random"]))
    kernel_range = kernel_range or gp.KernelRange()
    budget = budget or grid_size
    seeds = rng.integers(2 ** 63, size=n_trials)
    per_trial, steps = [], {m: [] for m in methods}
    for trial, seed in enumerate(seeds):
        problem_rng, *method_rngs = [np.random.default_rng(s) for s in
                                     np.random.SeedSequence(int(seed)).spawn(1 + len(methods))]
        problem = make_problem(kernel_range.sample(problem_rng), problem_rng, grid_size)
        for method, mrng in zip(methods, method_rngs):
            trace = run_bo(method, problem, budget, mrng, model)
            steps[method].append(trace.steps_to_min)
            per_trial.append({"trial": trial, "method": method, "steps_to_min": trace.steps_to_min})
    random_mean = float(np.mean(steps["random"]))
    random_se = _stderr(steps["random"])
    summary = []
    for method in methods:
        mean = float(np.mean(steps[method]))
        se = _stderr(steps[method])
        ratio = mean / random_mean
        if method == "random":
            ratio_se = se / random_mean
        else:
            ratio_se = ratio * math.sqrt((se / mean) ** 2 + (random_se / random_mean) ** 2)
        summary.append({"method": method, "normalized_steps": ratio, "stderr": ratio_se,
                        "mean_steps": mean, "n_trials": n_trials})
    return per_trial, summary


def normalized_steps(method: str, n_trials: int, rng: np.random.Generator, model=None,
                     **kwargs) -> float:
    """Mean steps of ``method`` divided by mean steps of random search on the same problems."""
    _, summary = compare([method], n_trials, rng, model, **kwargs)
    return next(row["normalized_steps"] for row in summary if row["method"] == method)
