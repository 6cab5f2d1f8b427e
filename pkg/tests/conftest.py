from __future__ import annotations

import numpy as np
import pytest

from npkit.gp import FunctionTask
from npkit.model import NeuralProcess, NPConfig


def central_differences(f, params: dict, step: float = 1e-6) -> dict:
    """Numerical gradient of scalar ``f(params)`` by central differences, one coordinate at a time."""
    out = {}
    for name, value in params.items():
        g = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            orig = value[idx]
            value[idx] = orig + step
            up = f(params)
            value[idx] = orig - step
            down = f(params)
            value[idx] = orig
            g[idx] = (up - down) / (2 * step)
        out[name] = g
    return out


def max_relative_error(analytic: dict, numeric: dict, floor: float = 1e-8) -> float:
    worst = 0.0
    for name in analytic:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def small_config(**overrides) -> NPConfig:
    base = dict(r_dim=4, z_dim=3, encoder_hidden=(8,), latent_hidden=(8,), decoder_hidden=(8,),
                activation="tanh")
    base.update(overrides)
    return NPConfig(**base)


def random_task(rng, n_points: int, n_context: int, x_dim: int = 1, y_dim: int = 1) -> FunctionTask:
    xs = rng.uniform(-2, 2, size=(n_points, x_dim))
    ys = rng.normal(size=(n_points, y_dim))
    return FunctionTask(xs, ys, rng.choice(n_points, n_context, replace=False))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_model():
    return NeuralProcess(small_config(), seed=3)


# --- acceptance reporting ----------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    """Store one PASS/FAIL line; printed live and again in the terminal summary."""
    line = f"ACCEPTANCE {number:>2} {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
