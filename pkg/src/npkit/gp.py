"""Gaussian-process function generator and exact GP inference.

Functions drawn here are the meta-training distribution for 1-D regression,
and the exact posterior serves as the Thompson-sampling oracle baseline.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DecompositionError, DimensionError, DomainError

JITTER_START = 1e-10
JITTER_MAX = 1e-4


@dataclass(frozen=True)
class RBFKernel:
    lengthscale: float
    signal_variance: float
    noise_variance: float = 0.0

    def __post_init__(self):
        if not self.lengthscale > 0 or not self.signal_variance > 0 or not self.noise_variance >= 0:
            raise DomainError(f"invalid RBF kernel parameters: {self}")

    def to_dict(self) -> dict:
        return {"lengthscale": self.lengthscale, "signal_variance": self.signal_variance,
                "noise_variance": self.noise_variance}


@dataclass(frozen=True)
class KernelRange:
    """Uniform sampling box for kernel hyperparameters.

    The defaults are the desk-scale choice for functions on ``[-2, 2]``.
    """

    lengthscale: tuple[float, float] = (0.4, 2.4)
    signal_variance: tuple[float, float] = (0.1, 1.0)
    noise_variance: float = 1e-4

    def __post_init__(self):
        for lo, hi in (self.lengthscale, self.signal_variance):
            if not 0 < lo <= hi:
                raise DomainError(f"invalid kernel range: {self}")
        if self.noise_variance < 0:
            raise DomainError("noise variance must be non-negative")

    def sample(self, rng: np.random.Generator) -> RBFKernel:
        return RBFKernel(float(rng.uniform(*self.lengthscale)),
                         float(rng.uniform(*self.signal_variance)),
                         self.noise_variance)


@dataclass
class FunctionTask:
    """One sampled function with a context/target split.

    Targets always cover every point, so the context is a subset of them.
    """

    xs: np.ndarray
    ys: np.ndarray
    context_idx: np.ndarray
    target_idx: np.ndarray | None = None
    kernel: RBFKernel | None = field(default=None, compare=False)

    def __post_init__(self):
        self.xs = np.atleast_2d(np.asarray(self.xs, dtype=np.float64))
        self.ys = np.asarray(self.ys, dtype=np.float64)
        if self.ys.ndim == 1:
            self.ys = self.ys[:, None]
        n = self.xs.shape[0]
        if self.ys.shape[0] != n:
            raise DimensionError(f"task has {n} inputs but {self.ys.shape[0]} outputs")
        self.context_idx = np.asarray(self.context_idx, dtype=np.intp).reshape(-1)
        if self.target_idx is None:
            self.target_idx = np.arange(n)
        self.target_idx = np.asarray(self.target_idx, dtype=np.intp).reshape(-1)
        if len(np.unique(self.context_idx)) != len(self.context_idx):
            raise DimensionError("context indices must be distinct")
        if not np.array_equal(np.sort(self.target_idx), np.arange(n)):
            raise DimensionError("targets must cover every point of the task exactly once")
        if len(self.context_idx) and (self.context_idx.min() < 0 or self.context_idx.max() >= n):
            raise DimensionError("context index out of range")

    @property
    def n_context(self) -> int:
        return len(self.context_idx)

    @property
    def n_target(self) -> int:
        return len(self.target_idx)

    def context_pairs(self) -> np.ndarray:
        return np.hstack([self.xs[self.context_idx], self.ys[self.context_idx]])

    def target_pairs(self) -> np.ndarray:
        return np.hstack([self.xs[self.target_idx], self.ys[self.target_idx]])


def _as_points(xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    return xs[:, None] if xs.ndim == 1 else xs


def rbf_cross(xa, xb, k: RBFKernel) -> np.ndarray:
    """Noise-free squared-exponential covariance between two point sets."""
    xa, xb = _as_points(xa), _as_points(xb)
    d2 = ((xa[:, None, :] - xb[None, :, :]) ** 2).sum(axis=-1)
    return k.signal_variance * np.exp(-0.5 * d2 / k.lengthscale ** 2)


def rbf_matrix(xs, k: RBFKernel) -> np.ndarray:
    xs = _as_points(xs)
    if xs.shape[0] < 1:
        raise DimensionError("rbf_matrix needs at least one point")
    return rbf_cross(xs, xs, k) + k.noise_variance * np.eye(xs.shape[0])


def cholesky(K: np.ndarray, return_jitter: bool = False):
    """Lower Cholesky factor, adding diagonal jitter only if the plain factorisation fails.

    Jitter starts at ``1e-10 * mean(diag)`` and grows tenfold up to ``1e-4 * mean(diag)``.
    """
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise DimensionError(f"cholesky needs a square matrix, got {K.shape}")
    if K.shape[0] == 0:
        return (np.zeros((0, 0)), 0.0) if return_jitter else np.zeros((0, 0))
    scale = float(np.mean(np.diag(K)))
    jitter, rel = 0.0, JITTER_START
    while True:
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(K.shape[0]))
            if np.isfinite(L).all():
                return (L, jitter) if return_jitter else L
        except np.linalg.LinAlgError:
            pass
        if rel > JITTER_MAX * (1 + 1e-9) or scale <= 0:
            raise DecompositionError(f"matrix not positive definite even with jitter {jitter:.3g}")
        jitter, rel = rel * scale, rel * 10


def sample_prior(xs, k: RBFKernel, rng: np.random.Generator) -> np.ndarray:
    L = cholesky(rbf_matrix(xs, k))
    return L @ rng.standard_normal(L.shape[0])


def _posterior_parts(context_xs, context_ys, k, query_xs):
    context_xs, query_xs = _as_points(context_xs), _as_points(query_xs)
    context_ys = np.asarray(context_ys, dtype=np.float64).reshape(-1)
    if context_xs.shape[0] == 0:
        raise DimensionError("GP posterior needs a non-empty context")
    if context_ys.shape[0] != context_xs.shape[0]:
        raise DimensionError("context inputs and outputs differ in length")
    L = cholesky(rbf_matrix(context_xs, k))
    k_cq = rbf_cross(context_xs, query_xs, k)
    alpha = solve_triangular(L.T, solve_triangular(L, context_ys, lower=True), lower=False)
    v = solve_triangular(L, k_cq, lower=True)
    return k_cq.T @ alpha, v


def gp_posterior(context_xs, context_ys, k: RBFKernel, query_xs) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and latent-function variance at ``query_xs``."""
    mean, v = _posterior_parts(context_xs, context_ys, k, query_xs)
    var = k.signal_variance - (v * v).sum(axis=0)
    return mean, np.maximum(var, 0.0)


def sample_posterior(context_xs, context_ys, k: RBFKernel, query_xs,
                     rng: np.random.Generator) -> np.ndarray:
    """One joint draw of the latent function at ``query_xs`` given the context."""
    query_xs = _as_points(query_xs)
    if query_xs.shape[0] == 0:
        return np.zeros(0)
    mean, v = _posterior_parts(context_xs, context_ys, k, query_xs)
    cov = rbf_cross(query_xs, query_xs, k) - v.T @ v
    cov = 0.5 * (cov + cov.T)
    L = cholesky(cov)
    return mean + L @ rng.standard_normal(L.shape[0])


def make_task(k: RBFKernel, n_points: int, n_context: int, x_interval, rng) -> FunctionTask:
    xs = rng.uniform(x_interval[0], x_interval[1], size=(n_points, 1))
    ys = sample_prior(xs, k, rng)
    context_idx = rng.choice(n_points, size=n_context, replace=False)
    return FunctionTask(xs, ys[:, None], context_idx, kernel=k)


def make_batch(kernel_range: KernelRange, batch: int, n_points: int, context_range,
               x_interval=(-2.0, 2.0), rng: np.random.Generator | None = None) -> list[FunctionTask]:
    """Sample ``batch`` GP functions, each with a uniform context size in ``context_range``."""
    lo, hi = (int(v) for v in context_range)
    if batch < 0 or not 1 <= lo <= hi <= n_points:
        raise DomainError(f"invalid batch spec: batch={batch}, context_range={context_range}, "
                          f"n_points={n_points}")
    if not x_interval[0] < x_interval[1]:
        raise DomainError(f"invalid x interval {x_interval}")
    rng = rng if rng is not None else np.random.default_rng()
    tasks = []
    for _ in range(batch):
        k = kernel_range.sample(rng)
        tasks.append(make_task(k, n_points, int(rng.integers(lo, hi + 1)), x_interval, rng))
    return tasks


def dump_tasks(tasks, path) -> None:
    """Write tasks as JSON lines with fields kernel, xs, ys, context_idx."""
    with open(path, "w") as fh:
        for t in tasks:
            record = {"kernel": t.kernel.to_dict() if t.kernel else None,
                      "xs": t.xs.tolist(), "ys": t.ys.tolist(),
                      "context_idx": t.context_idx.tolist()}
            fh.write(json.dumps(record) + "\n")


def load_tasks(path) -> list[FunctionTask]:
    tasks = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        kernel = RBFKernel(**rec["kernel"]) if rec.get("kernel") else None
        tasks.append(FunctionTask(np.array(rec["xs"]), np.array(rec["ys"]),
                                  np.array(rec["context_idx"], dtype=np.intp), kernel=kernel))
    return tasks
