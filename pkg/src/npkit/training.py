"""Meta-training over batches of function tasks, evaluation, checkpoints."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import gp
from .errors import DomainError, NPKitError, NumericError
from .gp import FunctionTask
from .model import NeuralProcess, NPConfig, load_model, save_model
from .nn.adam import adam_init, adam_step

log = logging.getLogger(__name__)


class TrainingError(NPKitError, RuntimeError):
    def __init__(self, step: int, reason: str):
        super().__init__(f"training aborted at step {step}: {reason}")
        self.step = step


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 16
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    context_range: tuple = (1, 100)
    eval_every: int = 0
    # {"kind": "gp" | "image" | "bandit" | "zero", ...source specific keys}
    task_source: dict = field(default_factory=lambda: {"kind": "gp"})

    def __post_init__(self):
        self.context_range = tuple(int(v) for v in self.context_range)
        if self.steps < 1 or self.batch_size < 1:
            raise DomainError("steps and batch_size must be at least 1")
        if len(self.context_range) != 2 or not 0 <= self.context_range[0] <= self.context_range[1]:
            raise DomainError(f"invalid context_range {self.context_range}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["context_range"] = list(self.context_range)
        return d

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        return cls(**dict(d))

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class EvalReport:
    log_likelihood: float  # mean per target point, under the sample mixture
    mse: float  # squared error of the predictive mean, per target point
    std_context: float  # mean predictive std at context points
    std_away: float  # mean predictive std at non-context targets
    std_all: float  # mean predictive std over every target
    curve_std: float  # mean std between the sampled function means, over every target
    n_tasks: int

    def to_dict(self) -> dict:
        return asdict(self)


# --- task sources ----------------------------------------------------------------

TaskSource = Callable[[np.random.Generator, int], list]


def gp_source(spec: dict, context_range) -> TaskSource:
    krange = gp.KernelRange(tuple(spec.get("lengthscale", (0.4, 2.4))),
                            tuple(spec.get("signal_variance", (0.1, 1.0))),
                            spec.get("noise_variance", 1e-4))
    n_points = int(spec.get("n_points", 128))
    x_interval = tuple(spec.get("x_interval", (-2.0, 2.0)))

    def draw(rng, batch):
        return gp.make_batch(krange, batch, n_points, context_range, x_interval, rng)

    return draw


def zero_source(spec: dict, context_range) -> TaskSource:
    """Functions that are identically zero; a sanity family for the likelihood floor."""
    n_points = int(spec.get("n_points", 20))
    lo, hi = context_range

    def draw(rng, batch):
        tasks = []
        for _ in range(batch):
            xs = rng.uniform(-2.0, 2.0, size=(n_points, 1))
            n_ctx = int(rng.integers(lo, hi + 1))
            tasks.append(FunctionTask(xs, np.zeros((n_points, 1)),
                                      rng.choice(n_points, n_ctx, replace=False)))
        return tasks

    return draw


def image_source(spec: dict, context_range) -> TaskSource:
    from .images import load_idx, sample_pixel_batch

    images = load_idx(spec["path"])
    pool = np.arange(int(spec.get("train_count", images.count)))
    n_targets = int(spec.get("n_targets", images.rows * images.cols))

    def draw(rng, batch):
        return sample_pixel_batch(images, batch, n_targets, context_range, rng, pool=pool)

    return draw


def bandit_source(spec: dict, context_range) -> TaskSource:
    from .bandit import pretrain_tasks

    n_points = int(spec.get("n_points", 562))
    n_context = int(spec.get("n_context", 512))

    def draw(rng, batch):
        return pretrain_tasks(rng, n_problems=batch, n_points=n_points, n_context=n_context)

    return draw


SOURCES = {"gp": gp_source, "zero": zero_source, "image": image_source, "bandit": bandit_source}


def make_source(config: TrainConfig) -> TaskSource:
    kind = config.task_source.get("kind", "gp")
    if kind not in SOURCES:
        raise DomainError(f"unknown task source {kind!r}")
    return SOURCES[kind](config.task_source, config.context_range)


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for init, data, latent noise, and held-out evaluation."""
    children = np.random.SeedSequence(seed).spawn(4)
    return {name: np.random.default_rng(s) for name, s in zip(("init", "data", "noise", "eval"), children)}


# --- training ---------------------------------------------------------------------

def train(config: TrainConfig, np_config: NPConfig, source: TaskSource | None = None,
          model: NeuralProcess | None = None, callback=None) -> tuple[NeuralProcess, list[float]]:
    """Run ``config.steps`` Adam steps on the mean batch loss.

    Everything random is derived from ``config.seed``, so the loss history is
    reproducible bit for bit.
    """
    streams = rng_streams(config.seed)
    if model is None:
        model = NeuralProcess(np_config, seed=int(streams["init"].integers(2 ** 63)))
    source = source or make_source(config)
    state = adam_init(model.params, config.lr, config.beta1, config.beta2, config.eps)
    history: list[float] = []
    started = time.perf_counter()
    for step in range(1, config.steps + 1):
        tasks = source(streams["data"], config.batch_size)
        try:
            loss, grads = model.loss_and_grads(tasks, streams["noise"])
        except NumericError as exc:
            raise TrainingError(step, str(exc)) from exc
        if not math.isfinite(loss):
            raise TrainingError(step, f"non-finite loss {loss}")
        model.params, state = adam_step(model.params, grads, state)
        history.append(loss)
        if callback is not None:
            callback(step, loss, model)
        if config.eval_every and step % config.eval_every == 0:
            recent = np.mean(history[-config.eval_every:])
            log.info("step %d  loss %.4f  (%.1fs)", step, recent, time.perf_counter() - started)
    return model, history


def write_loss_csv(history: Sequence[float], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for i, loss in enumerate(history, start=1):
            writer.writerow([i, repr(float(loss))])


# --- evaluation -------------------------------------------------------------------

def _mixture_stats(preds, ys):
    means = np.stack([p.mean for p in preds])  # [S, m, y]
    stds = np.stack([p.std for p in preds])
    mix_mean = means.mean(axis=0)
    mix_var = (stds ** 2 + means ** 2).mean(axis=0) - mix_mean ** 2
    mix_std = np.sqrt(np.maximum(mix_var, 0.0))
    z = (ys[None] - means) / stds
    comp = -0.5 * math.log(2 * math.pi) - np.log(stds) - 0.5 * z * z
    log_lik = np.logaddexp.reduce(comp, axis=0) - math.log(len(preds))
    return mix_mean, mix_std, log_lik, means.std(axis=0)


def evaluate_task(model: NeuralProcess, task: FunctionTask, n_samples: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    preds = model.predict(task.context_pairs(), task.xs, n_samples, rng)
    mix_mean, mix_std, log_lik, curve_std = _mixture_stats(preds, task.ys)
    per_point_std = mix_std.mean(axis=1)
    in_ctx = np.zeros(len(task.xs), dtype=bool)
    in_ctx[task.context_idx] = True
    return {
        "log_likelihood": float(log_lik.sum(axis=1).mean()),
        "mse": float(((mix_mean - task.ys) ** 2).sum(axis=1).mean()),
        "std_context": float(per_point_std[in_ctx].mean()) if in_ctx.any() else math.nan,
        "std_away": float(per_point_std[~in_ctx].mean()) if (~in_ctx).any() else math.nan,
        "std_all": float(per_point_std.mean()),
        "curve_std": float(curve_std.mean()),
    }


def evaluate(model: NeuralProcess, tasks: Sequence[FunctionTask], n_samples: int = 16,
             rng: np.random.Generator | None = None) -> EvalReport:
    """Average per-task predictive metrics.

    All tasks share one noise seed, so repeated tasks give identical metrics.
    """
    if not tasks:
        raise DomainError("evaluate needs at least one task")
    if n_samples < 1:
        raise DomainError("n_samples must be at least 1")
    rng = rng if rng is not None else np.random.default_rng()
    seed = int(rng.integers(2 ** 63))
    rows = [evaluate_task(model, t, n_samples, seed) for t in tasks]
    agg = {k: float(np.nanmean([r[k] for r in rows])) if not all(math.isnan(r[k]) for r in rows)
           else math.nan for k in rows[0]}
    return EvalReport(n_tasks=len(tasks), **agg)


def with_context_size(task: FunctionTask, n_context: int) -> FunctionTask:
    """Same points, with the first ``n_context`` of them as context."""
    return FunctionTask(task.xs, task.ys, np.arange(n_context), kernel=task.kernel)


def context_sweep(model: NeuralProcess, tasks: Sequence[FunctionTask], sizes: Sequence[int],
                  n_samples: int = 16, rng: np.random.Generator | None = None) -> dict[int, EvalReport]:
    rng = rng if rng is not None else np.random.default_rng()
    seed = int(rng.integers(2 ** 63))
    return {n: evaluate(model, [with_context_size(t, n) for t in tasks], n_samples,
                        np.random.default_rng(seed))
            for n in sizes}


def heldout_gp_tasks(n_tasks: int, n_points: int, seed: int, spec: dict | None = None) -> list[FunctionTask]:
    """Evaluation tasks from a seed stream that training never touches."""
    spec = spec or {}
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE7A1]))
    draw = gp_source({**spec, "n_points": n_points}, (1, 1))
    return draw(rng, n_tasks)


# --- checkpoints --------------------------------------------------------------------

def save(model: NeuralProcess, path) -> None:
    save_model(model, path)


def load(path, np_config: NPConfig | None = None) -> NeuralProcess:
    return load_model(path, np_config)
