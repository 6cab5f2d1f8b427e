"""The latent-variable neural process.

Context pairs ``(x, y)`` go through an encoder MLP, are averaged into a single
representation ``r``, and a latent head maps ``r`` to a diagonal Gaussian over
the global latent ``z``. The decoder maps ``(x, z)`` to a Gaussian over ``y``
for every target independently.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionError, DomainError, FormatError
from .gp import FunctionTask
from .nn import autodiff as ad
from .nn.mlp import MLPSpec, init_mlp, mlp_forward
from .nn.params import ParamStore
from .nn import params as param_io

# rows per padded block in inference-time decoding; keeps each output row
# bit-identical regardless of which other targets are decoded alongside it
DECODE_BLOCK = 64


@dataclass
class NPConfig:
    x_dim: int = 1
    y_dim: int = 1
    r_dim: int = 64
    z_dim: int = 64
    encoder_hidden: tuple = (128, 128, 128)
    latent_hidden: tuple = (128,)
    decoder_hidden: tuple = (128, 128, 128)
    sigma_floor_latent: float = 0.1
    sigma_floor_obs: float = 0.02
    activation: str = "relu"
    # when set, the decoder predicts only means and this fixed std is used
    fixed_obs_sigma: float | None = None
    # "all": reconstruct every target; "non_context": skip the context points
    recon_targets: str = "all"

    def __post_init__(self):
        for name in ("encoder_hidden", "latent_hidden", "decoder_hidden"):
            setattr(self, name, tuple(int(w) for w in getattr(self, name)))
        if min(self.x_dim, self.y_dim, self.r_dim, self.z_dim) < 1:
            raise DomainError("all NP dimensions must be positive")
        if not 0 < self.sigma_floor_latent < 1:
            raise DomainError("sigma_floor_latent must lie in (0, 1)")
        if not self.sigma_floor_obs > 0:
            raise DomainError("sigma_floor_obs must be positive")
        if self.fixed_obs_sigma is not None and not self.fixed_obs_sigma > 0:
            raise DomainError("fixed_obs_sigma must be positive")
        if self.recon_targets not in ("all", "non_context"):
            raise DomainError(f"unknown recon_targets {self.recon_targets!r}")

    @property
    def encoder_spec(self) -> MLPSpec:
        return MLPSpec((self.x_dim + self.y_dim, *self.encoder_hidden, self.r_dim), self.activation)

    @property
    def latent_spec(self) -> MLPSpec:
        return MLPSpec((self.r_dim, *self.latent_hidden, 2 * self.z_dim), self.activation)

    @property
    def decoder_out(self) -> int:
        return self.y_dim if self.fixed_obs_sigma is not None else 2 * self.y_dim

    @property
    def decoder_spec(self) -> MLPSpec:
        return MLPSpec((self.z_dim + self.x_dim, *self.decoder_hidden, self.decoder_out),
                       self.activation)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("encoder_hidden", "latent_hidden", "decoder_hidden"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "NPConfig":
        return cls(**dict(d))


@dataclass
class LatentDist:
    mu: np.ndarray
    sigma: np.ndarray


@dataclass
class Prediction:
    mean: np.ndarray
    std: np.ndarray
    z_used: np.ndarray = field(repr=False)


def _split_rows(counts: Sequence[int]) -> np.ndarray:
    return np.repeat(np.arange(len(counts)), counts)


class NeuralProcess:
    """A neural process with its parameters.

    The public methods work on plain arrays; the ``_graph_*`` helpers build
    differentiable graphs over a mapping of parameter vars for training.
    """

    def __init__(self, config: NPConfig, params: Mapping | None = None, seed: int = 0):
        self.config = config
        if params is None:
            params = init_params(config, np.random.default_rng(seed))
        self.params = ParamStore(params)
        check_params(config, self.params)
        self.counters = Counter()

    # -- graph building -----------------------------------------------------

    def _graph_encode_rows(self, P, pairs) -> ad.Var:
        pairs = ad.as_var(pairs)
        self.counters["encoder_rows"] += pairs.shape[0]
        return mlp_forward(self.config.encoder_spec, P, pairs, prefix="encoder.")

    def _graph_latent(self, P, r) -> tuple[ad.Var, ad.Var]:
        cfg = self.config
        out = mlp_forward(cfg.latent_spec, P, r, prefix="latent.")
        mu = ad.columns(out, 0, cfg.z_dim)
        raw = ad.columns(out, cfg.z_dim, 2 * cfg.z_dim)
        floor = cfg.sigma_floor_latent
        sigma = ad.add(floor, ad.mul(1.0 - floor, ad.sigmoid(raw)))
        return mu, sigma

    def _graph_decode(self, P, z_rows, xs, row_block=None) -> tuple[ad.Var, ad.Var]:
        cfg = self.config
        xs = ad.as_var(xs)
        self.counters["decoder_rows"] += xs.shape[0]
        out = mlp_forward(cfg.decoder_spec, P, ad.concat([xs, z_rows], axis=1),
                          prefix="decoder.", row_block=row_block)
        mean = ad.columns(out, 0, cfg.y_dim)
        if cfg.fixed_obs_sigma is not None:
            std = ad.as_var(np.full(mean.shape, cfg.fixed_obs_sigma))
        else:
            std = ad.add(cfg.sigma_floor_obs, ad.softplus(ad.columns(out, cfg.y_dim, 2 * cfg.y_dim)))
        return mean, std

    def _graph_loss(self, P, tasks: Sequence[FunctionTask], eps: np.ndarray) -> ad.Var:
        """Mean over tasks of ``KL(q(z|T) || q(z|C)) - sum_T log p(y|x, z)``, z ~ q(z|T)."""
        kl, recon = self._graph_terms(P, tasks, eps)
        return ad.mean(ad.sub(kl, recon))

    def _graph_terms(self, P, tasks, eps) -> tuple[ad.Var, ad.Var]:
        cfg = self.config
        if not tasks:
            raise DimensionError("loss needs at least one task")
        counts_t = np.array([t.n_target for t in tasks])
        if (counts_t == 0).any():
            raise DimensionError("every task needs a non-empty target set")
        xs = np.vstack([t.xs[t.target_idx] for t in tasks])
        ys = np.vstack([t.ys[t.target_idx] for t in tasks])
        self._check_widths(xs, ys)
        ctx_rows, counts_c, offset = [], [], 0
        for t in tasks:
            # context positions within the target ordering, ascending so that a
            # context equal to the target set reproduces r_full bit for bit
            position = np.empty(t.n_target, dtype=np.intp)
            position[t.target_idx] = np.arange(t.n_target)
            ctx_rows.append(offset + np.sort(position[t.context_idx]))
            counts_c.append(t.n_context)
            offset += t.n_target
        ctx_rows = np.concatenate(ctx_rows)

        h = self._graph_encode_rows(P, np.hstack([xs, ys]))
        r_full = ad.segment_mean(h, counts_t)
        r_ctx = ad.segment_mean(ad.take_rows(h, ctx_rows), counts_c)
        mu_f, sigma_f = self._graph_latent(P, r_full)
        mu_c, sigma_c = self._graph_latent(P, r_ctx)
        z = ad.reparameterize(mu_f, sigma_f, eps)
        mean, std = self._graph_decode(P, ad.take_rows(z, _split_rows(counts_t)), xs)
        log_lik = ad.sum(ad.gaussian_log_pdf(ys, mean, std), axis=1)
        if cfg.recon_targets == "non_context":
            keep = np.ones(len(xs))
            keep[ctx_rows] = 0.0
            log_lik = ad.mul(log_lik, keep)
        recon = ad.segment_sum(log_lik, counts_t)
        kl = ad.kl_diag_gaussians(mu_f, sigma_f, mu_c, sigma_c)
        return kl, recon

    def _check_widths(self, xs, ys=None):
        cfg = self.config
        if xs.ndim != 2 or xs.shape[1] != cfg.x_dim:
            raise DimensionError(f"inputs have shape {xs.shape}, expected width x_dim={cfg.x_dim}")
        if ys is not None and (ys.ndim != 2 or ys.shape[1] != cfg.y_dim):
            raise DimensionError(f"outputs have shape {ys.shape}, expected width y_dim={cfg.y_dim}")

    # -- public ops ---------------------------------------------------------

    def encode(self, pairs) -> np.ndarray:
        """Mean of per-pair encodings; the zero vector for an empty context."""
        cfg = self.config
        pairs = np.asarray(pairs, dtype=np.float64).reshape(-1, cfg.x_dim + cfg.y_dim) \
            if np.size(pairs) == 0 else np.asarray(pairs, dtype=np.float64)
        if pairs.ndim != 2 or pairs.shape[1] != cfg.x_dim + cfg.y_dim:
            raise DimensionError(f"context pairs have shape {pairs.shape}, "
                                 f"expected width {cfg.x_dim + cfg.y_dim}")
        if pairs.shape[0] == 0:
            return np.zeros(cfg.r_dim)
        h = self._graph_encode_rows(self.params, pairs)
        return h.value.mean(axis=0)

    def encode_rows(self, pairs) -> np.ndarray:
        """Per-pair encodings before aggregation."""
        return self._graph_encode_rows(self.params, np.asarray(pairs, dtype=np.float64)).value

    def latent(self, r) -> LatentDist:
        r = np.asarray(r, dtype=np.float64)
        if r.shape != (self.config.r_dim,):
            raise DimensionError(f"representation has shape {r.shape}, expected ({self.config.r_dim},)")
        mu, sigma = self._graph_latent(self.params, r[None, :])
        return LatentDist(mu.value[0], sigma.value[0])

    def posterior(self, context_pairs) -> LatentDist:
        return self.latent(self.encode(context_pairs))

    def decode_many(self, zs, xs) -> tuple[np.ndarray, np.ndarray]:
        """Decode ``S`` latents at the same ``m`` inputs; returns ``[S, m, y_dim]`` arrays."""
        zs = np.atleast_2d(np.asarray(zs, dtype=np.float64))
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim == 1:
            xs = xs[:, None]
        self._check_widths(xs)
        if zs.shape[1] != self.config.z_dim:
            raise DimensionError(f"latent has width {zs.shape[1]}, expected {self.config.z_dim}")
        s, m = zs.shape[0], xs.shape[0]
        if m == 0:
            raise DimensionError("decode needs at least one target input")
        z_rows = np.repeat(zs, m, axis=0)
        mean, std = self._graph_decode(self.params, z_rows, np.tile(xs, (s, 1)), row_block=DECODE_BLOCK)
        y = self.config.y_dim
        return mean.value.reshape(s, m, y), std.value.reshape(s, m, y)

    def decode(self, z, xs) -> Prediction:
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        mean, std = self.decode_many(z[None, :], xs)
        return Prediction(mean[0], std[0], z)

    def predict(self, context_pairs, target_xs, n_samples: int = 1,
                rng: np.random.Generator | None = None, eps=None) -> list[Prediction]:
        """Sample ``n_samples`` functions from the posterior and evaluate them at ``target_xs``."""
        if n_samples < 1:
            raise DomainError("n_samples must be at least 1")
        q = self.posterior(context_pairs)
        if eps is None:
            rng = rng if rng is not None else np.random.default_rng()
            eps = rng.standard_normal((n_samples, self.config.z_dim))
        eps = np.asarray(eps, dtype=np.float64).reshape(n_samples, self.config.z_dim)
        zs = q.mu + q.sigma * eps
        means, stds = self.decode_many(zs, target_xs)
        return [Prediction(means[i], stds[i], zs[i]) for i in range(n_samples)]

    def elbo_loss(self, task: FunctionTask, rng: np.random.Generator | None = None,
                  eps=None) -> float:
        return self.batch_loss([task], rng, eps)

    def batch_loss(self, tasks, rng=None, eps=None) -> float:
        eps = self._draw_eps(len(tasks), rng, eps)
        return float(self._graph_loss(self.params, tasks, eps).value)

    def loss_and_grads(self, tasks, rng=None, eps=None, params=None):
        """Batch-mean loss and exact gradients for every parameter."""
        eps = self._draw_eps(len(tasks), rng, eps)
        params = self.params if params is None else params
        return ad.value_and_grad(lambda P: self._graph_loss(P, tasks, eps), params)

    def loss_terms(self, task: FunctionTask, eps) -> tuple[float, float]:
        """``(reconstruction log-likelihood, KL)`` for one task at a fixed ``eps``."""
        kl, recon = self._graph_terms(self.params, [task], self._draw_eps(1, None, eps))
        return float(recon.value[0]), float(kl.value[0])

    def _draw_eps(self, n, rng, eps):
        if eps is None:
            rng = rng if rng is not None else np.random.default_rng()
            eps = rng.standard_normal((n, self.config.z_dim))
        return np.asarray(eps, dtype=np.float64).reshape(n, self.config.z_dim)

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        save_model(self, path)

    @classmethod
    def load(cls, path, config: NPConfig | None = None) -> "NeuralProcess":
        return load_model(path, config)


def init_params(config: NPConfig, rng: np.random.Generator) -> ParamStore:
    params = ParamStore()
    for prefix, spec in (("encoder.", config.encoder_spec), ("latent.", config.latent_spec),
                         ("decoder.", config.decoder_spec)):
        for name, value in init_mlp(spec, rng, prefix).items():
            params[name] = value
    return params


def expected_shapes(config: NPConfig) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for prefix, spec in (("encoder.", config.encoder_spec), ("latent.", config.latent_spec),
                         ("decoder.", config.decoder_spec)):
        for i, (a, b) in enumerate(zip(spec.layer_widths[:-1], spec.layer_widths[1:])):
            shapes[f"{prefix}W{i}"] = (a, b)
            shapes[f"{prefix}b{i}"] = (b,)
    return shapes


def check_params(config: NPConfig, params: Mapping) -> None:
    expected = expected_shapes(config)
    for name, shape in expected.items():
        if name not in params:
            raise DimensionError(f"parameter {name!r} missing for this NPConfig")
        if tuple(np.shape(params[name])) != shape:
            raise DimensionError(f"parameter {name!r} has shape {tuple(np.shape(params[name]))}, "
                                 f"NPConfig expects {shape}")
    extra = set(params) - set(expected)
    if extra:
        raise DimensionError(f"unexpected parameters for this NPConfig: {sorted(extra)}")


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_model(model: NeuralProcess, path) -> None:
    """Write the ``NPK1`` parameter file plus a JSON sidecar holding the config."""
    param_io.save(model.params, path)
    sidecar_path(path).write_text(json.dumps({"format": "NPK1", "config": model.config.to_dict()},
                                             indent=2, sort_keys=True) + "\n")


def load_model(path, config: NPConfig | None = None) -> NeuralProcess:
    params = param_io.load(path)
    if config is None:
        side = sidecar_path(path)
        if not side.exists():
            raise FormatError(f"missing config sidecar {side}")
        meta = json.loads(side.read_text())
        if meta.get("format") != "NPK1":
            raise FormatError(f"sidecar {side} does not describe an NPK1 checkpoint")
        config = NPConfig.from_dict(meta["config"])
    return NeuralProcess(config, params)
