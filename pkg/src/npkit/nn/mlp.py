"""Fully connected networks built from :mod:`npkit.nn.autodiff` primitives."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..errors import DimensionError
from . import autodiff as ad

ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh}


@dataclass(frozen=True)
class MLPSpec:
    """Layer widths (input first, output last) and the hidden activation.

    The output layer is always affine.
    """

    layer_widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2:
            raise DimensionError("an MLP needs at least an input and an output width")
        if any(w < 1 for w in self.layer_widths):
            raise DimensionError(f"layer widths must be positive: {self.layer_widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    def param_names(self, prefix: str = "") -> list[str]:
        names = []
        for i in range(self.n_layers):
            names += [f"{prefix}W{i}", f"{prefix}b{i}"]
        return names


def init_mlp(spec: MLPSpec, rng: np.random.Generator, prefix: str = "") -> dict[str, np.ndarray]:
    """Glorot-uniform weights and zero biases."""
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(spec.layer_widths[:-1], spec.layer_widths[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"{prefix}W{i}"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        params[f"{prefix}b{i}"] = np.zeros(fan_out)
    return params


def mlp_forward(spec: MLPSpec, params: Mapping, x, prefix: str = "",
                row_block: int | None = None) -> ad.Var:
    """Apply the network to a ``[batch, in]`` input.

    ``params`` may hold plain arrays or graph vars; the result is a var either way.
    """
    x = ad.as_var(x)
    if x.value.ndim != 2 or x.shape[1] != spec.layer_widths[0]:
        raise DimensionError(
            f"mlp '{prefix}': input shape {x.shape} does not match input width {spec.layer_widths[0]}")
    act = ACTIVATIONS[spec.activation]
    h = x
    for i in range(spec.n_layers):
        w_name, b_name = f"{prefix}W{i}", f"{prefix}b{i}"
        if w_name not in params or b_name not in params:
            raise DimensionError(f"mlp '{prefix}': missing parameter {w_name} or {b_name}")
        w, b = ad.as_var(params[w_name]), ad.as_var(params[b_name])
        if w.shape != spec.layer_widths[i:i + 2]:
            raise DimensionError(f"mlp '{prefix}': {w_name} has shape {w.shape}, "
                                 f"expected {spec.layer_widths[i:i + 2]}")
        h = ad.affine(h, w, b, row_block=row_block)
        if i < spec.n_layers - 1:
            h = act(h)
    return h
