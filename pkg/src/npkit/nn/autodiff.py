"""Reverse-mode automatic differentiation over float64 numpy arrays.

Only the primitive set needed by the neural process is supported. Every op
records a closure that maps the upstream gradient to one gradient per parent;
:func:`grad` replays them in reverse topological order.
"""
from __future__ import annotations

import math
from typing import Callable, Mapping, Sequence

import numpy as np

from ..errors import DimensionError, DomainError, NumericError

LOG_2PI = math.log(2.0 * math.pi)

Array = np.ndarray


class Var:
    """A node in the computation graph holding a float64 array."""

    __slots__ = ("value", "parents", "backward", "op")

    def __init__(self, value, parents: Sequence["Var"] = (), backward=None, op: str = "leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.backward = backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x, op="const")


def _node(value: Array, parents, backward, op: str) -> Var:
    if not np.isfinite(value).all():
        raise NumericError(f"non-finite value produced by op '{op}'")
    return Var(value, parents, backward, op)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Var, b: Var) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# --- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    _check_broadcast("add", a, b)
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    _check_broadcast("sub", a, b)
    return _node(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    _check_broadcast("mul", a, b)
    return _node(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
                 "mul")


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    _check_broadcast("div", a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.value / b.value

    def backward(g):
        return (_unbroadcast(g / b.value, a.shape),
                _unbroadcast(-g * out / b.value, b.shape))

    return _node(out, (a, b), backward, "div")


def neg(a) -> Var:
    a = as_var(a)
    return _node(-a.value, (a,), lambda g: (-g,), "neg")


def square(a) -> Var:
    a = as_var(a)
    return _node(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,), "square")


# --- pointwise nonlinearities ------------------------------------------------

def exp(a) -> Var:
    a = as_var(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Var:
    a = as_var(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.value)
    return _node(out, (a,), lambda g: (g / a.value,), "log")


def relu(a) -> Var:
    a = as_var(a)
    mask = a.value > 0
    return _node(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def tanh(a) -> Var:
    a = as_var(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x: Array) -> Array:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Var:
    a = as_var(a)
    out = _sigmoid(a.value)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a) -> Var:
    a = as_var(a)
    out = np.logaddexp(0.0, a.value)
    return _node(out, (a,), lambda g: (g * _sigmoid(a.value),), "softplus")


# --- reductions and linear algebra -------------------------------------------

def sum(a, axis=None) -> Var:  # noqa: A001 - mirrors numpy naming
    a = as_var(a)
    out = a.value.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None) -> Var:
    a = as_var(a)
    count = a.value.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / count)


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _node(a.value @ b.value, (a, b),
                 lambda g: (g @ b.value.T, a.value.T @ g), "matmul")


def _blocked_matmul(x: Array, w: Array, block: int) -> Array:
    # Each row is multiplied inside a zero-padded block of fixed height, so its
    # result does not depend on how many other rows share the call.
    n = x.shape[0]
    out = np.empty((n, w.shape[1]))
    for start in range(0, n, block):
        chunk = x[start:start + block]
        if chunk.shape[0] < block:
            padded = np.zeros((block, x.shape[1]))
            padded[:chunk.shape[0]] = chunk
            out[start:start + block] = (padded @ w)[:chunk.shape[0]]
        else:
            out[start:start + block] = chunk @ w
    return out


def affine(x, w, b, row_block: int | None = None) -> Var:
    """``x @ w + b``; with ``row_block`` set, each output row is bit-stable
    under changes to the other rows in the batch."""
    x, w, b = as_var(x), as_var(w), as_var(b)
    if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"affine: input {x.shape} does not match weight {w.shape}")
    if b.shape != (w.shape[1],):
        raise DimensionError(f"affine: bias {b.shape} does not match weight {w.shape}")
    if row_block:
        out = _blocked_matmul(x.value, w.value, row_block) + b.value
    else:
        out = x.value @ w.value + b.value

    def backward(g):
        return g @ w.value.T, x.value.T @ g, g.sum(axis=0)

    return _node(out, (x, w, b), backward, "affine")


# --- structural ops ----------------------------------------------------------

def concat(parts: Sequence, axis: int = -1) -> Var:
    parts = [as_var(p) for p in parts]
    try:
        out = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, parts, backward, "concat")


def columns(a, start: int, stop: int) -> Var:
    """Columns ``start:stop`` of a 2-D var."""
    a = as_var(a)

    def backward(g):
        full = np.zeros(a.shape)
        full[:, start:stop] = g
        return (full,)

    return _node(a.value[:, start:stop], (a,), backward, "columns")


def take_rows(a, idx) -> Var:
    a = as_var(a)
    idx = np.asarray(idx, dtype=np.intp)

    def backward(g):
        full = np.zeros(a.shape)
        np.add.at(full, idx, g)
        return (full,)

    return _node(a.value[idx], (a,), backward, "take_rows")


def segment_sum(a, counts) -> Var:
    """Sum consecutive row blocks of sizes ``counts``; empty blocks give zeros."""
    a = as_var(a)
    counts = np.asarray(counts, dtype=np.intp)
    if counts.sum() != a.shape[0]:
        raise DimensionError(f"segment_sum: counts cover {counts.sum()} rows, input has {a.shape[0]}")
    out = np.zeros((len(counts),) + a.shape[1:])
    nonempty = counts > 0
    if nonempty.any():
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        out[nonempty] = np.add.reduceat(a.value, starts[nonempty], axis=0)
    return _node(out, (a,), lambda g: (np.repeat(g, counts, axis=0),), "segment_sum")


def segment_mean(a, counts) -> Var:
    """Mean over consecutive row blocks; empty blocks give zero vectors."""
    counts = np.asarray(counts, dtype=np.intp)
    scale = 1.0 / np.maximum(counts, 1)
    return mul(segment_sum(a, counts), scale.reshape((-1,) + (1,) * (as_var(a).value.ndim - 1)))


# --- probabilistic primitives --------------------------------------------------

def gaussian_log_pdf(y, mu, sigma) -> Var:
    """Elementwise ``log N(y | mu, sigma^2)``."""
    y, mu, sigma = as_var(y), as_var(mu), as_var(sigma)
    if not (y.shape == mu.shape == sigma.shape):
        raise DimensionError(f"gaussian_log_pdf: shapes {y.shape}, {mu.shape}, {sigma.shape} differ")
    if not (sigma.value > 0).all():
        raise DomainError("gaussian_log_pdf: sigma must be strictly positive")
    diff = y.value - mu.value
    inv_var = 1.0 / (sigma.value * sigma.value)
    out = -0.5 * LOG_2PI - np.log(sigma.value) - 0.5 * diff * diff * inv_var

    def backward(g):
        d_mu = g * diff * inv_var
        d_sigma = g * (diff * diff * inv_var - 1.0) / sigma.value
        return -d_mu, d_mu, d_sigma

    return _node(out, (y, mu, sigma), backward, "gaussian_log_pdf")


def kl_diag_gaussians(mu_q, sigma_q, mu_p, sigma_p) -> Var:
    """KL(q || p) for diagonal Gaussians, reduced over the last axis."""
    mu_q, sigma_q, mu_p, sigma_p = (as_var(v) for v in (mu_q, sigma_q, mu_p, sigma_p))
    if not (mu_q.shape == sigma_q.shape == mu_p.shape == sigma_p.shape):
        raise DimensionError("kl_diag_gaussians: all four arguments must share a shape")
    if not ((sigma_q.value > 0).all() and (sigma_p.value > 0).all()):
        raise DomainError("kl_diag_gaussians: sigmas must be strictly positive")
    sq, sp = sigma_q.value, sigma_p.value
    diff = mu_q.value - mu_p.value
    inv_vp = 1.0 / (sp * sp)
    ratio, scaled = sq / sp, diff / sp  # ratio form: identical inputs give exactly zero
    terms = -np.log(ratio) + 0.5 * (ratio * ratio + scaled * scaled) - 0.5
    out = terms.sum(axis=-1)

    def backward(g):
        g = np.expand_dims(g, -1)
        d_mq = g * diff * inv_vp
        d_sq = g * (sq * inv_vp - 1.0 / sq)
        d_sp = g * (1.0 / sp - (sq * sq + diff * diff) * inv_vp / sp)
        return d_mq, d_sq, -d_mq, d_sp

    return _node(np.asarray(out), (mu_q, sigma_q, mu_p, sigma_p), backward, "kl_diag_gaussians")


def reparameterize(mu, sigma, eps) -> Var:
    """``mu + sigma * eps`` with caller-supplied standard-normal ``eps``."""
    mu, sigma = as_var(mu), as_var(sigma)
    eps = np.asarray(eps, dtype=np.float64)
    if not (mu.shape == sigma.shape == eps.shape):
        raise DimensionError(f"reparameterize: shapes {mu.shape}, {sigma.shape}, {eps.shape} differ")
    return _node(mu.value + sigma.value * eps, (mu, sigma),
                 lambda g: (g, g * eps), "reparameterize")


# --- gradient driver -----------------------------------------------------------

def _topological_order(root: Var) -> list[Var]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        stack.extend((p, False) for p in node.parents if id(p) not in seen)
    return order


def grad(loss: Var, wrt: Mapping[str, Var]) -> dict[str, Array]:
    """Exact gradients of the scalar ``loss`` with respect to each var in ``wrt``.

    Parameters that do not influence the loss receive zero gradients.
    """
    if loss.value.size != 1:
        raise DimensionError(f"grad: loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topological_order(loss)):
        g = grads.get(id(node))
        if g is None or node.backward is None:
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    out = {}
    for name, var in wrt.items():
        g = grads.get(id(var))
        out[name] = np.zeros(var.shape) if g is None else np.asarray(g, dtype=np.float64).reshape(var.shape)
    return out


def leaves(params: Mapping[str, Array]) -> dict[str, Var]:
    return {name: Var(value) for name, value in params.items()}


def value_and_grad(fn: Callable[[Mapping[str, Var]], Var],
                   params: Mapping[str, Array]) -> tuple[float, dict[str, Array]]:
    """Evaluate ``fn`` on fresh leaves built from ``params`` and differentiate it."""
    wrt = leaves(params)
    loss = fn(wrt)
    return float(loss.value), grad(loss, wrt)
