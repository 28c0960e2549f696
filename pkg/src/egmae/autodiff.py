"""Reverse-mode automatic differentiation over numpy arrays.

Every differentiable operation appends one record to an implicit tape as
it runs. Records carry a monotonically increasing sequence number, so
creation order doubles as a topological order and ``backward`` can simply
replay reachable records from highest to lowest sequence number. A tape
region is single-use: replaying it marks its records consumed, and a
second backward through any of them raises ``TapeError``.

Only the operations the models need are implemented; each op validates
its shapes up front and returns a new ``Tensor``.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import DimensionError, ParameterError, TapeError

_SEQ = itertools.count()
_GRAD_ENABLED = True


class no_grad:
    """Context manager that suppresses tape recording inside its block."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class _Record:
    """One tape entry: the inputs of an op and its vector-Jacobian product."""

    __slots__ = ("seq", "inputs", "backward_fn", "consumed")

    def __init__(self, inputs: Sequence["Tensor"], backward_fn: Callable):
        self.seq = next(_SEQ)
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn
        self.consumed = False


class Tensor:
    """A numpy array plus the tape record that produced it.

    ``grad`` accumulates across backward calls until the caller resets it
    to ``None``; optimizers rely on that to support gradient accumulation.
    """

    __slots__ = ("data", "requires_grad", "grad", "_record")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._record: _Record | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self) -> "Tensor":
        """A view of the same data cut off from the tape."""
        return Tensor(self.data, requires_grad=False)

    def item(self) -> float:
        return self.data.item()

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``grad`` of every reachable leaf.

        ``self`` must be a scalar. A tensor with no tape record (a leaf or
        anything built under ``no_grad``) is a constant; backward on it is
        a no-op. Replaying any already-consumed record raises ``TapeError``.
        """
        if self.data.ndim != 0:
            raise TapeError(
                f"backward requires a scalar, got shape {self.data.shape}"
            )
        if self._record is None:
            return

        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack = [self]
        while stack:
            t = stack.pop()
            if id(t) in seen or t._record is None:
                continue
            seen.add(id(t))
            if t._record.consumed:
                raise TapeError(
                    "this region of the tape was already consumed by a "
                    "previous backward call"
                )
            nodes.append(t)
            stack.extend(t._record.inputs)

        nodes.sort(key=lambda t: t._record.seq, reverse=True)
        _accumulate(self, np.ones((), dtype=self.data.dtype))
        for t in nodes:
            record = t._record
            record.consumed = True
            if t.grad is None:
                # reachable through inputs but no gradient flowed here
                continue
            for inp, g in zip(record.inputs, record.backward_fn(t.grad)):
                if g is not None and inp.requires_grad:
                    _accumulate(inp, g)


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad = t.grad + g


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(inp.requires_grad for inp in inputs):
        out.requires_grad = True
        out._record = _Record(inputs, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    data = a.data + b.data

    def backward_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    data = a.data * b.data

    def backward_fn(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(data, (a, b), backward_fn)


def sum_all(x: Tensor) -> Tensor:
    """Sum of every element, as a scalar tensor."""
    data = x.data.sum()

    def backward_fn(g):
        return (np.broadcast_to(g, x.data.shape).astype(x.data.dtype, copy=False),)

    return _make(data, (x,), backward_fn)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, exact form ``x * Phi(x)``."""
    # python-float constants so float32 inputs stay float32
    cdf = 0.5 * (1.0 + erf(x.data * (1.0 / math.sqrt(2.0))))
    data = x.data * cdf

    def backward_fn(g):
        pdf = np.exp(-0.5 * x.data * x.data) * (1.0 / math.sqrt(2.0 * math.pi))
        return (g * (cdf + x.data * pdf),)

    return _make(data, (x,), backward_fn)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max subtraction."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        inner = (g * data).sum(axis=-1, keepdims=True)
        return (data * (g - inner),)

    return _make(data, (x,), backward_fn)


# ---------------------------------------------------------------------------
# linear algebra and convolution


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for ``x`` of shape (N, in)."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise DimensionError(
            f"linear expects 2-d input and weight, got {x.data.shape} "
            f"and {weight.data.shape}"
        )
    if x.data.shape[1] != weight.data.shape[1]:
        raise DimensionError(
            f"linear input features {x.data.shape[1]} do not match weight "
            f"features {weight.data.shape[1]}"
        )
    if bias is not None and bias.data.shape != (weight.data.shape[0],):
        raise DimensionError(
            f"linear bias shape {bias.data.shape} does not match "
            f"{weight.data.shape[0]} output features"
        )
    data = x.data @ weight.data.T
    if bias is not None:
        data = data + bias.data

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward_fn(g):
        gx = g @ weight.data
        gw = g.T @ x.data
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return _make(data, inputs, backward_fn)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """2-d cross-correlation on NCHW input.

    ``weight`` has shape (C_out, C_in // groups, kh, kw); channels are
    split into ``groups`` independent slices, so ``groups == C_in`` with
    one-channel kernels is a depthwise convolution.
    """
    if stride < 1 or padding < 0 or groups < 1:
        raise ParameterError(
            f"conv2d needs stride >= 1, padding >= 0, groups >= 1, got "
            f"stride={stride} padding={padding} groups={groups}"
        )
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError(
            f"conv2d expects NCHW input and OIHW weight, got {x.data.shape} "
            f"and {weight.data.shape}"
        )
    n, c_in, h, w = x.data.shape
    c_out, c_in_g, kh, kw = weight.data.shape
    if c_in % groups != 0 or c_out % groups != 0:
        raise DimensionError(
            f"channels ({c_in} in, {c_out} out) must divide into {groups} groups"
        )
    if c_in_g != c_in // groups:
        raise DimensionError(
            f"weight expects {c_in_g} channels per group, input provides "
            f"{c_in // groups}"
        )
    if bias is not None and bias.data.shape != (c_out,):
        raise DimensionError(
            f"conv2d bias shape {bias.data.shape} does not match {c_out} "
            "output channels"
        )
    h_pad, w_pad = h + 2 * padding, w + 2 * padding
    if h_pad < kh or w_pad < kw:
        raise DimensionError(
            f"kernel {kh}x{kw} does not fit padded input {h_pad}x{w_pad}"
        )

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    h_out = (h_pad - kh) // stride + 1
    w_out = (w_pad - kw) // stride + 1
    c_out_g = c_out // groups

    # windows: (N, C_in, H_out, W_out, kh, kw), grouped for the contraction
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    windows_g = windows.reshape(n, groups, c_in_g, h_out, w_out, kh, kw)
    weight_g = weight.data.reshape(groups, c_out_g, c_in_g, kh, kw)
    data = np.einsum("ngihwkl,goikl->ngohw", windows_g, weight_g, optimize=True)
    data = data.reshape(n, c_out, h_out, w_out)
    if bias is not None:
        data = data + bias.data.reshape(1, c_out, 1, 1)

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward_fn(g):
        gg = g.reshape(n, groups, c_out_g, h_out, w_out)
        gw = np.einsum("ngohw,ngihwkl->goikl", gg, windows_g, optimize=True)
        gw = gw.reshape(c_out, c_in_g, kh, kw)
        gxp = np.zeros((n, groups, c_in_g, h_pad, w_pad), dtype=g.dtype)
        # scatter each kernel position's contribution back onto the input
        for i in range(kh):
            for j in range(kw):
                contrib = np.einsum(
                    "ngohw,goi->ngihw", gg, weight_g[:, :, :, i, j], optimize=True
                )
                gxp[
                    :,
                    :,
                    :,
                    i : i + stride * h_out : stride,
                    j : j + stride * w_out : stride,
                ] += contrib
        gx = gxp.reshape(n, c_in, h_pad, w_pad)
        if padding:
            gx = gx[:, :, padding : padding + h, padding : padding + w]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _make(data, inputs, backward_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the channel axis (axis 1) with biased variance."""
    if eps <= 0:
        raise ParameterError(f"layer_norm eps must be positive, got {eps}")
    if x.data.ndim < 2:
        raise DimensionError(
            f"layer_norm expects at least 2-d input, got shape {x.data.shape}"
        )
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError(
            f"layer_norm scale/shift must have shape ({c},), got "
            f"{gamma.data.shape} and {beta.data.shape}"
        )
    param_shape = (1, c) + (1,) * (x.data.ndim - 2)
    mean = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    data = xhat * gamma.data.reshape(param_shape) + beta.data.reshape(param_shape)

    def backward_fn(g):
        reduce_axes = (0,) + tuple(range(2, x.data.ndim))
        g_gamma = (g * xhat).sum(axis=reduce_axes)
        g_beta = g.sum(axis=reduce_axes)
        g_hat = g * gamma.data.reshape(param_shape)
        gx = inv_std * (
            g_hat
            - g_hat.mean(axis=1, keepdims=True)
            - xhat * (g_hat * xhat).mean(axis=1, keepdims=True)
        )
        return gx, g_gamma, g_beta

    return _make(data, (x, gamma, beta), backward_fn)


# ---------------------------------------------------------------------------
# spatial reshaping ops


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes: (N, C, H, W) -> (N, C)."""
    if x.data.ndim != 4:
        raise DimensionError(
            f"global_avg_pool expects NCHW input, got shape {x.data.shape}"
        )
    n, c, h, w = x.data.shape
    data = x.data.mean(axis=(2, 3))

    def backward_fn(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape),)

    return _make(data, (x,), backward_fn)


def nearest_upsample(x: Tensor, factor: int) -> Tensor:
    """Repeat each pixel ``factor`` times along both spatial axes."""
    if factor < 1:
        raise ParameterError(f"upsample factor must be >= 1, got {factor}")
    if x.data.ndim != 4:
        raise DimensionError(
            f"nearest_upsample expects NCHW input, got shape {x.data.shape}"
        )
    n, c, h, w = x.data.shape
    data = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward_fn(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _make(data, (x,), backward_fn)


def pixel_shuffle(x: Tensor, factor: int) -> Tensor:
    """Move channel blocks to space: (N, C*r*r, H, W) -> (N, C, H*r, W*r)."""
    if factor < 1:
        raise ParameterError(f"shuffle factor must be >= 1, got {factor}")
    if x.data.ndim != 4:
        raise DimensionError(
            f"pixel_shuffle expects NCHW input, got shape {x.data.shape}"
        )
    n, c_full, h, w = x.data.shape
    r = factor
    if c_full % (r * r) != 0:
        raise DimensionError(
            f"pixel_shuffle needs channels divisible by {r * r}, got {c_full}"
        )
    c = c_full // (r * r)
    data = (
        x.data.reshape(n, c, r, r, h, w)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, c, h * r, w * r)
    )

    def backward_fn(g):
        gx = (
            g.reshape(n, c, h, r, w, r)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, c_full, h, w)
        )
        return (gx,)

    return _make(data, (x,), backward_fn)


# ---------------------------------------------------------------------------
# losses


def mse_loss(pred: Tensor, target: Tensor, weight: np.ndarray | None = None) -> Tensor:
    """Mean squared error, optionally weighted by a constant mask.

    With ``weight`` the loss is ``sum(w * (pred - target)**2) / sum(w)``;
    the mask itself is never differentiated.
    """
    if pred.data.shape != target.data.shape:
        raise DimensionError(
            f"mse_loss shapes differ: {pred.data.shape} vs {target.data.shape}"
        )
    diff = pred.data - target.data
    if weight is None:
        denom = float(diff.size)
        data = np.asarray((diff * diff).sum() / denom)

        def backward_fn(g):
            gp = g * 2.0 * diff / denom
            return gp, -gp

    else:
        w = np.broadcast_to(np.asarray(weight, dtype=diff.dtype), diff.shape)
        denom = float(w.sum())
        if denom <= 0.0:
            raise ParameterError("mse_loss weight mask must have positive total")
        data = np.asarray((w * diff * diff).sum() / denom)

        def backward_fn(g):
            gp = g * 2.0 * w * diff / denom
            return gp, -gp

    return _make(data, (pred, target), backward_fn)


def _check_labels(labels, n: int, c: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(
            f"labels shape {labels.shape} does not match batch size {n}"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(
            f"labels must lie in [0, {c - 1}], got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels


def cross_entropy_loss(probabilities: Tensor, labels: np.ndarray) -> Tensor:
    """Mean ``-log p[true class]`` over a batch of probability rows.

    ``labels`` is a constant integer vector of shape (N,). Equals
    ``cross_entropy_with_logits`` composed with ``softmax``; training
    uses the logits form, this one scores ready-made probabilities.
    """
    if probabilities.data.ndim != 2:
        raise DimensionError(
            f"cross_entropy_loss expects (N, classes) rows, got shape "
            f"{probabilities.data.shape}"
        )
    n, c = probabilities.data.shape
    labels = _check_labels(labels, n, c)
    rows = np.arange(n)
    picked = probabilities.data[rows, labels]
    data = np.asarray(-np.log(picked).mean())

    def backward_fn(g):
        gp = np.zeros_like(probabilities.data)
        gp[rows, labels] = -g / (n * picked)
        return (gp,)

    return _make(data, (probabilities,), backward_fn)


def cross_entropy_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean ``-log softmax(logits)[true class]`` via log-sum-exp.

    Value-identical to ``cross_entropy_loss(softmax(logits), labels)``
    but stable for logits of any magnitude.
    """
    if logits.data.ndim != 2:
        raise DimensionError(
            f"cross_entropy_with_logits expects (N, classes) logits, got "
            f"shape {logits.data.shape}"
        )
    n, c = logits.data.shape
    labels = _check_labels(labels, n, c)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    data = np.asarray((lse - shifted[np.arange(n), labels]).mean())

    def backward_fn(g):
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(n), labels] -= 1.0
        return (g * probs / n,)

    return _make(data, (logits,), backward_fn)
