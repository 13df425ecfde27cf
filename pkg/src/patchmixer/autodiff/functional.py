"""Differentiable operations on :class:`Tensor`.

Each op computes its forward value with numpy and registers a closure for the
backward pass. Layer-sized ops (linear, batch norm, layer norm, cross entropy)
are fused so the tape stays short and the backward uses closed-form
gradients.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor, as_tensor, check_finite

BN_EPS = 1e-5
LN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


# -- elementwise arithmetic ------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data + b.data
    return Tensor._make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data - b.data
    return Tensor._make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return Tensor._make(-a.data, (a,), lambda g: (-g,))


# -- shape ops ---------------------------------------------------------------

def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._make(out, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in axes]))
    s = sum(a, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return Tensor._make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.asarray(np.transpose(a.data, axes), order="C")
    inv = None if axes is None else np.argsort(axes)
    return Tensor._make(out, (a,), lambda g: (np.transpose(g, inv),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    out = np.asarray(np.broadcast_to(a.data, shape), order="C")
    return Tensor._make(out, (a,), lambda g: (_unbroadcast(g, a.shape),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._make(out, tensors, backward)


# -- linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands; use linear() for batched inputs")
    out = a.data @ b.data

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return Tensor._make(out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map ``x @ weight + bias`` over the last axis; weight is Fin x Fout."""
    fin, fout = weight.shape
    if x.shape[-1] != fin:
        raise ValueError(f"linear: input has {x.shape[-1]} features, weight expects {fin}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, fin)
    out = x2 @ weight.data
    if bias is not None:
        out += bias.data
    out = out.reshape(*lead, fout)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, fout)
        gx = (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, np.ones(len(g2), dtype=g2.dtype) @ g2

    return Tensor._make(out, parents, backward)


def patch_axis_mix(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Width-1 convolution treating axis 1 of a B x P x F tensor as channels.

    ``out[b, p, f] = sum_q weight[p, q] * x[b, q, f] + bias[p]``.
    """
    if x.ndim != 3 or weight.shape != (x.shape[1], x.shape[1]):
        raise ValueError(f"patch_axis_mix: weight {weight.shape} incompatible with input {x.shape}")
    out = np.matmul(weight.data, x.data)
    if bias is not None:
        out += bias.data[:, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = np.matmul(weight.data.T, g) if x.requires_grad else None
        gw = np.einsum("bpf,bqf->pq", g, x.data) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return Tensor._make(out, parents, backward)


# -- activations -------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    return Tensor._make(out, (x,), lambda g: (g * (x.data > 0),))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(d.dtype, copy=False)
    return Tensor._make(out, (x,), lambda g: (g * out * (1 - out),))


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    if not 0 <= p < 1:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    if not training or p == 0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1 - p)
    return Tensor._make(x.data * keep, (x,), lambda g: (g * keep,))


# -- normalisation -----------------------------------------------------------

def _to_rows(a: np.ndarray, axis: int) -> np.ndarray:
    """View/copy of ``a`` as an N x C matrix with the channel axis last."""
    if axis != a.ndim - 1:
        a = np.moveaxis(a, axis, -1)
    return np.ascontiguousarray(a).reshape(-1, a.shape[-1])


def _from_rows(rows: np.ndarray, shape: tuple, axis: int) -> np.ndarray:
    if axis == len(shape) - 1:
        return rows.reshape(shape)
    moved = list(shape)
    moved.append(moved.pop(axis))
    return np.ascontiguousarray(np.moveaxis(rows.reshape(moved), -1, axis))


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    axis: int = -1,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel batch normalisation; ``axis`` names the channel axis.

    In training mode statistics are taken over every other axis and the
    running buffers are updated in place as ``(1 - m) * old + m * batch``
    (unbiased variance for the running estimate).
    """
    axis = axis % x.ndim
    c = x.shape[axis]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batchnorm: {c} channels but gamma {gamma.shape}, beta {beta.shape}")
    rows = _to_rows(x.data, axis)
    n = rows.shape[0]
    dt = x.dtype
    # column sums through BLAS: much faster than ufunc reductions over N
    ones = np.ones(n, dtype=dt)

    if training:
        if n <= 1:
            raise ValueError("batchnorm: a single value per channel in training mode has no variance")
        mu = (ones @ rows) / n
        xc = rows - mu
        var = np.einsum("ij,ij->j", xc, xc) / n
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (n / (n - 1))
    else:
        mu = running_mean.astype(dt, copy=False)
        var = running_var.astype(dt, copy=False)
        xc = rows - mu

    inv_std = (1.0 / np.sqrt(var + eps)).astype(dt, copy=False)
    scale = gamma.data * inv_std
    out = xc * scale
    out += beta.data

    def backward(g):
        g2 = _to_rows(g, axis)
        sum_g = ones @ g2
        sum_gxc = np.einsum("ij,ij->j", g2, xc)
        ggamma = sum_gxc * inv_std if gamma.requires_grad else None
        gbeta = sum_g if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            if training:
                # gx = scale * (g - mean(g) - xhat * mean(g * xhat))
                k2 = scale * inv_std * inv_std * sum_gxc / n
                k3 = scale * sum_g / n
                gx = g2 * scale
                gx -= xc * k2
                gx -= k3
            else:
                gx = g2 * scale
            gx = _from_rows(gx, x.shape, axis)
        return gx, ggamma, gbeta

    return Tensor._make(_from_rows(out, x.shape, axis), (x, gamma, beta), backward)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    f = x.shape[-1]
    if gamma.shape != (f,) or beta.shape != (f,):
        raise ValueError(f"layernorm: {f} features but gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out = xhat * gamma.data + beta.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gbeta = g.sum(axis=lead) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data
            gx = inv_std * (
                gxhat
                - gxhat.mean(axis=-1, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
            )
        return gx, ggamma, gbeta

    return Tensor._make(out, (x, gamma, beta), backward)


# -- reductions --------------------------------------------------------------

def max_over_axis(x: Tensor, axis: int, where: Optional[np.ndarray] = None) -> tuple[Tensor, np.ndarray]:
    """Max along ``axis``; gradient flows only to the (first) argmax.

    ``where`` is an optional boolean mask broadcastable to ``x``; masked-out
    entries never win. Every reduced slice needs at least one kept entry.
    """
    axis = axis % x.ndim
    data = x.data
    if where is not None:
        where = np.broadcast_to(where, data.shape)
        if not np.all(where.any(axis=axis)):
            raise ValueError("max_over_axis: a slice has no unmasked entries")
        data = np.where(where, data, -np.inf)
    idx = np.argmax(data, axis=axis)
    idx_k = np.expand_dims(idx, axis)
    out = np.take_along_axis(x.data, idx_k, axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx_k, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return Tensor._make(out, (x,), backward), idx


# -- losses ------------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under softmax(logits)."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ValueError(f"cross entropy: logits {logits.shape} vs targets {targets.shape}")
    n, c = logits.shape
    if n == 0:
        raise ValueError("cross entropy over an empty batch")
    if targets.min() < 0 or targets.max() >= c:
        raise ValueError(f"cross entropy: targets must lie in [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(n)
    loss = np.asarray(-logp[rows, targets].mean(), dtype=logits.dtype)
    check_finite(loss, "softmax_cross_entropy")

    def backward(g):
        grad = np.exp(logp)
        grad[rows, targets] -= 1
        return (grad * (g / n),)

    return Tensor._make(loss, (logits,), backward)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)
