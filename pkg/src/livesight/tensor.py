"""Reverse-mode autodiff over float64 numpy arrays.

Small, deterministic op set: exactly what the forecasting and ranking
models need, nothing more. Every op stores a closure that routes the
output gradient back to its parents; `Tensor.backward()` runs them in
reverse topological order.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, LabelError

# When True, every op asserts its output is finite. Cheap at desk scale;
# flipped on by the test suite.
CHECK_FINITE = False


def _check(arr):
    if CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise FloatingPointError("non-finite value produced in forward pass")
    return arr


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A float64 array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise DimensionError("backward() requires a scalar output")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                topo.append(node)
            else:
                stack.append((node, True))
                for p in node._parents:
                    if id(p) not in seen:
                        stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward):
    out = Tensor(_check(data))
    live = tuple(p for p in parents if p.requires_grad or p._parents)
    if live:
        out._parents = live
        out._backward = backward
        out.requires_grad = True
    return out


# -- arithmetic ----------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _node(data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), backward)


def matmul(a, b):
    """Matrix product with numpy stacking rules (operands must be >= 2-D)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul requires >=2-D operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}"
        )
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad or a._parents:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad or b._parents:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _node(data, (a, b), backward)


# -- shape manipulation ----------------------------------------------------


def reshape(a, shape):
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return _node(data, (a,), backward)


def swapaxes(a, ax1, ax2):
    a = as_tensor(a)
    data = np.swapaxes(a.data, ax1, ax2)

    def backward(g):
        a._accumulate(np.swapaxes(g, ax1, ax2))

    return _node(data, (a,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad or t._parents:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _node(data, tuple(tensors), backward)


def take(a, key):
    """Basic (slice/int) indexing; gradient scatters back into place."""
    a = as_tensor(a)
    data = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        a._accumulate(full)

    return _node(data, (a,), backward)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _node(data, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- nonlinearities --------------------------------------------------------


def relu(a):
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def backward(g):
        a._accumulate(g * (a.data > 0.0))

    return _node(data, (a,), backward)


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        a._accumulate(g * data * (1.0 - data))

    return _node(data, (a,), backward)


def softmax(a, axis=-1):
    """Numerically stable softmax along `axis` (fused backward)."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        a._accumulate(data * (g - dot))

    return _node(data, (a,), backward)


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit population variance, then affine."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    d = a.data.shape[-1] if a.data.ndim else 0
    if d == 0:
        raise DimensionError("layer_norm requires a non-empty last axis")
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise DimensionError(
            f"layer_norm gain/bias must have shape ({d},), got "
            f"{gain.data.shape} / {bias.data.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    data = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad or gain._parents:
            gain._accumulate(
                (g * xhat).sum(axis=tuple(range(g.ndim - 1))) if g.ndim > 1 else g * xhat
            )
        if bias.requires_grad or bias._parents:
            bias._accumulate(
                g.sum(axis=tuple(range(g.ndim - 1))) if g.ndim > 1 else np.array(g)
            )
        if a.requires_grad or a._parents:
            gx = g * gain.data
            term1 = gx.mean(axis=-1, keepdims=True)
            term2 = (gx * xhat).mean(axis=-1, keepdims=True)
            a._accumulate(inv * (gx - term1 - xhat * term2))

    return _node(data, (a, gain, bias), backward)


# -- lookups and losses ----------------------------------------------------


def embedding(table, indices):
    """Gather rows of `table` by integer `indices`; gradient scatter-adds."""
    table = as_tensor(table)
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise DimensionError("embedding indices must be integers")
    data = table.data[idx]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        table._accumulate(gt)

    return _node(data, (table,), backward)


def softmax_cross_entropy(logits, labels, mask=None):
    """Mean negative log-likelihood of integer `labels` under softmax(`logits`).

    `logits` has shape (..., K); `labels` broadcasts over the leading axes.
    `mask` (same shape as labels, 0/1) selects which positions count; the
    loss is averaged over selected positions.
    """
    logits = as_tensor(logits)
    k = logits.data.shape[-1]
    if k < 2:
        raise DimensionError("softmax_cross_entropy requires at least 2 classes")
    labels = np.asarray(labels)
    if labels.shape != logits.data.shape[:-1]:
        raise DimensionError(
            f"labels shape {labels.shape} does not match logits {logits.data.shape}"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise IndexError(f"label outside [0, {k}): {labels.min()}..{labels.max()}")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    if mask is None:
        denom = max(labels.size, 1)
        loss = -picked.sum() / denom
    else:
        mask = np.asarray(mask, dtype=np.float64)
        denom = mask.sum()
        if denom <= 0:
            raise DimensionError("softmax_cross_entropy mask selects no positions")
        loss = -(picked * mask).sum() / denom

    def backward(g):
        probs = np.exp(logp)
        onehot = np.zeros_like(probs)
        np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
        grad = (probs - onehot) / denom
        if mask is not None:
            grad = grad * mask[..., None]
        logits._accumulate(g * grad)

    return _node(np.float64(loss), (logits,), backward)


def binary_cross_entropy(probs, labels, clamp=1e-7):
    """Multi-task BCE: sum over the last axis (tasks), mean over leading axes.

    Probabilities are clamped to [clamp, 1-clamp] before the log.
    """
    probs = as_tensor(probs)
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != probs.data.shape:
        raise DimensionError(
            f"labels shape {y.shape} does not match predictions {probs.data.shape}"
        )
    if not np.all((y == 0.0) | (y == 1.0)):
        raise LabelError("binary labels must be 0 or 1")
    p = np.clip(probs.data, clamp, 1.0 - clamp)
    n_rows = int(np.prod(probs.data.shape[:-1])) if probs.data.ndim > 1 else 1
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum() / n_rows

    def backward(g):
        inside = (probs.data > clamp) & (probs.data < 1.0 - clamp)
        grad = np.where(inside, (p - y) / (p * (1.0 - p)), 0.0) / n_rows
        probs._accumulate(g * grad)

    return _node(np.float64(loss), (probs,), backward)
