"""Named parameter collections and the Adam update rule."""

from __future__ import annotations

import numpy as np

from .errors import StateError
from .tensor import Tensor


class ParamStore:
    """Insertion-ordered mapping of dotted names to trainable tensors.

    Also owns the Adam moment buffers and step counter so a model's full
    optimizer state travels with its parameters.
    """

    def __init__(self):
        self._params = {}
        self.moments_m = {}
        self.moments_v = {}
        self.step = 0

    def add(self, name, data):
        if name in self._params:
            raise StateError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        try:
            return self._params[name]
        except KeyError:
            raise StateError(f"unknown parameter {name!r}") from None

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def n_parameters(self):
        return sum(p.data.size for p in self._params.values())

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def state_arrays(self):
        """name -> ndarray view of current values (used by checkpoints)."""
        return {name: p.data for name, p in self._params.items()}

    def load_arrays(self, arrays):
        for name, p in self._params.items():
            if name not in arrays:
                raise StateError(f"checkpoint missing parameter {name!r}")
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise StateError(
                    f"parameter {name!r} shape {arr.shape} != expected {p.data.shape}"
                )
            p.data = arr.copy()
        extra = set(arrays) - set(self._params)
        if extra:
            raise StateError(f"checkpoint has unknown parameters {sorted(extra)!r}")


def adam_step(store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update over every parameter in the store.

    Requires every parameter to have a populated gradient; a missing gradient
    means the graph was wired wrong, and silently skipping it would mask that.
    """
    for name, p in store.items():
        if p.grad is None:
            raise StateError(f"parameter {name!r} has no gradient")
    store.step += 1
    t = store.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in store.items():
        g = p.grad
        m = store.moments_m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = store.moments_v[name]
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        store.moments_m[name] = m
        store.moments_v[name] = v
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
