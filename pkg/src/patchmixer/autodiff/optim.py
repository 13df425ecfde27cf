"""SGD with Nesterov momentum and coupled weight decay, plus the cosine schedule."""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterable

import numpy as np

from .tensor import Tensor


class SGD:
    """Nesterov SGD over a named, ordered set of parameters.

    Per parameter and step::

        g = grad + weight_decay * value
        v = momentum * v + g
        value -= lr * (g + momentum * v)
    """

    def __init__(
        self,
        named_params: Iterable[tuple[str, Tensor]],
        lr: float = 1e-2,
        momentum: float = 0.9,
        weight_decay: float = 1e-5,
    ):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict(named_params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers: "OrderedDict[str, np.ndarray]" = OrderedDict(
            (name, np.zeros_like(p.data)) for name, p in self.params.items()
        )

    def step(self) -> None:
        missing = [name for name, p in self.params.items() if p.grad is None]
        if missing:
            raise RuntimeError(f"optimizer step with missing gradients: {missing[:5]}")
        mu, wd = self.momentum, self.weight_decay
        dtype = next(iter(self.params.values())).dtype if self.params else np.float32
        lr = np.asarray(self.lr, dtype=dtype)
        for name, p in self.params.items():
            g = p.grad + wd * p.data if wd else p.grad
            v = self.buffers[name]
            v *= mu
            v += g
            p.data -= lr * (g + mu * v)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((f"momentum.{k}", v) for k, v in self.buffers.items())

    def load_state_dict(self, state: dict) -> None:
        for name, buf in self.buffers.items():
            src = np.asarray(state[f"momentum.{name}"])
            if src.shape != buf.shape:
                raise ValueError(f"momentum buffer {name}: shape {src.shape} != {buf.shape}")
            buf[...] = src


def cosine_lr(epoch: float, total: float, lr_max: float = 1e-2, lr_min: float = 1e-4) -> float:
    """Cosine annealing from ``lr_max`` at epoch 0 to ``lr_min`` at ``total``."""
    if total <= 0:
        raise ValueError("total epochs must be positive")
    if epoch == 0:
        return lr_max
    if epoch == total:
        return lr_min
    return lr_min + 0.5 * (lr_max - lr_min) * (1 + math.cos(math.pi * epoch / total))
