"""Minimal module system: named parameters, buffers, and train/eval mode."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator, Optional

import numpy as np

from . import functional as F
from .tensor import DEFAULT_DTYPE, Tensor


class Module:
    def __init__(self) -> None:
        self.training = True
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self._modules: "OrderedDict[str, Module]" = OrderedDict()

    def __setattr__(self, name, value):
        if isinstance(value, Module) and "_modules" in self.__dict__:
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def add_param(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        object.__setattr__(self, name, t)
        return t

    def add_buffer(self, name: str, data: np.ndarray) -> np.ndarray:
        self._buffers[name] = data
        object.__setattr__(self, name, data)
        return data

    def add_module(self, name: str, module: "Module") -> "Module":
        setattr(self, name, module)
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for mname, m in self._modules.items():
            yield from m.named_parameters(f"{prefix}{mname}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for mname, m in self._modules.items():
            yield from m.named_buffers(f"{prefix}{mname}.")

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, p in self.named_parameters():
            out[name] = p.data
        for name, b in self.named_buffers():
            out[name] = b
        return out

    def load_state_dict(self, state: dict) -> None:
        own = self.state_dict()
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, arr in own.items():
            src = np.asarray(state[name])
            if src.shape != arr.shape:
                raise ValueError(f"{name}: checkpoint shape {src.shape} != model shape {arr.shape}")
            arr[...] = src

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for m in self._modules.values():
            m.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def to(self, dtype) -> "Module":
        """Cast parameters and buffers in place (float64 is used by grad checks)."""
        for p in self._params.values():
            p.data = p.data.astype(dtype)
            p.grad = None
        for name, b in list(self._buffers.items()):
            self.add_buffer(name, b.astype(dtype))
        for m in self._modules.values():
            m.to(dtype)
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, fin: int, fout: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.fin, self.fout = fin, fout
        self.add_param("weight", uniform_init(rng, (fin, fout), fin))
        self.bias: Optional[Tensor] = None
        if bias:
            self.add_param("bias", np.zeros(fout, dtype=DEFAULT_DTYPE))

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class PatchMix(Module):
    """Pointwise convolution over the patch axis of a B x P x F tensor."""

    def __init__(self, num_patches: int, rng: np.random.Generator):
        super().__init__()
        self.add_param("weight", uniform_init(rng, (num_patches, num_patches), num_patches))
        self.add_param("bias", np.zeros(num_patches, dtype=DEFAULT_DTYPE))

    def forward(self, x: Tensor) -> Tensor:
        return F.patch_axis_mix(x, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, channels: int, axis: int = -1):
        super().__init__()
        self.axis = axis
        self.add_param("gamma", np.ones(channels, dtype=DEFAULT_DTYPE))
        self.add_param("beta", np.zeros(channels, dtype=DEFAULT_DTYPE))
        self.add_buffer("running_mean", np.zeros(channels, dtype=DEFAULT_DTYPE))
        self.add_buffer("running_var", np.ones(channels, dtype=DEFAULT_DTYPE))

    def forward(self, x: Tensor) -> Tensor:
        return F.batchnorm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, axis=self.axis,
        )


class LayerNorm(Module):
    def __init__(self, features: int):
        super().__init__()
        self.add_param("gamma", np.ones(features, dtype=DEFAULT_DTYPE))
        self.add_param("beta", np.zeros(features, dtype=DEFAULT_DTYPE))

    def forward(self, x: Tensor) -> Tensor:
        return F.layernorm(x, self.gamma, self.beta)


class Dropout(Module):
    def __init__(self, p: float):
        super().__init__()
        if not 0 <= p < 1:
            raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
        self.p = p

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        return F.dropout(x, self.p, self.training, rng)


def count_params(params) -> int:
    """Total number of learnable scalars in a module or an iterable of tensors."""
    if isinstance(params, Module):
        params = params.parameters()
    return int(sum(p.size for p in params))
