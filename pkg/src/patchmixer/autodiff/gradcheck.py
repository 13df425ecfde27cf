from __future__ import annotations

from typing import Callable, Sequence, Union

import numpy as np

from .tensor import Tensor


def grad_check(
    f: Callable[[], Tensor],
    tensors: Union[Tensor, Sequence[Tensor]],
    h: float = 1e-3,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` takes no arguments and returns a scalar tensor built from
    ``tensors``. The tensors are cast to float64 in place before checking;
    the error per coordinate is ``|g_ad - g_fd| / max(1, |g_fd|)``.
    """
    if isinstance(tensors, Tensor):
        tensors = [tensors]
    for t in tensors:
        t.data = t.data.astype(np.float64)
        t.requires_grad = True
        t.grad = None

    out = f()
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    worst = 0.0
    for t, g_ad in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        g_flat = g_ad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(f())
            flat[i] = orig - h
            fm = _scalar(f())
            flat[i] = orig
            g_fd = (fp - fm) / (2 * h)
            err = abs(g_flat[i] - g_fd) / max(1.0, abs(g_fd))
            worst = max(worst, err)
    for t in tensors:
        t.grad = None
    return worst


def _scalar(t: Tensor) -> float:
    return float(np.asarray(t.data).reshape(-1)[0])
