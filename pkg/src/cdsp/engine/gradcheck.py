"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from cdsp.engine.tensor import Tape, Tensor


def analytic_grads(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray]) -> list[np.ndarray]:
    with Tape() as tape:
        ts = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
        loss = fn(*ts)
        tape.backward(loss)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]


def numeric_grads(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-6) -> list[np.ndarray]:
    base = [np.array(x, dtype=np.float64) for x in inputs]
    out = []
    for k, x in enumerate(base):
        g = np.zeros_like(x)
        flat = x.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(*[Tensor(b) for b in base]).item()
            flat[i] = orig - h
            fm = fn(*[Tensor(b) for b in base]).item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max abs difference scaled by the larger of the two max magnitudes."""
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0))
    if scale < 1e-10:
        return float(np.max(np.abs(a - b), initial=0.0))
    return float(np.max(np.abs(a - b)) / scale)


def check_gradients(fn, inputs, h: float = 1e-6) -> float:
    """Return the worst relative error between analytic and numeric gradients."""
    ana = analytic_grads(fn, inputs)
    num = numeric_grads(fn, inputs, h=h)
    return max(relative_error(a, n) for a, n in zip(ana, num))
