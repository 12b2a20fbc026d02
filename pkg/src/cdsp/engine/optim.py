"""SGD with momentum and coupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cdsp.engine.tensor import Tensor


class MissingGradError(RuntimeError):
    pass


@dataclass
class OptimizerState:
    lr: float
    momentum: float = 0.9
    weight_decay: float = 5e-4
    buffers: list = field(default_factory=list)


def sgd_step(params: list[Tensor], state: OptimizerState) -> None:
    """One update: ``v <- m*v + g + wd*p``; ``p <- p - lr*v``.

    Buffers are created lazily (zero-initialised), so the first step's
    velocity is just the decayed gradient.
    """
    if not state.buffers:
        state.buffers = [np.zeros_like(p.data) for p in params]
    if len(state.buffers) != len(params):
        raise ValueError("optimizer state does not match parameter list")
    for i, p in enumerate(params):
        if p.grad is None:
            raise MissingGradError(f"parameter {i} with shape {p.shape} has no gradient")
        buf = state.buffers[i]
        if buf.shape != p.shape:
            raise ValueError(f"momentum buffer {buf.shape} does not match parameter {p.shape}")
        dt = p.dtype.type
        g = p.grad + dt(state.weight_decay) * p.data
        buf = dt(state.momentum) * buf + g
        state.buffers[i] = buf
        p.data = p.data - dt(state.lr) * buf


class SGD:
    def __init__(self, params, lr: float, momentum: float = 0.9, weight_decay: float = 5e-4):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, momentum=momentum, weight_decay=weight_decay)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = float(value)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        sgd_step(self.params, self.state)
