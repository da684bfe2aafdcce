"""AdamW with decoupled weight decay, and the warmup/cosine learning-rate curve."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Parameter

__all__ = ["MissingGradient", "AdamW", "OptimizerState", "lr_schedule"]


class MissingGradient(RuntimeError):
    pass


@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 1e-2
    eps: float = 1e-8
    lr: float = 5e-4
    step: int = 0
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)


class AdamW:
    def __init__(self, params: Sequence[Parameter], lr: float = 5e-4, beta1: float = 0.9,
                 beta2: float = 0.99, weight_decay: float = 1e-2, eps: float = 1e-8):
        self.params = [p for p in params if p.trainable]
        self.state = OptimizerState(beta1, beta2, weight_decay, eps, lr)
        for p in self.params:
            self.state.first[p.name] = np.zeros_like(p.data)
            self.state.second[p.name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float | None = None) -> None:
        st = self.state
        if lr is not None:
            st.lr = lr
        for p in self.params:
            if p.grad is None:
                raise MissingGradient(p.name)
        st.step += 1
        t = st.step
        c1 = 1 - st.beta1 ** t
        c2 = 1 - st.beta2 ** t
        for p in self.params:
            g = p.grad.astype(p.dtype, copy=False)
            m = st.first[p.name]
            v = st.second[p.name]
            m *= st.beta1
            m += (1 - st.beta1) * g
            v *= st.beta2
            v += (1 - st.beta2) * g * g
            if st.weight_decay:
                p.data *= p.dtype.type(1 - st.lr * st.weight_decay)
            update = (m / c1) / (np.sqrt(v / c2) + st.eps)
            p.data -= (st.lr * update).astype(p.dtype, copy=False)


def lr_schedule(epoch: float, total: float = 100, warmup: float = 3, peak: float = 5e-4,
                floor: float = 1e-8) -> float:
    """Linear warmup from 0 to ``peak``, then cosine decay to ``floor`` at ``total``."""
    if epoch < 0 or epoch > total:
        raise ValueError(f"epoch {epoch} outside [0, {total}]")
    if epoch < warmup:
        return peak * epoch / warmup
    progress = (epoch - warmup) / (total - warmup)
    return floor + 0.5 * (peak - floor) * (1 + math.cos(math.pi * progress))
