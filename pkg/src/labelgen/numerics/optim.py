"""AdamW with decoupled weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class MomentState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


def adamw_step(param: np.ndarray, grad: np.ndarray, state: MomentState, lr: float, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.01,
               step_index: int | None = None) -> np.ndarray:
    """Update ``param`` in place and return it.

    The decay multiplies the parameter directly (it never enters the moment
    estimates); the moments are bias-corrected with ``step_index``.
    """
    step_index = state.step + 1 if step_index is None else step_index
    if step_index < 1:
        raise ValueError("step_index must be >= 1")
    state.step = step_index
    if weight_decay:
        param *= 1.0 - lr * weight_decay
    state.m *= beta1
    state.m += (1.0 - beta1) * grad
    state.v *= beta2
    state.v += (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** step_index)
    v_hat = state.v / (1.0 - beta2 ** step_index)
    param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype, copy=False)
    return param


@dataclass
class AdamW:
    params: dict[str, Tensor]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    state: dict[str, MomentState] = field(default_factory=dict)
    clip_norm: float | None = None

    def __post_init__(self):
        for name, p in self.params.items():
            self.state.setdefault(name, MomentState(np.zeros_like(p.data), np.zeros_like(p.data)))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float) -> None:
        scale = 1.0
        if self.clip_norm is not None:
            total = np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in self.params.values()))
            if total > self.clip_norm:
                scale = self.clip_norm / (total + 1e-12)
        for name, p in self.params.items():
            g = p.grad if scale == 1.0 else p.grad * scale
            adamw_step(p.data, g, self.state[name], lr, self.beta1, self.beta2, self.eps, self.weight_decay)
