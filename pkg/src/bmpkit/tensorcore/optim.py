"""AdamW with decoupled weight decay and a cosine-annealed learning rate."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


def cosine_lr(step: int, base_lr: float, total_steps: int) -> float:
    """lr(s) = base_lr * 0.5 * (1 + cos(pi * s / total)), clamped at s >= total."""
    if total_steps <= 0:
        return base_lr
    s = min(max(step, 0), total_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * s / total_steps))


@dataclass
class OptimizerState:
    base_lr: float = 1e-4
    weight_decay: float = 0.01
    total_steps: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def lr(self) -> float:
        return cosine_lr(self.step, self.base_lr, self.total_steps)


def adamw_step(params: dict[str, Tensor], state: OptimizerState, grads: dict[str, np.ndarray] | None = None) -> None:
    """Update ``params`` in place.

    Gradients default to each parameter's ``.grad``; a missing gradient counts
    as zero so the decay still applies.
    """
    lr = state.lr
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name] if grads is not None else p.grad
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        if m.shape != p.shape:
            raise ValueError(f"moment shape {m.shape} != parameter {name} shape {p.shape}")
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data *= 1.0 - lr * state.weight_decay
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


class AdamW:
    """Thin stateful wrapper around :func:`adamw_step`."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4, weight_decay: float = 0.01,
                 total_steps: int = 1000, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.state = OptimizerState(base_lr=lr, weight_decay=weight_decay, total_steps=total_steps,
                                    beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self) -> None:
        adamw_step(self.params, self.state)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
