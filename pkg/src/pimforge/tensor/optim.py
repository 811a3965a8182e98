"""Adam with bias correction and (by default) decoupled weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Tensor


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    learning_rate: float = 6e-5
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decoupled: bool = True
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def init_for(self, params: Sequence[Tensor]) -> None:
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray] | None, state: AdamState) -> None:
    """Update ``params`` in place. ``grads`` defaults to each param's ``.grad``.

    The step is aborted before any parameter changes if a gradient is not finite.
    """
    params = list(params)
    if grads is None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    grads = list(grads)
    if len(grads) != len(params):
        raise ValueError(f"adam_step: {len(params)} params but {len(grads)} grads")
    if not state.m:
        state.init_for(params)
    if len(state.m) != len(params):
        raise ValueError("adam_step: optimizer state does not match parameter list")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ValueError(f"adam_step: shape mismatch for parameter {i}: {p.shape} vs {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"adam_step: non-finite gradient for parameter {p.name or i}")

    state.t += 1
    b1, b2, lr, wd, eps = state.beta1, state.beta2, state.learning_rate, state.weight_decay, state.epsilon
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not state.decoupled and wd:
            g = g + wd * p.data
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data -= step.astype(p.data.dtype, copy=False)
        if state.decoupled and wd:
            p.data -= (lr * wd) * p.data
