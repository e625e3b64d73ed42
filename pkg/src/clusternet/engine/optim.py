"""SGD with Nesterov momentum, Adam, and a plateau learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    kind: str = "sgd_nesterov"  # or "adam"
    lr: float = 0.01
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    slots: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd_nesterov", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")


def step(params: dict, grads: dict, state: OptimizerState) -> None:
    """Update ``params`` in place from ``grads``; slot tensors live in ``state.slots``.

    Nesterov (Sutskever form): ``v <- mu*v - lr*g``, ``w <- w + mu*v - lr*g``.
    Adam uses bias-corrected first/second moments.
    """
    state.t += 1
    for name, w in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != w.shape:
            raise ValueError(f"{name}: grad shape {g.shape} != param shape {w.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * w
        if state.kind == "sgd_nesterov":
            v = state.slots.setdefault(name, np.zeros_like(w))
            v *= state.momentum
            v -= state.lr * g
            w += state.momentum * v - state.lr * g
        else:
            m, s = state.slots.setdefault(name, (np.zeros_like(w), np.zeros_like(w)))
            m *= state.beta1
            m += (1 - state.beta1) * g
            s *= state.beta2
            s += (1 - state.beta2) * (g * g)
            mhat = m / (1 - state.beta1**state.t)
            shat = s / (1 - state.beta2**state.t)
            w -= (state.lr * mhat / (np.sqrt(shat) + state.eps)).astype(w.dtype, copy=False)


class PlateauSchedule:
    """Multiply the learning rate by ``factor`` after ``patience`` evaluations
    without a relative improvement of at least ``threshold``."""

    def __init__(self, factor=0.1, patience=5, threshold=1e-4, min_lr=0.0):
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.min_lr = min_lr
        self.best = np.inf
        self.bad = 0

    def update(self, val_loss: float, state: OptimizerState) -> bool:
        """Record one validation loss; returns True when the lr was dropped."""
        if val_loss < self.best * (1 - self.threshold):
            self.best = val_loss
            self.bad = 0
            return False
        self.bad += 1
        if self.bad >= self.patience:
            state.lr = max(state.lr * self.factor, self.min_lr)
            self.bad = 0
            return True
        return False
