"""fume/harness/optim.py

Adaptive-moment optimizer with decoupled weight decay, and the cosine
learning-rate schedule.
"""

import math
from typing import Dict, Optional

import numpy as np

from fume.errors import ConfigError
from fume.kernels.layers import ParamStore


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """``base_lr * (1 + cos(pi * step / total_steps)) / 2``; reaches 0 at the last step."""
    if total_steps <= 0:
        raise ConfigError(f"total_steps must be positive, got {total_steps}")
    step = min(max(step, 0), total_steps)
    return base_lr * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


class AdamW:
    """
    AdamW over every trainable tensor of a ParamStore.

    Weight decay shrinks parameters directly (``p -= lr * wd * p``) before
    the moment update, independent of the gradient. Frozen tensors are
    never touched.
    """

    def __init__(self, store: ParamStore, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-2):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.store = store
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.steps = 0
        self.m: Dict[str, np.ndarray] = {name: np.zeros_like(p) for name, p in store.params.items()}
        self.v: Dict[str, np.ndarray] = {name: np.zeros_like(p) for name, p in store.params.items()}

    def zero_grad(self) -> None:
        self.store.zero_grad()

    def step(self, lr: Optional[float] = None) -> None:
        lr = self.lr if lr is None else lr
        self.steps += 1
        bias1 = 1.0 - self.beta1 ** self.steps
        bias2 = 1.0 - self.beta2 ** self.steps
        for name, param in self.store.params.items():
            if name in self.store.frozen:
                continue
            grad = self.store.grads[name]
            m, v = self.m[name], self.v[name]
            param *= 1.0 - lr * self.weight_decay
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            param -= lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
