"""RMSProp with momentum on the preconditioned step."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParameterStore


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 5e-5
    momentum: float = 0.9
    epsilon: float = 1e-6
    rho: float = 0.9

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ValueError("learning_rate and epsilon must be positive")
        if not 0 <= self.momentum < 1 or not 0 < self.rho < 1:
            raise ValueError("momentum must be in [0, 1) and rho in (0, 1)")


def rmsprop_step(store: ParameterStore, cfg: OptimizerConfig) -> None:
    """s <- rho s + (1 - rho) g^2;  v <- mu v + lr g / sqrt(s + eps);  w <- w - v."""
    for name in store.trainable():
        p = store.param(name)
        g = p.grad
        p.sq_avg = cfg.rho * p.sq_avg + (1.0 - cfg.rho) * g * g
        p.velocity = cfg.momentum * p.velocity + cfg.learning_rate * g / np.sqrt(p.sq_avg + cfg.epsilon)
        p.value = p.value - p.velocity
