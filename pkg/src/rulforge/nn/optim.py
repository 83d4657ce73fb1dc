"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")


@dataclass
class AdamMoments:
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params) -> "AdamMoments":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, moments: AdamMoments, t: int, config: AdamConfig) -> None:
    """One in-place Adam update of ``params`` and ``moments`` at step ``t >= 1``."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, moments.m, moments.v, strict=True):
        if p.shape != g.shape:
            raise ValueError(f"parameter {p.shape} and gradient {g.shape} differ in shape")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps)


class Adam:
    def __init__(self, params, config: AdamConfig | None = None):
        self.params = list(params)
        self.config = config or AdamConfig()
        self.moments = AdamMoments.zeros_like(self.params)
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        adam_step(self.params, grads, self.moments, self.t, self.config)
