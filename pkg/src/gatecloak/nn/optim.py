"""Adaptive moment-based gradient descent over a network's parameter list."""

from __future__ import annotations

import numpy as np

from .layers import F32


class Adam:
    def __init__(self, step: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if step <= 0:
            raise ValueError(f"step must be positive, got {step}")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError("betas must be in [0, 1)")
        self.step = step
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = None
        self._v = None

    def _ensure_state(self, params):
        if self._m is None:
            self._m = [{k: np.zeros_like(a) for k, a in lp.items()} for lp in params]
            self._v = [{k: np.zeros_like(a) for k, a in lp.items()} for lp in params]

    def update(self, params, grads) -> None:
        """In-place parameter update from one batch's gradients."""
        self._ensure_state(params)
        self.t += 1
        b1, b2 = F32(self.beta1), F32(self.beta2)
        c1 = F32(1.0 / (1.0 - self.beta1 ** self.t))
        c2 = F32(1.0 / (1.0 - self.beta2 ** self.t))
        lr, eps = F32(self.step), F32(self.eps)
        for lp, lg, lm, lv in zip(params, grads, self._m, self._v):
            for k, p in lp.items():
                g = lg[k]
                m, v = lm[k], lv[k]
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * (g * g)
                p -= lr * (m * c1) / (np.sqrt(v * c2) + eps)
