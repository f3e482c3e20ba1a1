"""Adam optimizer with decoupled additive weight decay."""

from __future__ import annotations

from typing import Dict

import numpy as np

from .autodiff import ShapeMismatchError, Tensor


class AdamState:
    """Per-parameter first/second moment estimates plus a step counter.

    The update is the standard bias-corrected Adam step followed by a
    decoupled decay term ``lr * weight_decay * param``.
    """

    def __init__(
        self,
        params: Dict[str, Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = {name: np.zeros_like(t.value) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.value) for name, t in params.items()}

    def step(self, params: Dict[str, Tensor]) -> None:
        """Apply one update in place; parameters with no gradient are
        treated as having a zero gradient."""
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for name in sorted(params):
            t = params[name]
            g = t.grad if t.grad is not None else np.zeros_like(t.value)
            if g.shape != t.value.shape:
                raise ShapeMismatchError(
                    f"gradient shape {g.shape} != parameter shape {t.value.shape}"
                )
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * t.value
            t.value -= self.lr * update
