"""Adaptive-moment gradient descent for the engine's parameter tensors."""

from __future__ import annotations

import numpy as np

from .autodiff import ShapeError


class Adam:
    """Adaptive-moment optimizer with bias correction.

    Holds per-parameter first/second moment arrays and a step counter.
    `lr` may be reassigned between steps (schedules do exactly that).
    """

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads=None):
        """Apply one update. Gradients come from `grads` (a map produced by
        backward()) or from each parameter's `.grad`; missing ones count as zero."""
        self.step_count += 1
        t = self.step_count
        for i, p in enumerate(self.params):
            g = grads.get(p) if grads is not None else p.grad
            if g is None:
                g = np.zeros_like(p.data)
            g = np.asarray(g, dtype=np.float64)
            if g.shape != p.data.shape:
                raise ShapeError(f"adam: gradient shape {g.shape} does not match parameter {p.data.shape}")
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * g * g
            m_hat = self._m[i] / (1.0 - self.beta1 ** t)
            v_hat = self._v[i] / (1.0 - self.beta2 ** t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
