"""Plain SGD and Adam over Tensor parameters."""
from __future__ import annotations

import numpy as np

from .layers import Tensor


def zero_grad(tensors: list[Tensor]) -> None:
    for t in tensors:
        t.grad[...] = 0


class SGD:
    def __init__(self, tensors: list[Tensor], lr: float, momentum: float = 0.0):
        self.tensors = tensors
        self.lr = lr
        self.momentum = momentum
        self._velocity = [np.zeros_like(t.data) for t in tensors] if momentum else None

    def step(self) -> None:
        for i, t in enumerate(self.tensors):
            if self._velocity is not None:
                self._velocity[i] = self.momentum * self._velocity[i] + t.grad
                update = self._velocity[i]
            else:
                update = t.grad
            t.data -= (self.lr * update).astype(t.data.dtype)


class Adam:
    def __init__(self, tensors: list[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.tensors = tensors
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(t.data) for t in tensors]
        self._v = [np.zeros_like(t.data) for t in tensors]

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for i, t in enumerate(self.tensors):
            g = t.grad
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * g * g
            m_hat = self._m[i] / b1c
            v_hat = self._v[i] / b2c
            t.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(t.data.dtype)
