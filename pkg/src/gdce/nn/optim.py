"""Bias-corrected Adam over Param objects.

Moment buffers live in the parameter dtype (float32 in normal training) so a
checkpointed optimizer state round-trips bit-exactly and an interrupted run
resumes on the same trajectory as an uninterrupted one.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericalError
from .layers import Param


class Adam:
    def __init__(self, params: list[Param], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not params:
            raise ValueError("no parameters to optimize")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                raise ValueError(f"parameter {p.name} has no gradient")
            g = np.asarray(p.grad, dtype=p.data.dtype)
            if not np.isfinite(g).all():
                raise NumericalError(f"non-finite gradient for {p.name}")
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment buffers keyed for checkpointing; step count kept separately."""
        out = {}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"adam.m.{i}"] = m
            out[f"adam.v.{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        for i, p in enumerate(self.params):
            m, v = arrays[f"adam.m.{i}"], arrays[f"adam.v.{i}"]
            if m.shape != p.data.shape or v.shape != p.data.shape:
                raise ValueError(f"adam moment shape mismatch at index {i}")
            self.m[i] = m.astype(p.data.dtype)
            self.v[i] = v.astype(p.data.dtype)
        self.t = int(t)
