"""Adam optimizer with checkpointable state."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .autograd import Tensor


class Adam:
    def __init__(self, params: list[Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    # -- checkpointing -------------------------------------------------
    def state_tensors(self, prefix: str = "opt.") -> "OrderedDict[str, np.ndarray]":
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        out[f"{prefix}t"] = np.array([self.t], dtype=np.float64)
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}m.{i}"] = m
            out[f"{prefix}v.{i}"] = v
        return out

    def load_state_tensors(self, tensors, prefix: str = "opt.") -> None:
        self.t = int(tensors[f"{prefix}t"][0])
        for i in range(len(self.params)):
            self.m[i][...] = tensors[f"{prefix}m.{i}"]
            self.v[i][...] = tensors[f"{prefix}v.{i}"]
