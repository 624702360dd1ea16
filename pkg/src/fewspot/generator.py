"""Set-function generator of dummy "unknown" prototypes.

Maps any set of known class prototypes to NUM_DUMMIES candidate
prototypes for the unknown category.  Each input prototype is
concatenated with the set mean, pushed through a shared two-layer
perceptron, and the candidates are attention-weighted sums of the
transformed set, so the output is invariant to input ordering.
"""

from __future__ import annotations

import numpy as np

from .nn import autograd
from .nn.autograd import Tensor, as_tensor
from .nn.layers import Module, _fan_in_uniform

NUM_DUMMIES = 3


class DummyPrototypeGenerator(Module):
    def __init__(self, embedding_dim: int, rng: np.random.Generator, dtype=np.float64):
        self.embedding_dim = embedding_dim
        d = embedding_dim
        self.w1 = autograd.parameter(
            _fan_in_uniform(rng, (2 * d, d), 2 * d, dtype), "gen.w1", dtype=dtype
        )
        self.b1 = autograd.parameter(np.zeros(d), "gen.b1", dtype=dtype)
        self.w2 = autograd.parameter(
            _fan_in_uniform(rng, (d, d), d, dtype), "gen.w2", dtype=dtype
        )
        self.b2 = autograd.parameter(np.zeros(d), "gen.b2", dtype=dtype)
        self.attn = autograd.parameter(
            _fan_in_uniform(rng, (NUM_DUMMIES, d), d, dtype), "gen.attn", dtype=dtype
        )

    def __call__(self, prototypes) -> Tensor:
        """(N, D) known prototypes -> (NUM_DUMMIES, D) candidates."""
        c = as_tensor(prototypes)
        n, d = c.shape
        mean = autograd.broadcast_to(c.mean(axis=0, keepdims=True), (n, d))
        h = autograd.relu(autograd.concat([c, mean], axis=1) @ self.w1 + self.b1)
        values = h @ self.w2 + self.b2
        scores = (values @ autograd.transpose(self.attn, (1, 0))) / np.sqrt(d)
        weights = autograd.exp(scores - autograd.logsumexp(scores, axis=0, keepdims=True))
        return autograd.transpose(weights, (1, 0)) @ values
