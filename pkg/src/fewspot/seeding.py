"""Deterministic RNG streams.

Every stochastic site draws from a generator keyed by (master seed,
stream id, indices...), so results never depend on call order, worker
timing, or global RNG state.  Stream ids: 0 = weight init, 1 = training
episodes, 2 = evaluation repetitions, 3 = corpus synthesis.
"""

from __future__ import annotations

import numpy as np

INIT_STREAM = 0
EPISODE_STREAM = 1
EVAL_STREAM = 2
SYNTH_STREAM = 3


def rng_for(master_seed: int, *stream: int) -> np.random.Generator:
    entropy = [int(master_seed)] + [int(s) for s in stream]
    return np.random.default_rng(np.random.SeedSequence(entropy))
