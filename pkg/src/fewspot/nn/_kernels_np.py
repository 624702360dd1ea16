"""Pure-numpy depthwise 3x3 convolution kernels (stride 1, pad 1).

Fallback backend used when the compiled extension is unavailable.  Each
output position is a 9-term sum over the padded input; the loops below
run over the 9 kernel taps instead of over pixels, so every tap is one
vectorized shifted multiply-accumulate.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def depthwise3x3_forward(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """x: (N, C, H, W), w: (C, 3, 3) -> (N, C, H, W)."""
    n, c, h, wd = x.shape
    xp = np.zeros((n, c, h + 2, wd + 2), dtype=x.dtype)
    xp[:, :, 1 : h + 1, 1 : wd + 1] = x
    out = np.zeros_like(x)
    for ki in range(3):
        for kj in range(3):
            out += w[None, :, ki, kj, None, None] * xp[:, :, ki : ki + h, kj : kj + wd]
    return out


def depthwise3x3_backward_input(gy: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Gradient wrt x: correlation of gy with the flipped kernel."""
    n, c, h, wd = gy.shape
    gp = np.zeros((n, c, h + 2, wd + 2), dtype=gy.dtype)
    gp[:, :, 1 : h + 1, 1 : wd + 1] = gy
    gx = np.zeros_like(gy)
    for ki in range(3):
        for kj in range(3):
            gx += w[None, :, 2 - ki, 2 - kj, None, None] * gp[:, :, ki : ki + h, kj : kj + wd]
    return gx


def depthwise3x3_backward_weight(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Gradient wrt w: per-tap correlation of padded x with gy."""
    n, c, h, wd = x.shape
    xp = np.zeros((n, c, h + 2, wd + 2), dtype=x.dtype)
    xp[:, :, 1 : h + 1, 1 : wd + 1] = x
    gw = np.zeros((c, 3, 3), dtype=x.dtype)
    for ki in range(3):
        for kj in range(3):
            gw[:, ki, kj] = np.einsum(
                "nchw,nchw->c", xp[:, :, ki : ki + h, kj : kj + wd], gy
            )
    return gw
