"""Weibull tail models for extreme-value calibration of distances.

Maximum-likelihood fit via the profile likelihood: for samples x > 0,
the shape k solves

    1/k = sum(x^k ln x) / sum(x^k) - mean(ln x)

whose right-hand side is monotone in k, so a bracketed bisection is
safe; the scale then follows as lambda = mean(x^k)^(1/k).  Samples are
shifted by tau just below their minimum before fitting, so the model
assigns probability 0 at or below the smallest observed distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ValidationError

SHIFT_MARGIN = 1e-6
MAX_ITER = 200
TOL = 1e-10


@dataclass(frozen=True)
class WeibullTailModel:
    shape: float
    scale: float
    shift: float
    degenerate: bool = False
    step_at: float = 0.0

    def cdf(self, d):
        """P(distance <= d) under the fitted tail model, in [0, 1]."""
        d = np.asarray(d, dtype=np.float64)
        if self.degenerate:
            return (d > self.step_at).astype(np.float64)
        z = np.maximum(d - self.shift, 0.0)
        return -np.expm1(-((z / self.scale) ** self.shape))

    def to_row(self) -> np.ndarray:
        return np.array(
            [self.shape, self.scale, self.shift, float(self.degenerate), self.step_at]
        )

    @classmethod
    def from_row(cls, row) -> "WeibullTailModel":
        return cls(float(row[0]), float(row[1]), float(row[2]), bool(row[3]), float(row[4]))


def _profile_gap(k: float, x: np.ndarray, logx: np.ndarray, mean_logx: float) -> float:
    xk = x**k
    return (xk * logx).sum() / xk.sum() - mean_logx - 1.0 / k


def fit_weibull_tail(distances) -> WeibullTailModel:
    """Fit a shifted Weibull to a list of (typically tail) distances."""
    d = np.asarray(distances, dtype=np.float64)
    if d.size < 2:
        raise ValidationError("need at least 2 distances for a tail fit")
    if (d < 0).any() or not np.isfinite(d).all():
        raise ValidationError("distances must be finite and non-negative")
    dmin = d.min()
    if np.all(d == d[0]) or dmin == d.max():
        return WeibullTailModel(0.0, 0.0, 0.0, degenerate=True, step_at=float(d[0]))
    tau = dmin * (1.0 - SHIFT_MARGIN)
    x = d - tau
    logx = np.log(x)
    mean_logx = logx.mean()
    spread = logx.std()
    if spread == 0.0:
        return WeibullTailModel(0.0, 0.0, 0.0, degenerate=True, step_at=float(dmin))

    # Gumbel moment-matching start, then expand to a sign-changing bracket.
    k0 = min(max(1.2825 / spread, 1e-3), 1e3)
    lo = hi = k0
    glo = _profile_gap(lo, x, logx, mean_logx)
    for _ in range(80):
        if glo < 0:
            break
        lo /= 2.0
        glo = _profile_gap(lo, x, logx, mean_logx)
    ghi = _profile_gap(hi, x, logx, mean_logx)
    for _ in range(80):
        if ghi > 0:
            break
        hi *= 2.0
        ghi = _profile_gap(hi, x, logx, mean_logx)
    if not (glo < 0 < ghi):
        raise NumericError("weibull shape bracketing failed")

    for _ in range(MAX_ITER):
        mid = 0.5 * (lo + hi)
        gmid = _profile_gap(mid, x, logx, mean_logx)
        if gmid < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < TOL * max(1.0, mid):
            break
    k = 0.5 * (lo + hi)
    lam = float(np.mean(x**k) ** (1.0 / k))
    return WeibullTailModel(float(k), lam, float(tau))
