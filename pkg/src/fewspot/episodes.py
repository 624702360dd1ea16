"""Balanced episode construction for metric-learning training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

PROTO_KINDS = ("pn", "ap", "dproto")
ALL_KINDS = PROTO_KINDS + ("tl",)


@dataclass(frozen=True)
class EpisodeConfig:
    # Prototype-style episodes: num_classes x (support + query) clips.
    num_classes: int = 40
    support: int = 10
    query: int = 30
    # Triplet episodes: tl_classes x tl_samples clips.
    tl_classes: int = 80
    tl_samples: int = 20


@dataclass
class EpisodicBatch:
    kind: str
    classes: list[str]
    # (num_classes, per_class, frames, coeffs); for prototype-style
    # kinds the first `support` clips of each class are the support set.
    features: np.ndarray
    support: int

    @property
    def per_class(self) -> int:
        return self.features.shape[1]


def build_episode(dataset, kind, cfg: EpisodeConfig, rng, extractor, policy=None):
    """Draw a balanced episode; contents depend only on the rng state.

    With an augmentation policy every clip is loaded and perturbed
    fresh; without one, features come from the extractor cache.
    """
    if kind not in ALL_KINDS:
        raise ValidationError(f"unknown episode kind {kind!r}")
    if kind == "tl":
        n_classes, per_class, support = cfg.tl_classes, cfg.tl_samples, 0
    else:
        n_classes, per_class, support = (
            cfg.num_classes,
            cfg.support + cfg.query,
            cfg.support,
        )

    eligible = [c for c in dataset.classes if len(dataset.by_class[c]) >= per_class]
    if len(eligible) < n_classes:
        raise ValidationError(
            f"need {n_classes} classes with >= {per_class} clips, "
            f"have {len(eligible)}"
        )
    chosen = [eligible[i] for i in rng.choice(len(eligible), size=n_classes, replace=False)]

    feats = None
    for ci, cls in enumerate(chosen):
        pool = dataset.by_class[cls]
        picks = rng.choice(len(pool), size=per_class, replace=False)
        for si, pi in enumerate(picks):
            rel = pool[pi]
            if policy is not None:
                fm = extractor(policy.apply(dataset.load(rel), rng))
            else:
                fm = dataset.features(rel, extractor)
            if feats is None:
                feats = np.empty((n_classes, per_class) + fm.shape, dtype=fm.dtype)
            feats[ci, si] = fm
    return EpisodicBatch(kind=kind, classes=chosen, features=feats, support=support)
