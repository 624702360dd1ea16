"""Metric-learning objectives over embedding batches.

All functions take and return autograd tensors, so gradients reach the
encoder through both query and support embeddings (prototypes are
differentiable means, never detached).
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .nn import autograd
from .nn.autograd import Tensor, as_tensor

# Inside every sqrt so the distance gradient stays finite at zero.
DIST_EPS = 1e-12

AP_MARGIN = 0.5
TL_MARGIN = 0.5
AP_INIT_W = 10.0
AP_INIT_B = -5.0
AP_MIN_W = 1e-6


def pairwise_euclidean(a, b) -> Tensor:
    """Euclidean (non-squared) distances between row sets: (n, m)."""
    a, b = as_tensor(a), as_tensor(b)
    asq = (a * a).sum(axis=1, keepdims=True)
    bsq = (b * b).sum(axis=1, keepdims=True)
    cross = a @ autograd.transpose(b, (1, 0))
    dsq = autograd.relu(asq + autograd.transpose(bsq, (1, 0)) - 2.0 * cross)
    return autograd.sqrt(dsq + DIST_EPS)


def l2_normalize_rows(x) -> Tensor:
    x = as_tensor(x)
    norms = autograd.sqrt((x * x).sum(axis=1, keepdims=True) + DIST_EPS)
    return x / norms


def compute_prototypes(embeddings, labels, num_classes: int) -> Tensor:
    """Per-class arithmetic means of support embeddings: (C, D)."""
    embeddings = as_tensor(embeddings)
    labels = np.asarray(labels, dtype=np.intp)
    counts = np.bincount(labels, minlength=num_classes)
    if (counts == 0).any():
        empty = int(np.flatnonzero(counts == 0)[0])
        raise ValidationError(f"class {empty} has no support embeddings")
    averaging = np.zeros((num_classes, len(labels)), dtype=embeddings.data.dtype)
    averaging[labels, np.arange(len(labels))] = 1.0 / counts[labels]
    return Tensor(averaging) @ embeddings


def pn_loss(queries, labels, prototypes) -> Tensor:
    """Cross-entropy over negative-distance logits, averaged over queries."""
    prototypes = as_tensor(prototypes)
    if prototypes.shape[0] < 2:
        raise ValidationError("prototypical loss needs at least 2 classes")
    logits = -pairwise_euclidean(queries, prototypes)
    return autograd.cross_entropy_mean(logits, labels)


def make_ap_scalars(dtype=np.float64) -> tuple[Tensor, Tensor]:
    """Learnable cosine scale and offset with their standard inits."""
    return (
        autograd.parameter(AP_INIT_W, "ap.w", dtype=dtype),
        autograd.parameter(AP_INIT_B, "ap.b", dtype=dtype),
    )


def ap_loss(queries, labels, prototypes, w, b, margin: float = AP_MARGIN) -> Tensor:
    """Angular variant: scaled cosine logits with a true-class margin."""
    queries, prototypes = as_tensor(queries), as_tensor(prototypes)
    for name, t in (("query", queries), ("prototype", prototypes)):
        norms = np.linalg.norm(t.data, axis=1)
        if (norms == 0).any():
            raise ValidationError(f"zero-norm {name} embedding, cosine undefined")
    labels = np.asarray(labels, dtype=np.intp)
    cos = l2_normalize_rows(queries) @ autograd.transpose(l2_normalize_rows(prototypes), (1, 0))
    margins = np.zeros(cos.shape, dtype=cos.data.dtype)
    margins[np.arange(len(labels)), labels] = margin
    logits = w * (cos - margins) + b
    return autograd.cross_entropy_mean(logits, labels)


def sample_triplets(labels, rng: np.random.Generator):
    """One triplet per anchor: random positive (same class), random negative."""
    labels = np.asarray(labels, dtype=np.intp)
    n = len(labels)
    anchors = np.arange(n)
    positives = np.empty(n, dtype=np.intp)
    negatives = np.empty(n, dtype=np.intp)
    for i in range(n):
        same = np.flatnonzero(labels == labels[i])
        same = same[same != i]
        if same.size == 0:
            raise ValidationError(f"class {labels[i]} has a single sample, no positive")
        other = np.flatnonzero(labels != labels[i])
        if other.size == 0:
            raise ValidationError("triplet loss needs at least 2 classes")
        positives[i] = rng.choice(same)
        negatives[i] = rng.choice(other)
    return anchors, positives, negatives


def tl_loss(embeddings, labels, rng: np.random.Generator, margin: float = TL_MARGIN) -> Tensor:
    """Mean hinge over one sampled triplet per anchor."""
    embeddings = as_tensor(embeddings)
    anchors, positives, negatives = sample_triplets(labels, rng)
    return triplet_hinge_mean(embeddings, anchors, positives, negatives, margin)


def triplet_hinge_mean(embeddings, anchors, positives, negatives, margin) -> Tensor:
    embeddings = as_tensor(embeddings)
    ea = embeddings[anchors]
    ep = embeddings[positives]
    en = embeddings[negatives]
    dp = autograd.sqrt(((ea - ep) * (ea - ep)).sum(axis=1) + DIST_EPS)
    dn = autograd.sqrt(((ea - en) * (ea - en)).sum(axis=1) + DIST_EPS)
    return autograd.relu(dp - dn + margin).mean()


def dproto_loss(queries, labels, known_prototypes, dummies) -> Tensor:
    """Cross-entropy over (unknown, known...) logits; label 0 = unknown.

    The unknown logit is the best score over the candidate dummy
    prototypes, i.e. the negated distance to the closest dummy.
    """
    known_prototypes = as_tensor(known_prototypes)
    if known_prototypes.shape[0] < 2:
        raise ValidationError("need at least 2 known classes")
    known_logits = -pairwise_euclidean(queries, known_prototypes)
    dummy_logits = -pairwise_euclidean(queries, dummies)
    unknown_logit = autograd.tmax(dummy_logits, axis=1, keepdims=True)
    logits = autograd.concat([unknown_logit, known_logits], axis=1)
    return autograd.cross_entropy_mean(logits, labels)
