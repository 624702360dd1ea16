"""Few-shot enrollment and open-set scoring.

Class index 0 is always "unknown"; known keywords are 1..N.  Three
scoring back-ends share the enrollment structure:

    open_ncm: softmax over negated distances to (c_0, c_1..c_N) where
        c_0 is the mean of filler embeddings from non-target classes;
    openmax:  per-class Weibull tails reweight the distances; known
        logit -w_i(d_i) * d_i, unknown logit -sum_i (1-w_i(d_i)) * d_i;
    dproto:   like open_ncm but c_0 is the closest of the generated
        dummy prototypes per test point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .container import read_container, write_container
from .errors import DataFormatError, ValidationError
from .weibull import WeibullTailModel, fit_weibull_tail

KINDS = ("open_ncm", "openmax", "dproto")
OPENMAX_TAIL_SIZE = 5
L2_EPS = 1e-12


@dataclass
class Enrollment:
    kind: str
    prototypes: np.ndarray  # (N, D), classes 1..N in row order
    normalize: bool = False
    keywords: list[str] = field(default_factory=list)
    unknown_prototype: np.ndarray | None = None  # open_ncm
    dummy_prototypes: np.ndarray | None = None  # dproto, (3, D)
    weibull: list[WeibullTailModel] | None = None  # openmax, per class
    low_shot_warning: bool = False  # openmax fit on fewer than 5 distances

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def embedding_dim(self) -> int:
        return self.prototypes.shape[1]


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt((x * x).sum(axis=-1, keepdims=True) + L2_EPS)


def _distances_to_rows(e: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """(B, D) x (M, D) -> (B, M) Euclidean distances."""
    diff = e[:, None, :] - rows[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def enroll(
    embeddings_by_class,
    kind: str,
    *,
    normalize: bool = False,
    filler_embeddings=None,
    generator=None,
    keywords=None,
) -> Enrollment:
    """Build classifier state from per-keyword embedding groups.

    embeddings_by_class: sequence of (K_i, D) arrays, one per keyword,
    in class order 1..N.
    """
    if kind not in KINDS:
        raise ValidationError(f"unknown classifier kind {kind!r}")
    groups = [np.asarray(g, dtype=np.float64) for g in embeddings_by_class]
    if not groups:
        raise ValidationError("no enrollment classes")
    for i, g in enumerate(groups):
        if g.ndim != 2 or g.shape[0] < 1:
            raise ValidationError(f"class {i + 1}: need a (K, D) embedding block")
        if g.shape[1] != groups[0].shape[1]:
            raise ValidationError("inconsistent embedding dimensions across classes")
    prototypes = np.stack([g.mean(axis=0) for g in groups])
    enr = Enrollment(
        kind=kind,
        prototypes=prototypes,
        normalize=normalize,
        keywords=list(keywords) if keywords else [],
    )

    if kind == "open_ncm":
        if filler_embeddings is None:
            raise ValidationError("open_ncm needs filler embeddings for the unknown prototype")
        filler = np.asarray(filler_embeddings, dtype=np.float64)
        if filler.ndim != 2 or filler.shape[1] != prototypes.shape[1]:
            raise ValidationError("filler embeddings must be (K, D)")
        enr.unknown_prototype = filler.mean(axis=0)
    elif kind == "openmax":
        models = []
        for g, proto in zip(groups, prototypes):
            if normalize:
                d = _distances_to_rows(_normalize_rows(g), _normalize_rows(proto[None]))[:, 0]
            else:
                d = _distances_to_rows(g, proto[None])[:, 0]
            tail = np.sort(d)[-OPENMAX_TAIL_SIZE:]
            if len(d) < OPENMAX_TAIL_SIZE:
                enr.low_shot_warning = True
            if len(tail) < 2 or np.all(tail == tail[0]):
                models.append(
                    WeibullTailModel(0.0, 0.0, 0.0, degenerate=True, step_at=float(tail[-1]))
                )
            else:
                models.append(fit_weibull_tail(tail))
        enr.weibull = models
    elif kind == "dproto":
        if generator is None:
            raise ValidationError("dproto needs the trained dummy-prototype generator")
        enr.dummy_prototypes = np.asarray(generator(prototypes).data, dtype=np.float64)
    return enr


def score(enrollment: Enrollment, embedding) -> np.ndarray:
    """Probabilities over (unknown, class 1..N); batch in, batch out."""
    e = np.asarray(embedding, dtype=np.float64)
    single = e.ndim == 1
    if single:
        e = e[None, :]
    if e.shape[1] != enrollment.embedding_dim:
        raise ValidationError(
            f"embedding dim {e.shape[1]} != enrollment dim {enrollment.embedding_dim}"
        )
    protos = enrollment.prototypes
    if enrollment.normalize:
        e = _normalize_rows(e)
        protos = _normalize_rows(protos)
    d = _distances_to_rows(e, protos)  # (B, N)

    if enrollment.kind == "open_ncm":
        c0 = enrollment.unknown_prototype
        if enrollment.normalize:
            c0 = _normalize_rows(c0[None])[0]
        d0 = _distances_to_rows(e, c0[None])[:, 0]
        logits = np.concatenate([-d0[:, None], -d], axis=1)
    elif enrollment.kind == "dproto":
        dummies = enrollment.dummy_prototypes
        if enrollment.normalize:
            dummies = _normalize_rows(dummies)
        d0 = _distances_to_rows(e, dummies).min(axis=1)
        logits = np.concatenate([-d0[:, None], -d], axis=1)
    else:  # openmax
        w = np.stack(
            [model.cdf(d[:, i]) for i, model in enumerate(enrollment.weibull)], axis=1
        )
        known = -w * d
        s0 = -((1.0 - w) * d).sum(axis=1)
        logits = np.concatenate([s0[:, None], known], axis=1)

    logits = logits - logits.max(axis=1, keepdims=True)
    z = np.exp(logits)
    p = z / z.sum(axis=1, keepdims=True)
    return p[0] if single else p


def decide(p, gamma: float) -> int:
    """Open-set rule: top class wins only if its probability clears gamma."""
    p = np.asarray(p, dtype=np.float64)
    idx = int(np.argmax(p))  # ties resolve to the lowest index
    if idx == 0:
        return 0
    return idx if p[idx] >= gamma else 0


def decide_batch(p: np.ndarray, gamma: float) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    idx = p.argmax(axis=1)
    accept = p[np.arange(len(p)), idx] >= gamma
    return np.where((idx != 0) & accept, idx, 0)


# -- persistence -------------------------------------------------------


def save_enrollment(path, enrollment: Enrollment, extra_config=None, extra_tensors=None):
    config = {
        "kind": "enrollment",
        "classifier": enrollment.kind,
        "normalize": enrollment.normalize,
        "keywords": enrollment.keywords,
        "low_shot_warning": enrollment.low_shot_warning,
    }
    if extra_config:
        config.update(extra_config)
    tensors = {"prototypes": enrollment.prototypes}
    if enrollment.unknown_prototype is not None:
        tensors["unknown_prototype"] = enrollment.unknown_prototype
    if enrollment.dummy_prototypes is not None:
        tensors["dummy_prototypes"] = enrollment.dummy_prototypes
    if enrollment.weibull is not None:
        tensors["weibull"] = np.stack([m.to_row() for m in enrollment.weibull])
    if extra_tensors:
        tensors.update(extra_tensors)
    write_container(path, config, tensors)


def load_enrollment(path):
    """Returns (Enrollment, config, tensors)."""
    config, tensors = read_container(path)
    if config.get("kind") != "enrollment":
        raise DataFormatError(f"{path}: not an enrollment file")
    enr = Enrollment(
        kind=config["classifier"],
        prototypes=np.asarray(tensors["prototypes"]),
        normalize=bool(config.get("normalize", False)),
        keywords=list(config.get("keywords", [])),
        low_shot_warning=bool(config.get("low_shot_warning", False)),
    )
    if "unknown_prototype" in tensors:
        enr.unknown_prototype = np.asarray(tensors["unknown_prototype"])
    if "dummy_prototypes" in tensors:
        enr.dummy_prototypes = np.asarray(tensors["dummy_prototypes"])
    if "weibull" in tensors:
        enr.weibull = [WeibullTailModel.from_row(r) for r in np.asarray(tensors["weibull"])]
    return enr, config, tensors
