"""Open-set K-shot evaluation: gamma tuning, metrics, repetitions.

Conventions: probability matrices are (B, N+1) with column 0 =
unknown; detection score of a sample is its maximum known-class
probability; "accepted" means decide() returned a nonzero class.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .classifiers import decide_batch, enroll, score
from .errors import ValidationError
from .seeding import EVAL_STREAM, rng_for

DEFAULT_FAR_TARGET = 0.05
DEFAULT_REPETITIONS = 10


@dataclass(frozen=True)
class EvalProtocol:
    positive_classes: tuple
    negative_classes: tuple
    filler_classes: tuple
    shots: int = 10
    repetitions: int = DEFAULT_REPETITIONS
    far_target: float = DEFAULT_FAR_TARGET

    def __post_init__(self):
        pos, neg, fil = (
            set(self.positive_classes),
            set(self.negative_classes),
            set(self.filler_classes),
        )
        if pos & neg or pos & fil or neg & fil:
            raise ValidationError("positive/negative/filler classes must be disjoint")
        if not self.positive_classes:
            raise ValidationError("no positive classes")
        if not 0.0 < self.far_target < 1.0:
            raise ValidationError("far_target must lie in (0, 1)")

    @property
    def num_keywords(self) -> int:
        return len(self.positive_classes)


def detection_scores(probs: np.ndarray) -> np.ndarray:
    """Max known-class probability per row."""
    return np.asarray(probs)[:, 1:].max(axis=1)


def tune_gamma(negative_probs: np.ndarray, far_target: float) -> float:
    """Smallest threshold whose false-acceptance rate meets the target.

    Candidates are 0, the detection scores of negatives that would be
    accepted at gamma=0, and 1; the rate is evaluated through the
    decision rule itself, so argmax-unknown negatives never count.
    """
    if not 0.0 < far_target < 1.0:
        raise ValidationError("far_target must lie in (0, 1)")
    probs = np.asarray(negative_probs, dtype=np.float64)
    if probs.ndim != 2 or len(probs) == 0:
        raise ValidationError("need a nonempty (B, N+1) probability matrix")
    accepted0 = decide_batch(probs, 0.0) != 0
    candidates = np.unique(
        np.concatenate([[0.0], detection_scores(probs)[accepted0], [1.0]])
    )
    n = len(probs)
    for gamma in candidates:
        far = np.count_nonzero(decide_batch(probs, gamma)) / n
        if far <= far_target:
            return float(gamma)
    return 1.0


def compute_metrics(positive_probs, positive_labels, negative_probs, gamma):
    """(acc, frr, far) of the thresholded decisions.

    acc: positives decided as their true label; frr: positives decided
    unknown; far: negatives decided as any keyword.
    """
    pos = np.asarray(positive_probs, dtype=np.float64)
    neg = np.asarray(negative_probs, dtype=np.float64)
    labels = np.asarray(positive_labels)
    if len(pos) == 0 or len(neg) == 0:
        raise ValidationError("positive and negative sets must be nonempty")
    pos_dec = decide_batch(pos, gamma)
    neg_dec = decide_batch(neg, gamma)
    acc = float(np.mean(pos_dec == labels))
    frr = float(np.mean(pos_dec == 0))
    far = float(np.mean(neg_dec != 0))
    return acc, frr, far


def auroc(positive_scores, negative_scores) -> float:
    """Rank-sum estimate of P(positive score > negative score), ties half."""
    pos = np.asarray(positive_scores, dtype=np.float64)
    neg = np.asarray(negative_scores, dtype=np.float64)
    if len(pos) == 0 or len(neg) == 0:
        raise ValidationError("both score lists must be nonempty")
    ranks = rankdata(np.concatenate([pos, neg]))
    r_pos = ranks[: len(pos)].sum()
    return float((r_pos - len(pos) * (len(pos) + 1) / 2.0) / (len(pos) * len(neg)))


def confusion_matrix(true_labels, decided_labels, num_keywords: int) -> np.ndarray:
    """(N+1, N+1) counts, rows = true class (0 = unknown), cols = decided."""
    m = np.zeros((num_keywords + 1, num_keywords + 1), dtype=np.int64)
    np.add.at(m, (np.asarray(true_labels), np.asarray(decided_labels)), 1)
    return m


@dataclass
class EvalReport:
    protocol: EvalProtocol
    classifier: str
    acc: list = field(default_factory=list)  # per repetition
    frr: list = field(default_factory=list)
    far: list = field(default_factory=list)
    auroc: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    confusion: np.ndarray | None = None  # summed over repetitions
    wall_seconds: float = 0.0

    def mean_std(self, name):
        v = np.asarray(getattr(self, name), dtype=np.float64)
        return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0

    def summary(self) -> dict:
        out = {}
        for name in ("acc", "frr", "far", "auroc", "gamma"):
            m, s = self.mean_std(name)
            out[f"{name}_mean"] = m
            out[f"{name}_std"] = s
        return out


class _EmbedCache:
    """Embeds each clip path once; eval never augments, so this is safe."""

    def __init__(self, encoder, extractor, dataset, batch_size=256):
        self.encoder = encoder
        self.extractor = extractor
        self.dataset = dataset
        self.batch_size = batch_size
        self.cache: dict = {}

    def get(self, paths) -> np.ndarray:
        missing = [p for p in paths if p not in self.cache]
        for start in range(0, len(missing), self.batch_size):
            chunk = missing[start : start + self.batch_size]
            feats = np.stack([self.dataset.features(p, self.extractor) for p in chunk])
            emb = self.encoder.embed(feats)
            for p, e in zip(chunk, emb):
                self.cache[p] = e
        return np.stack([self.cache[p] for p in paths])


def run_eval(
    encoder,
    extractor,
    classifier_kind: str,
    protocol: EvalProtocol,
    enroll_dataset,
    test_dataset,
    master_seed: int,
    *,
    generator=None,
    normalize: bool = False,
) -> EvalReport:
    """Repeated enrollment + scoring per the open-set protocol.

    enroll_dataset supplies the K shots per keyword and the filler
    clips; test_dataset supplies the scored positives and negatives.
    Repetition r draws from an RNG keyed (master_seed, eval, r), so the
    report is a pure function of its inputs.
    """
    t_start = time.perf_counter()
    n = protocol.num_keywords
    enroll_cache = _EmbedCache(encoder, extractor, enroll_dataset)
    test_cache = _EmbedCache(encoder, extractor, test_dataset)

    for cls in protocol.positive_classes:
        if len(enroll_dataset.by_class.get(cls, ())) < protocol.shots:
            raise ValidationError(
                f"class {cls!r}: fewer than {protocol.shots} enrollment clips"
            )
    if classifier_kind == "open_ncm":
        filler_pool = [
            p for cls in protocol.filler_classes for p in enroll_dataset.by_class[cls]
        ]
        if len(filler_pool) < protocol.shots:
            raise ValidationError("filler pool smaller than the shot count")

    pos_paths, pos_labels = [], []
    for j, cls in enumerate(protocol.positive_classes, start=1):
        for p in test_dataset.by_class.get(cls, ()):
            pos_paths.append(p)
            pos_labels.append(j)
    neg_paths = [
        p for cls in protocol.negative_classes for p in test_dataset.by_class.get(cls, ())
    ]
    if not pos_paths or not neg_paths:
        raise ValidationError("test split lacks positive or negative clips")
    pos_labels = np.asarray(pos_labels)
    pos_emb = test_cache.get(pos_paths)
    neg_emb = test_cache.get(neg_paths)

    report = EvalReport(protocol=protocol, classifier=classifier_kind)
    confusion = np.zeros((n + 1, n + 1), dtype=np.int64)
    for rep in range(protocol.repetitions):
        rng = rng_for(master_seed, EVAL_STREAM, rep)
        shot_groups = []
        for cls in protocol.positive_classes:
            pool = enroll_dataset.by_class[cls]
            picks = rng.choice(len(pool), size=protocol.shots, replace=False)
            shot_groups.append(enroll_cache.get([pool[i] for i in picks]))
        filler_emb = None
        if classifier_kind == "open_ncm":
            picks = rng.choice(len(filler_pool), size=protocol.shots, replace=False)
            filler_emb = enroll_cache.get([filler_pool[i] for i in picks])
        enrollment = enroll(
            shot_groups,
            classifier_kind,
            normalize=normalize,
            filler_embeddings=filler_emb,
            generator=generator,
            keywords=list(protocol.positive_classes),
        )
        pos_probs = score(enrollment, pos_emb)
        neg_probs = score(enrollment, neg_emb)
        gamma = tune_gamma(neg_probs, protocol.far_target)
        acc, frr, far = compute_metrics(pos_probs, pos_labels, neg_probs, gamma)
        report.acc.append(acc)
        report.frr.append(frr)
        report.far.append(far)
        report.gamma.append(gamma)
        report.auroc.append(
            auroc(detection_scores(pos_probs), detection_scores(neg_probs))
        )
        dec = np.concatenate(
            [decide_batch(pos_probs, gamma), decide_batch(neg_probs, gamma)]
        )
        true = np.concatenate([pos_labels, np.zeros(len(neg_probs), dtype=np.int64)])
        confusion += confusion_matrix(true, dec, n)
    report.confusion = confusion
    report.wall_seconds = time.perf_counter() - t_start
    return report


# -- report files ------------------------------------------------------


def write_records(path, report: EvalReport) -> None:
    """Machine-readable lines: metric,repetition,value."""
    lines = []
    for name in ("acc", "frr", "far", "auroc", "gamma"):
        for rep, value in enumerate(getattr(report, name)):
            lines.append(f"{name},{rep},{value:.10g}")
    for key, value in sorted(report.summary().items()):
        lines.append(f"{key},,{value:.10g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_text_report(path, report: EvalReport, *, timestamp=None) -> None:
    """Human-readable summary; the timestamp stays on the header line."""
    if timestamp is None:
        timestamp = time.strftime("%Y-%m-%d %H:%M:%S")
    s = report.summary()
    lines = [f"# open-set evaluation report  ({timestamp})"]
    lines.append(f"classifier: {report.classifier}")
    lines.append(
        f"protocol: {report.protocol.num_keywords}-way {report.protocol.shots}-shot, "
        f"{report.protocol.repetitions} repetitions, "
        f"FAR target {report.protocol.far_target:g}"
    )
    for name in ("acc", "frr", "far", "auroc"):
        lines.append(
            f"{name:6s} {s[f'{name}_mean']:.4f} +/- {s[f'{name}_std']:.4f}"
        )
    lines.append("gamma per repetition: " + " ".join(f"{g:.4f}" for g in report.gamma))
    lines.append("confusion (rows true, cols decided; class 0 = unknown):")
    for row in report.confusion:
        lines.append("  " + " ".join(f"{v:6d}" for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
