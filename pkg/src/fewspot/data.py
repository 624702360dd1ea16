"""Dataset manifests and corpus preparation.

A manifest is a text file of `relative/path.wav<TAB>class_label` lines
rooted at a corpus directory.  Class lists (one name per line) define
the positive / negative / filler partitions used by evaluation.
"""

from __future__ import annotations

from pathlib import Path

from . import audio
from .errors import DataFormatError, ValidationError

# Target keywords and the filler classes used for the unknown
# prototype, per the speech-commands open-set protocol.
GSC_POSITIVE = ("yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go")
GSC_FILLER = ("backward", "forward", "visual", "follow", "learn")

TRAIN_MANIFEST = "train.tsv"
TEST_MANIFEST = "test.tsv"
ENROLL_MANIFEST = "enroll.tsv"
POSITIVE_LIST = "classes_positive.txt"
NEGATIVE_LIST = "classes_negative.txt"
FILLER_LIST = "classes_filler.txt"

DEFAULT_TEST_EVERY = 3  # every third clip of a class goes to the test split


def read_manifest(path) -> list[tuple[str, str]]:
    entries = []
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(f"manifest not found: {path}")
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise DataFormatError(f"{path}:{lineno}: expected 'path<TAB>label'")
        entries.append((parts[0], parts[1]))
    return entries


def write_manifest(path, entries) -> None:
    with open(path, "w") as fh:
        for rel, label in entries:
            fh.write(f"{rel}\t{label}\n")


def read_class_list(path) -> list[str]:
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(f"class list not found: {path}")
    return [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]


def write_class_list(path, names) -> None:
    with open(path, "w") as fh:
        for name in names:
            fh.write(f"{name}\n")


class Dataset:
    """Clip paths grouped by class, rooted at a corpus directory."""

    def __init__(self, root, entries):
        self.root = Path(root)
        self.by_class: dict[str, list[str]] = {}
        for rel, label in entries:
            self.by_class.setdefault(label, []).append(rel)

    @classmethod
    def from_manifest(cls, root, manifest_path) -> "Dataset":
        return cls(root, read_manifest(manifest_path))

    @property
    def classes(self) -> list[str]:
        return sorted(self.by_class)

    def num_clips(self) -> int:
        return sum(len(v) for v in self.by_class.values())

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def load(self, rel: str):
        return audio.load_clip(self.resolve(rel))

    def features(self, rel: str, extractor):
        """Cached MFCC of one clip (eval path: no augmentation)."""
        return extractor.cached(str(self.resolve(rel)), lambda: self.load(rel))

    def require(self, classes, minimum: int, what: str) -> None:
        for cls in classes:
            have = len(self.by_class.get(cls, ()))
            if have < minimum:
                raise ValidationError(
                    f"{what}: class {cls!r} has {have} clips, needs {minimum}"
                )


def scan_class_dirs(root) -> dict[str, list[str]]:
    """Map each class subdirectory to its sorted relative WAV paths."""
    root = Path(root)
    if not root.is_dir():
        raise DataFormatError(f"data root not found: {root}")
    out: dict[str, list[str]] = {}
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        wavs = sorted(p.name for p in sub.iterdir() if p.suffix.lower() == ".wav")
        if not wavs:
            raise ValidationError(f"class directory {sub} contains no WAV files")
        out[sub.name] = [f"{sub.name}/{w}" for w in wavs]
    if not out:
        raise ValidationError(f"no class subdirectories under {root}")
    return out


def prepare(
    data_root,
    out_dir,
    *,
    positive=GSC_POSITIVE,
    filler=GSC_FILLER,
    test_every: int = DEFAULT_TEST_EVERY,
    validate_audio: bool = True,
) -> dict:
    """Scan a class-per-directory corpus into manifests and class lists.

    Within each class, every test_every-th clip (sorted order) lands in
    the test split; the rest are train.  Returns per-class counts.
    """
    root = Path(data_root)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_class = scan_class_dirs(root)

    if validate_audio:
        for cls, rels in by_class.items():
            for rel in rels:
                try:
                    audio.read_wav(root / rel)
                except DataFormatError:
                    raise
                except Exception as exc:  # wave module raises its own errors
                    raise DataFormatError(f"{root / rel}: {exc}") from exc

    train_entries, test_entries = [], []
    counts = {}
    for cls in sorted(by_class):
        rels = by_class[cls]
        for i, rel in enumerate(rels):
            if i % test_every == test_every - 1:
                test_entries.append((rel, cls))
            else:
                train_entries.append((rel, cls))
        counts[cls] = len(rels)

    positive = [c for c in positive if c in by_class]
    filler = [c for c in filler if c in by_class]
    negative = [c for c in sorted(by_class) if c not in positive and c not in filler]
    write_manifest(out / TRAIN_MANIFEST, train_entries)
    write_manifest(out / TEST_MANIFEST, test_entries)
    write_class_list(out / POSITIVE_LIST, positive)
    write_class_list(out / NEGATIVE_LIST, negative)
    write_class_list(out / FILLER_LIST, filler)
    return {
        "counts": counts,
        "train_clips": len(train_entries),
        "test_clips": len(test_entries),
        "positive": positive,
        "negative": negative,
        "filler": filler,
    }
