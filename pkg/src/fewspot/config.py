"""INI-style application config: sections frontend/encoder/train/eval/paths.

Every key has a default matching the reference training recipe (40
epochs of 400 episodes, Adam at 1e-3 with a x0.1 step after epoch 20),
so an empty file parses to the full recipe and override files stay
small. dump(parse(f)) round-trips to a semantically equal config.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, fields
from pathlib import Path

from . import data
from .classifiers import KINDS
from .encoder import EncoderConfig
from .episodes import EpisodeConfig
from .errors import ValidationError
from .evaluation import DEFAULT_FAR_TARGET, DEFAULT_REPETITIONS
from .features import FrontendConfig
from .training import LossConfig, TrainSchedule


@dataclass(frozen=True)
class AugmentSettings:
    probability: float = 0.95
    snr_low_db: float = 0.0
    snr_high_db: float = 5.0
    noise_dir: str = ""


@dataclass(frozen=True)
class EvalSettings:
    classifier: str = "open_ncm"
    shots: int = 10
    repetitions: int = DEFAULT_REPETITIONS
    far_target: float = DEFAULT_FAR_TARGET

    def __post_init__(self):
        if self.classifier not in KINDS:
            raise ValidationError(f"unknown classifier {self.classifier!r}")


@dataclass(frozen=True)
class PathSettings:
    data_root: str = "."
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"
    train_manifest: str = data.TRAIN_MANIFEST
    enroll_manifest: str = data.ENROLL_MANIFEST
    test_manifest: str = data.TEST_MANIFEST
    positive_list: str = data.POSITIVE_LIST
    negative_list: str = data.NEGATIVE_LIST
    filler_list: str = data.FILLER_LIST


@dataclass(frozen=True)
class AppConfig:
    frontend: FrontendConfig = FrontendConfig()
    encoder: EncoderConfig = EncoderConfig(dtype="float32")
    loss: LossConfig = LossConfig()
    schedule: TrainSchedule = TrainSchedule()
    episode: EpisodeConfig = EpisodeConfig()
    seed: int = 0
    augment: AugmentSettings = AugmentSettings()
    evaluation: EvalSettings = EvalSettings()
    paths: PathSettings = PathSettings()


# section -> key -> (target dataclass attribute path, converter)
_SCHEMA = {
    "frontend": {
        "window_ms": ("frontend.window_ms", float),
        "hop_fraction": ("frontend.hop_fraction", float),
        "n_mels": ("frontend.n_mels", int),
        "n_mfcc": ("frontend.n_mfcc", int),
        "fmin_hz": ("frontend.fmin_hz", float),
        "fmax_hz": ("frontend.fmax_hz", float),
        "log_floor": ("frontend.log_floor", float),
    },
    "encoder": {
        "size_variant": ("encoder.size_variant", str),
        "head_variant": ("encoder.head_variant", str),
        "dtype": ("encoder.dtype", str),
    },
    "train": {
        "loss": ("loss.kind", str),
        "ap_margin": ("loss.ap_margin", float),
        "tl_margin": ("loss.tl_margin", float),
        "dproto_unknown": ("loss.dproto_unknown", int),
        "epochs": ("schedule.epochs", int),
        "episodes_per_epoch": ("schedule.episodes_per_epoch", int),
        "lr": ("schedule.lr", float),
        "lr_decay_factor": ("schedule.lr_decay_factor", float),
        "lr_decay_after_epoch": ("schedule.lr_decay_after_epoch", int),
        "episode_classes": ("episode.num_classes", int),
        "episode_support": ("episode.support", int),
        "episode_query": ("episode.query", int),
        "tl_classes": ("episode.tl_classes", int),
        "tl_samples": ("episode.tl_samples", int),
        "seed": ("seed", int),
        "augment_probability": ("augment.probability", float),
        "snr_low_db": ("augment.snr_low_db", float),
        "snr_high_db": ("augment.snr_high_db", float),
        "noise_dir": ("augment.noise_dir", str),
    },
    "eval": {
        "classifier": ("evaluation.classifier", str),
        "shots": ("evaluation.shots", int),
        "repetitions": ("evaluation.repetitions", int),
        "far_target": ("evaluation.far_target", float),
    },
    "paths": {f.name: (f"paths.{f.name}", str) for f in fields(PathSettings)},
}


def _collect(cfg: AppConfig) -> dict:
    # section -> key -> current value, in schema order
    out = {}
    for section, keys in _SCHEMA.items():
        out[section] = {}
        for key, (target, _) in keys.items():
            obj = cfg
            *parents, leaf = target.split(".")
            for name in parents:
                obj = getattr(obj, name)
            out[section][key] = getattr(obj, leaf)
    return out


def parse_string(text: str) -> AppConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"malformed config: {exc}") from exc

    overrides: dict[str, dict] = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ValidationError(f"unknown config section [{section}]")
        for key, raw in cp[section].items():
            spec = _SCHEMA[section].get(key)
            if spec is None:
                raise ValidationError(f"unknown key {key!r} in section [{section}]")
            target, conv = spec
            try:
                value = conv(raw)
            except ValueError as exc:
                raise ValidationError(
                    f"bad value for {section}.{key}: {raw!r}"
                ) from exc
            head, _, rest = target.partition(".")
            overrides.setdefault(head, {})[rest or key] = value

    # CLI training defaults to single precision; tests that need exact
    # gradients construct float64 encoders directly.
    enc_kw = {"dtype": "float32"}
    enc_kw.update(overrides.get("encoder", {}))
    return AppConfig(
        frontend=FrontendConfig(**overrides.get("frontend", {})),
        encoder=EncoderConfig(**enc_kw),
        loss=LossConfig(**overrides.get("loss", {})),
        schedule=TrainSchedule(**overrides.get("schedule", {})),
        episode=EpisodeConfig(**overrides.get("episode", {})),
        seed=overrides.get("seed", {}).get("seed", 0),
        augment=AugmentSettings(**overrides.get("augment", {})),
        evaluation=EvalSettings(**overrides.get("evaluation", {})),
        paths=PathSettings(**overrides.get("paths", {})),
    )


def parse(path) -> AppConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    return parse_string(text)


def dump(cfg: AppConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    for section, values in _collect(cfg).items():
        cp[section] = {k: str(v) for k, v in values.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def write(cfg: AppConfig, path) -> None:
    Path(path).write_text(dump(cfg))
