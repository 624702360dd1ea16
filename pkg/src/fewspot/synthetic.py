"""Synthetic tone-plus-noise keyword corpus for end-to-end checks.

Each class is a harmonic timbre: a fundamental on a log-spaced grid
plus two partials with class-specific ratios and weights, under a
class-specific amplitude modulation.  Clips vary phase, detune, level,
and added white noise, so clips of one class share structure without
being identical.  Every third class is held out as an enrollment
target; the remaining classes split into training/negative and filler
roles.  All draws are keyed by (seed, class, clip), so the corpus is a
pure function of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import audio, data
from .seeding import SYNTH_STREAM, rng_for

F0_MIN_HZ = 150.0
F0_MAX_HZ = 3800.0
FADE_SAMPLES = 160  # 10 ms raised-cosine edges


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 30
    clips_per_class: int = 60
    target_every: int = 3  # class indices with i % target_every == target_every-1
    num_filler: int = 5
    test_every: int = 3  # clip split, matching data.prepare's rule
    snr_db_min: float = 8.0
    snr_db_max: float = 20.0
    amp_min: float = 0.3
    amp_max: float = 1.0


def class_name(index: int) -> str:
    return f"kw{index:02d}"


def _class_voice(spec: SyntheticSpec, seed: int, index: int) -> dict:
    rng = rng_for(seed, SYNTH_STREAM, index)
    span = F0_MAX_HZ / F0_MIN_HZ
    f0 = F0_MIN_HZ * span ** (index / max(spec.num_classes - 1, 1))
    return {
        "f0": f0,
        "ratios": np.array([1.0, rng.uniform(1.8, 2.2), rng.uniform(2.8, 3.4)]),
        "amps": np.array([1.0, rng.uniform(0.3, 0.8), rng.uniform(0.2, 0.6)]),
        "am_rate": rng.uniform(2.0, 8.0),
        "am_depth": rng.uniform(0.2, 0.5),
    }


def synthesize_clip(spec: SyntheticSpec, seed: int, class_index: int, clip_index: int):
    """One second of the class timbre with per-clip variation."""
    voice = _class_voice(spec, seed, class_index)
    rng = rng_for(seed, SYNTH_STREAM, class_index, clip_index)
    n = audio.CLIP_SAMPLES
    t = np.arange(n) / audio.SAMPLE_RATE

    detune = 1.0 + rng.uniform(-0.01, 0.01)
    sig = np.zeros(n)
    nyquist = audio.SAMPLE_RATE / 2.0
    for ratio, amp in zip(voice["ratios"], voice["amps"]):
        f = voice["f0"] * ratio * detune
        if f >= nyquist * 0.95:
            continue
        jitter = rng.uniform(0.8, 1.25)
        sig += amp * jitter * np.sin(2.0 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    am = 1.0 + voice["am_depth"] * np.sin(
        2.0 * np.pi * voice["am_rate"] * t + rng.uniform(0, 2 * np.pi)
    )
    sig *= am
    fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(FADE_SAMPLES) / FADE_SAMPLES)
    sig[:FADE_SAMPLES] *= fade
    sig[-FADE_SAMPLES:] *= fade[::-1]

    sig *= rng.uniform(spec.amp_min, spec.amp_max) / np.max(np.abs(sig))
    noise = rng.normal(size=n)
    mixed = audio.mix_noise(sig, noise, rng.uniform(spec.snr_db_min, spec.snr_db_max))
    peak = np.max(np.abs(mixed))
    if peak > 0.95:
        mixed *= 0.95 / peak
    return mixed


def class_roles(spec: SyntheticSpec):
    """(positive, negative, filler) class-name lists."""
    targets, sources = [], []
    for i in range(spec.num_classes):
        (targets if i % spec.target_every == spec.target_every - 1 else sources).append(
            class_name(i)
        )
    negatives = sources[: len(sources) - spec.num_filler]
    fillers = sources[len(sources) - spec.num_filler :]
    return targets, negatives, fillers


def generate_corpus(out_dir, seed: int = 0, spec: SyntheticSpec = SyntheticSpec()) -> dict:
    """Write WAVs, manifests, and class lists; returns a summary dict.

    Manifest roles: train.tsv holds the source classes' train split
    (the encoder's world); enroll.tsv holds target and filler train
    splits (the enrollment pools); test.tsv holds target and negative
    test splits (the scored clips).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    positives, negatives, fillers = class_roles(spec)
    sources = negatives + fillers

    train_entries, enroll_entries, test_entries = [], [], []
    for ci in range(spec.num_classes):
        cls = class_name(ci)
        (out / cls).mkdir(exist_ok=True)
        for k in range(spec.clips_per_class):
            rel = f"{cls}/clip_{k:03d}.wav"
            audio.write_wav(out / rel, synthesize_clip(spec, seed, ci, k))
            is_test = k % spec.test_every == spec.test_every - 1
            entry = (rel, cls)
            if is_test:
                if cls in positives or cls in negatives:
                    test_entries.append(entry)
            elif cls in positives or cls in fillers:
                enroll_entries.append(entry)
            if not is_test and cls in sources:
                train_entries.append(entry)

    data.write_manifest(out / data.TRAIN_MANIFEST, train_entries)
    data.write_manifest(out / data.ENROLL_MANIFEST, enroll_entries)
    data.write_manifest(out / data.TEST_MANIFEST, test_entries)
    data.write_class_list(out / data.POSITIVE_LIST, positives)
    data.write_class_list(out / data.NEGATIVE_LIST, negatives)
    data.write_class_list(out / data.FILLER_LIST, fillers)
    return {
        "root": str(out),
        "positive": positives,
        "negative": negatives,
        "filler": fillers,
        "train_clips": len(train_entries),
        "enroll_clips": len(enroll_entries),
        "test_clips": len(test_entries),
    }
