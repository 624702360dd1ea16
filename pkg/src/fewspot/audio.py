"""Waveform loading, padding/cropping, and additive-noise augmentation.

All audio is 16 kHz mono 16-bit PCM WAV. Clips are normalized to
[-1, 1] floats; shorter clips are zero-padded symmetrically and longer
ones center-cropped to the target length. Noise is mixed at a target
SNR computed from mean-squared amplitudes.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, ValidationError

SAMPLE_RATE = 16000
CLIP_SECONDS = 1.0
CLIP_SAMPLES = int(SAMPLE_RATE * CLIP_SECONDS)

_INT16_SCALE = 32768.0


def pad_or_crop(samples: np.ndarray, target_len: int) -> np.ndarray:
    """Symmetric zero-pad or center-crop a 1-D signal to target_len."""
    n = len(samples)
    if n == target_len:
        return samples
    if n < target_len:
        deficit = target_len - n
        left = deficit // 2
        out = np.zeros(target_len, dtype=samples.dtype)
        out[left : left + n] = samples
        return out
    start = (n - target_len) // 2
    return samples[start : start + target_len]


def read_wav(path, expected_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Read a mono 16-bit PCM WAV file into float64 samples in [-1, 1).

    Rejects (no resampling, no downmixing): wrong sample rate,
    multichannel audio, non-16-bit samples.
    """
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            framerate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except (wave.Error, EOFError, OSError) as exc:
        raise DataFormatError(f"{path}: unreadable WAV file: {exc}") from exc
    if n_channels != 1:
        raise DataFormatError(f"{path}: expected mono audio, got {n_channels} channels")
    if sampwidth != 2:
        raise DataFormatError(f"{path}: expected 16-bit PCM, got {8 * sampwidth}-bit")
    if framerate != expected_rate:
        raise DataFormatError(
            f"{path}: expected {expected_rate} Hz, got {framerate} Hz (resampling unsupported)"
        )
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / _INT16_SCALE
    return samples


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """Write float samples in [-1, 1] as mono 16-bit PCM WAV."""
    scaled = np.clip(samples, -1.0, 1.0 - 1.0 / _INT16_SCALE)
    ints = np.round(scaled * _INT16_SCALE).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(ints.tobytes())


def load_clip(path, target_len: int = CLIP_SAMPLES, expected_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Load a clip and force it to exactly target_len samples."""
    return pad_or_crop(read_wav(path, expected_rate), target_len)


def signal_power(samples: np.ndarray) -> float:
    """Mean squared amplitude."""
    return float(np.mean(np.square(samples)))


def mix_noise(signal: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    """Add noise to signal at the requested SNR (dB).

    The noise is scaled by g = sqrt(P_signal / (P_noise * 10^(snr/10)))
    so the measured SNR of the output equals snr_db exactly.
    """
    if len(signal) != len(noise):
        raise ValidationError(
            f"signal/noise length mismatch: {len(signal)} vs {len(noise)}"
        )
    p_signal = signal_power(signal)
    p_noise = signal_power(noise)
    if p_signal <= 0.0:
        raise ValidationError("cannot mix noise into an all-zero signal")
    if p_noise <= 0.0:
        raise ValidationError("noise segment is silent")
    gain = np.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
    return signal + gain * noise


@dataclass
class AugmentationPolicy:
    """Additive-noise augmentation applied with a fixed probability.

    Each application picks a random noise waveform from the pool, a
    random offset into it, and a random SNR uniform in
    [snr_low_db, snr_high_db]. Silent noise segments are resampled up
    to 5 times before skipping augmentation for that clip.
    """

    apply_probability: float = 0.95
    snr_low_db: float = 0.0
    snr_high_db: float = 5.0
    noise_pool: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ValidationError(
                f"apply_probability must be in [0, 1], got {self.apply_probability}"
            )
        if self.snr_low_db > self.snr_high_db:
            raise ValidationError(
                f"snr_low_db {self.snr_low_db} exceeds snr_high_db {self.snr_high_db}"
            )

    @property
    def enabled(self) -> bool:
        return self.apply_probability > 0.0 and len(self.noise_pool) > 0

    def apply(self, samples: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Return samples, possibly with noise mixed in."""
        if not self.enabled or rng.random() >= self.apply_probability:
            return samples
        snr_db = rng.uniform(self.snr_low_db, self.snr_high_db)
        for _ in range(5):
            noise = self.noise_pool[rng.integers(len(self.noise_pool))]
            if len(noise) < len(samples):
                continue
            offset = rng.integers(len(noise) - len(samples) + 1)
            segment = noise[offset : offset + len(samples)]
            if signal_power(segment) > 0.0:
                return mix_noise(samples, segment, snr_db)
        return samples


def load_noise_pool(paths, expected_rate: int = SAMPLE_RATE) -> list:
    """Load noise WAV files for the augmentation pool."""
    return [read_wav(p, expected_rate) for p in paths]
