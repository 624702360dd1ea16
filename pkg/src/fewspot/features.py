"""MFCC frontend: 40 ms Hann windows, 50% hop, power spectrogram,
40-filter Mel bank, log with floor, DCT-II, first 10 coefficients.

A 1 s clip at 16 kHz yields a 49x10 feature map. Power (magnitude
squared) spectra are used throughout; no square root, no pre-emphasis,
no liftering, no feature standardization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .errors import ValidationError

FEATURE_FRAMES = 49
FEATURE_COEFFS = 10


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = 16000
    window_ms: float = 40.0
    hop_fraction: float = 0.5
    n_mels: int = 40
    n_mfcc: int = 10
    fmin_hz: float = 20.0
    fmax_hz: float = 8000.0
    log_floor: float = 1e-10

    @property
    def window_len(self) -> int:
        return int(round(self.sample_rate * self.window_ms / 1000.0))

    @property
    def hop_len(self) -> int:
        return int(round(self.window_len * self.hop_fraction))

    @property
    def n_fft_bins(self) -> int:
        return self.window_len // 2 + 1


DEFAULT_FRONTEND = FrontendConfig()


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FrontendConfig = DEFAULT_FRONTEND) -> np.ndarray:
    """Triangular Mel filters, peak height 1, shape (n_mels, n_fft_bins)."""
    mel_edges = np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2)
    hz_edges = mel_to_hz(mel_edges)
    bin_freqs = np.arange(cfg.n_fft_bins) * cfg.sample_rate / cfg.window_len
    bank = np.zeros((cfg.n_mels, cfg.n_fft_bins))
    for i in range(cfg.n_mels):
        left, center, right = hz_edges[i], hz_edges[i + 1], hz_edges[i + 2]
        rising = (bin_freqs - left) / (center - left)
        falling = (right - bin_freqs) / (right - center)
        bank[i] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window of length n."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(n_samples: int, cfg: FrontendConfig = DEFAULT_FRONTEND) -> int:
    return (n_samples - cfg.window_len) // cfg.hop_len + 1


def power_spectrogram(samples: np.ndarray, cfg: FrontendConfig = DEFAULT_FRONTEND) -> np.ndarray:
    """Framed power spectra |FFT|^2, shape (frames, n_fft_bins)."""
    win, hop = cfg.window_len, cfg.hop_len
    if len(samples) < win:
        raise ValidationError(
            f"waveform of {len(samples)} samples is shorter than one {win}-sample window"
        )
    frames = np.lib.stride_tricks.sliding_window_view(samples, win)[::hop]
    windowed = frames * hann_window(win)
    spectrum = np.fft.rfft(windowed, axis=1)
    return spectrum.real**2 + spectrum.imag**2


def mfcc(samples: np.ndarray, cfg: FrontendConfig = DEFAULT_FRONTEND) -> np.ndarray:
    """MFCC feature map of shape (frames, n_mfcc); (49, 10) for a 1 s clip."""
    power = power_spectrogram(samples, cfg)
    mel_energy = power @ mel_filterbank(cfg).T
    log_mel = np.log(np.maximum(mel_energy, cfg.log_floor))
    return dct(log_mel, type=2, norm="ortho", axis=1)[:, : cfg.n_mfcc]


class FeatureExtractor:
    """MFCC pipeline with the filterbank precomputed once.

    Per-path caching is only valid when no augmentation is applied;
    callers that augment must bypass the cache.
    """

    def __init__(self, cfg: FrontendConfig = DEFAULT_FRONTEND, cache_size: int = 50000):
        self.cfg = cfg
        self._bank_t = mel_filterbank(cfg).T
        self._window = hann_window(cfg.window_len)
        self._cache: dict = {}
        self._cache_size = cache_size

    def __call__(self, samples: np.ndarray) -> np.ndarray:
        power = power_spectrogram(samples, self.cfg)
        log_mel = np.log(np.maximum(power @ self._bank_t, self.cfg.log_floor))
        return dct(log_mel, type=2, norm="ortho", axis=1)[:, : self.cfg.n_mfcc]

    def cached(self, key, load_samples) -> np.ndarray:
        """load_samples: zero-argument callable, invoked only on a miss."""
        feat = self._cache.get(key)
        if feat is None:
            feat = self(load_samples())
            if len(self._cache) >= self._cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = feat
        return feat
