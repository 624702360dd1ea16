"""WAV I/O, padding, and SNR mixing checks."""

import wave

import numpy as np
import pytest

from fewspot import audio
from fewspot.errors import DataFormatError, ValidationError


def tone(freq=440.0, n=16000, rate=16000, amp=0.5):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / rate)


def test_wav_round_trip_quantization_error_bounded(tmp_path):
    path = tmp_path / "t.wav"
    original = tone()
    audio.write_wav(path, original)
    loaded = audio.read_wav(path)
    assert loaded.shape == original.shape
    # 16-bit quantization: half an LSB of 1/32768
    assert np.max(np.abs(loaded - original)) <= 0.5 / 32768 + 1e-12


def test_read_rejects_wrong_sample_rate_with_path(tmp_path):
    path = tmp_path / "cd_rate.wav"
    audio.write_wav(path, tone(n=44100, rate=44100), sample_rate=44100)
    with pytest.raises(DataFormatError, match="cd_rate.wav") as exc_info:
        audio.read_wav(path)
    assert "44100" in str(exc_info.value)


def test_read_rejects_stereo(tmp_path):
    path = tmp_path / "stereo.wav"
    ints = np.zeros(640, dtype="<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(2)
        wf.setsampwidth(2)
        wf.setframerate(16000)
        wf.writeframes(ints.tobytes())
    with pytest.raises(DataFormatError, match="mono"):
        audio.read_wav(path)


def test_read_rejects_garbage(tmp_path):
    path = tmp_path / "junk.wav"
    path.write_bytes(b"this is not audio")
    with pytest.raises(DataFormatError):
        audio.read_wav(path)


def test_pad_or_crop_identity():
    x = np.arange(10.0)
    assert audio.pad_or_crop(x, 10) is x


def test_pad_centers_signal():
    x = np.ones(4)
    out = audio.pad_or_crop(x, 8)
    np.testing.assert_array_equal(out, [0, 0, 1, 1, 1, 1, 0, 0])


def test_crop_takes_center():
    x = np.arange(10.0)
    np.testing.assert_array_equal(audio.pad_or_crop(x, 4), [3, 4, 5, 6])


def test_load_clip_forces_length(tmp_path):
    path = tmp_path / "short.wav"
    audio.write_wav(path, tone(n=8000))
    assert audio.load_clip(path).shape == (16000,)


def test_mix_noise_hits_requested_snr_exactly():
    # Recompute the SNR of the mixed output from its two components.
    rng = np.random.default_rng(7)
    sig = tone(523.0)
    noise = rng.standard_normal(16000)
    for target_db in (-5.0, 0.0, 3.0, 12.5, 30.0):
        mixed = audio.mix_noise(sig, noise, target_db)
        added = mixed - sig
        got_db = 10 * np.log10(audio.signal_power(sig) / audio.signal_power(added))
        assert got_db == pytest.approx(target_db, abs=1e-9)


def test_mix_noise_validates_inputs():
    with pytest.raises(ValidationError, match="length"):
        audio.mix_noise(np.ones(10), np.ones(9), 0.0)
    with pytest.raises(ValidationError, match="zero"):
        audio.mix_noise(np.zeros(10), np.ones(10), 0.0)
    with pytest.raises(ValidationError, match="silent"):
        audio.mix_noise(np.ones(10), np.zeros(10), 0.0)


def test_policy_probability_zero_is_identity():
    policy = audio.AugmentationPolicy(
        apply_probability=0.0, noise_pool=[np.ones(16000)]
    )
    x = tone()
    out = policy.apply(x, np.random.default_rng(0))
    assert out is x


def test_policy_applies_noise_within_snr_range():
    rng = np.random.default_rng(3)
    pool = [np.random.default_rng(9).standard_normal(20000)]
    policy = audio.AugmentationPolicy(
        apply_probability=1.0, snr_low_db=0.0, snr_high_db=5.0, noise_pool=pool
    )
    sig = tone()
    for _ in range(20):
        mixed = policy.apply(sig, rng)
        added = mixed - sig
        got_db = 10 * np.log10(audio.signal_power(sig) / audio.signal_power(added))
        assert 0.0 - 1e-9 <= got_db <= 5.0 + 1e-9


def test_policy_skips_short_noise():
    policy = audio.AugmentationPolicy(
        apply_probability=1.0, noise_pool=[np.ones(100)]
    )
    x = tone()
    assert policy.apply(x, np.random.default_rng(0)) is x


def test_policy_rejects_bad_probability():
    with pytest.raises(ValidationError):
        audio.AugmentationPolicy(apply_probability=1.5)
    with pytest.raises(ValidationError):
        audio.AugmentationPolicy(snr_low_db=6.0, snr_high_db=5.0)
