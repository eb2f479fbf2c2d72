"""STFT front-end tests: framing, windowing, energy bookkeeping, WAV I/O."""

import numpy as np
import pytest

from doatrack.errors import InputError
from doatrack.stft import (
    AudioBuffer,
    analysis_window,
    analyze,
    frame_count,
    read_wav,
    write_wav,
)

FS = 16000


def two_channel(signal: np.ndarray) -> AudioBuffer:
    return AudioBuffer(samples=np.stack([signal, signal]), sample_rate=FS)


class TestFraming:
    def test_frame_count_formula(self):
        spec = analyze(two_channel(np.zeros(16000)), 16.0, 8.0)
        assert spec.window_samples == 256
        assert spec.hop_samples == 128
        assert spec.frame_count == (16000 - 256) // 128 + 1
        assert spec.bin_count == 129

    def test_frame_count_helper_matches(self):
        for n in (256, 257, 4000, 16000):
            spec = analyze(two_channel(np.random.default_rng(0).standard_normal(n)))
            assert spec.frame_count == frame_count(n, 256, 128)

    def test_too_short_audio_rejected(self):
        with pytest.raises(InputError, match="shorter than one"):
            analyze(two_channel(np.zeros(100)), 16.0, 8.0)

    def test_non_finite_samples_rejected(self):
        bad = np.zeros(1000)
        bad[10] = np.nan
        with pytest.raises(InputError, match="non-finite"):
            two_channel(bad)

    def test_hop_larger_than_window_rejected(self):
        with pytest.raises(InputError, match="hop"):
            analyze(two_channel(np.zeros(1000)), 16.0, 20.0)

    def test_single_channel_rejected(self):
        with pytest.raises(InputError, match="2 channels"):
            AudioBuffer(samples=np.zeros((1, 1000)), sample_rate=FS)


class TestTransformValues:
    def test_dc_signal_energy_in_bin_zero(self):
        # With a rectangular taper a constant signal concentrates exactly
        # in the DC bin; any tapered window spreads DC into neighbors by
        # construction, so the concentration claim is checked on "rect".
        spec = analyze(two_channel(np.ones(4000)), 16.0, 8.0, window="rect")
        mags = np.abs(spec.coefficients)
        assert np.all(mags[:, :, 1:] < 1e-10 * mags[:, :, :1])

    def test_on_bin_cosine_closed_form(self):
        # A cosine exactly on bin k through the periodic Hamming window has
        # |X[k]| = window_sum / 2 (the window spectrum vanishes at 2k).
        k = 10
        n = np.arange(16000)
        signal = np.cos(2 * np.pi * k * n / 256)
        spec = analyze(two_channel(signal), 16.0, 8.0)
        window_sum = analysis_window("hamming", 256).sum()
        mags = np.abs(spec.coefficients[0])
        assert np.all(np.argmax(mags, axis=1) == k)
        assert np.allclose(mags[:, k], window_sum / 2, rtol=1e-9)

    def test_parseval_per_frame(self):
        rng = np.random.default_rng(42)
        signal = rng.standard_normal(3000)
        spec = analyze(two_channel(signal), 16.0, 8.0)
        taper = analysis_window("hamming", 256)
        coeffs = spec.coefficients[0]
        # One-sided doubling: bins 1..N/2-1 appear twice in the full DFT.
        doubling = np.ones(spec.bin_count)
        doubling[1:-1] = 2.0
        spectral = (np.abs(coeffs) ** 2 * doubling).sum(axis=1) / spec.fft_samples
        for t in range(spec.frame_count):
            frame = signal[t * 128:t * 128 + 256] * taper
            assert spectral[t] == pytest.approx(np.sum(frame ** 2), rel=1e-9)

    def test_linearity(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal(2000)
        y = rng.standard_normal(2000)
        a, b = 2.5, -0.7
        s_mix = analyze(two_channel(a * x + b * y))
        s_x = analyze(two_channel(x))
        s_y = analyze(two_channel(y))
        expected = a * s_x.coefficients + b * s_y.coefficients
        assert np.allclose(s_mix.coefficients, expected, rtol=1e-9, atol=1e-12)

    def test_determinism(self):
        rng = np.random.default_rng(3)
        buf = two_channel(rng.standard_normal(5000))
        first = analyze(buf).coefficients
        second = analyze(buf).coefficients
        assert np.array_equal(first, second)


class TestWavIO:
    def test_round_trip_float(self, tmp_path):
        rng = np.random.default_rng(0)
        buf = AudioBuffer(samples=rng.standard_normal((4, 3000)) * 0.1,
                          sample_rate=FS)
        path = tmp_path / "x.wav"
        write_wav(path, buf)
        loaded = read_wav(path, sample_rate=FS)
        assert loaded.channel_count == 4
        assert np.allclose(loaded.samples, buf.samples, atol=1e-6)

    def test_int16_accepted(self, tmp_path):
        from scipy.io import wavfile
        path = tmp_path / "i.wav"
        data = (np.random.default_rng(1).standard_normal((1000, 2)) * 1000)
        wavfile.write(path, FS, data.astype(np.int16))
        loaded = read_wav(path, sample_rate=FS)
        assert loaded.channel_count == 2
        assert np.max(np.abs(loaded.samples)) < 1.0

    def test_rate_mismatch_rejected(self, tmp_path):
        path = tmp_path / "r.wav"
        write_wav(path, AudioBuffer(samples=np.zeros((2, 1000)), sample_rate=8000))
        with pytest.raises(InputError, match="sample rate"):
            read_wav(path, sample_rate=FS)
        assert read_wav(path, sample_rate=8000).sample_rate == 8000

    def test_unsupported_dtype_rejected(self, tmp_path):
        from scipy.io import wavfile
        path = tmp_path / "u.wav"
        wavfile.write(path, FS, np.zeros((100, 2), dtype=np.int32))
        with pytest.raises(InputError, match="unsupported sample format"):
            read_wav(path, sample_rate=FS)
