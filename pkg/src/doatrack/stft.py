"""Multichannel STFT analysis front end.

Turns time-domain microphone signals into the complex coefficient grid
consumed by the feature-extraction stage.  Analysis only: the processing
chain never reconstructs audio, so no synthesis/inverse transform is
provided.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile
from scipy.signal import get_window

from .errors import InputError


@dataclass
class AudioBuffer:
    """Multichannel time-domain audio.

    Parameters
    ----------
    samples : np.ndarray
        Shape ``(channels, num_samples)``, float64 amplitudes.  All
        channels share the same length.
    sample_rate : int
        Sampling rate in Hz.
    """

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if self.samples.ndim != 2:
            raise InputError("samples must be a (channels, num_samples) array")
        if self.samples.shape[0] < 2:
            raise InputError(
                f"need at least 2 channels, got {self.samples.shape[0]}"
            )
        if self.sample_rate <= 0:
            raise InputError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise InputError("audio contains non-finite samples")

    @property
    def channel_count(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate


@dataclass
class Spectrogram:
    """One-sided complex STFT grid, shape ``(channels, frames, bins)``.

    ``bin_count == fft_samples // 2 + 1``; bin ``k`` sits at
    ``k * sample_rate / fft_samples`` Hz.  Bin 0 (DC) carries no
    inter-channel phase information and is skipped downstream.
    """

    coefficients: np.ndarray
    sample_rate: int
    window_samples: int
    hop_samples: int
    fft_samples: int
    window: str = "hamming"

    @property
    def channel_count(self) -> int:
        return self.coefficients.shape[0]

    @property
    def frame_count(self) -> int:
        return self.coefficients.shape[1]

    @property
    def bin_count(self) -> int:
        return self.coefficients.shape[2]

    def bin_frequency_hz(self, k) -> np.ndarray | float:
        return np.asarray(k) * self.sample_rate / self.fft_samples

    def frame_time_s(self, t) -> np.ndarray | float:
        """Center time of frame ``t`` in seconds."""
        return (np.asarray(t) * self.hop_samples + self.window_samples / 2) / self.sample_rate


def _next_pow2(n: int) -> int:
    return 1 << (n - 1).bit_length()


def analysis_window(name: str, length: int) -> np.ndarray:
    """Periodic (DFT-even) analysis window of the given length."""
    if name == "hamming":
        return get_window("hamming", length, fftbins=True)
    if name == "rect":
        return np.ones(length)
    raise InputError(f"unsupported window type: {name!r}")


def frame_count(num_samples: int, window_samples: int, hop_samples: int) -> int:
    """Number of full analysis frames for a signal of the given length."""
    if num_samples < window_samples:
        return 0
    return (num_samples - window_samples) // hop_samples + 1


def analyze(
    audio: AudioBuffer,
    window_ms: float = 16.0,
    hop_ms: float = 8.0,
    window: str = "hamming",
) -> Spectrogram:
    """Compute the one-sided multichannel STFT of ``audio``.

    Parameters
    ----------
    audio : AudioBuffer
    window_ms, hop_ms : float
        Analysis window length and frame shift in milliseconds.  The
        window length in samples is rounded to the nearest integer; if it
        is not a power of two the frame is zero-padded to the next power
        of two before the transform (FFT size equals the window length
        otherwise).
    window : {"hamming", "rect"}
        Taper applied to each frame before the transform.

    Returns
    -------
    Spectrogram
        ``frames = (num_samples - window) // hop + 1`` frames of
        ``fft // 2 + 1`` one-sided bins per channel.
    """
    fs = audio.sample_rate
    win_len = int(round(window_ms * fs / 1000.0))
    hop_len = int(round(hop_ms * fs / 1000.0))
    if win_len <= 0 or hop_len <= 0:
        raise InputError("window and hop must be positive")
    if hop_len > win_len:
        raise InputError(f"hop ({hop_len}) must not exceed window ({win_len})")
    if audio.num_samples < win_len:
        raise InputError(
            f"audio shorter than one analysis window "
            f"({audio.num_samples} < {win_len} samples)"
        )
    fft_len = _next_pow2(win_len)
    taper = analysis_window(window, win_len)

    frames = sliding_window_view(audio.samples, win_len, axis=1)[:, ::hop_len, :]
    coeffs = np.fft.rfft(frames * taper, n=fft_len, axis=2)
    return Spectrogram(
        coefficients=coeffs,
        sample_rate=fs,
        window_samples=win_len,
        hop_samples=hop_len,
        fft_samples=fft_len,
        window=window,
    )


def read_wav(path, sample_rate: int = 16000) -> AudioBuffer:
    """Load a multichannel PCM WAV file (16-bit integer or 32-bit float).

    The file's sampling rate must equal ``sample_rate``: resampling is out
    of scope, mismatches are rejected.  Pass the file's own rate to accept
    it as-is.
    """
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:  # noqa: BLE001 - scipy raises bare ValueError
        raise InputError(f"{path}: not a readable WAV file ({exc})") from exc
    if rate != sample_rate:
        raise InputError(
            f"{path}: sample rate {rate} Hz does not match configured "
            f"{sample_rate} Hz; resampling is not performed"
        )
    if data.ndim == 1:
        raise InputError(f"{path}: single-channel file, need at least 2 channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise InputError(
            f"{path}: unsupported sample format {data.dtype}, "
            f"expected int16 or float32"
        )
    return AudioBuffer(samples=samples.T, sample_rate=rate)


def write_wav(path, audio: AudioBuffer) -> None:
    """Write an AudioBuffer as 32-bit float WAV."""
    wavfile.write(path, audio.sample_rate, audio.samples.T.astype(np.float32))
