"""Candidate-direction grid and predicted inter-channel features.

Predicted DP-RTF features are computed from array geometry under a
far-field direct-path model (or loaded from a measured HRTF-ratio table)
for a circular grid of candidate azimuths.  Magnitudes are set to a fixed
constant; the phase carries the direction information.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dprtf import normalize_feature
from .errors import InputError


@dataclass(frozen=True)
class ArrayGeometry:
    """Microphone positions in meters, shape ``(I, 3)``."""

    mic_positions: np.ndarray
    speed_of_sound: float = 343.0

    def __post_init__(self):
        pos = np.asarray(self.mic_positions, dtype=np.float64)
        object.__setattr__(self, "mic_positions", pos)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 2:
            raise InputError("mic_positions must be an (I >= 2, 3) array")
        if len(np.unique(pos, axis=0)) < 2:
            raise InputError("need at least 2 distinct microphone positions")
        if self.speed_of_sound <= 0:
            raise InputError("speed_of_sound must be positive")

    @property
    def channel_count(self) -> int:
        return self.mic_positions.shape[0]

    @classmethod
    def from_json(cls, path) -> "ArrayGeometry":
        with open(path) as fh:
            data = json.load(fh)
        try:
            return cls(
                mic_positions=np.asarray(data["mic_positions_m"], dtype=float),
                speed_of_sound=float(data.get("speed_of_sound_m_s", 343.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}: bad geometry file ({exc})") from exc


def propagation_direction(azimuth_deg) -> np.ndarray:
    """Unit vector(s) pointing from the array toward the source."""
    theta = np.deg2rad(np.asarray(azimuth_deg, dtype=np.float64))
    return np.stack(
        [np.cos(theta), np.sin(theta), np.zeros_like(theta)], axis=-1
    )


def tdoa(geometry: ArrayGeometry, azimuth_deg) -> np.ndarray:
    """Per-channel delay relative to channel 0, in seconds.

    Far-field plane-wave model: ``tau_i = (m_0 - m_i) . u(theta) / c``,
    positive when channel ``i`` receives the wavefront later than the
    reference.  Broadcasts over an array of azimuths, returning shape
    ``azimuth_shape + (I,)``.
    """
    u = propagation_direction(azimuth_deg)
    rel = geometry.mic_positions[0] - geometry.mic_positions   # (I, 3)
    return np.inner(u, rel) / geometry.speed_of_sound


def grid_azimuths(count: int = 72) -> np.ndarray:
    """Uniform circular azimuth grid in degrees, increasing in (-180, 180].

    The default 72-point grid spans -175, -170, ..., 180 at 5 degrees.
    """
    if count < 2:
        raise InputError("grid needs at least 2 directions")
    return -180.0 + 360.0 * np.arange(1, count + 1) / count


@dataclass
class CandidateGrid:
    """Candidate azimuths with precomputed per-bin predicted features.

    ``predicted[f, c, d]`` is the normalized feature at FFT bin ``f`` for
    0-based channel ``c + 1`` (the reference channel has no feature) and
    candidate direction ``d``.  ``directions[d]`` is the unit vector of
    azimuth ``d``, used as tracker observation support.
    """

    azimuths_deg: np.ndarray          # (D,)
    predicted: np.ndarray             # (F, I-1, D) complex, normalized
    fft_samples: int
    sample_rate: int
    channel_count: int

    def __post_init__(self):
        az = np.asarray(self.azimuths_deg, dtype=np.float64)
        if az.ndim != 1 or len(az) < 2:
            raise InputError("grid needs at least 2 azimuths")
        if not (np.all(np.diff(az) > 0) and az[0] > -180.0 and az[-1] <= 180.0):
            raise InputError("azimuths must be strictly increasing in (-180, 180]")

    @property
    def count(self) -> int:
        return len(self.azimuths_deg)

    @property
    def directions(self) -> np.ndarray:
        theta = np.deg2rad(self.azimuths_deg)
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def predicted_feature(geometry: ArrayGeometry, azimuth_deg: float, bin_index: int,
                      channel: int, fft_samples: int, sample_rate: int,
                      magnitude: float = 0.5) -> complex:
    """Normalized predicted feature for one (direction, bin, channel).

    The raw value is ``magnitude * exp(-j 2 pi f_k tau_i)`` with
    ``f_k = k * fs / N_fft``, then disk-normalized like observed features.
    """
    delays = tdoa(geometry, azimuth_deg)
    f_k = bin_index * sample_rate / fft_samples
    raw = magnitude * np.exp(-2j * np.pi * f_k * delays[channel])
    return complex(normalize_feature(raw))


def build_grid(geometry: ArrayGeometry, fft_samples: int, sample_rate: int,
               count: int = 72, magnitude: float = 0.5,
               azimuths_deg: np.ndarray | None = None) -> CandidateGrid:
    """Precompute the predicted-feature table for a full azimuth grid."""
    az = grid_azimuths(count) if azimuths_deg is None else np.asarray(azimuths_deg, float)
    delays = tdoa(geometry, az)                       # (D, I)
    bins = np.arange(fft_samples // 2 + 1)
    freqs = bins * sample_rate / fft_samples          # (F,)
    phase = -2j * np.pi * freqs[:, None, None] * delays.T[None, 1:, :]  # (F, I-1, D)
    predicted = normalize_feature(magnitude * np.exp(phase))
    return CandidateGrid(
        azimuths_deg=az,
        predicted=predicted,
        fft_samples=fft_samples,
        sample_rate=sample_rate,
        channel_count=geometry.channel_count,
    )


def load_hrtf_table(path, fft_samples: int | None = None,
                    channel_count: int | None = None) -> CandidateGrid:
    """Load measured inter-channel ratios from a JSON table.

    Expected schema::

        {
          "azimuths_deg": [...],            # D entries
          "channels": I,
          "fft_samples": N,
          "sample_rate": fs,
          "ratios": [[[ [re, im], ...D ], ...I-1 ], ...F ]   # [f][ch-1][d]
        }

    Ratios are disk-normalized on load so the table lives in the same
    feature space as observed and geometry-predicted features.
    """
    with open(path) as fh:
        data = json.load(fh)
    try:
        az = np.asarray(data["azimuths_deg"], dtype=float)
        channels = int(data["channels"])
        table_fft = int(data["fft_samples"])
        rate = int(data["sample_rate"])
        ratios = np.asarray(data["ratios"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: bad HRTF table ({exc})") from exc
    bins = table_fft // 2 + 1
    expected = (bins, channels - 1, len(az), 2)
    if ratios.shape != expected:
        raise InputError(
            f"{path}: HRTF table dimensions {ratios.shape} do not match "
            f"expected (bins, channels-1, directions, 2) = {expected}"
        )
    if fft_samples is not None and table_fft != fft_samples:
        raise InputError(
            f"{path}: table FFT size {table_fft} != analysis FFT size {fft_samples}"
        )
    if channel_count is not None and channels != channel_count:
        raise InputError(
            f"{path}: table has {channels} channels, input has {channel_count}"
        )
    complex_ratios = ratios[..., 0] + 1j * ratios[..., 1]
    return CandidateGrid(
        azimuths_deg=az,
        predicted=normalize_feature(complex_ratios),
        fft_samples=table_fft,
        sample_rate=rate,
        channel_count=channels,
    )
