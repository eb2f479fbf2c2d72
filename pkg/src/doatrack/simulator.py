"""Synthetic multichannel scene generation with known ground truth.

Renders moving far-field sources onto a microphone array via per-sample
fractional delays (windowed-sinc interpolation), with optional synthetic
sub-band reverberation and additive noise at a target SNR.  Everything is
deterministic under the scene seed.  A separate generator synthesizes
coefficient grids directly in the STFT domain under an exactly planted
per-bin filter, for feature-stage verification where the sub-band model
must hold to machine precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, lfilter

from .errors import InputError
from .steering import ArrayGeometry, tdoa
from .stft import AudioBuffer, frame_count

SINC_TAPS = 32
RAMP_S = 0.008     # activity on/off raised-cosine ramp


# ---------------------------------------------------------------------------
# Scene specification
# ---------------------------------------------------------------------------

@dataclass
class SourceSpec:
    trajectory: list            # [(t_seconds, azimuth_deg), ...] piecewise linear
    activity: list              # [(start_s, end_s), ...]
    excitation: dict            # {"kind": "white"|"speech_shaped"|"wav", ...}

    def azimuth_at(self, t) -> np.ndarray:
        knots = np.asarray(self.trajectory, dtype=float)
        return np.interp(np.asarray(t, dtype=float), knots[:, 0], knots[:, 1])

    def active_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        active = np.zeros(t.shape, dtype=bool)
        for start, end in self.activity:
            active |= (t >= start) & (t < end)
        return active


@dataclass
class SceneSpec:
    duration_s: float
    geometry: ArrayGeometry
    sources: list
    seed: int = 0
    sample_rate: int = 16000
    reverb: dict = field(default_factory=lambda: {"mode": "off"})
    noise: dict | None = None   # {"snr_db": float} or None for noise-free

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        known = {"duration_s", "geometry", "sources", "seed", "sample_rate",
                 "reverb", "noise"}
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown scene-spec keys: {sorted(unknown)}")
        try:
            geometry = ArrayGeometry(
                mic_positions=np.asarray(data["geometry"]["mic_positions_m"], float),
                speed_of_sound=float(
                    data["geometry"].get("speed_of_sound_m_s", 343.0)),
            )
            sources = [
                SourceSpec(
                    trajectory=[(float(t), float(a)) for t, a in s["trajectory"]],
                    activity=[(float(a), float(b)) for a, b in s["activity"]],
                    excitation=dict(s.get("excitation", {"kind": "white"})),
                )
                for s in data["sources"]
            ]
            spec = cls(
                duration_s=float(data["duration_s"]),
                geometry=geometry,
                sources=sources,
                seed=int(data.get("seed", 0)),
                sample_rate=int(data.get("sample_rate", 16000)),
                reverb=dict(data.get("reverb", {"mode": "off"})),
                noise=(dict(data["noise"])
                       if data.get("noise") is not None else None),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad scene spec: {exc}") from exc
        spec.validate()
        return spec

    @classmethod
    def from_json(cls, path) -> "SceneSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def validate(self) -> None:
        if self.duration_s <= 0:
            raise InputError("duration_s must be positive")
        if not self.sources:
            raise InputError("scene needs at least one source")
        for k, src in enumerate(self.sources):
            az = np.asarray(src.trajectory, float)
            if np.any(az[:, 1] <= -180.0) or np.any(az[:, 1] > 180.0):
                raise InputError(f"source {k}: azimuths must lie in (-180, 180]")
            if np.any(np.diff(az[:, 0]) < 0):
                raise InputError(f"source {k}: trajectory times must not decrease")
            for start, end in src.activity:
                if not (0.0 <= start < end <= self.duration_s):
                    raise InputError(
                        f"source {k}: activity ({start}, {end}) outside duration")
        mode = self.reverb.get("mode", "off")
        if mode not in ("off", "ctf"):
            raise InputError(f"unknown reverb mode: {mode!r}")
        if mode == "ctf":
            for k, src in enumerate(self.sources):
                az = np.asarray(src.trajectory, float)[:, 1]
                if np.ptp(az) > 0:
                    raise InputError(
                        f"source {k}: ctf reverb requires a static azimuth")


@dataclass
class GroundTruth:
    """Per-source azimuth and activity, aligned to the STFT frame grid."""

    frame_hop_s: float
    frame_count: int
    azimuths_deg: np.ndarray    # (num_sources, frames)
    active: np.ndarray          # (num_sources, frames) bool
    frame_times_s: np.ndarray   # (frames,) frame-center times
    planted_relative_ctf: np.ndarray | None = None   # (frames?, ) see render()


# ---------------------------------------------------------------------------
# Signal building blocks
# ---------------------------------------------------------------------------

def _sinc_kernel(frac: np.ndarray, taps: int) -> np.ndarray:
    """Hann-windowed sinc interpolation weights for fractional offsets."""
    window_arg = (frac + taps / 2) / taps
    return np.sinc(frac) * np.where(
        (window_arg >= 0) & (window_arg <= 1),
        0.5 - 0.5 * np.cos(2 * np.pi * window_arg), 0.0)


def fractional_delay(signal: np.ndarray, delay_samples,
                     taps: int = SINC_TAPS) -> np.ndarray:
    """Delay a signal by a (possibly time-varying) fractional lag.

    ``out[n] = signal(n - delay[n])`` via Hann-windowed sinc interpolation;
    out-of-range reads are zero.  A constant delay uses a single FIR pass,
    a time-varying delay gathers per-sample.
    """
    n = len(signal)
    delay_samples = np.asarray(delay_samples, dtype=float)
    if delay_samples.ndim == 0 or np.ptp(delay_samples) == 0.0:
        delay = float(delay_samples.reshape(-1)[0]) if delay_samples.ndim \
            else float(delay_samples)
        shift = int(np.floor(delay))
        frac = delay - shift                      # in [0, 1)
        offsets = np.arange(taps) - (taps // 2 - 1)
        kernel = _sinc_kernel(offsets - frac, taps)
        padded = np.convolve(signal, kernel)
        # out[m] = padded[m + taps//2 - 1 - shift]
        start = taps // 2 - 1 - shift
        out = np.zeros(n)
        lo, hi = max(0, -start), min(n, len(padded) - start)
        if lo < hi:
            out[lo:hi] = padded[start + lo:start + hi]
        return out
    delay_samples = np.broadcast_to(delay_samples, (n,))
    read_pos = np.arange(n) - delay_samples
    base = np.floor(read_pos).astype(np.int64) - taps // 2 + 1
    offsets = np.arange(taps)
    idx = base[:, None] + offsets[None, :]               # (n, taps)
    kernel = _sinc_kernel(read_pos[:, None] - idx, taps)
    valid = (idx >= 0) & (idx < n)
    gathered = np.where(valid, signal[np.clip(idx, 0, n - 1)], 0.0)
    return np.sum(gathered * kernel, axis=1)


def _integer_shift(signal: np.ndarray, lag: int) -> np.ndarray:
    out = np.zeros_like(signal)
    if lag >= len(signal):
        return out
    if lag >= 0:
        out[lag:] = signal[: len(signal) - lag]
    else:
        out[:lag] = signal[-lag:]
    return out


def speech_shaped_noise(rng: np.random.Generator, num_samples: int,
                        sample_rate: int) -> np.ndarray:
    """White noise shaped by a -6 dB/octave roll-off above 500 Hz."""
    white = rng.standard_normal(num_samples)
    b, a = butter(1, 500.0, btype="low", fs=sample_rate)
    shaped = lfilter(b, a, white)
    return shaped / (np.std(shaped) + 1e-12)


def _excitation(source: SourceSpec, rng: np.random.Generator,
                num_samples: int, sample_rate: int) -> np.ndarray:
    kind = source.excitation.get("kind", "white")
    if kind == "white":
        sig = rng.standard_normal(num_samples)
    elif kind == "speech_shaped":
        sig = speech_shaped_noise(rng, num_samples, sample_rate)
    elif kind == "wav":
        from .stft import read_wav
        path = source.excitation.get("path")
        if not path:
            raise InputError("wav excitation needs a 'path'")
        try:
            buf = read_wav(path, sample_rate=sample_rate)
            sig = buf.samples[0]
        except InputError:
            from scipy.io import wavfile
            rate, data = wavfile.read(path)
            if rate != sample_rate:
                raise
            sig = (data.astype(np.float64) / 32768.0
                   if data.dtype == np.int16 else data.astype(np.float64))
        reps = int(np.ceil(num_samples / len(sig)))
        sig = np.tile(sig, reps)[:num_samples]
    else:
        raise InputError(f"unknown excitation kind: {kind!r}")
    level = source.excitation.get("level_db", 0.0)
    return sig * 10.0 ** (level / 20.0)


def _activity_envelope(source: SourceSpec, num_samples: int,
                       sample_rate: int) -> np.ndarray:
    env = np.zeros(num_samples)
    ramp = max(1, int(RAMP_S * sample_rate))
    fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    for start_s, end_s in source.activity:
        a = int(round(start_s * sample_rate))
        b = min(int(round(end_s * sample_rate)), num_samples)
        if b <= a:
            continue
        env[a:b] = 1.0
        env[a:min(a + ramp, b)] = np.minimum(env[a:min(a + ramp, b)],
                                             fade[:min(ramp, b - a)])
        tail = min(ramp, b - a)
        env[b - tail:b] = np.minimum(env[b - tail:b], fade[:tail][::-1])
    return env


def _reverb_taps(rng: np.random.Generator, channels: int, q: int,
                 hop_s: float, tau_rev_s: float, drr_db: float) -> np.ndarray:
    """Per-channel scalar frame-lag taps; tap 0 = 1 (direct path)."""
    taps = np.zeros((channels, q))
    taps[:, 0] = 1.0
    if q == 1:
        return taps
    decay = np.exp(-np.arange(1, q) * hop_s / tau_rev_s)
    raw = rng.standard_normal((channels, q - 1)) * decay
    target_power = 10.0 ** (-drr_db / 10.0)
    for i in range(channels):
        power = np.sum(raw[i] ** 2)
        if power > 0:
            raw[i] *= np.sqrt(target_power / power)
    taps[:, 1:] = raw
    return taps


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def render(spec: SceneSpec, window_ms: float = 16.0, hop_ms: float = 8.0,
           ctf_frames: int = 8) -> tuple[AudioBuffer, GroundTruth]:
    """Render a scene to multichannel audio plus frame-aligned ground truth.

    Per source: the excitation is gated by the activity schedule and laid
    onto every channel with the geometry's time-varying fractional delay.
    In ``ctf`` reverb mode each channel additionally receives scaled
    copies at whole-frame lags, so the per-bin sub-band filter relating
    the channels is known; it is reported in the ground truth.  White
    noise is added last to meet the requested SNR over active samples.
    """
    fs = spec.sample_rate
    num_samples = int(round(spec.duration_s * fs))
    win = int(round(window_ms * fs / 1000.0))
    hop = int(round(hop_ms * fs / 1000.0))
    frames = frame_count(num_samples, win, hop)
    channels = spec.geometry.channel_count
    rng = np.random.default_rng(spec.seed)

    reverb_mode = spec.reverb.get("mode", "off")
    mix = np.zeros((channels, num_samples))
    planted = None
    sample_t = np.arange(num_samples) / fs
    for src in spec.sources:
        dry = _excitation(src, rng, num_samples, fs)
        dry *= _activity_envelope(src, num_samples, fs)
        azimuth = src.azimuth_at(sample_t)
        delays = tdoa(spec.geometry, azimuth)            # (n, I) seconds
        if reverb_mode == "ctf":
            tau_rev = float(spec.reverb.get("tau_rev_s", 0.3))
            drr = float(spec.reverb.get("direct_to_reverb_db", 6.0))
            taps = _reverb_taps(rng, channels, ctf_frames, hop / fs, tau_rev, drr)
            for i in range(channels):
                # Static azimuth (validated): one fractional delay, then
                # scaled copies at whole-frame lags.
                delayed = fractional_delay(dry, delays[0, i] * fs)
                for q in range(ctf_frames):
                    if taps[i, q] != 0.0:
                        mix[i] += taps[i, q] * _integer_shift(delayed, q * hop)
            planted = _relative_ctf(taps, delays[0], fs, win)
        else:
            for i in range(channels):
                mix[i] += fractional_delay(dry, delays[:, i] * fs)

    if spec.noise is not None:
        snr_db = float(spec.noise.get("snr_db", 20.0))
        active_mask = np.zeros(num_samples, dtype=bool)
        for src in spec.sources:
            active_mask |= src.active_at(sample_t)
        sig_power = float(np.mean(mix[:, active_mask] ** 2)) if active_mask.any() else 0.0
        if sig_power <= 0.0:
            raise InputError("cannot reach requested SNR: rendered signal is silent")
        noise = rng.standard_normal(mix.shape)
        noise *= np.sqrt(sig_power / 10.0 ** (snr_db / 10.0)) / np.std(noise)
        mix = mix + noise

    times = (np.arange(frames) * hop + win / 2) / fs
    gt = GroundTruth(
        frame_hop_s=hop / fs,
        frame_count=frames,
        azimuths_deg=np.stack([s.azimuth_at(times) for s in spec.sources]),
        active=np.stack([s.active_at(times) for s in spec.sources]),
        frame_times_s=times,
        planted_relative_ctf=planted,
    )
    return AudioBuffer(samples=mix, sample_rate=fs), gt


def _relative_ctf(taps: np.ndarray, delays: np.ndarray, fs: int,
                  fft_samples: int) -> np.ndarray:
    """Sub-band relative filter implied by scalar frame-lag taps + delays.

    ``a^i_{q,f} = taps[i, q] * exp(-2j pi f_k delays[i])``; returns the
    stacked relative vector (constrained entry removed) per bin, shape
    ``(bins, I*Q - 1)``.
    """
    channels, q = taps.shape
    bins = fft_samples // 2 + 1
    freqs = np.arange(bins) * fs / fft_samples
    ctf = (taps[None, :, :]
           * np.exp(-2j * np.pi * freqs[:, None, None] * delays[None, :, None]))
    ref = ctf[:, 0, 0]
    rel = (ctf / ref[:, None, None]).reshape(bins, channels * q)
    return np.delete(rel, 0, axis=1)


# ---------------------------------------------------------------------------
# Exact sub-band model synthesis (STFT domain)
# ---------------------------------------------------------------------------

def plant_ctf_scene(geometry: ArrayGeometry, azimuth_deg: float,
                    fft_samples: int, sample_rate: int, ctf_frames: int,
                    frames: int, seed: int = 0, tau_rev_s: float = 0.3,
                    direct_to_reverb_db: float = 6.0,
                    snr_db: float | None = None,
                    burst_frames: int | None = None):
    """Synthesize STFT coefficients exactly obeying the sub-band model.

    Draws a random complex source grid and convolves it across frames,
    per bin, with a planted filter whose first tap is the direct-path
    value for the given azimuth and whose tail decays like
    ``exp(-q hop / tau_rev)``.  Optionally adds complex Gaussian noise at
    ``snr_db`` and amplitude-modulates the source in on/off bursts of
    ``burst_frames`` so the speech/noise classifier has something to
    classify.

    Returns ``(coeffs (I, T, F), relative_ctf (F, I*Q-1), source_on (T,))``.
    """
    rng = np.random.default_rng(seed)
    channels = geometry.channel_count
    bins = fft_samples // 2 + 1
    hop_s = fft_samples / 2 / sample_rate
    delays = tdoa(geometry, azimuth_deg)
    freqs = np.arange(bins) * sample_rate / fft_samples

    direct = np.exp(-2j * np.pi * freqs[None, :] * delays[:, None])  # (I, F)
    ctf = np.zeros((channels, ctf_frames, bins), dtype=np.complex128)
    ctf[:, 0, :] = direct
    if ctf_frames > 1:
        decay = np.exp(-np.arange(1, ctf_frames) * hop_s / tau_rev_s)
        tail = (rng.standard_normal((channels, ctf_frames - 1, bins))
                + 1j * rng.standard_normal((channels, ctf_frames - 1, bins)))
        tail *= decay[None, :, None]
        power = np.sum(np.abs(tail) ** 2, axis=1, keepdims=True)
        target = 10.0 ** (-direct_to_reverb_db / 10.0)
        tail *= np.sqrt(target / np.maximum(power, 1e-30))
        ctf[:, 1:, :] = tail

    source = (rng.standard_normal((frames, bins))
              + 1j * rng.standard_normal((frames, bins))) / np.sqrt(2.0)
    source_on = np.ones(frames, dtype=bool)
    if burst_frames:
        source_on = (np.arange(frames) // burst_frames) % 2 == 0
        source = source * source_on[:, None]

    coeffs = np.zeros((channels, frames, bins), dtype=np.complex128)
    for q in range(ctf_frames):
        shifted = np.zeros_like(source)
        shifted[q:] = source[: frames - q]
        coeffs += ctf[:, None, q, :] * shifted[None, :, :]

    if snr_db is not None:
        sig_power = np.mean(np.abs(coeffs[:, source_on, :]) ** 2)
        noise = (rng.standard_normal(coeffs.shape)
                 + 1j * rng.standard_normal(coeffs.shape)) / np.sqrt(2.0)
        coeffs += noise * np.sqrt(sig_power / 10.0 ** (snr_db / 10.0))

    ref = ctf[0, 0, :]
    rel = (np.transpose(ctf, (2, 0, 1)) / ref[:, None, None]).reshape(
        bins, channels * ctf_frames)
    relative_ctf = np.delete(rel, 0, axis=1)
    return coeffs, relative_ctf, source_on


# ---------------------------------------------------------------------------
# Ground-truth persistence
# ---------------------------------------------------------------------------

def export_ground_truth(gt: GroundTruth, path) -> None:
    """Write ground truth as JSON; round-trips losslessly."""
    payload = {
        "frame_hop_s": gt.frame_hop_s,
        "frame_count": gt.frame_count,
        "frame_times_s": gt.frame_times_s.tolist(),
        "sources": [
            {
                "azimuth_deg": gt.azimuths_deg[k].tolist(),
                "active": gt.active[k].astype(bool).tolist(),
            }
            for k in range(gt.azimuths_deg.shape[0])
        ],
    }
    if gt.planted_relative_ctf is not None:
        payload["planted_relative_ctf"] = {
            "real": gt.planted_relative_ctf.real.tolist(),
            "imag": gt.planted_relative_ctf.imag.tolist(),
        }
    try:
        with open(path, "w") as fh:
            json.dump(payload, fh)
    except OSError as exc:
        raise InputError(f"cannot write ground truth to {path}: {exc}") from exc


def load_ground_truth(path) -> GroundTruth:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read ground truth from {path}: {exc}") from exc
    try:
        azimuths = np.asarray([s["azimuth_deg"] for s in data["sources"]], float)
        active = np.asarray([s["active"] for s in data["sources"]], bool)
        planted = None
        if "planted_relative_ctf" in data:
            planted = (np.asarray(data["planted_relative_ctf"]["real"])
                       + 1j * np.asarray(data["planted_relative_ctf"]["imag"]))
        return GroundTruth(
            frame_hop_s=float(data["frame_hop_s"]),
            frame_count=int(data["frame_count"]),
            azimuths_deg=azimuths,
            active=active,
            frame_times_s=np.asarray(data["frame_times_s"], float),
            planted_relative_ctf=planted,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: bad ground-truth file ({exc})") from exc
