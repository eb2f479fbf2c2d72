"""End-to-end orchestration: audio in, heatmaps / peaks / tracks out.

The engine is streaming: audio is consumed frame by frame with bounded
state (the Q-frame history, PSD trackers and per-bin solver state), the
weight simplex is updated every STFT frame, and the tracker advances once
per ``step_frames`` frames.  The heatmap rows and emitted records are the
outputs, not retained intermediate state.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import Config
from .dprtf import DpRtfExtractor, ExtractorConfig
from .errors import InputError
from .localizer import LocalizerParams, OnlineLocalizer, peak_select
from .metrics import aggregate, greedy_match, realtime_factor
from .simulator import GroundTruth, SceneSpec, export_ground_truth, render
from .steering import ArrayGeometry, CandidateGrid, build_grid, load_hrtf_table
from .stft import AudioBuffer, analysis_window, frame_count, write_wav
from .tracker import MultiSpeakerTracker, ObservationSet, TrackerParams


def band_bins(config: Config, fft_samples: int) -> np.ndarray:
    """FFT bins feeding localization: configured band, DC always excluded."""
    fs = config.stft.sample_rate
    freqs = np.arange(fft_samples // 2 + 1) * fs / fft_samples
    low = config.localizer.band_low_hz
    high = config.localizer.band_high_hz
    mask = np.ones(len(freqs), dtype=bool)
    mask[0] = False
    if low is not None:
        mask &= freqs >= low
    if high is not None:
        mask &= freqs <= high
    if not mask.any():
        raise InputError("frequency band selects no bins")
    return np.nonzero(mask)[0]


def localizer_params(config: Config) -> LocalizerParams:
    loc = config.localizer
    return LocalizerParams(
        variance=loc.sigma2,
        step=loc.eta,
        entropy_weight=loc.entropy_gamma,
        silent_step=loc.silent_eta,
        smooth_weight=loc.smooth_weight,
        peak_threshold=loc.peak_threshold,
        peak_min_separation_deg=loc.peak_min_separation_deg,
    )


def tracker_params(config: Config) -> TrackerParams:
    trk = config.tracker
    hop_s = config.stft.hop_ms / 1000.0
    return TrackerParams(
        obs_cov=trk.obs_var * np.eye(2),
        max_speakers=trk.max_speakers,
        dt=trk.step_frames * hop_s,
        vem_iterations=trk.vem_iterations,
        outlier_density=trk.outlier_density,
        birth_window=trk.birth_window,
        birth_threshold=trk.birth_threshold,
        birth_min_weight=trk.birth_min_weight,
        birth_guard_deg=trk.birth_guard_deg,
        birth_prior_var=trk.birth_prior_var,
        birth_dynamics_var=trk.birth_dynamics_var,
        activity_window=trk.activity_window,
        activity_threshold=trk.activity_threshold,
    )


@dataclass
class TrackRecord:
    t_seconds: float
    track_id: int
    azimuth_deg: float
    angular_velocity_deg_s: float
    active: bool
    covariance: list

    def to_json_dict(self) -> dict:
        return {
            "t_seconds": self.t_seconds,
            "track_id": self.track_id,
            "azimuth_deg": self.azimuth_deg,
            "angular_velocity_deg_s": self.angular_velocity_deg_s,
            "active": self.active,
            "covariance": self.covariance,
        }


@dataclass
class PipelineResult:
    heatmap: np.ndarray                 # (frames, D)
    frame_times_s: np.ndarray
    azimuths_deg: np.ndarray
    peaks: list                         # per frame: [(azimuth, weight), ...]
    track_records: list = field(default_factory=list)
    wall_time_s: float = 0.0
    duration_s: float = 0.0

    @property
    def rf(self) -> float:
        return realtime_factor(self.wall_time_s, self.duration_s)


class OnlinePipeline:
    """Streaming feature extraction + localization (+ optional tracking)."""

    def __init__(self, config: Config, geometry: ArrayGeometry,
                 grid: CandidateGrid | None = None, track: bool = False):
        self.config = config
        self.geometry = geometry
        fs = config.stft.sample_rate
        self.window_samples = int(round(config.stft.window_ms * fs / 1000.0))
        self.hop_samples = int(round(config.stft.hop_ms * fs / 1000.0))
        self.fft_samples = 1 << (self.window_samples - 1).bit_length()
        self.taper = analysis_window(config.stft.window, self.window_samples)
        self.grid = grid if grid is not None else build_grid(
            geometry, self.fft_samples, fs,
            count=config.grid.directions,
            magnitude=config.grid.predicted_magnitude,
        )
        self.bins = band_bins(config, self.fft_samples)
        feat = config.features
        self.extractor = DpRtfExtractor(
            channel_count=geometry.channel_count,
            bins=self.bins,
            sample_rate=fs,
            hop_samples=self.hop_samples,
            config=ExtractorConfig(
                ctf_frames=feat.ctf_frames,
                rho=feat.rho,
                forgetting=feat.forgetting,
                psd_beta=feat.psd_beta,
                classify_kappa=feat.classify_kappa,
                classify_window_s=feat.classify_window_s,
                consistency_threshold=feat.consistency_threshold,
                noise_handling=feat.noise_handling,
            ),
        )
        self.localizer = OnlineLocalizer(self.grid, localizer_params(config))
        self.tracker = MultiSpeakerTracker(tracker_params(config)) if track else None

    def run(self, audio: AudioBuffer) -> PipelineResult:
        config = self.config
        if audio.sample_rate != config.stft.sample_rate:
            raise InputError(
                f"audio rate {audio.sample_rate} != configured "
                f"{config.stft.sample_rate}")
        if audio.channel_count != self.geometry.channel_count:
            raise InputError(
                f"audio has {audio.channel_count} channels, geometry has "
                f"{self.geometry.channel_count}")
        frames = frame_count(audio.num_samples, self.window_samples,
                             self.hop_samples)
        if frames == 0:
            raise InputError("audio shorter than one analysis window")

        fs = audio.sample_rate
        step = config.tracker.step_frames
        heatmap = np.empty((frames, self.grid.count))
        peaks_per_frame = []
        track_records: list[TrackRecord] = []
        directions = self.grid.directions

        started = time.perf_counter()
        for t in range(frames):
            start = t * self.hop_samples
            frame = audio.samples[:, start:start + self.window_samples]
            coeffs = np.fft.rfft(frame * self.taper, n=self.fft_samples, axis=1)
            features = self.extractor.update(coeffs)
            weights = self.localizer.update(features)
            heatmap[t] = weights
            peaks_per_frame.append(self.localizer.peaks())
            if self.tracker is not None and (t + 1) % step == 0:
                t_seconds = (t * self.hop_samples + self.window_samples / 2) / fs
                obs = ObservationSet(directions=directions, weights=weights,
                                     frame=self.tracker.frame,
                                     t_seconds=t_seconds)
                self.tracker.step(obs)
                for track in self.tracker.tracks:
                    track_records.append(TrackRecord(
                        t_seconds=t_seconds,
                        track_id=track.identity,
                        azimuth_deg=track.azimuth_deg,
                        angular_velocity_deg_s=track.angular_velocity_deg_s,
                        active=bool(track.active),
                        covariance=[float(v) for v in track.cov.ravel()],
                    ))
        wall = time.perf_counter() - started

        times = (np.arange(frames) * self.hop_samples
                 + self.window_samples / 2) / fs
        return PipelineResult(
            heatmap=heatmap,
            frame_times_s=times,
            azimuths_deg=self.grid.azimuths_deg.copy(),
            peaks=peaks_per_frame,
            track_records=track_records,
            wall_time_s=wall,
            duration_s=audio.duration_s,
        )


# ---------------------------------------------------------------------------
# High-level entry points (shared by the CLI and tests)
# ---------------------------------------------------------------------------

def make_pipeline(config: Config, geometry: ArrayGeometry,
                  hrtf_path=None, track: bool = False) -> OnlinePipeline:
    grid = None
    if hrtf_path is not None:
        fs = config.stft.sample_rate
        window = int(round(config.stft.window_ms * fs / 1000.0))
        fft = 1 << (window - 1).bit_length()
        grid = load_hrtf_table(hrtf_path, fft_samples=fft,
                               channel_count=geometry.channel_count)
    return OnlinePipeline(config, geometry, grid=grid, track=track)


def run_simulate(spec_path, out_dir, config: Config | None = None):
    """Render a scene file to ``scene.wav`` + ``ground_truth.json``."""
    import os
    config = config or Config()
    spec = SceneSpec.from_json(spec_path)
    audio, truth = render(spec, window_ms=config.stft.window_ms,
                          hop_ms=config.stft.hop_ms,
                          ctf_frames=config.features.ctf_frames)
    os.makedirs(out_dir, exist_ok=True)
    wav_path = os.path.join(out_dir, "scene.wav")
    gt_path = os.path.join(out_dir, "ground_truth.json")
    write_wav(wav_path, audio)
    export_ground_truth(truth, gt_path)
    return wav_path, gt_path


def evaluate_peaks(peak_records, truth: GroundTruth,
                   success_threshold_deg: float = 15.0):
    """Match per-frame peak detections against ground truth."""
    scores = []
    for record in peak_records:
        t = int(round((record["t_seconds"] - truth.frame_times_s[0])
                      / truth.frame_hop_s))
        t = min(max(t, 0), truth.frame_count - 1)
        active = truth.active[:, t]
        truths = truth.azimuths_deg[active, t]
        dets = [p["azimuth_deg"] for p in record["peaks"]]
        scores.append(greedy_match(dets, truths, success_threshold_deg))
    return aggregate(scores)


def evaluate_tracks(track_records, truth: GroundTruth,
                    success_threshold_deg: float = 15.0):
    """Match active tracks against ground truth at the tracker cadence."""
    by_time: dict[float, list] = {}
    for record in track_records:
        by_time.setdefault(record["t_seconds"], []).append(record)
    scores, ids, speaker_ids = [], [], []
    for t_seconds in sorted(by_time):
        t = int(round((t_seconds - truth.frame_times_s[0]) / truth.frame_hop_s))
        t = min(max(t, 0), truth.frame_count - 1)
        active_records = [r for r in by_time[t_seconds] if r["active"]]
        dets = [r["azimuth_deg"] for r in active_records]
        speakers = np.nonzero(truth.active[:, t])[0]
        truths = truth.azimuths_deg[speakers, t]
        scores.append(greedy_match(dets, truths, success_threshold_deg))
        ids.append([r["track_id"] for r in active_records])
        speaker_ids.append(speakers.tolist())
    return aggregate(scores, detection_ids=ids, truth_ids=speaker_ids)


def peaks_records(result: PipelineResult) -> list[dict]:
    return [
        {
            "frame": t,
            "t_seconds": float(result.frame_times_s[t]),
            "peaks": [{"azimuth_deg": az, "weight": w}
                      for az, w in result.peaks[t]],
        }
        for t in range(len(result.peaks))
    ]


def header_record(config: Config) -> dict:
    return {"type": "header", "version": __version__,
            "config": config.to_dict()}
