"""Scoring of localization and tracking output against ground truth.

Detections and ground-truth speakers are paired per frame by greedy
matching on wrap-aware azimuth distance; pairs within the success
threshold contribute to the mean absolute error, everything else counts
as missed detections and false alarms.  Identity switches are counted
over successfully matched frames only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .localizer import circular_distance_deg, peak_select


@dataclass
class FrameScore:
    """Matching outcome of a single frame."""

    matches: list = field(default_factory=list)   # (det_idx, truth_idx, error_deg)
    missed: int = 0
    false_alarms: int = 0
    num_truths: int = 0
    num_detections: int = 0


@dataclass
class MetricsReport:
    md_rate: float
    fa_rate: float
    mae_deg: float
    id_switches: int | None
    realtime_factor: float | None = None

    def to_dict(self) -> dict:
        return {
            "md_rate": self.md_rate,
            "fa_rate": self.fa_rate,
            "mae_deg": self.mae_deg,
            "id_switches": self.id_switches,
            "realtime_factor": self.realtime_factor,
        }


def greedy_match(detections, truths, success_threshold_deg: float = 15.0) -> FrameScore:
    """Pair detections with ground-truth azimuths, smallest difference first.

    Repeatedly picks the globally smallest remaining wrap-aware difference
    (ties broken by lower detection index, then lower truth index) until
    one side is exhausted.  Pairs with difference <= threshold are
    successful matches; an over-threshold pair counts as one miss plus one
    false alarm, as do unmatched truths and detections respectively.
    """
    detections = np.atleast_1d(np.asarray(detections, dtype=float))
    truths = np.atleast_1d(np.asarray(truths, dtype=float))
    score = FrameScore(num_truths=len(truths), num_detections=len(detections))
    if len(truths) == 0:
        score.false_alarms = len(detections)
        return score
    if len(detections) == 0:
        score.missed = len(truths)
        return score

    diffs = circular_distance_deg(detections[:, None], truths[None, :])
    det_free = np.ones(len(detections), dtype=bool)
    truth_free = np.ones(len(truths), dtype=bool)
    while det_free.any() and truth_free.any():
        masked = np.where(det_free[:, None] & truth_free[None, :], diffs, np.inf)
        det_idx, truth_idx = np.unravel_index(np.argmin(masked), masked.shape)
        error = masked[det_idx, truth_idx]
        det_free[det_idx] = truth_free[truth_idx] = False
        if error <= success_threshold_deg:
            score.matches.append((int(det_idx), int(truth_idx), float(error)))
        else:
            score.missed += 1
            score.false_alarms += 1
    score.missed += int(truth_free.sum())
    score.false_alarms += int(det_free.sum())
    return score


def aggregate(frame_scores, detection_ids=None, truth_ids=None) -> MetricsReport:
    """Combine per-frame scores into rates, MAE and identity switches.

    Parameters
    ----------
    frame_scores : sequence of FrameScore
    detection_ids : optional sequence (one entry per frame) of per-detection
        identity labels.  When given, identity switches are counted per
        ground-truth speaker over frames where that speaker is
        successfully matched; gaps do not count as switches.
    truth_ids : optional sequence (one entry per frame) mapping each
        frame's truth positions to stable speaker identities.  Required
        for meaningful switch counts when the per-frame truth list is a
        filtered subset (e.g. active speakers only); defaults to the
        positional index.
    """
    total_truths = sum(s.num_truths for s in frame_scores)
    total_md = sum(s.missed for s in frame_scores)
    total_fa = sum(s.false_alarms for s in frame_scores)
    errors = [e for s in frame_scores for (_, _, e) in s.matches]

    switches = None
    if detection_ids is not None:
        switches = 0
        last_id: dict[object, object] = {}
        for frame, (score, ids) in enumerate(zip(frame_scores, detection_ids)):
            for det_idx, truth_idx, _ in score.matches:
                speaker = (truth_ids[frame][truth_idx]
                           if truth_ids is not None else truth_idx)
                track = ids[det_idx]
                if speaker in last_id and last_id[speaker] != track:
                    switches += 1
                last_id[speaker] = track

    return MetricsReport(
        md_rate=100.0 * total_md / total_truths if total_truths else 0.0,
        fa_rate=100.0 * total_fa / total_truths if total_truths else 0.0,
        mae_deg=float(np.mean(errors)) if errors else 0.0,
        id_switches=switches,
    )


def roc_sweep(heatmap: np.ndarray, azimuths_deg: np.ndarray,
              truth_azimuths, truth_active, thresholds,
              min_separation_deg: float = 15.0,
              success_threshold_deg: float = 15.0) -> list[tuple[float, float]]:
    """(FA rate, MD rate) per peak-selection threshold.

    ``heatmap`` is (frames, D); ``truth_azimuths``/``truth_active`` are
    (sources, frames).  One point per threshold: peaks above the threshold
    become detections, matched greedily per frame.
    """
    truth_azimuths = np.asarray(truth_azimuths, float)
    truth_active = np.asarray(truth_active, bool)
    points = []
    for threshold in thresholds:
        scores = []
        for t in range(heatmap.shape[0]):
            peaks = peak_select(heatmap[t], azimuths_deg, threshold,
                                min_separation_deg)
            dets = [az for az, _ in peaks]
            truths = truth_azimuths[truth_active[:, t], t]
            scores.append(greedy_match(dets, truths, success_threshold_deg))
        report = aggregate(scores)
        points.append((report.fa_rate, report.md_rate))
    return points


def realtime_factor(wall_time_s: float, signal_duration_s: float) -> float:
    """Processing time divided by signal length."""
    return wall_time_s / signal_duration_s
