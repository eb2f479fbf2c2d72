"""Artifact readers and writers: heatmaps, peak/track streams, metrics.

All files are written atomically (temp file + rename) and embed the
resolved configuration in their header so any artifact is traceable to
the run that produced it.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .errors import InputError


def atomic_write_bytes(path, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _header_comment(version: str, config: dict) -> str:
    return json.dumps({"version": version, "config": config},
                      separators=(",", ":"), sort_keys=True)


def write_heatmap_csv(path, heatmap: np.ndarray, azimuths_deg: np.ndarray,
                      frame_times_s: np.ndarray, version: str,
                      config: dict) -> None:
    """Rows = frames, columns = candidate directions; '#' header lines."""
    lines = [
        "# " + _header_comment(version, config),
        "# azimuths_deg: " + ",".join(f"{a:g}" for a in azimuths_deg),
        "# column 0: frame time (s); columns 1..D: direction weights",
    ]
    for t in range(heatmap.shape[0]):
        row = [f"{frame_times_s[t]:.6f}"]
        row += [f"{v:.9e}" for v in heatmap[t]]
        lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_heatmap_csv(path):
    """Returns (heatmap (T, D), azimuths (D,), frame_times (T,))."""
    azimuths = None
    times, rows = [], []
    try:
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    if line.startswith("# azimuths_deg:"):
                        azimuths = np.asarray(
                            line.split(":", 1)[1].split(","), dtype=float)
                    continue
                values = line.split(",")
                times.append(float(values[0]))
                rows.append([float(v) for v in values[1:]])
    except OSError as exc:
        raise InputError(f"cannot read heatmap {path}: {exc}") from exc
    except ValueError as exc:
        raise InputError(f"{path}: malformed heatmap CSV ({exc})") from exc
    if azimuths is None or not rows:
        raise InputError(f"{path}: missing azimuth header or data rows")
    return np.asarray(rows), azimuths, np.asarray(times)


def write_heatmap_pgm(path, heatmap: np.ndarray, version: str,
                      config: dict) -> None:
    """8-bit binary PGM, rows = frames, columns = directions."""
    peak = float(heatmap.max())
    pixels = np.zeros(heatmap.shape, dtype=np.uint8)
    if peak > 0:
        pixels = np.round(255.0 * heatmap / peak).astype(np.uint8)
    header = (
        f"P5\n# {_header_comment(version, config)}\n"
        f"{heatmap.shape[1]} {heatmap.shape[0]}\n255\n"
    )
    atomic_write_bytes(path, header.encode("ascii") + pixels.tobytes())


def write_jsonl(path, header: dict, records) -> None:
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(record, sort_keys=True) for record in records]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_jsonl(path):
    """Returns (header dict or None, list of records)."""
    records = []
    header = None
    try:
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                if record.get("type") == "header":
                    header = record
                else:
                    records.append(record)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON lines ({exc})") from exc
    return header, records


def write_metrics_json(path, report_dict: dict, version: str,
                       config: dict) -> None:
    payload = {"version": version, "config": config, "metrics": report_dict}
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def format_metrics_table(report_dict: dict) -> str:
    labels = {
        "md_rate": ("missed-detection rate", "%"),
        "fa_rate": ("false-alarm rate", "%"),
        "mae_deg": ("mean absolute error", "deg"),
        "id_switches": ("identity switches", ""),
        "realtime_factor": ("real-time factor", ""),
    }
    lines = []
    for key, (label, unit) in labels.items():
        value = report_dict.get(key)
        shown = "n/a" if value is None else (
            f"{value:.2f}" if isinstance(value, float) else str(value))
        lines.append(f"{label:<24} {shown:>8} {unit}")
    return "\n".join(lines)
