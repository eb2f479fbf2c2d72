"""Command-line front end.

Subcommands: ``simulate | localize | track | evaluate | heatmap``.
Configuration comes from an optional JSON file; any value can be
overridden with a flag named after its dotted config path
(``--localizer.eta 0.1``).  Exit codes: 1 usage error, 2 input format
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .config import Config, dotted_paths
from .errors import InputError, NumericalError
from .metrics import realtime_factor
from .outputs import (
    format_metrics_table,
    read_heatmap_csv,
    read_jsonl,
    write_heatmap_csv,
    write_heatmap_pgm,
    write_jsonl,
    write_metrics_json,
)
from .pipeline import (
    evaluate_peaks,
    evaluate_tracks,
    header_record,
    make_pipeline,
    peaks_records,
    run_simulate,
)
from .simulator import load_ground_truth
from .steering import ArrayGeometry
from .stft import read_wav

EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    for path in dotted_paths():
        parser.add_argument(f"--{path}", dest=f"cfg::{path}", metavar="VALUE",
                            help=argparse.SUPPRESS)


def _load_config(args) -> Config:
    config = Config.from_json(args.config) if args.config else Config()
    for key, value in vars(args).items():
        if key.startswith("cfg::") and value is not None:
            config.apply_override(key[len("cfg::"):], value)
    return config


def build_parser() -> _Parser:
    parser = _Parser(prog="doatrack",
                     description="Multi-speaker azimuth localization and tracking")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="render a synthetic scene")
    p_sim.add_argument("--spec", required=True, help="scene spec JSON")
    p_sim.add_argument("--out-dir", required=True)
    _add_config_flags(p_sim)

    for name, help_text in (("localize", "frame-wise heatmap and peaks"),
                            ("track", "full tracking pipeline")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--wav", required=True)
        p.add_argument("--geometry", required=True, help="geometry JSON")
        p.add_argument("--hrtf", help="measured ratio table JSON")
        p.add_argument("--out-dir", required=True)
        _add_config_flags(p)

    p_eval = sub.add_parser("evaluate", help="score output against ground truth")
    group = p_eval.add_mutually_exclusive_group(required=True)
    group.add_argument("--tracks", help="tracks JSONL")
    group.add_argument("--peaks", help="peaks JSONL")
    p_eval.add_argument("--truth", required=True, help="ground-truth JSON")
    p_eval.add_argument("--out", help="metrics JSON output path")
    p_eval.add_argument("--timing", help="timing JSON from localize/track, "
                                         "adds the real-time factor")
    _add_config_flags(p_eval)

    p_map = sub.add_parser("heatmap", help="render a heatmap CSV to PGM")
    p_map.add_argument("--csv", required=True)
    p_map.add_argument("--out", required=True)
    _add_config_flags(p_map)
    return parser


def _cmd_simulate(args) -> int:
    config = _load_config(args)
    wav_path, gt_path = run_simulate(args.spec, args.out_dir, config)
    print(f"wrote {wav_path}\nwrote {gt_path}")
    return 0


def _cmd_process(args, track: bool) -> int:
    config = _load_config(args)
    geometry = ArrayGeometry.from_json(args.geometry)
    audio = read_wav(args.wav, sample_rate=config.stft.sample_rate)
    pipeline = make_pipeline(config, geometry, hrtf_path=args.hrtf, track=track)
    result = pipeline.run(audio)

    os.makedirs(args.out_dir, exist_ok=True)
    cfg = config.to_dict()
    write_heatmap_csv(os.path.join(args.out_dir, "heatmap.csv"),
                      result.heatmap, result.azimuths_deg,
                      result.frame_times_s, __version__, cfg)
    write_heatmap_pgm(os.path.join(args.out_dir, "heatmap.pgm"),
                      result.heatmap, __version__, cfg)
    write_jsonl(os.path.join(args.out_dir, "peaks.jsonl"),
                header_record(config),
                peaks_records(result))
    if track:
        write_jsonl(os.path.join(args.out_dir, "tracks.jsonl"),
                    header_record(config),
                    [r.to_json_dict() for r in result.track_records])
    # Wall-clock timing is inherently non-deterministic, so it lives in a
    # sidecar instead of the pipeline artifacts.
    timing = {"wall_time_s": result.wall_time_s,
              "signal_duration_s": result.duration_s,
              "realtime_factor": result.rf}
    with open(os.path.join(args.out_dir, "timing.json"), "w") as fh:
        json.dump(timing, fh, indent=2)
    print(f"processed {result.duration_s:.2f}s of audio in "
          f"{result.wall_time_s:.2f}s (RF {result.rf:.2f})")
    return 0


def _cmd_evaluate(args) -> int:
    config = _load_config(args)
    truth = load_ground_truth(args.truth)
    if args.tracks:
        _, records = read_jsonl(args.tracks)
        report = evaluate_tracks(records, truth)
    else:
        _, records = read_jsonl(args.peaks)
        report = evaluate_peaks(records, truth)
    if args.timing:
        with open(args.timing) as fh:
            timing = json.load(fh)
        report.realtime_factor = realtime_factor(
            timing["wall_time_s"], timing["signal_duration_s"])
    payload = report.to_dict()
    print(format_metrics_table(payload))
    if args.out:
        write_metrics_json(args.out, payload, __version__, config.to_dict())
        print(f"wrote {args.out}")
    return 0


def _cmd_heatmap(args) -> int:
    heatmap, _, _ = read_heatmap_csv(args.csv)
    write_heatmap_pgm(args.out, heatmap, __version__, {})
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "localize":
            return _cmd_process(args, track=False)
        if args.command == "track":
            return _cmd_process(args, track=True)
        if args.command == "evaluate":
            return _cmd_evaluate(args)
        if args.command == "heatmap":
            return _cmd_heatmap(args)
        parser.error(f"unknown command {args.command!r}")
    except InputError as exc:
        print(f"doatrack: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"doatrack: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"doatrack: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
