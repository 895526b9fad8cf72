"""
Command line entry point.

    angiophase preview --frames DIR --out first.pgm
    angiophase phases  --frames DIR --roi x0,y0,w,h --out OUTDIR
    angiophase synth   --out DIR --frames 45 --period 15 --amplitude 5 --noise 0.01 --seed 7
    angiophase eval    --auto OUT1/phases.json OUT2/phases.json --ref readers.csv
    angiophase sweep   --videos DIR1 DIR2 --thresholds 0.5,0.8,0.9

Exit codes: 0 success, 2 bad arguments, 3 input error, 4 pipeline failure.
"""

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict

from .corners import DetectorConfig, NoKeyPointsError
from .evaluation import (AnnotationSet, EvaluationError, agreement, threshold_sweep)
from .frame_io import FrameLoadError, Roi, RoiError, export_preview, load_sequence
from .pyramid_flow import FlowConfig
from .trajectory_phase import DISTANCE_MODES, NoTrackedPointsError, PhaseConfig

log = logging.getLogger("angiophase")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_PIPELINE = 4


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _float_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _roi(text):
    try:
        return Roi.parse(text)
    except RoiError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _add_detector_flags(p):
    g = p.add_argument_group("key point detection")
    g.add_argument("--threshold", type=float, default=0.8,
                   help="quality level relative to the strongest response (default 0.8)")
    g.add_argument("--max-points", type=int, default=100)
    g.add_argument("--min-distance", type=float, default=10.0)
    g.add_argument("--window-radius", type=int, default=1)


def _add_flow_flags(p):
    g = p.add_argument_group("tracking")
    g.add_argument("--omega", type=int, default=10, help="half-width of the LK window")
    g.add_argument("--levels", type=int, default=3, help="pyramid levels (1-4)")
    g.add_argument("--max-iters", type=int, default=30)
    g.add_argument("--min-step", type=float, default=0.01)


def _add_phase_flags(p):
    g = p.add_argument_group("phase detection")
    g.add_argument("--min-spacing", type=int, default=None,
                   help="frames between same-type events (default ceil(0.35*fps))")
    g.add_argument("--smooth", type=int, default=1, help="odd moving-average width")
    g.add_argument("--distance-mode", choices=DISTANCE_MODES, default="origin")


def _configs(args, threshold=None):
    """Build and validate every stage config before any work starts."""
    try:
        det = DetectorConfig(args.threshold if threshold is None else threshold,
                             args.max_points, args.min_distance, args.window_radius)
        flow = FlowConfig(args.omega, args.levels, args.max_iters, args.min_step)
        phase = PhaseConfig(args.min_spacing, args.smooth, args.distance_mode)
    except ValueError as exc:
        raise CliError(f"invalid configuration: {exc}", EXIT_USAGE) from None
    return det, flow, phase


def _load(path, fps=None):
    try:
        return load_sequence(path, fps)
    except FrameLoadError as exc:
        raise CliError(f"cannot load frames: {exc}", EXIT_INPUT) from None


def _write_series_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "d", "active"])
        for n, (d, c) in enumerate(zip(report.series.d, report.series.active_counts)):
            w.writerow([n + report.frame_offset, f"{d:.6f}", int(c)])


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def cmd_preview(args):
    seq = _load(args.frames)
    if args.start_frame:
        seq = seq.subsequence(args.start_frame)
    try:
        export_preview(seq, args.out)
    except OSError as exc:
        raise CliError(str(exc), EXIT_INPUT) from None
    print(f"wrote {args.out} ({seq.width}x{seq.height}); pick a ROI as x0,y0,w,h")
    return EXIT_OK


def cmd_phases(args):
    from .pipeline import run_pipeline

    det, flow, phase = _configs(args)
    t0 = time.perf_counter()
    seq = _load(args.frames, args.fps)
    t_load = time.perf_counter() - t0
    try:
        res = run_pipeline(seq, args.roi, det, flow, phase, args.start_frame)
    except RoiError as exc:
        raise CliError(f"invalid ROI: {exc}", EXIT_USAGE) from None
    except FrameLoadError as exc:
        raise CliError(f"invalid start frame: {exc}", EXIT_USAGE) from None
    except NoKeyPointsError as exc:
        raise CliError(f"detection failed: {exc}", EXIT_PIPELINE) from None
    except (NoTrackedPointsError, ValueError) as exc:
        raise CliError(f"pipeline failed: {exc}", EXIT_PIPELINE) from None

    os.makedirs(args.out, exist_ok=True)
    report = res.report
    body = report.to_dict()
    body["config"].update(
        roi=str(args.roi), detector=asdict(det), flow=asdict(flow),
        num_key_points=len(res.key_points))
    write_json(body, os.path.join(args.out, "phases.json"))
    res.key_points.to_csv(os.path.join(args.out, "keypoints.csv"))
    res.bundle.to_csv(os.path.join(args.out, "trajectories.csv"), args.start_frame)
    _write_series_csv(report, os.path.join(args.out, "series.csv"))
    t_plot = 0.0
    if not args.no_plot:
        from .plotting import plot_phase_series, plot_trajectories
        t = time.perf_counter()
        plot_phase_series(report, os.path.join(args.out, "series.png"))
        plot_trajectories(seq.frames[args.start_frame], res.bundle,
                          os.path.join(args.out, "trajectories.png"), args.roi,
                          args.start_frame)
        t_plot = time.perf_counter() - t
    for w in report.warnings:
        log.warning(w)
    tm = res.timings
    log.info("timing: load %.3fs detect %.3fs track %.3fs phase %.3fs plot %.3fs",
             t_load, tm["detect"], tm["track"], tm["phase"], t_plot)
    log.info("timing: total %.3fs", time.perf_counter() - t0)
    print(f"ED frames: {body['ed_frames']}")
    print(f"ES frames: {body['es_frames']}")
    return EXIT_OK


def cmd_synth(args):
    from .synth import SynthConfig, write_cine

    try:
        cfg = SynthConfig(width=args.width, height=args.height, num_frames=args.frames,
                          fps=args.fps, period_frames=args.period, amplitude=args.amplitude,
                          num_blobs=args.blobs, blob_sigma=args.sigma,
                          noise_sigma=args.noise, seed=args.seed,
                          distractor=args.distractor)
        _, truth = write_cine(args.out, cfg)
    except ValueError as exc:
        raise CliError(f"invalid synth configuration: {exc}", EXIT_USAGE) from None
    print(f"wrote {cfg.num_frames} frames to {args.out}; ROI {cfg.roi}; "
          f"ED {truth.ed_frames} ES {truth.es_frames}")
    return EXIT_OK


def _read_reports(paths):
    auto = {}
    for p in paths:
        try:
            with open(p) as fh:
                body = json.load(fh)
            auto[body["source_id"]] = {"ED": list(body["ed_frames"]),
                                       "ES": list(body["es_frames"])}
        except (OSError, ValueError, KeyError) as exc:
            raise CliError(f"cannot read phase report {p}: {exc}", EXIT_INPUT) from None
    return auto


def _read_annotations(path):
    try:
        return AnnotationSet.read_csv(path)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot read annotations {path}: {exc}", EXIT_INPUT) from None


def cmd_eval(args):
    auto = _read_reports(args.auto)
    ref = _read_annotations(args.ref)
    reader = args.reader
    if reader is None and len(ref.readers) > 1:
        reader = "consensus" if "consensus" in ref.readers else None
        if reader is None:
            raise CliError(f"several readers in {args.ref} ({', '.join(ref.readers)}); "
                           "choose one with --reader", EXIT_USAGE)
    try:
        rep = agreement(auto, ref, args.k, reader)
    except EvaluationError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    if rep.warnings:
        print("unmatched videos:\n  " + "\n  ".join(rep.warnings), file=sys.stderr)
    text = rep.to_text(f"agreement vs reader {reader or ref.readers[0] if ref.readers else '-'}")
    sys.stdout.write(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "agreement.txt"), "w") as fh:
            fh.write(text)
        rep.to_csv(os.path.join(args.out, "agreement.csv"))
    return EXIT_OK


def _video_roi(path, roi):
    if roi is not None:
        return roi
    meta = os.path.join(path, "meta.json")
    try:
        with open(meta) as fh:
            return Roi.parse(json.load(fh)["roi"])
    except (OSError, KeyError, ValueError):
        raise CliError(f"{path}: no --roi given and no usable meta.json", EXIT_USAGE) from None


def _ground_truth_annotations(paths, seqs):
    from .synth import read_ground_truth

    ref = AnnotationSet()
    for path, seq in zip(paths, seqs):
        gt_path = os.path.join(path, "ground_truth.csv")
        try:
            gt = read_ground_truth(gt_path)
        except (OSError, KeyError, ValueError) as exc:
            raise CliError(f"{gt_path}: {exc}", EXIT_INPUT) from None
        for phase, frames in gt.items():
            for f in frames:
                ref.add((seq.source_id, phase, f, "truth"))
    return ref


def cmd_sweep(args):
    from .plotting import plot_sweep

    if not args.thresholds:
        raise CliError("threshold list is empty", EXIT_USAGE)
    for t in args.thresholds:
        _configs(args, threshold=t)
    det, flow, phase = _configs(args, threshold=args.thresholds[0])
    seqs = [_load(p, args.fps) for p in args.videos]
    rois = [_video_roi(p, args.roi) for p in args.videos]
    ref = _read_annotations(args.ref) if args.ref else _ground_truth_annotations(args.videos, seqs)
    try:
        sweep = threshold_sweep(list(zip(seqs, rois)), ref, args.thresholds, det, flow,
                                phase, reader=args.reader)
    except EvaluationError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    text = sweep.to_text()
    sys.stdout.write(text)
    if not sweep.count_monotone():
        log.warning("key-point counts are not monotone in the threshold")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "sweep.txt"), "w") as fh:
            fh.write(text)
        sweep.to_csv(os.path.join(args.out, "sweep.csv"))
        with open(os.path.join(args.out, "sweep_counts.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "source_id", "key_points"])
            for r in sweep.rows:
                for s, n in sorted(r.key_point_counts.items()):
                    w.writerow([f"{r.threshold:g}", s, n])
        if not args.no_plot:
            plot_sweep(sweep, os.path.join(args.out, "sweep.png"))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="angiophase",
        description="End-diastole / end-systole frame detection in cine angiograms.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preview", parents=[common], help="export the detection frame for ROI selection")
    p.add_argument("--frames", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--start-frame", type=int, default=0)
    p.set_defaults(func=cmd_preview)

    p = sub.add_parser("phases", parents=[common], help="detect ED/ES frames in one sequence")
    p.add_argument("--frames", required=True)
    p.add_argument("--roi", required=True, type=_roi, help="x0,y0,w,h")
    p.add_argument("--fps", type=float, default=None)
    p.add_argument("--start-frame", type=int, default=0)
    p.add_argument("--out", default=".")
    p.add_argument("--no-plot", action="store_true")
    _add_detector_flags(p)
    _add_flow_flags(p)
    _add_phase_flags(p)
    p.set_defaults(func=cmd_phases)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic cine with ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=45)
    p.add_argument("--period", type=float, default=15.0)
    p.add_argument("--amplitude", type=float, default=5.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--distractor", action="store_true")
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--blobs", type=int, default=10)
    p.add_argument("--sigma", type=float, default=2.5)
    p.add_argument("--fps", type=float, default=15.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", parents=[common], help="agreement of phase reports with annotations")
    p.add_argument("--auto", nargs="+", required=True, help="phases.json files")
    p.add_argument("--ref", required=True, help="CSV source_id,phase,frame,reader")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--reader", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="agreement per detection threshold")
    p.add_argument("--videos", nargs="+", required=True, help="frame directories")
    p.add_argument("--thresholds", type=_float_list, default=[0.5, 0.8, 0.9])
    p.add_argument("--ref", default=None,
                   help="annotation CSV (default: ground_truth.csv in each video)")
    p.add_argument("--reader", default=None)
    p.add_argument("--roi", type=_roi, default=None,
                   help="shared ROI (default: meta.json in each video)")
    p.add_argument("--fps", type=float, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--no-plot", action="store_true")
    _add_detector_flags(p)
    _add_flow_flags(p)
    _add_phase_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"angiophase {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
