"""End-to-end run: key points on the first frame, tracking, phase detection."""

import logging
import time
from dataclasses import dataclass, field

from .corners import DetectorConfig, detect_key_points
from .frame_io import validate_roi
from .pyramid_flow import FlowConfig, track_sequence
from .trajectory_phase import PhaseConfig, detect_phase_events, distance_series

log = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    key_points: object
    bundle: object
    report: object
    timings: dict = field(default_factory=dict)


def run_pipeline(seq, roi, detector=DetectorConfig(), flow=FlowConfig(),
                 phase=PhaseConfig(), start_frame=0):
    """Detect, track and classify; frame indices in the report refer to ``seq``."""
    timings = {}
    t_start = time.perf_counter()
    if start_frame:
        seq_run = seq.subsequence(start_frame)
    else:
        seq_run = seq
    validate_roi(roi, seq_run.frames[0])

    t = time.perf_counter()
    kps = detect_key_points(seq_run.frames[0], roi, detector)
    timings["detect"] = time.perf_counter() - t
    log.info("detected %d key points in %.3f s", len(kps), timings["detect"])

    t = time.perf_counter()
    bundle = track_sequence(seq_run, kps, flow)
    timings["track"] = time.perf_counter() - t
    log.info("tracked %d frames in %.3f s", bundle.num_frames, timings["track"])

    t = time.perf_counter()
    series = distance_series(bundle, phase.distance_mode)
    series.warnings = bundle.warnings + series.warnings
    report = detect_phase_events(series, seq.fps, phase)
    report.source_id = seq.source_id
    report.frame_offset = start_frame
    timings["phase"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - t_start
    return PipelineResult(kps, bundle, report, timings)
