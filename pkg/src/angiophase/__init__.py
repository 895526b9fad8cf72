"""End-diastolic / end-systolic frame detection from tracked vessel key points."""

from .corners import DetectorConfig, KeyPointSet, corner_response, detect_key_points, select_key_points, sobel_gradients
from .evaluation import AnnotationSet, DiffHistogram, agreement, diff_histogram, match_events, reader_delta, threshold_sweep, within_k_rate
from .frame_io import FrameSequence, Roi, export_preview, load_sequence, validate_roi
from .pipeline import run_pipeline
from .pyramid_flow import FlowConfig, TrackState, TrajectoryBundle, build_pyramid, lk_level_solve, track_point, track_sequence
from .synth import SynthConfig, generate_cine
from .trajectory_phase import PhaseConfig, PhaseEvent, PhaseReport, detect_phase_events, distance_series

__version__ = "0.1.0"
