"""
Cardiac phase detection from tracked key points.

The trajectories are reduced to one number per frame, the distance from the
mean tracked position to the image origin.  Local maxima of that series are
end-diastole (ED) frames and local minima end-systole (ES) frames.
"""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .pyramid_flow import TrackState, TrajectoryBundle  # noqa: F401  (re-export)

log = logging.getLogger(__name__)

ED = "ED"
ES = "ES"
DISTANCE_MODES = ("origin", "anchored")


class NoTrackedPointsError(ValueError):
    pass


@dataclass
class DistanceSeries:
    d: np.ndarray
    active_counts: np.ndarray
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.d)


@dataclass(frozen=True)
class PhaseEvent:
    phase: str
    frame: int
    value: float


@dataclass(frozen=True)
class PhaseConfig:
    min_spacing: int = None
    smooth_window: int = 1
    distance_mode: str = "origin"

    def __post_init__(self):
        if self.min_spacing is not None and self.min_spacing < 0:
            raise ValueError(f"min_spacing must be >= 0, got {self.min_spacing}")
        if self.smooth_window < 1 or self.smooth_window % 2 == 0:
            raise ValueError(f"smooth_window must be a positive odd count, got {self.smooth_window}")
        if self.distance_mode not in DISTANCE_MODES:
            raise ValueError(f"distance_mode must be one of {DISTANCE_MODES}")

    def spacing_for(self, fps):
        if self.min_spacing is not None:
            return int(self.min_spacing)
        return default_min_spacing(fps)


def default_min_spacing(fps):
    """0.35 s worth of frames, rounded up."""
    return int(math.ceil(0.35 * fps - 1e-9))


@dataclass
class PhaseReport:
    series: DistanceSeries
    events: list
    fps: float
    min_spacing: int
    smooth_window: int
    distance_mode: str = "origin"
    warnings: list = field(default_factory=list)
    source_id: str = ""
    frame_offset: int = 0

    def frames(self, phase):
        return [e.frame for e in self.events if e.phase == phase]

    @property
    def ed_frames(self):
        return self.frames(ED)

    @property
    def es_frames(self):
        return self.frames(ES)

    def to_dict(self):
        off = self.frame_offset
        return {
            "source_id": self.source_id,
            "fps": self.fps,
            "start_frame": off,
            "ed_frames": [f + off for f in self.ed_frames],
            "es_frames": [f + off for f in self.es_frames],
            "events": [dict(asdict(e), frame=e.frame + off) for e in self.events],
            "d_series": [float(v) for v in self.series.d],
            "active_counts": [int(c) for c in self.series.active_counts],
            "config": {
                "min_spacing": self.min_spacing,
                "smooth_window": self.smooth_window,
                "distance_mode": self.distance_mode,
            },
            "warnings": list(self.warnings),
        }


def distance_series(bundle, mode="origin"):
    """Per-frame distance of the mean tracked position.

    ``origin`` measures to the top-left pixel (0, 0); ``anchored`` measures
    to the frame-0 mean.  Frames with no live point repeat the last value.
    """
    if mode not in DISTANCE_MODES:
        raise ValueError(f"unknown distance mode {mode!r}")
    tracked = bundle.tracked()
    counts = tracked.sum(axis=0)
    if bundle.num_frames == 0 or counts[0] == 0:
        raise NoTrackedPointsError("no tracked points at frame 0")
    d = np.empty(bundle.num_frames)
    warnings = []
    anchor = None
    for n in range(bundle.num_frames):
        if counts[n] == 0:
            d[n] = d[n - 1]
            continue
        mean = bundle.positions[tracked[:, n], n].mean(axis=0)
        if anchor is None:
            anchor = mean if mode == "anchored" else np.zeros(2)
        d[n] = math.hypot(*(mean - anchor))
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        warnings.append(
            f"no tracked points from frame {int(empty[0])}; distance held at last value")
    return DistanceSeries(d, counts, warnings)


def moving_average(x, width):
    """Centered moving average, edge values replicated."""
    x = np.asarray(x, dtype=np.float64)
    if width <= 1:
        return x.copy()
    half = width // 2
    p = np.pad(x, half, mode="edge")
    c = np.cumsum(np.concatenate([[0.0], p]))
    return (c[width:] - c[:-width]) / width


def local_extrema(x):
    """Interior strict local maxima and minima, plateaus reported at their first frame.

    Returns two index lists ``(maxima, minima)``.  A run of equal samples is
    an extremum when both neighbouring runs lie on the same side of it; runs
    touching either end of the series never count.
    """
    x = np.asarray(x)
    n = len(x)
    maxima, minima = [], []
    start = 0
    while start < n:
        stop = start
        while stop + 1 < n and x[stop + 1] == x[start]:
            stop += 1
        if start > 0 and stop < n - 1:
            left, right = x[start - 1], x[stop + 1]
            if x[start] > left and x[start] > right:
                maxima.append(start)
            elif x[start] < left and x[start] < right:
                minima.append(start)
        start = stop + 1
    return maxima, minima


def _more_extreme(x, i, j, sign):
    """Index of the more extreme sample (sign +1 max, -1 min); tie keeps earlier."""
    vi, vj = sign * x[i], sign * x[j]
    if vi == vj:
        return min(i, j)
    return i if vi > vj else j


def _enforce_spacing(x, idx, sign, spacing):
    """Keep the most extreme candidates, dropping any within ``spacing`` of a kept one."""
    order = sorted(idx, key=lambda i: (-sign * x[i], i))
    kept = []
    dropped = []
    for i in order:
        if all(abs(i - k) >= spacing for k in kept):
            kept.append(i)
        else:
            dropped.append(i)
    return sorted(kept), sorted(dropped)


def detect_phase_events(series, fps, cfg=PhaseConfig()):
    """ED/ES events from the local extrema of ``series``."""
    d = np.asarray(series.d if hasattr(series, "d") else series, dtype=np.float64)
    if not hasattr(series, "d"):
        series = DistanceSeries(d, np.zeros(len(d), dtype=int))
    if len(d) < 3:
        raise ValueError("phase detection needs at least 3 frames")
    spacing = cfg.spacing_for(fps)
    warnings = list(series.warnings)
    x = moving_average(d, cfg.smooth_window)

    maxima, minima = local_extrema(x)
    maxima, drop_max = _enforce_spacing(x, maxima, +1, spacing)
    minima, drop_min = _enforce_spacing(x, minima, -1, spacing)
    for phase, dropped in ((ED, drop_max), (ES, drop_min)):
        for i in dropped:
            warnings.append(
                f"{phase} candidate at frame {i} within {spacing} frames of a "
                f"stronger {phase}; suppressed")

    merged = sorted([(i, ED) for i in maxima] + [(i, ES) for i in minima])
    events = []
    for i, phase in merged:
        if events and events[-1][1] == phase:
            prev = events[-1][0]
            sign = 1 if phase == ED else -1
            keep = _more_extreme(x, prev, i, sign)
            lost = i if keep == prev else prev
            warnings.append(
                f"consecutive {phase} events at frames {prev} and {i}; kept {keep}, "
                f"dropped {lost}")
            events[-1] = (keep, phase)
        else:
            events.append((i, phase))

    if not events:
        warnings.append("no ED/ES events found")
    for w in warnings[len(series.warnings):]:
        log.info(w)
    return PhaseReport(
        series=series,
        events=[PhaseEvent(p, int(i), float(d[i])) for i, p in events],
        fps=float(fps),
        min_spacing=spacing,
        smooth_window=cfg.smooth_window,
        distance_mode=cfg.distance_mode,
        warnings=warnings,
    )
