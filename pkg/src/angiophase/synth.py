"""
Synthetic cine sequences with known motion.

Gaussian blobs translate together along the image diagonal with a
sinusoidal offset, so the distance from their mean position to the origin
is an analytic function of the frame index and the ED/ES frames are known
exactly.
"""

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .frame_io import FrameSequence, Roi, save_sequence

_DIAGONAL = np.array([1.0, 1.0]) / math.sqrt(2.0)


@dataclass
class SynthConfig:
    width: int = 128
    height: int = 128
    num_frames: int = 45
    fps: float = 15.0
    period_frames: float = 15.0
    amplitude: float = 5.0
    num_blobs: int = 10
    blob_positions: list = None
    blob_sigma: float = 2.5
    blob_peak: float = 0.7
    background: float = 0.1
    noise_sigma: float = 0.0
    seed: int = 0
    distractor: bool = False
    margin: int = 20

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        if 0 < self.amplitude < 1:
            raise ValueError("amplitude must be 0 (static) or at least 1 px")
        if self.period_frames < 6:
            raise ValueError("period_frames must be >= 6")
        if self.num_frames < 2:
            raise ValueError("num_frames must be >= 2")
        count = self.num_blobs if self.blob_positions is None else len(self.blob_positions)
        if count < 4:
            raise ValueError("at least 4 blobs required")

    @property
    def roi(self):
        """Designated ROI: the frame minus a ``margin`` border."""
        m = self.margin
        return Roi(m, m, self.width - 2 * m, self.height - 2 * m)


@dataclass
class GroundTruth:
    ed_frames: list
    es_frames: list
    analytic_path: np.ndarray
    mean_distance: np.ndarray
    blob_positions: np.ndarray = field(repr=False, default=None)


def offsets(cfg):
    """Per-frame displacement a sin(2 pi n / T) along the diagonal, shape (n, 2)."""
    n = np.arange(cfg.num_frames)
    s = cfg.amplitude * np.sin(2.0 * np.pi * n / cfg.period_frames)
    return s[:, None] * _DIAGONAL[None, :]


def _place_blobs(cfg, rng):
    if cfg.blob_positions is not None:
        return np.asarray(cfg.blob_positions, dtype=np.float64)
    # room for the motion plus the tracking window inside the ROI
    lo = cfg.margin + 10.0
    hi_x = cfg.width - cfg.margin - 10.0
    hi_y = cfg.height - cfg.margin - 10.0
    if hi_x <= lo or hi_y <= lo:
        raise ValueError("frame too small for blob placement")
    min_sep = 6.0 * cfg.blob_sigma
    pts = []
    for _ in range(20000):
        p = rng.uniform([lo, lo], [hi_x, hi_y])
        if all(np.hypot(*(p - q)) >= min_sep for q in pts):
            pts.append(p)
            if len(pts) == cfg.num_blobs:
                return np.array(pts)
    raise ValueError(f"cannot place {cfg.num_blobs} blobs {min_sep:.1f} px apart")


def interior_extrema(x):
    """Exact interior strict maxima/minima of an analytic series (no plateaus expected)."""
    maxima = [n for n in range(1, len(x) - 1) if x[n] > x[n - 1] and x[n] > x[n + 1]]
    minima = [n for n in range(1, len(x) - 1) if x[n] < x[n - 1] and x[n] < x[n + 1]]
    return maxima, minima


def ground_truth(cfg, bases):
    path = offsets(cfg)
    mean = bases.mean(axis=0)
    dist = np.hypot(mean[0] + path[:, 0], mean[1] + path[:, 1])
    if cfg.amplitude == 0:
        ed, es = [], []
    else:
        ed, es = interior_extrema(dist)
    return GroundTruth(ed, es, path, dist, bases)


def render_frame(cfg, bases, offset, rng=None, distractor_box=None):
    y, x = np.mgrid[0:cfg.height, 0:cfg.width].astype(np.float64)
    img = np.full((cfg.height, cfg.width), cfg.background)
    two_s2 = 2.0 * cfg.blob_sigma ** 2
    reach = 5.0 * cfg.blob_sigma
    for bx, by in bases + offset:
        x0, x1 = int(max(0, bx - reach)), int(min(cfg.width, bx + reach + 1))
        y0, y1 = int(max(0, by - reach)), int(min(cfg.height, by + reach + 1))
        img[y0:y1, x0:x1] += cfg.blob_peak * np.exp(
            -((x[y0:y1, x0:x1] - bx) ** 2 + (y[y0:y1, x0:x1] - by) ** 2) / two_s2)
    if distractor_box is not None:
        bx0, by0, bw, bh = distractor_box
        img[by0:by0 + bh, bx0:bx0 + bw] = 1.0
    if rng is not None and cfg.noise_sigma > 0:
        img += rng.normal(0.0, cfg.noise_sigma, img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_cine(cfg):
    """Render the configured sequence; returns ``(FrameSequence, GroundTruth)``."""
    rng = np.random.default_rng(cfg.seed)
    bases = _place_blobs(cfg, rng)
    peak = cfg.amplitude / math.sqrt(2.0)
    reach = 3.0 * cfg.blob_sigma
    if (bases.min() - peak - reach < 0 or bases[:, 0].max() + peak + reach > cfg.width - 1
            or bases[:, 1].max() + peak + reach > cfg.height - 1):
        raise ValueError("blobs would leave the frame at peak amplitude")
    box = None
    if cfg.distractor:
        # electrode-like bright square in the border band outside the ROI
        side = max(4, cfg.margin - 6)
        box = (2, 2, side, side)
    truth = ground_truth(cfg, bases)
    frames = [render_frame(cfg, bases, o, rng, box) for o in truth.analytic_path]
    seq = FrameSequence(frames, cfg.fps, f"synth-{cfg.seed}")
    return seq, truth


def write_cine(out, cfg, seq=None, truth=None):
    """Write frames, ``ground_truth.csv`` (phase,frame) and ``meta.json``."""
    if seq is None or truth is None:
        seq, truth = generate_cine(cfg)
    save_sequence(out, seq.frames)
    with open(os.path.join(out, "ground_truth.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["phase", "frame"])
        rows = [("ED", f) for f in truth.ed_frames] + [("ES", f) for f in truth.es_frames]
        for phase, frame in sorted(rows, key=lambda r: r[1]):
            w.writerow([phase, frame])
    meta = {
        "fps": cfg.fps,
        "roi": str(cfg.roi),
        "config": {k: v for k, v in asdict(cfg).items() if k != "blob_positions"},
        "blob_positions": np.round(truth.blob_positions, 6).tolist(),
    }
    with open(os.path.join(out, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return seq, truth


def read_ground_truth(path):
    """Read ``phase,frame`` rows into ``{"ED": [...], "ES": [...]}``."""
    out = {"ED": [], "ES": []}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["phase"].strip().upper()].append(int(row["frame"]))
    return out
