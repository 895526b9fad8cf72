"""
Pyramidal Lucas-Kanade tracking of sparse points.

Coarse-to-fine scheme: the flow guess starts at zero on the coarsest level,
each level refines a residual displacement by Newton iterations on the
windowed sum of squared differences, and the guess handed down to the next
finer level is twice the accumulated flow.

All solvers work on batches of points; the single-point functions
``lk_level_solve`` and ``track_point`` are thin wrappers.
"""

import logging
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .corners import min_eigenvalue

log = logging.getLogger(__name__)

MAX_LEVELS = 4
_BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


class TrackState(IntEnum):
    TRACKED = 0
    LOST_OUT_OF_BOUNDS = 1
    LOST_ILL_CONDITIONED = 2
    LOST_DIVERGED = 3

    @property
    def label(self):
        return ("Tracked", "LostOutOfBounds", "LostIllConditioned",
                "LostDiverged")[self]


@dataclass(frozen=True)
class FlowConfig:
    omega: int = 10
    num_levels: int = 3
    max_iterations: int = 30
    min_step: float = 0.01
    min_eig_threshold: float = 1e-4

    def __post_init__(self):
        if self.omega < 1:
            raise ValueError(f"omega must be >= 1, got {self.omega}")
        if not 1 <= self.num_levels <= MAX_LEVELS:
            raise ValueError(f"num_levels must be in 1..{MAX_LEVELS}, got {self.num_levels}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.min_step <= 0:
            raise ValueError(f"min_step must be positive, got {self.min_step}")


# --- coarse-to-fine identities ---------------------------------------------

def level_coordinate(p, level):
    """Position of a level-0 point on pyramid level ``level``: p / 2**level."""
    return np.asarray(p, dtype=np.float64) / (2.0 ** level)


def initial_guess(n=None):
    """Zero flow guess on the coarsest level."""
    return np.zeros(2) if n is None else np.zeros((n, 2))


def propagate_guess(g, d):
    """Guess for the next finer level: 2 (g + d)."""
    return 2.0 * (np.asarray(g, dtype=np.float64) + np.asarray(d, dtype=np.float64))


def final_flow(g0, d0):
    """Total level-0 flow: g0 + d0."""
    return np.asarray(g0, dtype=np.float64) + np.asarray(d0, dtype=np.float64)


# --- pyramid ---------------------------------------------------------------

def _smooth(img):
    h, w = img.shape
    p = np.pad(img, 2, mode="edge")
    rows = sum(k * p[:, i:i + w] for i, k in enumerate(_BINOMIAL5))
    return sum(k * rows[i:i + h, :] for i, k in enumerate(_BINOMIAL5))


def downsample(img):
    """Binomial low-pass then keep every second sample: size (n+1)//2."""
    return _smooth(img)[::2, ::2]


def central_gradients(img):
    """(I(x+1) - I(x-1)) / 2 along each axis, replicated edges."""
    p = np.pad(img, 1, mode="edge")
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return gx, gy


def fit_levels(shape, num_levels, omega):
    """Largest level count <= num_levels whose top level still holds the window."""
    n = min(num_levels, MAX_LEVELS)
    while n > 1 and min(shape) < 2 ** (n - 1) * (2 * omega + 3):
        n -= 1
    return n


@dataclass
class ImagePyramid:
    levels: list
    grads: list = field(default_factory=list)

    @property
    def num_levels(self):
        return len(self.levels)

    def gradients(self, level):
        while len(self.grads) <= level:
            self.grads.append(None)
        if self.grads[level] is None:
            self.grads[level] = central_gradients(self.levels[level])
        return self.grads[level]


def build_pyramid(frame, num_levels=3, omega=10):
    """Gaussian pyramid with level 0 the frame itself.

    The level count is reduced when the frame is too small to hold the
    tracking window on the coarsest level.
    """
    frame = np.asarray(frame, dtype=np.float64)
    n = fit_levels(frame.shape, num_levels, omega)
    levels = [frame]
    for _ in range(n - 1):
        levels.append(downsample(levels[-1]))
    return ImagePyramid(levels)


# --- sampling --------------------------------------------------------------

def bilinear(img, x, y):
    """Bilinear samples of ``img`` at coordinates (x=col, y=row).

    Coordinates are clamped to the image, so callers decide bounds policy.
    """
    h, w = img.shape
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.intp), w - 2)
    y0 = np.minimum(np.floor(y).astype(np.intp), h - 2)
    fx = x - x0
    fy = y - y0
    i00 = img[y0, x0]
    i01 = img[y0, x0 + 1]
    i10 = img[y0 + 1, x0]
    i11 = img[y0 + 1, x0 + 1]
    top = i00 + fx * (i01 - i00)
    bot = i10 + fx * (i11 - i10)
    return top + fy * (bot - top)


def _outside(img, x, y):
    """Per row: does any coordinate leave the image?"""
    h, w = img.shape
    return np.any((x < 0) | (x > w - 1) | (y < 0) | (y > h - 1), axis=-1)


def _window_offsets(omega):
    r = np.arange(-omega, omega + 1, dtype=np.float64)
    oy, ox = np.meshgrid(r, r, indexing="ij")
    return ox.ravel(), oy.ravel()


def window_error(a, b, p, g, d, omega):
    """Windowed SSD between a around p and b around p + g + d (one point)."""
    ox, oy = _window_offsets(omega)
    ax = bilinear(a, p[0] + ox, p[1] + oy)
    bx = bilinear(b, p[0] + g[0] + d[0] + ox, p[1] + g[1] + d[1] + oy)
    return float(np.sum((ax - bx) ** 2))


# --- level solver ----------------------------------------------------------

def solve_level(a, b, p, g, cfg, grad_a=None, strict=True, final_level=True):
    """Newton refinement of the residual flow for a batch of points.

    ``p`` and ``g`` are ``(n, 2)``.  Returns ``(d, status)``.  With
    ``strict`` every sampled coordinate must stay inside the image or the
    point is lost; otherwise samples are clamped to the border.  Points whose
    window is ill-conditioned get ``d = 0``; ``final_level`` decides whether
    that, or a non-converged runaway step, costs the point.
    """
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    g = np.atleast_2d(np.asarray(g, dtype=np.float64))
    n = len(p)
    status = np.full(n, TrackState.TRACKED, dtype=np.int8)
    d = np.zeros((n, 2))
    if n == 0:
        return d, status
    if grad_a is None:
        grad_a = central_gradients(a)
    ox, oy = _window_offsets(cfg.omega)
    area = ox.size

    # points handed in already lost (NaN) have no position inside the frame
    gone = ~np.isfinite(p).all(axis=1) | ~np.isfinite(g).all(axis=1)
    if gone.any():
        status[gone] = TrackState.LOST_OUT_OF_BOUNDS
        p = np.where(gone[:, None], 0.0, p)
        g = np.where(gone[:, None], 0.0, g)
    xs = p[:, 0:1] + ox
    ys = p[:, 1:2] + oy
    if strict:
        status[_outside(a, xs, ys)] = TrackState.LOST_OUT_OF_BOUNDS
    patch = bilinear(a, xs, ys)
    ix = bilinear(grad_a[0], xs, ys)
    iy = bilinear(grad_a[1], xs, ys)
    gxx = np.sum(ix * ix, axis=1)
    gxy = np.sum(ix * iy, axis=1)
    gyy = np.sum(iy * iy, axis=1)
    det = gxx * gyy - gxy * gxy
    ill = (min_eigenvalue(gxx, gxy, gyy) / area < cfg.min_eig_threshold) | (det <= 0)
    ill &= status == TrackState.TRACKED
    if final_level:
        status[ill] = TrackState.LOST_ILL_CONDITIONED

    live = np.flatnonzero((status == TrackState.TRACKED) & ~ill)
    converged = np.zeros(n, dtype=bool)
    for _ in range(cfg.max_iterations):
        if live.size == 0:
            break
        shift = g[live] + d[live]
        bx = xs[live] + shift[:, 0:1]
        by = ys[live] + shift[:, 1:2]
        if strict:
            out = _outside(b, bx, by)
            if out.any():
                status[live[out]] = TrackState.LOST_OUT_OF_BOUNDS
                keep = ~out
                live, bx, by = live[keep], bx[keep], by[keep]
                if live.size == 0:
                    break
        err = patch[live] - bilinear(b, bx, by)
        mx = np.sum(err * ix[live], axis=1)
        my = np.sum(err * iy[live], axis=1)
        dt = det[live]
        step_x = (gyy[live] * mx - gxy[live] * my) / dt
        step_y = (gxx[live] * my - gxy[live] * mx) / dt
        d[live, 0] += step_x
        d[live, 1] += step_y
        bad = ~np.isfinite(d[live]).all(axis=1)
        if bad.any():
            status[live[bad]] = TrackState.LOST_DIVERGED
            d[live[bad]] = 0.0
        done = np.hypot(step_x, step_y) < cfg.min_step
        converged[live[done]] = True
        live = live[~done & ~bad]
    if final_level:
        runaway = ((~converged) & (status == TrackState.TRACKED) & ~ill
                   & (np.hypot(d[:, 0], d[:, 1]) > cfg.omega))
        status[runaway] = TrackState.LOST_DIVERGED
    d[status != TrackState.TRACKED] = 0.0
    return d, status


def lk_level_solve(a, b, p_level, g, cfg=FlowConfig()):
    """Residual flow of one point on one level; returns ``(d, TrackState)``."""
    d, status = solve_level(np.asarray(a, dtype=np.float64),
                            np.asarray(b, dtype=np.float64),
                            np.reshape(p_level, (1, 2)), np.reshape(g, (1, 2)), cfg)
    return d[0], TrackState(int(status[0]))


# --- coarse-to-fine tracking -------------------------------------------------

def track_points(pyr_a, pyr_b, points, cfg=FlowConfig()):
    """Track level-0 ``points`` (n, 2) from pyramid a to pyramid b.

    Returns ``(new_points, status)``.  Coarse levels clamp samples at the
    border; level 0 enforces strict bounds and the loss criteria.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    top = min(pyr_a.num_levels, pyr_b.num_levels) - 1
    g = initial_guess(len(points))
    status = np.full(len(points), TrackState.TRACKED, dtype=np.int8)
    for level in range(top, -1, -1):
        p_level = level_coordinate(points, level)
        d, st = solve_level(pyr_a.levels[level], pyr_b.levels[level], p_level, g, cfg,
                            grad_a=pyr_a.gradients(level),
                            strict=(level == 0), final_level=(level == 0))
        if level > 0:
            g = propagate_guess(g, d)
        else:
            status = st
            g = final_flow(g, d)
    new_points = points + g
    new_points[status != TrackState.TRACKED] = np.nan
    return new_points, status


def track_point(pyr_a, pyr_b, p, cfg=FlowConfig()):
    """Track a single point; returns ``(new_position, TrackState)``."""
    new, status = track_points(pyr_a, pyr_b, np.reshape(p, (1, 2)), cfg)
    return new[0], TrackState(int(status[0]))


@dataclass
class TrajectoryBundle:
    """Tracked positions ``(n_points, n_frames, 2)`` (NaN once lost) and statuses."""
    positions: np.ndarray
    statuses: np.ndarray
    warnings: list = field(default_factory=list)

    @property
    def num_frames(self):
        return self.positions.shape[1]

    @property
    def num_points(self):
        return self.positions.shape[0]

    def tracked(self):
        return self.statuses == TrackState.TRACKED

    def to_csv(self, path, frame_offset=0):
        with open(path, "w", newline="") as fh:
            fh.write("frame,point_id,x,y,status\n")
            for n in range(self.num_frames):
                for k in range(self.num_points):
                    st = TrackState(int(self.statuses[k, n]))
                    if st != TrackState.TRACKED:
                        continue
                    x, y = self.positions[k, n]
                    fh.write(f"{n + frame_offset},{k},{x:.3f},{y:.3f},{st.label}\n")


def track_sequence(seq, points, cfg=FlowConfig()):
    """Follow key points detected on frame 0 through every later frame."""
    xy = points.xy if hasattr(points, "xy") else np.asarray(points, dtype=np.float64)
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    frames = seq.frames if hasattr(seq, "frames") else seq
    n_frames = len(frames)
    n_pts = len(xy)
    positions = np.full((n_pts, n_frames, 2), np.nan)
    statuses = np.empty((n_pts, n_frames), dtype=np.int8)
    positions[:, 0] = xy
    statuses[:, 0] = TrackState.TRACKED
    bundle = TrajectoryBundle(positions, statuses)

    current = xy.copy()
    alive = np.ones(n_pts, dtype=bool)
    state = np.full(n_pts, TrackState.TRACKED, dtype=np.int8)
    pyr_a = build_pyramid(frames[0], cfg.num_levels, cfg.omega)
    for n in range(1, n_frames):
        pyr_b = build_pyramid(frames[n], cfg.num_levels, cfg.omega)
        idx = np.flatnonzero(alive)
        if idx.size:
            new, st = track_points(pyr_a, pyr_b, current[idx], cfg)
            current[idx] = new
            state[idx] = st
            alive[idx] = st == TrackState.TRACKED
        positions[alive, n] = current[alive]
        statuses[:, n] = state
        pyr_a = pyr_b
    if not alive.any():
        lost_at = int(np.argmax(~bundle.tracked().any(axis=0)))
        msg = f"all points lost by frame {lost_at} of {n_frames}"
        log.warning(msg)
        bundle.warnings.append(msg)
    return bundle
