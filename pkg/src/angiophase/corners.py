"""
Shi-Tomasi key point detection.

The response at each pixel is the smaller eigenvalue of the structure tensor
accumulated over a square window of Sobel gradients.  Key points are the
strongest responses relative to the ROI maximum, thinned greedily so that no
two are closer than ``min_distance``.
"""

from dataclasses import dataclass

import numpy as np

from .frame_io import validate_roi


class NoKeyPointsError(ValueError):
    """The ROI contains no texture to detect key points on."""


@dataclass(frozen=True)
class DetectorConfig:
    quality_threshold: float = 0.8
    max_points: int = 100
    min_distance: float = 10.0
    window_radius: int = 1

    def __post_init__(self):
        if not 0.0 < self.quality_threshold <= 1.0:
            raise ValueError(
                f"quality_threshold must be in (0, 1], got {self.quality_threshold}")
        if self.max_points < 1:
            raise ValueError(f"max_points must be >= 1, got {self.max_points}")
        if self.min_distance < 0:
            raise ValueError(f"min_distance must be >= 0, got {self.min_distance}")
        if self.window_radius < 0:
            raise ValueError(f"window_radius must be >= 0, got {self.window_radius}")


@dataclass
class GradientField:
    ix: np.ndarray
    iy: np.ndarray


@dataclass
class CornerResponseMap:
    r: np.ndarray
    window_radius: int


@dataclass
class KeyPointSet:
    """Key points ordered by descending response.

    ``xy`` is an ``(n, 2)`` array of ``(x, y)`` = ``(column, row)`` positions.
    """
    xy: np.ndarray
    response: np.ndarray

    def __len__(self):
        return len(self.xy)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("id,x,y,response\n")
            for k, ((x, y), r) in enumerate(zip(self.xy, self.response)):
                fh.write(f"{k},{x:.3f},{y:.3f},{r:.9g}\n")


def sobel_gradients(frame):
    """Sobel derivatives scaled by 1/8, with replicated-edge borders.

    Computed in separable form (1-2-1 smoothing, then a difference of the
    two outer lines) so a constant frame gives exactly zero.
    """
    frame = np.asarray(frame, dtype=np.float64)
    p = np.pad(frame, 1, mode="edge")
    v = p[:-2, :] + 2.0 * p[1:-1, :] + p[2:, :]
    ix = (v[:, 2:] - v[:, :-2]) / 8.0
    hsum = p[:, :-2] + 2.0 * p[:, 1:-1] + p[:, 2:]
    iy = (hsum[2:, :] - hsum[:-2, :]) / 8.0
    return GradientField(ix, iy)


def _box_sum(a, radius):
    """Sum over the (2r+1)^2 neighbourhood; valid region only, shape shrinks by 2r."""
    h, w = a.shape
    size = 2 * radius + 1
    out = np.zeros((h - 2 * radius, w - 2 * radius))
    for dy in range(size):
        for dx in range(size):
            out += a[dy:dy + h - 2 * radius, dx:dx + w - 2 * radius]
    return out


def min_eigenvalue(a, b, c):
    """Smaller eigenvalue of the symmetric matrix [[a, b], [b, c]]."""
    lam = 0.5 * ((a + c) - np.sqrt((a - c) ** 2 + 4.0 * b * b))
    # rounding can push a PSD eigenvalue a hair below zero
    return np.maximum(lam, 0.0)


def corner_response(frame, roi, cfg=DetectorConfig()):
    """Minimum-eigenvalue response over ``roi``; zero elsewhere.

    Only pixels whose full summation window lies inside the ROI receive a
    response, so structure outside the ROI never leaks in.
    """
    frame = np.asarray(frame, dtype=np.float64)
    validate_roi(roi, frame)
    rad = cfg.window_radius
    if roi.w < 2 * rad + 1 or roi.h < 2 * rad + 1:
        raise ValueError(
            f"ROI {roi.w}x{roi.h} is smaller than the {2 * rad + 1}x{2 * rad + 1} window")
    grad = sobel_gradients(frame)
    rows, cols = roi.slices
    ix, iy = grad.ix[rows, cols], grad.iy[rows, cols]
    a = _box_sum(ix * ix, rad)
    b = _box_sum(ix * iy, rad)
    c = _box_sum(iy * iy, rad)
    r = np.zeros_like(frame)
    r[roi.y0 + rad:roi.y0 + roi.h - rad,
      roi.x0 + rad:roi.x0 + roi.w - rad] = min_eigenvalue(a, b, c)
    return CornerResponseMap(r, rad)


def select_key_points(rmap, cfg=DetectorConfig()):
    """Greedy selection of strong, well-separated response maxima."""
    r = rmap.r
    rmax = float(r.max())
    if rmax <= 0.0:
        raise NoKeyPointsError("no key points: corner response is zero everywhere in the ROI")
    flat = r.ravel()
    cand = np.flatnonzero((flat >= cfg.quality_threshold * rmax) & (flat > 0.0))
    # stable sort keeps row-major order among equal responses
    cand = cand[np.argsort(-flat[cand], kind="stable")]
    w = r.shape[1]
    cy, cx = np.divmod(cand, w)
    cx = cx.astype(np.float64)
    cy = cy.astype(np.float64)

    min_d2 = float(cfg.min_distance) ** 2
    keep = []
    acc_x = np.empty(cfg.max_points)
    acc_y = np.empty(cfg.max_points)
    for k in range(len(cand)):
        n = len(keep)
        if n:
            d2 = (acc_x[:n] - cx[k]) ** 2 + (acc_y[:n] - cy[k]) ** 2
            if np.any(d2 < min_d2):
                continue
        acc_x[n], acc_y[n] = cx[k], cy[k]
        keep.append(k)
        if len(keep) == cfg.max_points:
            break
    keep = np.asarray(keep, dtype=np.intp)
    xy = np.column_stack([cx[keep], cy[keep]])
    return KeyPointSet(xy, flat[cand[keep]].copy())


def detect_key_points(frame, roi, cfg=DetectorConfig()):
    return select_key_points(corner_response(frame, roi, cfg), cfg)
