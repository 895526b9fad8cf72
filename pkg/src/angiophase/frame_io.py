"""
Loading grayscale frame sequences, ROI handling and first-frame preview export.

Frames are stored as 2-D float64 arrays indexed ``[row, col]`` with
intensities normalized to [0, 1].  A sequence lives in a directory of
numbered image files (``000.pgm``, ``001.pgm``, ... or ``.png``).
"""

import os
import re
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

DEFAULT_FPS = 15.0
MIN_FRAME_SIZE = 16
MIN_ROI_SIZE = 8

_FRAME_NAME = re.compile(r"^(\d+)\.(pgm|png)$", re.IGNORECASE)


class FrameLoadError(ValueError):
    """Raised when a frame directory cannot be turned into a sequence."""


class RoiError(ValueError):
    """Raised when a region of interest violates the frame bounds."""


@dataclass(frozen=True)
class Roi:
    x0: int
    y0: int
    w: int
    h: int

    @classmethod
    def parse(cls, text):
        """Parse ``"x0,y0,w,h"``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 4:
            raise RoiError(f"ROI must be x0,y0,w,h; got {text!r}")
        try:
            return cls(*(int(p) for p in parts))
        except ValueError:
            raise RoiError(f"ROI values must be integers; got {text!r}") from None

    @property
    def slices(self):
        return slice(self.y0, self.y0 + self.h), slice(self.x0, self.x0 + self.w)

    def contains(self, x, y):
        return self.x0 <= x < self.x0 + self.w and self.y0 <= y < self.y0 + self.h

    def __str__(self):
        return f"{self.x0},{self.y0},{self.w},{self.h}"


@dataclass
class FrameSequence:
    frames: list
    fps: float = DEFAULT_FPS
    source_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.frames) < 2:
            raise FrameLoadError("at least 2 frames required")
        if not self.fps > 0:
            raise FrameLoadError(f"fps must be positive, got {self.fps}")
        shape = self.frames[0].shape
        for k, f in enumerate(self.frames):
            check_frame(f)
            if f.shape != shape:
                raise FrameLoadError(
                    f"frame {k} has shape {f.shape}, expected {shape}")

    def __len__(self):
        return len(self.frames)

    @property
    def width(self):
        return self.frames[0].shape[1]

    @property
    def height(self):
        return self.frames[0].shape[0]

    def subsequence(self, start):
        """Sequence starting at frame ``start`` (used for ``--start-frame``)."""
        if not 0 <= start <= len(self.frames) - 2:
            raise FrameLoadError(
                f"start frame {start} leaves fewer than 2 frames "
                f"(sequence has {len(self.frames)})")
        return FrameSequence(self.frames[start:], self.fps, self.source_id,
                             dict(self.meta))


def check_frame(frame):
    if frame.ndim != 2:
        raise FrameLoadError(f"frames must be single-channel, got shape {frame.shape}")
    h, w = frame.shape
    if w < MIN_FRAME_SIZE or h < MIN_FRAME_SIZE:
        raise FrameLoadError(
            f"frame is {w}x{h}; both sides must be at least {MIN_FRAME_SIZE}")
    if frame.size and (frame.min() < 0.0 or frame.max() > 1.0):
        raise FrameLoadError("intensities must lie within [0, 1]")


def validate_roi(roi, frame):
    """Return ``roi`` unchanged if it lies inside ``frame`` and is large enough."""
    h, w = frame.shape[:2]
    if roi.w < MIN_ROI_SIZE or roi.h < MIN_ROI_SIZE:
        raise RoiError(
            f"ROI {roi.w}x{roi.h} too small: w and h must be >= {MIN_ROI_SIZE}")
    if roi.x0 < 0 or roi.y0 < 0:
        raise RoiError(f"ROI origin ({roi.x0},{roi.y0}) is negative")
    if roi.x0 + roi.w > w:
        raise RoiError(f"ROI x0+w={roi.x0 + roi.w} exceeds frame width {w}")
    if roi.y0 + roi.h > h:
        raise RoiError(f"ROI y0+h={roi.y0 + roi.h} exceeds frame height {h}")
    return roi


# --- PGM ------------------------------------------------------------------

def _pgm_tokens(data, count):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens = []
    pos = 2
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FrameLoadError("truncated PGM header")
        tokens.append(int(data[start:pos]))
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pgm(path):
    """Read a binary (P5) PGM and return ``(raw_array, maxval)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P5":
        raise FrameLoadError(f"{path}: not a binary PGM (P5)")
    try:
        (width, height, maxval), offset = _pgm_tokens(data, 3)
    except ValueError:
        raise FrameLoadError(f"{path}: malformed PGM header") from None
    if not 0 < maxval < 65536:
        raise FrameLoadError(f"{path}: invalid maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = width * height * dtype.itemsize
    raster = data[offset:offset + expected]
    if len(raster) != expected:
        raise FrameLoadError(f"{path}: truncated PGM raster")
    return np.frombuffer(raster, dtype=dtype).reshape(height, width), maxval


def write_pgm(path, raw):
    """Write an integer array as binary PGM (maxval 255 or 65535)."""
    raw = np.asarray(raw)
    if raw.dtype == np.uint8:
        maxval, body = 255, raw.tobytes()
    elif raw.dtype == np.uint16:
        maxval, body = 65535, raw.astype(">u2").tobytes()
    else:
        raise TypeError(f"unsupported PGM dtype {raw.dtype}")
    h, w = raw.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(body)


# --- loading --------------------------------------------------------------

def _read_frame(path):
    ext = os.path.splitext(path)[1].lower()
    try:
        if ext == ".pgm":
            raw, _ = read_pgm(path)
            scale = 255.0 if raw.dtype == np.uint8 else 65535.0
        else:
            with Image.open(path) as im:
                if im.mode == "L":
                    scale = 255.0
                elif im.mode in ("I;16", "I;16B", "I;16L", "I"):
                    # Pillow opens 16-bit grayscale PNG as I;16 or I
                    scale = 65535.0
                else:
                    raise FrameLoadError(
                        f"{path}: unsupported image mode {im.mode} "
                        "(single-channel 8/16-bit required)")
                raw = np.array(im)
    except FrameLoadError:
        raise
    except (OSError, ValueError) as exc:
        raise FrameLoadError(f"{path}: unreadable frame ({exc})") from exc
    return raw.astype(np.float64) / scale


def list_frame_files(directory):
    """Frame files in ``directory`` sorted by their numeric stem."""
    if not os.path.isdir(directory):
        raise FrameLoadError(f"{directory}: not a directory")
    found = []
    for name in os.listdir(directory):
        m = _FRAME_NAME.match(name)
        if m:
            found.append((int(m.group(1)), name))
    found.sort()
    return [os.path.join(directory, name) for _, name in found]


def load_sequence(path, fps=None, source_id=None):
    """Load the numbered frames in directory ``path``.

    8-bit samples map to v/255 and 16-bit to v/65535.  ``fps`` defaults
    to 15 frames/s when not supplied.
    """
    files = list_frame_files(path)
    if not files:
        raise FrameLoadError(f"{path}: no frame files matching <digits>.pgm|png")
    frames = []
    for f in files:
        frame = _read_frame(f)
        if frames and frame.shape != frames[0].shape:
            raise FrameLoadError(
                f"{f}: dimensions {frame.shape[1]}x{frame.shape[0]} differ from "
                f"first frame {frames[0].shape[1]}x{frames[0].shape[0]}")
        try:
            check_frame(frame)
        except FrameLoadError as exc:
            raise FrameLoadError(f"{f}: {exc}") from None
        frames.append(frame)
    if source_id is None:
        source_id = os.path.basename(os.path.normpath(path))
    return FrameSequence(frames, DEFAULT_FPS if fps is None else float(fps),
                         source_id)


def quantize8(frame):
    """Map [0, 1] intensities to uint8 with round-half-up."""
    return np.floor(np.clip(frame, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def export_preview(seq, out):
    """Write the first frame of ``seq`` as an 8-bit PGM."""
    try:
        write_pgm(out, quantize8(seq.frames[0]))
    except OSError as exc:
        raise OSError(f"cannot write preview to {out}: {exc}") from exc


def save_sequence(directory, frames, digits=3):
    """Write frames as 8-bit PGM files ``000.pgm``, ``001.pgm``, ..."""
    os.makedirs(directory, exist_ok=True)
    for k, f in enumerate(frames):
        write_pgm(os.path.join(directory, f"{k:0{digits}d}.pgm"), quantize8(f))
