"""Training and evaluation hole-mask generators.

All generators return a binary float32 array of shape (1, H, W) with 1
marking pixels to synthesize, and hit a requested coverage interval
[lo, hi) exactly (segmentation masks may overshoot hi but never undershoot
lo). Everything is deterministic given the rng.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import cv2
import numpy as np
from scipy import ndimage

from .core_ops import ConfigError


class MaskKind(str, enum.Enum):
    IRREGULAR = "irregular"
    RECTANGULAR = "rectangular"
    SEGMENTATION = "segmentation"
    OUTPAINTING = "outpainting"
    QUADRANTS = "quadrants"


ALL_KINDS = tuple(MaskKind)

# Evaluation coverage buckets: 1-10% ... 40-50%.
EVAL_INTERVALS = ((0.01, 0.10), (0.10, 0.20), (0.20, 0.30), (0.30, 0.40), (0.40, 0.50))

# Irregular-stroke parameters (the citation chain leaves these free).
STROKE_COUNT = (1, 8)
STROKE_VERTICES = (4, 12)
STROKE_MAX_WIDTH_FRACTION = 0.10  # of image height; widths scale with coverage
MAX_RECTANGLES = 8
MAX_ATTEMPTS = 200

_DILATE_3X3 = np.ones((3, 3), dtype=bool)


class MaskGenerationError(RuntimeError):
    """Raised when a generator cannot hit the requested coverage interval."""


@dataclass
class MaskSpec:
    """A mask request: kind, target dims, coverage interval, seed."""

    kind: MaskKind
    height: int
    width: int
    lo: float
    hi: float
    seed: int = 0

    def __post_init__(self):
        self.kind = MaskKind(self.kind)
        if not (0 < self.lo < self.hi <= 0.5):
            raise ConfigError(
                f"coverage interval must satisfy 0 < lo < hi <= 0.5, got "
                f"[{self.lo}, {self.hi})"
            )
        if self.height < 8 or self.width < 8:
            raise ConfigError(f"mask dims too small: {self.height}x{self.width}")


def mask_ratio(mask: np.ndarray) -> float:
    """Fraction of hole pixels."""
    return float(np.asarray(mask).mean())


def _finish(canvas: np.ndarray) -> np.ndarray:
    return canvas.astype(np.float32)[None, :, :]


def _interval_error(kind, lo, hi):
    return MaskGenerationError(
        f"could not produce a {kind} mask with coverage in [{lo}, {hi}) "
        f"after {MAX_ATTEMPTS} attempts"
    )


def _dilate_into(canvas, lo, hi):
    """Grow the mask until coverage >= lo; None signals overshoot past hi."""
    r = canvas.mean()
    while r < lo:
        canvas = ndimage.binary_dilation(canvas, structure=_DILATE_3X3)
        r = canvas.mean()
        if r >= hi:
            return None
    return canvas


def _draw_stroke(canvas, rng, target):
    """One random-walk polyline whose footprint scales with the target."""
    h, w = canvas.shape
    n_pts = int(rng.integers(STROKE_VERTICES[0], STROKE_VERTICES[1] + 1))
    step = max(3, h // 4)
    width_hi = max(2, int(h * min(STROKE_MAX_WIDTH_FRACTION, 0.02 + 0.25 * target)))
    x = int(rng.integers(0, w))
    y = int(rng.integers(0, h))
    pts = [(x, y)]
    for _ in range(n_pts - 1):
        x = int(np.clip(x + rng.integers(-step, step + 1), 0, w - 1))
        y = int(np.clip(y + rng.integers(-step, step + 1), 0, h - 1))
        pts.append((x, y))
    thickness = int(rng.integers(2, width_hi + 1))
    arr = np.array(pts, dtype=np.int32).reshape(-1, 1, 2)
    cv2.polylines(canvas, [arr], False, 1, thickness=thickness)


def irregular_mask(height, width, lo, hi, rng) -> np.ndarray:
    """Union of random thick polyline strokes, grown to the interval."""
    for _ in range(MAX_ATTEMPTS):
        canvas = np.zeros((height, width), dtype=np.uint8)
        target = rng.uniform(lo, hi)
        n_strokes = int(rng.integers(STROKE_COUNT[0], STROKE_COUNT[1] + 1))
        for _ in range(n_strokes):
            _draw_stroke(canvas, rng, target)
            if canvas.mean() >= target:
                break
        grown = _dilate_into(canvas.astype(bool), lo, hi)
        if grown is not None and lo <= grown.mean() < hi:
            return _finish(grown)
    raise _interval_error("irregular", lo, hi)


def rectangular_mask(height, width, lo, hi, rng) -> np.ndarray:
    """Union of axis-aligned rectangles with arbitrary aspect ratios."""
    for _ in range(MAX_ATTEMPTS):
        canvas = np.zeros((height, width), dtype=bool)
        target = rng.uniform(lo, hi)
        ok = True
        for _ in range(MAX_RECTANGLES):
            remaining = max(target - canvas.mean(), 1.0 / (height * width))
            area = remaining * height * width * rng.uniform(0.5, 1.0)
            aspect = rng.uniform(0.25, 4.0)
            rw = int(np.clip(round(math.sqrt(area * aspect)), 1, width))
            rh = int(np.clip(round(area / rw), 1, height))
            y0 = int(rng.integers(0, height - rh + 1))
            x0 = int(rng.integers(0, width - rw + 1))
            canvas[y0 : y0 + rh, x0 : x0 + rw] = True
            r = canvas.mean()
            if r >= hi:
                ok = False
                break
            if r >= lo:
                return _finish(canvas)
        if ok and lo <= canvas.mean() < hi:
            return _finish(canvas)
    raise _interval_error("rectangular", lo, hi)


def segmentation_mask(semantics, height, width, lo, hi, rng,
                      structural_labels=None, void_label=0) -> np.ndarray:
    """Clutter pixels dilated until coverage reaches lo (may overshoot hi).

    Dilation emulates sloppy user strokes around objects. Scenes with no
    clutter fall back to rectangular masks.
    """
    from .data import STRUCTURAL_LABELS  # shared label convention

    labels = STRUCTURAL_LABELS if structural_labels is None else structural_labels
    sem = np.asarray(semantics)
    if sem.shape != (height, width):
        raise ConfigError(
            f"semantic map {sem.shape} does not match mask dims {(height, width)}"
        )
    clutter = ~np.isin(sem, tuple(labels) + (void_label,))
    if not clutter.any():
        return rectangular_mask(height, width, lo, hi, rng)
    canvas = clutter
    while canvas.mean() < lo:
        canvas = ndimage.binary_dilation(canvas, structure=_DILATE_3X3)
    return _finish(canvas)


def outpainting_mask(height, width, lo, hi, rng) -> np.ndarray:
    """Band anchored to one image edge, spanning the full other axis."""
    edge = ("left", "right", "top", "bottom")[int(rng.integers(0, 4))]
    axis = width if edge in ("left", "right") else height
    t_min = math.ceil(lo * axis - 1e-9)
    t_max = math.ceil(hi * axis - 1e-9) - 1
    t_min = max(t_min, 1)
    t_max = min(t_max, axis)
    if t_max < t_min:
        raise MaskGenerationError(
            f"no band width on a {height}x{width} image hits coverage [{lo}, {hi})"
        )
    t = int(rng.integers(t_min, t_max + 1))
    canvas = np.zeros((height, width), dtype=bool)
    if edge == "left":
        canvas[:, :t] = True
    elif edge == "right":
        canvas[:, width - t :] = True
    elif edge == "top":
        canvas[:t, :] = True
    else:
        canvas[height - t :, :] = True
    return _finish(canvas)


def quadrant_mask(height, width, lo, hi, rng) -> np.ndarray:
    """Rectangle anchored at a randomly chosen image corner."""
    corner = int(rng.integers(0, 4))
    for _ in range(MAX_ATTEMPTS):
        r = rng.uniform(lo, hi)
        qw = int(rng.integers(math.ceil(r * width), width + 1))
        qh = int(np.clip(round(r * height * width / qw), 1, height))
        ratio = qw * qh / (height * width)
        if not (lo <= ratio < hi):
            continue
        canvas = np.zeros((height, width), dtype=bool)
        ys = slice(0, qh) if corner in (0, 1) else slice(height - qh, height)
        xs = slice(0, qw) if corner in (0, 2) else slice(width - qw, width)
        canvas[ys, xs] = True
        return _finish(canvas)
    raise _interval_error("quadrant", lo, hi)


def make_mask(spec: MaskSpec, semantics=None) -> np.ndarray:
    """Generate a mask from a spec (deterministic in spec.seed)."""
    rng = np.random.default_rng(spec.seed)
    return generate_mask(spec.kind, spec.height, spec.width, spec.lo, spec.hi, rng, semantics)


def generate_mask(kind, height, width, lo, hi, rng, semantics=None) -> np.ndarray:
    kind = MaskKind(kind)
    if kind is MaskKind.IRREGULAR:
        return irregular_mask(height, width, lo, hi, rng)
    if kind is MaskKind.RECTANGULAR:
        return rectangular_mask(height, width, lo, hi, rng)
    if kind is MaskKind.SEGMENTATION:
        if semantics is None:
            raise ConfigError("segmentation masks need a semantic map")
        return segmentation_mask(semantics, height, width, lo, hi, rng)
    if kind is MaskKind.OUTPAINTING:
        return outpainting_mask(height, width, lo, hi, rng)
    if kind is MaskKind.QUADRANTS:
        return quadrant_mask(height, width, lo, hi, rng)
    raise ConfigError(f"unknown mask kind {kind!r}")


def sample_training_mask(height, width, rng, semantics=None,
                         ratio_range=(0.01, 0.5)) -> np.ndarray:
    """Draw a random mask for training: uniform over the five kinds
    (segmentation only when a semantic map is supplied), coverage drawn
    uniformly from ``ratio_range`` with a tolerance band around it.

    The band is at least one border-band quantum (1/min(H,W)) wide so every
    kind can hit it at any resolution.
    """
    kinds = [k for k in ALL_KINDS if k is not MaskKind.SEGMENTATION or semantics is not None]
    kind = kinds[int(rng.integers(0, len(kinds)))]
    r = rng.uniform(*ratio_range)
    band = max(0.02, 1.0 / min(height, width))
    lo = max(0.005, r - band)
    hi = min(0.5, r + band)
    return generate_mask(kind, height, width, lo, hi, rng, semantics)
