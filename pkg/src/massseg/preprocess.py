"""ROI extraction, bicubic resizing and contrast enhancement."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RoiImage

__all__ = [
    "RawImage",
    "RoiAnnotation",
    "roi_side",
    "extract_roi",
    "cubic_kernel",
    "resize_bicubic",
    "enhance_contrast",
]


@dataclass(frozen=True)
class RawImage:
    samples: np.ndarray
    bitdepth: int = 8

    def __post_init__(self):
        if self.bitdepth not in (8, 16):
            raise ValueError(f"bit depth must be 8 or 16, got {self.bitdepth}")
        s = np.array(self.samples, copy=True)
        if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D image, got shape {s.shape}")
        if not np.issubdtype(s.dtype, np.integer):
            raise TypeError("raw samples must be integers")
        if s.min() < 0 or s.max() > self.maxval:
            raise ValueError(f"samples out of range for {self.bitdepth}-bit data")
        s = s.astype(np.uint16 if self.bitdepth == 16 else np.uint8)
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def maxval(self):
        return (1 << self.bitdepth) - 1

    @property
    def height(self):
        return self.samples.shape[0]

    @property
    def width(self):
        return self.samples.shape[1]


@dataclass(frozen=True)
class RoiAnnotation:
    center_x: float
    center_y: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def validate_for(self, img: RawImage):
        if not (0 <= self.center_x < img.width and 0 <= self.center_y < img.height):
            raise ValueError(
                f"center ({self.center_x}, {self.center_y}) outside a "
                f"{img.width}x{img.height} image"
            )


def roi_side(scale, factor=2.0):
    """Crop side: ``factor * scale`` rounded to the nearest even integer (at least 2)."""
    return max(2, 2 * int(np.floor(factor * scale / 2.0 + 0.5)))


def extract_roi(img: RawImage, ann: RoiAnnotation, factor=2.0) -> RawImage:
    """Square crop centered on the annotation; borders replicate edge samples."""
    ann.validate_for(img)
    side = roi_side(ann.scale, factor)
    cx = int(np.floor(ann.center_x + 0.5))
    cy = int(np.floor(ann.center_y + 0.5))
    rows = np.clip(np.arange(cy - side // 2, cy + side // 2), 0, img.height - 1)
    cols = np.clip(np.arange(cx - side // 2, cx + side // 2), 0, img.width - 1)
    return RawImage(img.samples[np.ix_(rows, cols)], img.bitdepth)


def cubic_kernel(t, a=-0.5):
    """Keys cubic convolution kernel; ``a=-0.5`` is Catmull-Rom."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2 = t * t
    t3 = t2 * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _resample_matrix(n_in, n_out, a):
    # pixel-center alignment; taps beyond the border are clamped to the edge
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    base = np.floor(src).astype(int)
    m = np.zeros((n_out, n_in))
    for off in range(-1, 3):
        tap = base + off
        wts = cubic_kernel(src - tap, a)
        np.add.at(m, (np.arange(n_out), np.clip(tap, 0, n_in - 1)), wts)
    return m


def resize_bicubic(img: RawImage, out_w: int, out_h: int, a: float = -0.5) -> RoiImage:
    """Separable bicubic resample, normalized to [0, 1] by the bit depth's full scale."""
    if out_w < 1 or out_h < 1:
        raise ValueError("output size must be at least 1x1")
    x = img.samples.astype(np.float64) / img.maxval
    ry = _resample_matrix(img.height, out_h, a)
    rx = _resample_matrix(img.width, out_w, a)
    out = ry @ x @ rx.T
    return RoiImage(np.clip(out, 0.0, 1.0))


def enhance_contrast(img: RoiImage, gamma: float = 0.5, low: float = 2.0, high: float = 98.0) -> RoiImage:
    """Percentile stretch followed by gamma correction.

    The mapping is monotone nondecreasing, so pixel ordering is preserved.
    A constant image is returned unchanged. If the percentiles coincide on a
    non-constant image the stretch falls back to the min/max range.
    """
    x = img.intensities
    lo, hi = np.percentile(x, [low, high])
    if hi <= lo:
        lo, hi = x.min(), x.max()
        if hi <= lo:
            return img
    s = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
    return RoiImage(np.clip(s ** gamma, 0.0, 1.0))
