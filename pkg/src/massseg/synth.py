"""Synthetic mass/background images for desk-scale experiments.

Each sample is a 16-bit image holding one bright mass with an irregular
elliptical outline, a smooth intensity falloff across the boundary, a
textured background with a brightness gradient and a few bright tissue-like
distractors, all under multiplicative speckle. Masks are 8-bit 0/255. The
annotation is the mass center with a small error, and a scale such that the
mass sits well inside the cropped ROI.
"""
from __future__ import annotations

import os

import numpy as np
from scipy.ndimage import gaussian_filter

from .manifest import ManifestRecord, write_manifest
from .pgm import write_pgm
from .preprocess import RawImage

__all__ = ["SynthSample", "generate_sample", "generate_dataset"]

IMAGE_SIDE = 96


class SynthSample:
    __slots__ = ("image", "mask", "center_x", "center_y", "scale")

    def __init__(self, image, mask, center_x, center_y, scale):
        self.image = image
        self.mask = mask
        self.center_x = center_x
        self.center_y = center_y
        self.scale = scale


def _radius_field(xx, yy, cx, cy, a, b, theta, harmonics):
    dx, dy = xx - cx, yy - cy
    c, s = np.cos(theta), np.sin(theta)
    u = (c * dx + s * dy) / a
    v = (-s * dx + c * dy) / b
    rho = np.hypot(u, v)
    phi = np.arctan2(v, u)
    wobble = 1.0 + sum(amp * np.cos(k * phi + ph) for k, amp, ph in harmonics)
    return rho / wobble


def generate_sample(rng, side=IMAGE_SIDE) -> SynthSample:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    ann_x = side / 2 + rng.uniform(-3, 3)
    ann_y = side / 2 + rng.uniform(-3, 3)
    scale = rng.uniform(30, 36)

    # mass geometry relative to the annotation
    off = rng.uniform(0, 0.12 * scale)
    ang = rng.uniform(0, 2 * np.pi)
    cx, cy = ann_x + off * np.cos(ang), ann_y + off * np.sin(ang)
    a = rng.uniform(0.32, 0.62) * scale
    b = rng.uniform(0.32, 0.62) * scale
    theta = rng.uniform(0, np.pi)
    harmonics = [(k, rng.uniform(0.0, 0.12), rng.uniform(0, 2 * np.pi)) for k in (2, 3, 5)]
    rho = _radius_field(xx, yy, cx, cy, a, b, theta, harmonics)
    mask = rho <= 1.0

    # background: level, gradient, smooth texture
    base = rng.uniform(0.22, 0.38)
    g_ang = rng.uniform(0, 2 * np.pi)
    grad = 0.12 * ((xx - side / 2) * np.cos(g_ang) + (yy - side / 2) * np.sin(g_ang)) / side
    texture = gaussian_filter(rng.normal(size=(side, side)), 3.0)
    texture *= 0.05 / (np.abs(texture).max() + 1e-12)
    bg = base + grad + texture

    # bright distractors away from the mass
    for _ in range(rng.integers(1, 4)):
        for _attempt in range(50):
            dx_, dy_ = rng.uniform(8, side - 8, size=2)
            if np.hypot(dx_ - cx, dy_ - cy) > max(a, b) * 1.3 + 8:
                break
        r = rng.uniform(3, 6)
        blob = np.exp(-((xx - dx_) ** 2 + (yy - dy_) ** 2) / (2 * r * r))
        bg = bg + rng.uniform(0.15, 0.3) * blob

    contrast = rng.uniform(0.2, 0.32)
    profile = 1.0 / (1.0 + np.exp(-(1.0 - rho) / 0.07))
    inner = 0.06 * np.clip(1.0 - rho, 0.0, 1.0)
    clean = bg + (contrast + inner) * profile

    speckle = rng.gamma(shape=40.0, scale=1.0 / 40.0, size=(side, side))
    noisy = np.clip(clean * speckle, 0.0, 1.0)

    image = RawImage(np.round(noisy * 65535).astype(np.uint16), 16)
    mask_img = RawImage(np.where(mask, 255, 0).astype(np.uint8), 8)
    return SynthSample(image, mask_img, round(ann_x, 2), round(ann_y, 2), round(scale, 2))


def generate_dataset(count, seed, out_dir, n_test=None):
    """Write ``count`` samples and ``manifest.tsv`` into ``out_dir``.

    The last ``n_test`` samples (default ``count // 3``) form the test split.
    Returns the manifest path.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    n_test = count // 3 if n_test is None else n_test
    if not 0 <= n_test <= count:
        raise ValueError("test count must lie in [0, count]")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for k in range(count):
        sample = generate_sample(rng)
        img_name, mask_name = f"img_{k:04d}.pgm", f"mask_{k:04d}.pgm"
        write_pgm(os.path.join(out_dir, img_name), sample.image)
        write_pgm(os.path.join(out_dir, mask_name), sample.mask)
        split = "test" if k >= count - n_test else "train"
        records.append(ManifestRecord(img_name, mask_name, sample.center_x, sample.center_y,
                                      sample.scale, split))
    path = os.path.join(out_dir, "manifest.tsv")
    write_manifest(path, records)
    return path
