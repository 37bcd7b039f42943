"""Color-based marker ink segmentation.

Stands in for the external QC toolkit + manual corrections: a slide is
downsampled, every pixel is tested against per-color ink rules (dark pen,
green pen, blue pen), and the raw detection is cleaned up with morphological
closing and small-component removal. Manual corrections arrive as override
masks merged with apply_mask_override.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from skimage.morphology import binary_closing, disk, remove_small_objects

from .core import MASK_CLEAN, MASK_INK, MarkerMask, validate_raster
from .errors import AlignmentError, ConfigError

OVERRIDE_MODES = ("replace", "union", "subtract")


@dataclass(frozen=True)
class HueRule:
    """Hue interval in degrees (may wrap past 360), saturation floor, value cap."""

    hue_lo: float
    hue_hi: float
    sat_min: float
    val_max: float

    def __post_init__(self):
        for name in ("sat_min", "val_max"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")

    def matches(self, hue: np.ndarray, sat: np.ndarray, val: np.ndarray) -> np.ndarray:
        lo, hi = self.hue_lo % 360.0, self.hue_hi % 360.0
        if lo <= hi:
            in_hue = (hue >= lo) & (hue <= hi)
        else:  # wrapping interval, e.g. magenta-red
            in_hue = (hue >= lo) | (hue <= hi)
        return in_hue & (sat >= self.sat_min) & (val <= self.val_max)


@dataclass(frozen=True)
class InkThresholds:
    """Per-category detection rules plus morphology parameters.

    darkness_max is the max(R, G, B) ceiling shared by the black and opaque
    pens (opaque vs black is slide-level metadata, not a pixel rule).
    close_radius / min_area are stated in downsampled pixels and default to
    the values tuned for downsample 8.
    """

    darkness_max: int = 90
    green: HueRule = HueRule(70.0, 170.0, 0.25, 0.95)
    blue: HueRule = HueRule(190.0, 260.0, 0.25, 0.95)
    close_radius: int = 2
    min_area: int = 64

    def __post_init__(self):
        if not 0 <= self.darkness_max <= 255:
            raise ConfigError(f"darkness_max must be in [0, 255], got {self.darkness_max}")
        if self.close_radius < 0 or self.min_area < 0:
            raise ConfigError("close_radius and min_area must be non-negative")


def rgb_to_hsv_planes(image: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized HSV: hue in degrees [0, 360), saturation and value in [0, 1]."""
    rgb = image.astype(np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    cmax = rgb.max(axis=-1)
    cmin = rgb.min(axis=-1)
    delta = cmax - cmin
    hue = np.zeros_like(cmax)
    nz = delta > 0
    rmax = nz & (cmax == r)
    gmax = nz & (cmax == g) & ~rmax
    bmax = nz & ~rmax & ~gmax
    hue[rmax] = 60.0 * (((g - b)[rmax] / delta[rmax]) % 6.0)
    hue[gmax] = 60.0 * ((b - r)[gmax] / delta[gmax] + 2.0)
    hue[bmax] = 60.0 * ((r - g)[bmax] / delta[bmax] + 4.0)
    sat = np.where(cmax > 0, delta / np.where(cmax > 0, cmax, 1.0), 0.0)
    return hue, sat, cmax


def downsample_mean(image: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean downsample to ceil(dims / factor); edge blocks replicate."""
    if factor == 1:
        return image.astype(np.float64)
    h, w = image.shape[:2]
    out_h, out_w = -(-h // factor), -(-w // factor)
    pad_h, pad_w = out_h * factor - h, out_w * factor - w
    pad = ((0, pad_h), (0, pad_w)) + (((0, 0),) if image.ndim == 3 else ())
    padded = np.pad(image.astype(np.float64), pad, mode="edge")
    if image.ndim == 3:
        blocks = padded.reshape(out_h, factor, out_w, factor, image.shape[2])
        return blocks.mean(axis=(1, 3))
    blocks = padded.reshape(out_h, factor, out_w, factor)
    return blocks.mean(axis=(1, 3))


def ink_rule_hits(image_float: np.ndarray, thresholds: InkThresholds) -> np.ndarray:
    """Raw per-pixel detection before any morphology. image_float is RGB 0-255."""
    hue, sat, val = rgb_to_hsv_planes(np.clip(image_float, 0, 255).astype(np.uint8))
    dark = image_float.max(axis=-1) <= thresholds.darkness_max
    return dark | thresholds.green.matches(hue, sat, val) | thresholds.blue.matches(hue, sat, val)


def segment_ink(
    slide: np.ndarray,
    thresholds: InkThresholds | None = None,
    downsample: int = 8,
    slide_id: str = "slide",
) -> MarkerMask:
    """Detect marker ink on an RGB slide.

    A downsampled pixel is flagged when it satisfies any category rule; the
    raw set is then morphologically closed and components below min_area are
    dropped. An empty mask is a valid result.
    """
    validate_raster(slide)
    if slide.ndim != 3:
        raise ConfigError("segment_ink expects an RGB slide")
    if downsample < 1:
        raise ConfigError(f"downsample must be >= 1, got {downsample}")
    thresholds = thresholds or InkThresholds()

    small = downsample_mean(slide, downsample)
    raw = ink_rule_hits(small, thresholds)
    cleaned = raw
    if thresholds.close_radius > 0:
        cleaned = binary_closing(cleaned, disk(thresholds.close_radius))
    if thresholds.min_area > 1:
        cleaned = remove_small_objects(cleaned, min_size=thresholds.min_area)
    mask = np.where(cleaned, MASK_INK, MASK_CLEAN).astype(np.uint8)
    return MarkerMask(slide_id=slide_id, downsample=downsample, mask=mask)


def apply_mask_override(auto: MarkerMask, override: MarkerMask, mode: str) -> MarkerMask:
    """Merge a manual correction mask into an automatic one, per-pixel."""
    if mode not in OVERRIDE_MODES:
        raise ConfigError(f"unknown override mode {mode!r}, expected one of {OVERRIDE_MODES}")
    if auto.slide_id != override.slide_id:
        raise AlignmentError(f"slide_id mismatch: {auto.slide_id!r} vs {override.slide_id!r}")
    if auto.downsample != override.downsample:
        raise AlignmentError(f"downsample mismatch: {auto.downsample} vs {override.downsample}")
    if auto.mask.shape != override.mask.shape:
        raise AlignmentError(f"mask shape mismatch: {auto.mask.shape} vs {override.mask.shape}")
    a = auto.mask == MASK_INK
    o = override.mask == MASK_INK
    if mode == "replace":
        merged = o
    elif mode == "union":
        merged = a | o
    else:
        merged = a & ~o
    out = np.where(merged, MASK_INK, MASK_CLEAN).astype(np.uint8)
    return replace(auto, mask=out)
