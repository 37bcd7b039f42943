"""Patch manifest construction and materialization.

Labeling rules: a patch that touches any ink pixel is a marker patch; an
ink-free patch is clean tissue when enough of it is non-glass, otherwise
clean background. Background is capped at 25% of clean patches so the model
sees mostly tissue, and marker/clean stay balanced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    MASK_INK,
    DatasetManifest,
    MarkerMask,
    PatchRecord,
    RngStream,
    crop,
    save_raster,
    tally_counts,
    validate_raster,
)
from .errors import BoundsError, ConfigError, InputError, SamplingExhaustedError

TISSUE_SAT_MIN = 0.08
TISSUE_VAL_MAX = 0.88


@dataclass(frozen=True)
class SamplerConfig:
    """Quotas and thresholds for manifest construction."""

    patch_size: int = 128
    total_patches: int = 250_000
    marker_fraction: float = 0.5
    background_cap: float = 0.25
    tissue_threshold: float = 0.05
    balance_tolerance: float = 0.01
    max_attempts_factor: int = 1_000
    seed: int = 0
    val_slides: tuple = ()
    test_slides: tuple = ()

    def __post_init__(self):
        if not 0.0 < self.marker_fraction < 1.0:
            raise ConfigError(f"marker_fraction must be in (0, 1), got {self.marker_fraction}")
        if not 0.0 <= self.background_cap <= 0.25:
            raise ConfigError(f"background_cap must be in [0, 0.25], got {self.background_cap}")
        if self.patch_size < 1 or self.total_patches < 1:
            raise ConfigError("patch_size and total_patches must be positive")


def tissue_fraction(patch: np.ndarray) -> float:
    """Fraction of pixels that are not white glass.

    A pixel counts as tissue when its HSV saturation is >= 0.08 or its value
    is <= 0.88; a pure-white background patch scores 0.0.
    """
    validate_raster(patch)
    if patch.ndim != 3:
        raise ConfigError("tissue_fraction expects an RGB patch")
    rgb = patch.astype(np.float64) / 255.0
    cmax = rgb.max(axis=-1)
    cmin = rgb.min(axis=-1)
    sat = np.where(cmax > 0, (cmax - cmin) / np.where(cmax > 0, cmax, 1.0), 0.0)
    qualifying = (sat >= TISSUE_SAT_MIN) | (cmax <= TISSUE_VAL_MAX)
    return float(qualifying.mean())


def footprint_touches_ink(mask: MarkerMask, x: int, y: int, size: int) -> bool:
    """True when the full-resolution footprint intersects any ink pixel.

    The footprint maps to its covering rectangle at mask resolution, so a
    patch touching a partially covered mask pixel counts as marker.
    """
    ds = mask.downsample
    x0, y0 = x // ds, y // ds
    x1 = -(-(x + size) // ds)
    y1 = -(-(y + size) // ds)
    window = mask.mask[y0:y1, x0:x1]
    return bool((window == MASK_INK).any())


def classify_patch(
    slide_id: str,
    x: int,
    y: int,
    size: int,
    mask: MarkerMask,
    patch: np.ndarray,
    tissue_tau: float = 0.05,
) -> str:
    """Label one footprint: marker beats clean; tissue beats background."""
    if mask.slide_id != slide_id:
        raise InputError(f"mask belongs to {mask.slide_id!r}, not {slide_id!r}")
    if x < 0 or y < 0:
        raise BoundsError(f"negative footprint origin ({x}, {y})")
    h, w = patch.shape[:2]
    if (h, w) != (size, size):
        raise BoundsError(f"patch is {w}x{h}, footprint says {size}x{size}")
    if footprint_touches_ink(mask, x, y, size):
        return "marker"
    if tissue_fraction(patch) >= tissue_tau:
        return "clean_tissue"
    return "clean_background"


# --------------------------------------------------------------------------- #
# Manifest construction
# --------------------------------------------------------------------------- #
@dataclass
class SlideEntry:
    """One input slide with its aligned mask and whole-slide metadata."""

    slide_id: str
    image: np.ndarray
    mask: MarkerMask
    category: str

    def __post_init__(self):
        validate_raster(self.image)
        if self.mask.slide_id != self.slide_id:
            raise InputError(f"mask slide_id {self.mask.slide_id!r} != {self.slide_id!r}")
        h, w = self.image.shape[:2]
        if not self.mask.matches_slide(w, h):
            raise InputError(f"mask geometry does not match slide {self.slide_id!r}")


def _split_for(slide_id: str, config: SamplerConfig) -> str:
    if slide_id in config.test_slides:
        return "test"
    if slide_id in config.val_slides:
        return "val"
    return "train"


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer quota allocation proportional to weights, summing to total."""
    if weights.sum() <= 0:
        raise ValueError("weights must sum to a positive value")
    raw = weights / weights.sum() * total
    base = np.floor(raw).astype(int)
    rest = total - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:rest]] += 1
    return base


def _sample_slide(
    entry: SlideEntry,
    stream: RngStream,
    config: SamplerConfig,
    marker_quota: int,
    clean_quota: int,
) -> list[PatchRecord]:
    """Rejection-sample one slide until its marker and clean quotas are filled.

    Background patches fill the clean quota opportunistically, capped at
    background_cap of this slide's clean share; the remainder must be tissue.
    """
    rng = stream.generator()
    size = config.patch_size
    h, w = entry.image.shape[:2]
    if size > w or size > h:
        raise InputError(f"patch size {size} exceeds slide {entry.slide_id!r} ({w}x{h})")
    split = _split_for(entry.slide_id, config)
    bg_cap = math.floor(config.background_cap * clean_quota)
    need_marker, need_clean = marker_quota, clean_quota
    n_background = 0
    records: list[PatchRecord] = []
    budget = config.max_attempts_factor * max(marker_quota + clean_quota, 1)
    attempts = 0
    while need_marker + need_clean > 0:
        if attempts >= budget:
            deficient = "marker" if need_marker > 0 else "clean_tissue"
            raise SamplingExhaustedError(
                deficient,
                f"slide {entry.slide_id!r}: could not fill quota for {deficient!r} after "
                f"{attempts} attempts (remaining marker={need_marker}, clean={need_clean})",
            )
        attempts += 1
        x = int(rng.integers(0, w - size + 1))
        y = int(rng.integers(0, h - size + 1))
        patch = entry.image[y : y + size, x : x + size]
        label = classify_patch(
            entry.slide_id, x, y, size, entry.mask, patch, config.tissue_threshold
        )
        if label == "marker":
            if need_marker <= 0:
                continue
            need_marker -= 1
        else:
            if need_clean <= 0:
                continue
            if label == "clean_background":
                if n_background >= bg_cap:
                    continue
                n_background += 1
            need_clean -= 1
        records.append(
            PatchRecord(
                slide_id=entry.slide_id,
                x=x,
                y=y,
                size=size,
                label=label,
                category=entry.category,
                split=split,
            )
        )
    return records


def build_manifest(slides: list[SlideEntry], config: SamplerConfig) -> DatasetManifest:
    """Sample patch records across slides until all quotas are filled.

    Marker quota is spread across slides proportionally to ink area, clean
    quotas proportionally to ink-free area; each slide fills its share by
    rejection sampling with a derived RNG stream, so serial and parallel
    schedules yield identical manifests after the canonical sort.
    """
    if not slides:
        raise InputError("need at least one slide")
    seen = set()
    for entry in slides:
        if entry.slide_id in seen:
            raise InputError(f"duplicate slide_id {entry.slide_id!r}")
        seen.add(entry.slide_id)

    n_marker = round(config.total_patches * config.marker_fraction)
    n_clean = config.total_patches - n_marker

    ink_area = np.array([(e.mask.mask == MASK_INK).sum() for e in slides], dtype=np.float64)
    clean_area = np.array([(e.mask.mask != MASK_INK).sum() for e in slides], dtype=np.float64)
    if n_marker > 0 and ink_area.sum() == 0:
        raise SamplingExhaustedError("marker", "no slide has any ink to sample marker patches from")
    if n_clean > 0 and clean_area.sum() == 0:
        raise SamplingExhaustedError(
            "clean_tissue", "no slide has any ink-free area to sample clean patches from"
        )

    marker_q = _largest_remainder(ink_area, n_marker) if n_marker else np.zeros(len(slides), int)
    clean_q = _largest_remainder(clean_area, n_clean) if n_clean else np.zeros(len(slides), int)

    root = RngStream(seed=config.seed)
    records: list[PatchRecord] = []
    for i, entry in enumerate(slides):
        records.extend(_sample_slide(entry, root.child(i), config, int(marker_q[i]), int(clean_q[i])))
    records.sort()
    manifest = DatasetManifest(records=records, seed=config.seed)
    manifest.check_invariants(config.balance_tolerance, config.marker_fraction)
    return manifest


def materialize(
    manifest: DatasetManifest, slides: dict[str, np.ndarray], out_dir: str | Path
) -> list[Path]:
    """Write one PNG per record under label subdirectories.

    Files are named {slide_id}_{x}_{y}.png; re-runs overwrite with identical
    bytes. Returns the written paths in manifest order.
    """
    out_dir = Path(out_dir)
    written = []
    for label in ("marker", "clean_tissue", "clean_background"):
        (out_dir / label).mkdir(parents=True, exist_ok=True)
    for rec in manifest.records:
        if rec.slide_id not in slides:
            raise InputError(f"manifest references unknown slide {rec.slide_id!r}")
        patch = crop(slides[rec.slide_id], rec.x, rec.y, rec.size, rec.size)
        path = out_dir / rec.label / f"{rec.slide_id}_{rec.x}_{rec.y}.png"
        save_raster(patch, path)
        written.append(path)
    return written
