"""Raster primitives, domain types, and deterministic RNG streams.

A raster is a plain ``numpy.ndarray`` of dtype uint8: shape (H, W) for
gray/mask images, (H, W, 3) for RGB. Row-major interleaved samples, origin
at the top-left, x to the right and y down. All pipeline stages exchange
these arrays; nothing here mutates its inputs.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import AlignmentError, BoundsError, FormatError

INK_CATEGORIES = ("black", "blue", "green", "opaque")
PATCH_LABELS = ("marker", "clean_tissue", "clean_background")
SPLITS = ("train", "val", "test")

MASK_INK = 255
MASK_CLEAN = 0


# --------------------------------------------------------------------------- #
# Raster validation and I/O
# --------------------------------------------------------------------------- #
def validate_raster(image: np.ndarray) -> np.ndarray:
    """Check dtype/shape conventions; returns the array unchanged."""
    if not isinstance(image, np.ndarray):
        raise FormatError(f"raster must be a numpy array, got {type(image).__name__}")
    if image.dtype != np.uint8:
        raise FormatError(f"raster dtype must be uint8, got {image.dtype}")
    if image.ndim == 2:
        return image
    if image.ndim == 3 and image.shape[2] == 3:
        return image
    raise FormatError(f"raster must be (H, W) or (H, W, 3), got shape {image.shape}")


def load_raster(path: str | Path) -> np.ndarray:
    """Load a gray or RGB raster file. Color order is R, G, B.

    Missing/unreadable files raise OSError; corrupt or unsupported content
    raises FormatError.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such raster file: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode == "L":
                arr = np.asarray(im, dtype=np.uint8)
            elif im.mode == "RGB":
                arr = np.asarray(im, dtype=np.uint8)
            else:
                raise FormatError(f"unsupported raster mode {im.mode!r} in {path} (expected L or RGB)")
    except (UnidentifiedImageError, SyntaxError) as exc:
        raise FormatError(f"cannot decode raster {path}: {exc}") from exc
    except OSError as exc:
        # Opened but failed to decode: content-level failure, e.g. truncation.
        raise FormatError(f"corrupt raster {path}: {exc}") from exc
    return validate_raster(arr)


def save_raster(image: np.ndarray, path: str | Path) -> None:
    """Write a raster as lossless PNG so that load_raster round-trips bit-exactly."""
    image = validate_raster(image)
    path = Path(path)
    mode = "L" if image.ndim == 2 else "RGB"
    Image.fromarray(image, mode=mode).save(path, format="PNG")


def crop(image: np.ndarray, x: int, y: int, w: int, h: int) -> np.ndarray:
    """Copy the w×h rectangle whose top-left corner is (x, y)."""
    validate_raster(image)
    height, width = image.shape[:2]
    if x < 0 or y < 0 or w < 0 or h < 0 or x + w > width or y + h > height:
        raise BoundsError(
            f"crop rectangle ({x},{y},{w},{h}) out of bounds for {width}x{height} image"
        )
    return image[y : y + h, x : x + w].copy()


# --------------------------------------------------------------------------- #
# Marker masks
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class MarkerMask:
    """Binary ink mask for one slide at a known downsample factor.

    mask samples are 0 (clean) or 255 (ink); mask dims equal
    ceil(slide_dims / downsample).
    """

    slide_id: str
    downsample: int
    mask: np.ndarray

    def __post_init__(self):
        if self.downsample < 1:
            raise AlignmentError(f"downsample must be >= 1, got {self.downsample}")
        validate_raster(self.mask)
        if self.mask.ndim != 2:
            raise FormatError("mask must be single-channel")
        values = np.unique(self.mask)
        if not np.isin(values, (MASK_CLEAN, MASK_INK)).all():
            raise FormatError(f"mask values must be 0 or 255, found {values[:8]}")

    def ink_fraction(self) -> float:
        return float((self.mask == MASK_INK).mean())

    def matches_slide(self, slide_width: int, slide_height: int) -> bool:
        exp_w = -(-slide_width // self.downsample)
        exp_h = -(-slide_height // self.downsample)
        return self.mask.shape == (exp_h, exp_w)


def save_mask(mask: MarkerMask, path: str | Path) -> None:
    """Write the mask raster plus a JSON sidecar carrying slide_id/downsample."""
    path = Path(path)
    save_raster(mask.mask, path)
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(
        json.dumps({"slide_id": mask.slide_id, "downsample": mask.downsample}) + "\n"
    )


def load_mask(path: str | Path) -> MarkerMask:
    """Load mask raster + sidecar. Intermediate values are thresholded at 128."""
    path = Path(path)
    raster = load_raster(path)
    if raster.ndim != 2:
        raise FormatError(f"mask raster must be single-channel: {path}")
    binary = np.isin(raster, (MASK_CLEAN, MASK_INK)).all()
    if not binary:
        warnings.warn(
            f"mask {path} contains intermediate values; thresholding at 128",
            stacklevel=2,
        )
        raster = np.where(raster >= 128, MASK_INK, MASK_CLEAN).astype(np.uint8)
    sidecar = path.with_suffix(path.suffix + ".json")
    if not sidecar.exists():
        raise FormatError(f"mask sidecar missing: {sidecar}")
    meta = json.loads(sidecar.read_text())
    return MarkerMask(slide_id=meta["slide_id"], downsample=int(meta["downsample"]), mask=raster)


# --------------------------------------------------------------------------- #
# Patch records and manifests
# --------------------------------------------------------------------------- #
@dataclass(frozen=True, order=True)
class PatchRecord:
    """One sampled patch: slide provenance, footprint, label, category, split."""

    slide_id: str
    x: int
    y: int
    size: int
    label: str
    category: str
    split: str

    def __post_init__(self):
        if self.label not in PATCH_LABELS:
            raise FormatError(f"unknown patch label {self.label!r}")
        if self.category not in INK_CATEGORIES:
            raise FormatError(f"unknown ink category {self.category!r}")
        if self.split not in SPLITS:
            raise FormatError(f"unknown split {self.split!r}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "slide_id": self.slide_id,
                "x": self.x,
                "y": self.y,
                "size": self.size,
                "label": self.label,
                "category": self.category,
                "split": self.split,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "PatchRecord":
        d = json.loads(line)
        return cls(
            slide_id=d["slide_id"],
            x=int(d["x"]),
            y=int(d["y"]),
            size=int(d["size"]),
            label=d["label"],
            category=d["category"],
            split=d["split"],
        )


def tally_counts(records: list[PatchRecord]) -> dict:
    """Per-label, per-category tallies, all keys present."""
    counts = {label: {cat: 0 for cat in INK_CATEGORIES} for label in PATCH_LABELS}
    for rec in records:
        counts[rec.label][rec.category] += 1
    return counts


def label_total(counts: dict, label: str) -> int:
    return sum(counts[label].values())


@dataclass
class DatasetManifest:
    """Inventory of sampled patches plus the seed that produced them."""

    records: list[PatchRecord]
    seed: int
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.counts:
            self.counts = tally_counts(self.records)

    def check_invariants(
        self, balance_tolerance: float = 0.01, marker_fraction: float = 0.5
    ) -> None:
        """Raise FormatError if balance rules are violated.

        Background patches stay at or under 25% of all clean patches, and the
        marker count stays within balance_tolerance of the configured target
        fraction (the default 0.5 keeps half the corpus marker patches; tolerance
        is a fraction of total, never tighter than the ±1 record that odd
        totals force).
        """
        counts = tally_counts(self.records)
        if counts != self.counts:
            raise FormatError("stored counts disagree with records")
        n_marker = label_total(counts, "marker")
        n_tissue = label_total(counts, "clean_tissue")
        n_bg = label_total(counts, "clean_background")
        n_clean = n_tissue + n_bg
        if n_bg > 0.25 * n_clean:
            raise FormatError(f"background cap violated: {n_bg} > 25% of {n_clean} clean")
        total = n_marker + n_clean
        target = marker_fraction * total
        if total and abs(n_marker - target) > max(1.0, balance_tolerance * total):
            raise FormatError(
                f"marker/clean imbalance: {n_marker} marker vs target {target:.1f} "
                f"(tolerance {balance_tolerance})"
            )


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """One JSON object per line; the header line carries seed and counts."""
    path = Path(path)
    header = json.dumps({"seed": manifest.seed, "counts": manifest.counts}, sort_keys=True)
    lines = [header] + [rec.to_json() for rec in manifest.records]
    path.write_text("\n".join(lines) + "\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise FormatError(f"empty manifest: {path}")
    header = json.loads(lines[0])
    records = [PatchRecord.from_json(line) for line in lines[1:] if line.strip()]
    return DatasetManifest(records=records, seed=int(header["seed"]), counts=header["counts"])


# --------------------------------------------------------------------------- #
# Deterministic RNG streams
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class RngStream:
    """Named random stream: identical (seed, stream_id) replays identically,
    independent of how many sibling streams exist or in which order they run.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        return np.random.default_rng(ss)

    def child(self, index: int) -> "RngStream":
        """Derived stream for a parallel worker; stable under scheduling."""
        return RngStream(seed=self.seed, stream_id=self.stream_id * 100_003 + index + 1)

    def torch_seed(self) -> int:
        """A 63-bit seed for torch, derived from the same sequence."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)
