"""Synthetic paired corpus: procedural tissue, procedural marker strokes.

Real slides give no ground truth for what sat underneath a pen stroke. This
module composites procedural strokes onto clean (real or generated) patches
and keeps the pre-stroke pixels and the exact stroke footprint, so every
downstream metric can be checked against a known answer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.ndimage as ndi

from .core import INK_CATEGORIES, RngStream, save_raster, validate_raster
from .errors import ConfigError, InputError

INK_PALETTE = {
    "black": (20, 20, 20),
    "green": (40, 110, 60),
    "blue": (40, 60, 150),
    "opaque": (20, 20, 20),  # opaque pens are dense black ink
}
COLOR_JITTER_DEFAULT = 15.0
OPAQUE_MIN_ALPHA = 0.97


# --------------------------------------------------------------------------- #
# Procedural tissue texture with known nuclei blobs
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class Blob:
    """One elliptical pseudo-nucleus: center, semi-axes, rotation (radians)."""

    cx: float
    cy: float
    rx: float
    ry: float
    angle: float = 0.0


def blob_footprint(width: int, height: int, blobs: list[Blob]) -> np.ndarray:
    """Boolean union of the given ellipses over the pixel grid."""
    yy, xx = np.mgrid[0:height, 0:width]
    out = np.zeros((height, width), dtype=bool)
    for blob in blobs:
        c, s = math.cos(blob.angle), math.sin(blob.angle)
        u = (xx - blob.cx) * c + (yy - blob.cy) * s
        v = -(xx - blob.cx) * s + (yy - blob.cy) * c
        out |= (u / blob.rx) ** 2 + (v / blob.ry) ** 2 <= 1.0
    return out


def paint_blobs(
    image: np.ndarray,
    blobs: list[Blob],
    rng: np.random.Generator,
    color=(95, 52, 125),
    color_jitter: float = 6.0,
) -> np.ndarray:
    """Stamp hematoxylin-dark nuclei onto a tissue image; returns a new array."""
    out = image.astype(np.float64).copy()
    height, width = image.shape[:2]
    for blob in blobs:
        jittered = np.clip(np.asarray(color, np.float64) + rng.normal(0, color_jitter, 3), 0, 255)
        m = blob_footprint(width, height, [blob])
        out[m] = jittered
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def random_blobs(
    rng: np.random.Generator,
    width: int,
    height: int,
    count: tuple[int, int] = (8, 18),
    radius: tuple[float, float] = (2.2, 4.5),
    margin: float = 4.0,
) -> list[Blob]:
    n = int(rng.integers(count[0], count[1] + 1))
    blobs = []
    for _ in range(n):
        cx = rng.uniform(margin, width - margin)
        cy = rng.uniform(margin, height - margin)
        rx, ry = rng.uniform(radius[0], radius[1], size=2)
        blobs.append(Blob(cx=cx, cy=cy, rx=rx, ry=ry, angle=rng.uniform(0, math.pi)))
    return blobs


def synthesize_tissue(
    rng: np.random.Generator,
    width: int = 64,
    height: int = 64,
    blob_count: tuple[int, int] = (8, 18),
    blob_radius: tuple[float, float] = (2.2, 4.5),
    blobs: list[Blob] | None = None,
) -> tuple[np.ndarray, list[Blob]]:
    """Pseudo-H&E texture: pink-magenta ground, low-frequency eosin variation,
    dark elliptical nuclei. Returns the image and the blob ground truth.
    """
    base = np.array([232.0, 186.0, 208.0])
    img = np.tile(base, (height, width, 1))
    coarse = rng.normal(0.0, 1.0, (8, 8, 3))
    img += ndi.zoom(coarse, (height / 8, width / 8, 1), order=3) * 9.0
    if blobs is None:
        blobs = random_blobs(rng, width, height, blob_count, blob_radius)
    img = np.clip(img, 0, 255)
    img = paint_blobs(np.round(img).astype(np.uint8), blobs, rng)
    noisy = img.astype(np.float64) + rng.normal(0.0, 2.0, img.shape)
    return np.clip(np.round(noisy), 0, 255).astype(np.uint8), blobs


# --------------------------------------------------------------------------- #
# Marker strokes
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class StrokeSpec:
    """Parameters of one procedural pen stroke."""

    category: str
    opacity: float
    width: float
    points: tuple  # ((x, y), ...) with at least two entries
    color_jitter: float = COLOR_JITTER_DEFAULT

    def __post_init__(self):
        if self.category not in INK_CATEGORIES:
            raise ConfigError(f"unknown ink category {self.category!r}")
        if not 0.0 <= self.opacity <= 1.0:
            raise ConfigError(f"opacity must be in [0, 1], got {self.opacity}")
        if self.category == "opaque" and self.opacity < OPAQUE_MIN_ALPHA:
            raise ConfigError(
                f"opaque strokes need opacity >= {OPAQUE_MIN_ALPHA}, got {self.opacity}"
            )
        if self.width <= 0:
            raise ConfigError(f"stroke width must be positive, got {self.width}")

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "opacity": self.opacity,
            "width": self.width,
            "points": [list(p) for p in self.points],
            "color_jitter": self.color_jitter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StrokeSpec":
        return cls(
            category=d["category"],
            opacity=float(d["opacity"]),
            width=float(d["width"]),
            points=tuple(tuple(p) for p in d["points"]),
            color_jitter=float(d["color_jitter"]),
        )


def polyline_footprint(width: int, height: int, points, stroke_width: float) -> np.ndarray:
    """Pixels whose center lies within stroke_width/2 of the polyline."""
    yy, xx = np.mgrid[0:height, 0:width]
    out = np.zeros((height, width), dtype=bool)
    radius2 = (stroke_width / 2.0) ** 2
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        dx, dy = x1 - x0, y1 - y0
        seg2 = dx * dx + dy * dy
        if seg2 == 0:
            d2 = (xx - x0) ** 2 + (yy - y0) ** 2
        else:
            t = np.clip(((xx - x0) * dx + (yy - y0) * dy) / seg2, 0.0, 1.0)
            d2 = (xx - x0 - t * dx) ** 2 + (yy - y0 - t * dy) ** 2
        out |= d2 <= radius2
    if len(points) == 1:
        out |= (xx - points[0][0]) ** 2 + (yy - points[0][1]) ** 2 <= radius2
    return out


def synthesize_stroke(
    clean: np.ndarray, spec: StrokeSpec, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Composite one stroke onto a clean RGB patch.

    On the stroke footprint each channel becomes
    round(alpha * ink + (1 - alpha) * clean); every other pixel is
    bit-identical to the input. Returns (inked, stroke_mask) where the mask
    is uint8 {0, 255} flagging exactly the composited pixels.
    """
    validate_raster(clean)
    if clean.ndim != 3:
        raise ConfigError("synthesize_stroke expects an RGB patch")
    if len(spec.points) == 0:
        raise ConfigError("stroke spec has no control points")
    if len(spec.points) < 2:
        raise ConfigError("stroke needs at least two control points")
    height, width = clean.shape[:2]
    for x, y in spec.points:
        if not (0 <= x < width and 0 <= y < height):
            raise ConfigError(f"control point ({x}, {y}) outside {width}x{height} patch")

    color = np.asarray(INK_PALETTE[spec.category], np.float64)
    color = np.clip(color + rng.uniform(-spec.color_jitter, spec.color_jitter, 3), 0, 255)
    footprint = polyline_footprint(width, height, spec.points, spec.width)

    inked = clean.copy()
    blended = spec.opacity * color + (1.0 - spec.opacity) * clean[footprint].astype(np.float64)
    inked[footprint] = np.clip(np.round(blended), 0, 255).astype(np.uint8)
    mask = np.where(footprint, 255, 0).astype(np.uint8)
    return inked, mask


def random_stroke_spec(
    rng: np.random.Generator,
    category: str,
    width: int,
    height: int,
    stroke_width: tuple[float, float] = (6.0, 14.0),
    opacity: tuple[float, float] = (0.45, 0.75),
    n_points: tuple[int, int] = (2, 4),
) -> StrokeSpec:
    """Draw a plausible stroke spec for a patch of the given size.

    Non-opaque pens leave the tissue visibly showing through (the opaque
    category models the fully hiding ones), so default opacity stays well
    below the opaque regime.
    """
    n = int(rng.integers(n_points[0], n_points[1] + 1))
    points = tuple((float(rng.uniform(0, width)), float(rng.uniform(0, height))) for _ in range(n))
    if category == "opaque":
        alpha = float(rng.uniform(OPAQUE_MIN_ALPHA, 1.0))
    else:
        alpha = float(rng.uniform(opacity[0], opacity[1]))
    return StrokeSpec(
        category=category,
        opacity=alpha,
        width=float(rng.uniform(stroke_width[0], stroke_width[1])),
        points=points,
    )


# --------------------------------------------------------------------------- #
# Paired corpus generation
# --------------------------------------------------------------------------- #
@dataclass
class TripletRecord:
    """Manifest entry for one (clean, inked, mask) triplet."""

    index: int
    category: str
    spec: StrokeSpec
    stream_id: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "index": self.index,
                "category": self.category,
                "spec": self.spec.to_dict(),
                "stream_id": self.stream_id,
            },
            sort_keys=True,
        )


def normalize_mix(mix: dict[str, float]) -> dict[str, float]:
    unknown = set(mix) - set(INK_CATEGORIES)
    if unknown:
        raise ConfigError(f"unknown categories in mix: {sorted(unknown)}")
    total = sum(mix.values())
    if total <= 0:
        raise ConfigError("category mix weights must sum to a positive value")
    return {cat: w / total for cat, w in mix.items() if w > 0}


def make_triplet(
    stream: RngStream,
    patch_size: int,
    mix: dict[str, float],
    clean_sources: list[np.ndarray] | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, StrokeSpec]:
    """Pure function of the stream: (clean, inked, mask, spec)."""
    rng = stream.generator()
    cats = sorted(mix)
    category = rng.choice(cats, p=[mix[c] for c in cats])
    if clean_sources:
        clean = clean_sources[int(rng.integers(0, len(clean_sources)))].copy()
    else:
        clean, _ = synthesize_tissue(rng, patch_size, patch_size)
    spec = random_stroke_spec(rng, str(category), clean.shape[1], clean.shape[0])
    inked, mask = synthesize_stroke(clean, spec, rng)
    return clean, inked, mask, spec


def generate_paired_corpus(
    out_dir: str | Path,
    n: int,
    mix: dict[str, float] | None = None,
    seed: int = 0,
    patch_size: int = 64,
    clean_sources: list[np.ndarray] | None = None,
    jobs: int = 1,
) -> list[TripletRecord]:
    """Write n (clean, inked, stroke-mask) triplets plus a manifest.

    Each triplet is produced from its own derived RNG stream, so re-runs are
    byte-identical and worker count never changes the output.
    """
    if n < 1:
        raise InputError(f"corpus size must be >= 1, got {n}")
    if clean_sources is not None and len(clean_sources) == 0:
        raise InputError("clean_sources supplied but empty")
    mix = normalize_mix(mix or {"black": 0.4, "green": 0.3, "blue": 0.3})

    out_dir = Path(out_dir)
    for sub in ("clean", "inked", "masks"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    root = RngStream(seed=seed)

    def build(i: int) -> TripletRecord:
        stream = root.child(i)
        clean, inked, mask, spec = make_triplet(stream, patch_size, mix, clean_sources)
        name = f"{i:05d}.png"
        save_raster(clean, out_dir / "clean" / name)
        save_raster(inked, out_dir / "inked" / name)
        save_raster(mask, out_dir / "masks" / name)
        return TripletRecord(index=i, category=spec.category, spec=spec, stream_id=stream.stream_id)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(build, range(n)))
    else:
        records = [build(i) for i in range(n)]

    records.sort(key=lambda r: r.index)
    manifest_path = out_dir / "manifest.jsonl"
    header = json.dumps({"seed": seed, "n": n, "patch_size": patch_size, "mix": mix}, sort_keys=True)
    manifest_path.write_text("\n".join([header] + [r.to_json() for r in records]) + "\n")
    return records


def load_corpus(corpus_dir: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str]]:
    """Load a generated corpus back as stacked arrays (clean, inked, masks, categories)."""
    from .core import load_raster

    corpus_dir = Path(corpus_dir)
    manifest = (corpus_dir / "manifest.jsonl").read_text().splitlines()
    entries = [json.loads(line) for line in manifest[1:] if line.strip()]
    clean, inked, masks, cats = [], [], [], []
    for e in entries:
        name = f"{e['index']:05d}.png"
        clean.append(load_raster(corpus_dir / "clean" / name))
        inked.append(load_raster(corpus_dir / "inked" / name))
        masks.append(load_raster(corpus_dir / "masks" / name))
        cats.append(e["category"])
    return np.stack(clean), np.stack(inked), np.stack(masks), cats
