"""Restoration quality instruments.

Four quantitative checks: a marker-vs-clean classifier fooling rate (how
often restored patches pass as clean), Pearson correlation of gradient
magnitudes (edge structure preserved?), nuclei counts before/after
restoration (occluded cells recovered?), and the report that gathers them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.ndimage as ndi
from skimage.color import rgb2hed
from skimage.feature import peak_local_max
from skimage.filters import threshold_otsu
from skimage.segmentation import watershed

from .core import validate_raster
from .errors import GeometryError, InputError, ReportError, UndefinedCorrelationError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


# --------------------------------------------------------------------------- #
# Gradient-magnitude correlation
# --------------------------------------------------------------------------- #
def luminance(image: np.ndarray) -> np.ndarray:
    """Rec. 601 luma as float64; gray images pass through."""
    validate_raster(image)
    if image.ndim == 2:
        return image.astype(np.float64)
    r, g, b = LUMA_WEIGHTS
    return r * image[..., 0] + g * image[..., 1] + b * image[..., 2]


def _sobel_magnitude(plane: np.ndarray) -> np.ndarray:
    p = np.pad(plane, 1, mode="edge")
    gx = (
        (p[:-2, 2:] - p[:-2, :-2])
        + 2.0 * (p[1:-1, 2:] - p[1:-1, :-2])
        + (p[2:, 2:] - p[2:, :-2])
    )
    gy = (
        (p[2:, :-2] - p[:-2, :-2])
        + 2.0 * (p[2:, 1:-1] - p[:-2, 1:-1])
        + (p[2:, 2:] - p[:-2, 2:])
    )
    return np.hypot(gx, gy)


def gradient_magnitude(image: np.ndarray, per_channel: bool = False) -> np.ndarray:
    """Sobel edge strength, borders edge-replicated.

    Default: one grid over the luminance. per_channel stacks a grid per RGB
    channel instead (shape HxWx3).
    """
    if per_channel:
        validate_raster(image)
        if image.ndim != 3:
            raise GeometryError("per-channel gradients need an RGB image")
        planes = [_sobel_magnitude(image[..., c].astype(np.float64)) for c in range(3)]
        return np.stack(planes, axis=-1)
    return _sobel_magnitude(luminance(image))


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Mean-centered Pearson correlation of two equal-length vectors."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    da = a - a.mean()
    db = b - b.mean()
    na = math.sqrt(float((da * da).sum()))
    nb = math.sqrt(float((db * db).sum()))
    if na == 0.0 or nb == 0.0:
        raise UndefinedCorrelationError("correlation undefined: an input is constant")
    return float((da * db).sum() / (na * nb))


def gradient_correlation(a: np.ndarray, b: np.ndarray, per_channel: bool = False) -> float:
    """Pearson correlation between the gradient-magnitude maps of two images.

    per_channel correlates the three stacked per-channel magnitude grids
    instead of the luminance grid.
    """
    if a.shape[:2] != b.shape[:2]:
        raise GeometryError(f"image dims differ: {a.shape[:2]} vs {b.shape[:2]}")
    return pearson(gradient_magnitude(a, per_channel), gradient_magnitude(b, per_channel))


@dataclass
class CorrelationSummary:
    mean: float
    std: float
    min: float
    max: float
    n: int
    excluded_constant: int


def correlation_stats(values: list[float], excluded: int = 0) -> CorrelationSummary:
    if not values:
        raise InputError("no correlation values to aggregate")
    arr = np.asarray(values, dtype=np.float64)
    return CorrelationSummary(
        mean=float(arr.mean()),
        std=float(arr.std(ddof=0)),
        min=float(arr.min()),
        max=float(arr.max()),
        n=len(values),
        excluded_constant=excluded,
    )


def batch_gradient_correlation(
    pairs: list[tuple[np.ndarray, np.ndarray]]
) -> tuple[list[float], int]:
    """Correlations for each pair; constant-gradient pairs are excluded and counted."""
    values: list[float] = []
    excluded = 0
    for a, b in pairs:
        try:
            values.append(gradient_correlation(a, b))
        except UndefinedCorrelationError:
            excluded += 1
    return values, excluded


# --------------------------------------------------------------------------- #
# Nuclei counting
# --------------------------------------------------------------------------- #
def hematoxylin_channel(image: np.ndarray) -> np.ndarray:
    """Stain-deconvolved hematoxylin density (standard H&E optical matrix)."""
    validate_raster(image)
    if image.ndim != 3:
        raise GeometryError("nuclei counting expects an RGB image")
    return rgb2hed(image)[..., 0]


def count_nuclei(
    image: np.ndarray,
    min_area: int = 40,
    peak_min_distance: int = 5,
    max_area: int | None = None,
) -> tuple[int, np.ndarray]:
    """Count nuclei: hematoxylin deconvolution, Otsu threshold, hole filling,
    distance-transform watershed to split touching blobs, then area filter.

    max_area optionally drops oversized components (pen-stroke fragments and
    debris are far larger than any nucleus). Returns (count, instance label
    grid). A blank image counts zero.
    """
    hema = hematoxylin_channel(image)
    if float(hema.max() - hema.min()) < 1e-6:
        return 0, np.zeros(image.shape[:2], dtype=np.int32)
    thresh = threshold_otsu(hema)
    binary = hema > thresh
    # Otsu on a nearly-empty channel latches onto noise; require real contrast.
    fg = hema[binary]
    bg = hema[~binary] if (~binary).any() else np.zeros(1)
    if fg.size == 0 or float(fg.mean() - bg.mean()) < 0.02:
        return 0, np.zeros(image.shape[:2], dtype=np.int32)
    binary = ndi.binary_fill_holes(binary)

    distance = ndi.distance_transform_edt(binary)
    coords = peak_local_max(
        distance, min_distance=peak_min_distance, footprint=np.ones((3, 3)), labels=binary
    )
    seeds = np.zeros(distance.shape, dtype=bool)
    seeds[tuple(coords.T)] = True
    markers, _ = ndi.label(seeds)
    labels = watershed(-distance, markers, mask=binary)

    out = np.zeros_like(labels, dtype=np.int32)
    next_id = 0
    for region in range(1, labels.max() + 1):
        blob = labels == region
        area = int(blob.sum())
        if area < min_area:
            continue
        if max_area is not None and area > max_area:
            continue
        next_id += 1
        out[blob] = next_id
    return next_id, out


@dataclass(frozen=True)
class NucleiDelta:
    n_before: int
    n_after: int

    @property
    def revived(self) -> int:
        return self.n_after - self.n_before


def nuclei_delta(
    before: np.ndarray,
    after: np.ndarray,
    min_area: int = 40,
    peak_min_distance: int = 5,
    max_area: int | None = None,
) -> NucleiDelta:
    """Nuclei counts on the occluded and restored versions of one slide."""
    if before.shape[:2] != after.shape[:2]:
        raise GeometryError(f"slide dims differ: {before.shape[:2]} vs {after.shape[:2]}")
    n_before, _ = count_nuclei(before, min_area, peak_min_distance, max_area)
    n_after, _ = count_nuclei(after, min_area, peak_min_distance, max_area)
    return NucleiDelta(n_before=n_before, n_after=n_after)


# --------------------------------------------------------------------------- #
# Report assembly
# --------------------------------------------------------------------------- #
REPORT_VERSION = 1

# Results reported for full-scale training (250k patches from hundreds of
# real slides, long GPU runs); desk-scale runs carry these as reference
# context, not as targets they reproduce.
FULL_SCALE_REFERENCE = {
    "fooling_overall_range": [0.96, 0.97],
    "fooling_per_category": {
        "black": [0.98, 0.98],
        "green": [0.93, 0.94],
        "blue": [0.96, 0.98],
        "opaque": [0.97, 0.98],
    },
    "grad_corr_nonopaque": {"mean": 0.93, "std": 0.02, "min": 0.83, "max": 0.97},
    "grad_corr_opaque": {"mean": 0.61, "std": 0.21},
    "blind_test": {"corrected_as_original": 0.70, "clean_as_corrected": 0.40},
    "nuclei_table": [
        {"slide": 1, "before": 385314, "after": 461880, "revived": 76566},
        {"slide": 2, "before": 205608, "after": 290564, "revived": 84956},
        {"slide": 3, "before": 130292, "after": 184489, "revived": 54197},
        {"slide": 4, "before": 314552, "after": 387201, "revived": 72649},
        {"slide": 5, "before": 215444, "after": 310112, "revived": 94668},
    ],
}


def report_schema() -> dict:
    with resources.files("deinker.schemas").joinpath("eval_report.schema.json").open() as fh:
        return json.load(fh)


def _fooling_section(per_patch: list[dict]) -> dict:
    if not per_patch:
        raise InputError("fooling section needs at least one per-patch entry")
    for entry in per_patch:
        if "predicted_clean" not in entry:
            raise ReportError(f"fooling entry missing predicted_clean: {entry}")
    n = len(per_patch)
    clean = sum(1 for e in per_patch if e["predicted_clean"])
    per_category: dict[str, dict] = {}
    for e in per_patch:
        cat = e.get("category")
        if cat is None:
            continue
        bucket = per_category.setdefault(cat, {"n": 0, "classified_clean": 0})
        bucket["n"] += 1
        bucket["classified_clean"] += int(bool(e["predicted_clean"]))
    for bucket in per_category.values():
        bucket["rate"] = bucket["classified_clean"] / bucket["n"]
    return {
        "overall": clean / n,
        "n": n,
        "classified_clean": clean,
        "per_category": per_category or None,
        "per_patch": per_patch,
    }


def _grad_corr_section(values: list[float], excluded: int, per_category: dict | None) -> dict:
    stats = correlation_stats(values, excluded)
    section = {
        "mean": stats.mean,
        "std": stats.std,
        "min": stats.min,
        "max": stats.max,
        "n": stats.n,
        "excluded_constant": stats.excluded_constant,
        "values": list(map(float, values)),
    }
    if per_category:
        section["per_category"] = {
            cat: {
                "mean": float(np.mean(v)),
                "std": float(np.std(v)),
                "min": float(np.min(v)),
                "max": float(np.max(v)),
                "n": len(v),
            }
            for cat, v in per_category.items()
            if v
        }
    return section


def _nuclei_section(rows: list[dict]) -> list[dict]:
    out = []
    for row in rows:
        if "before" not in row or "after" not in row:
            raise ReportError(f"nuclei row needs before/after: {row}")
        revived = int(row["after"]) - int(row["before"])
        if "revived" in row and int(row["revived"]) != revived:
            raise ReportError(
                f"nuclei row revived={row['revived']} inconsistent with "
                f"after-before={revived}: {row}"
            )
        out.append(
            {
                "slide_id": row.get("slide_id", ""),
                "before": int(row["before"]),
                "after": int(row["after"]),
                "revived": revived,
            }
        )
    return out


def assemble_report(
    fooling_per_patch: list[dict] | None = None,
    grad_corr_values: list[float] | None = None,
    grad_corr_excluded: int = 0,
    grad_corr_per_category: dict | None = None,
    nuclei_rows: list[dict] | None = None,
    blind_test: dict | None = None,
    checkpoint: str = "",
    classifier: str = "",
    config: dict | None = None,
) -> dict:
    """Build a schema-valid report; aggregates are recomputed from the raw
    per-patch/per-pair entries, never trusted from the caller."""
    if not any([fooling_per_patch, grad_corr_values, nuclei_rows, blind_test]):
        raise InputError("report needs at least one metric section")
    report = {
        "version": REPORT_VERSION,
        "checkpoint": checkpoint,
        "classifier": classifier,
        "config": config or {},
        "fooling": _fooling_section(fooling_per_patch) if fooling_per_patch else None,
        "grad_corr": (
            _grad_corr_section(grad_corr_values, grad_corr_excluded, grad_corr_per_category)
            if grad_corr_values
            else None
        ),
        "nuclei": _nuclei_section(nuclei_rows) if nuclei_rows else None,
        "blind_test": blind_test,
        "reference_results": FULL_SCALE_REFERENCE,
    }
    validate_report(report)
    return report


def validate_report(report: dict) -> None:
    """Check the report against the shipped schema's structural rules."""
    if report.get("version") != REPORT_VERSION:
        raise ReportError(f"unsupported report version {report.get('version')}")
    sections = ("fooling", "grad_corr", "nuclei", "blind_test")
    for key in sections:
        if key not in report:
            raise ReportError(f"report missing section key {key!r}")
    if all(report[key] is None for key in sections):
        raise ReportError("report has no populated metric section")
    fooling = report["fooling"]
    if fooling is not None:
        if not 0.0 <= fooling["overall"] <= 1.0:
            raise ReportError(f"fooling rate out of range: {fooling['overall']}")
        recount = sum(1 for e in fooling["per_patch"] if e["predicted_clean"])
        if recount != fooling["classified_clean"]:
            raise ReportError("fooling aggregate disagrees with per-patch log")
        if fooling["n"] != len(fooling["per_patch"]):
            raise ReportError("fooling n disagrees with per-patch log")
    nuclei = report["nuclei"]
    if nuclei is not None:
        for row in nuclei:
            if row["revived"] != row["after"] - row["before"]:
                raise ReportError(f"nuclei invariant violated in {row}")


def save_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
