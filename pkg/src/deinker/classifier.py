"""Marker-vs-clean patch classifier and the fooling-rate measurement.

A residual network (depth 18/34/50) is trained to tell original clean
patches from marker patches; the fraction of restored patches it labels
clean is the pipeline's quantitative success measure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torchvision

from .core import RngStream
from .errors import CheckpointError, ConfigError, DataError, InputError
from .model import to_unit_range

SUPPORTED_DEPTHS = (18, 34, 50)
CLASS_CLEAN = 0
CLASS_MARKER = 1
CLASSIFIER_VERSION = 1


@dataclass(frozen=True)
class ClassifierConfig:
    """Depth 50 matches the full-scale setup; 18 is the desk-scale default."""

    depth: int = 18
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-4
    input_size: int = 128
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.depth not in SUPPORTED_DEPTHS:
            raise ConfigError(f"depth must be one of {SUPPORTED_DEPTHS}, got {self.depth}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in (0, 1)")


def build_resnet(depth: int) -> nn.Module:
    factory = {18: torchvision.models.resnet18, 34: torchvision.models.resnet34, 50: torchvision.models.resnet50}
    if depth not in factory:
        raise ConfigError(f"unsupported resnet depth {depth}")
    return factory[depth](weights=None, num_classes=2)


def _check_pool(patches, name: str, input_size: int) -> np.ndarray:
    arr = np.asarray(patches)
    if arr.ndim != 4 or arr.shape[-1] != 3 or arr.dtype != np.uint8:
        raise DataError(f"{name} pool must be uint8 NxHxWx3, got {arr.shape} {arr.dtype}")
    if len(arr) == 0:
        raise DataError(f"{name} pool is empty")
    if arr.shape[1] != input_size or arr.shape[2] != input_size:
        raise DataError(
            f"{name} patches are {arr.shape[2]}x{arr.shape[1]}, config expects {input_size}"
        )
    return arr


@dataclass
class TrainedClassifier:
    model: nn.Module
    config: ClassifierConfig
    val_accuracy: float

    def predict_clean(self, patches: np.ndarray, batch_size: int = 128) -> np.ndarray:
        """Boolean per patch: True when classified as originally clean."""
        arr = _check_pool(patches, "input", self.config.input_size)
        self.model.eval()
        out = np.zeros(len(arr), dtype=bool)
        with torch.no_grad():
            for start in range(0, len(arr), batch_size):
                chunk = to_unit_range(arr[start : start + batch_size])
                pred = self.model(chunk).argmax(dim=1).numpy()
                out[start : start + len(pred)] = pred == CLASS_CLEAN
        return out


def train_classifier(
    marker_patches, clean_patches, config: ClassifierConfig | None = None
) -> TrainedClassifier:
    """Train the binary classifier; returns the model plus held-out accuracy.

    Deterministic for a fixed config/seed in serial mode.
    """
    config = config or ClassifierConfig()
    marker = _check_pool(marker_patches, "marker", config.input_size)
    clean = _check_pool(clean_patches, "clean", config.input_size)

    torch.set_num_threads(1)
    torch.manual_seed(RngStream(seed=config.seed, stream_id=7).torch_seed())
    model = build_resnet(config.depth)

    rng = RngStream(seed=config.seed, stream_id=8).generator()
    x = np.concatenate([clean, marker])
    y = np.concatenate(
        [np.full(len(clean), CLASS_CLEAN, np.int64), np.full(len(marker), CLASS_MARKER, np.int64)]
    )
    order = rng.permutation(len(x))
    x, y = x[order], y[order]
    n_val = max(1, int(round(config.val_fraction * len(x))))
    x_val, y_val = x[:n_val], y[:n_val]
    x_train, y_train = x[n_val:], y[n_val:]
    if len(np.unique(y_train)) < 2:
        raise DataError("training split contains a single class")

    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    loss_fn = nn.CrossEntropyLoss()
    model.train()
    for _ in range(config.epochs):
        perm = rng.permutation(len(x_train))
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start : start + config.batch_size]
            logits = model(to_unit_range(x_train[idx]))
            loss = loss_fn(logits, torch.from_numpy(y_train[idx]))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

    model.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, len(x_val), config.batch_size):
            logits = model(to_unit_range(x_val[start : start + config.batch_size]))
            pred = logits.argmax(dim=1).numpy()
            correct += int((pred == y_val[start : start + len(pred)]).sum())
    accuracy = correct / len(x_val)
    return TrainedClassifier(model=model, config=config, val_accuracy=accuracy)


@dataclass
class FoolingResult:
    overall: float
    n: int
    classified_clean: int
    per_category: dict | None
    per_patch: list[dict] = field(default_factory=list)


def fooling_rate(
    classifier: TrainedClassifier,
    patches,
    categories: list[str] | None = None,
    ids: list[str] | None = None,
) -> FoolingResult:
    """Fraction of patches the classifier takes for originally clean tissue."""
    arr = np.asarray(patches)
    if len(arr) == 0:
        raise InputError("fooling_rate needs at least one patch")
    if categories is not None and len(categories) != len(arr):
        raise InputError("categories length must match patches")
    preds = classifier.predict_clean(arr)
    per_patch = []
    for i, clean in enumerate(preds):
        entry: dict = {"id": ids[i] if ids else f"patch{i:05d}", "predicted_clean": bool(clean)}
        if categories is not None:
            entry["category"] = categories[i]
        per_patch.append(entry)
    per_category = None
    if categories is not None:
        per_category = {}
        for entry in per_patch:
            bucket = per_category.setdefault(entry["category"], {"n": 0, "classified_clean": 0})
            bucket["n"] += 1
            bucket["classified_clean"] += int(entry["predicted_clean"])
        for bucket in per_category.values():
            bucket["rate"] = bucket["classified_clean"] / bucket["n"]
    n_clean = int(preds.sum())
    return FoolingResult(
        overall=n_clean / len(arr),
        n=len(arr),
        classified_clean=n_clean,
        per_category=per_category,
        per_patch=per_patch,
    )


def save_classifier(trained: TrainedClassifier, path: str | Path) -> None:
    torch.save(
        {
            "format_version": CLASSIFIER_VERSION,
            "config": {
                "depth": trained.config.depth,
                "epochs": trained.config.epochs,
                "batch_size": trained.config.batch_size,
                "lr": trained.config.lr,
                "input_size": trained.config.input_size,
                "val_fraction": trained.config.val_fraction,
                "seed": trained.config.seed,
            },
            "state": trained.model.state_dict(),
            "val_accuracy": trained.val_accuracy,
        },
        path,
    )


def load_classifier(path: str | Path) -> TrainedClassifier:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CheckpointError(f"cannot read classifier checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format_version") != CLASSIFIER_VERSION:
        raise CheckpointError(f"unsupported classifier checkpoint: {path}")
    config = ClassifierConfig(**payload["config"])
    model = build_resnet(config.depth)
    model.load_state_dict(payload["state"])
    model.eval()
    return TrainedClassifier(model=model, config=config, val_accuracy=float(payload["val_accuracy"]))
