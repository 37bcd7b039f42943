import numpy as np
import pytest
import torch
import torch.nn as nn

from deinker.classifier import (
    ClassifierConfig,
    TrainedClassifier,
    fooling_rate,
    load_classifier,
    save_classifier,
    train_classifier,
)
from deinker.errors import ConfigError, DataError, InputError


def color_pool(color, n, size=32, jitter=12, seed=0):
    rng = np.random.default_rng(seed)
    base = np.tile(np.array(color, dtype=np.float64), (n, size, size, 1))
    noisy = base + rng.normal(0, jitter, base.shape)
    return np.clip(np.round(noisy), 0, 255).astype(np.uint8)


def toy_config(**kw):
    defaults = dict(depth=18, epochs=1, batch_size=32, lr=1e-3, input_size=32, seed=0)
    defaults.update(kw)
    return ClassifierConfig(**defaults)


class FixedLogitModel(nn.Module):
    """Stub emitting a constant class for fooling-rate degenerate cases."""

    def __init__(self, clean_wins: bool):
        super().__init__()
        self.clean_wins = clean_wins

    def forward(self, x):
        logits = torch.zeros(x.shape[0], 2)
        logits[:, 0 if self.clean_wins else 1] = 10.0
        return logits


def fixed_classifier(clean_wins: bool, input_size=32):
    return TrainedClassifier(
        model=FixedLogitModel(clean_wins),
        config=toy_config(input_size=input_size),
        val_accuracy=1.0,
    )


def test_separable_classes_high_accuracy():
    marker = color_pool((40, 110, 60), 120, seed=1)  # green ink
    clean = color_pool((232, 186, 208), 120, seed=2)  # pink tissue
    trained = train_classifier(marker, clean, toy_config(epochs=2))
    assert trained.val_accuracy >= 0.99


def test_training_deterministic():
    marker = color_pool((40, 60, 150), 60, seed=3)
    clean = color_pool((232, 186, 208), 60, seed=4)
    a = train_classifier(marker, clean, toy_config())
    b = train_classifier(marker, clean, toy_config())
    assert a.val_accuracy == b.val_accuracy
    for p1, p2 in zip(a.model.state_dict().values(), b.model.state_dict().values()):
        assert torch.equal(p1, p2)


def test_empty_pool_is_data_error():
    marker = color_pool((40, 60, 150), 10)
    with pytest.raises(DataError):
        train_classifier(marker, np.zeros((0, 32, 32, 3), dtype=np.uint8), toy_config())


def test_wrong_patch_size_rejected():
    marker = color_pool((40, 60, 150), 10, size=16)
    clean = color_pool((232, 186, 208), 10, size=16)
    with pytest.raises(DataError):
        train_classifier(marker, clean, toy_config(input_size=32))


def test_unsupported_depth():
    with pytest.raises(ConfigError):
        ClassifierConfig(depth=101)


def test_fooling_rate_degenerate_classifiers():
    patches = color_pool((100, 100, 100), 8)
    always_clean = fooling_rate(fixed_classifier(True), patches)
    assert always_clean.overall == 1.0
    always_marker = fooling_rate(fixed_classifier(False), patches)
    assert always_marker.overall == 0.0


def test_fooling_rate_per_category_and_log():
    patches = color_pool((100, 100, 100), 6)
    cats = ["black", "black", "green", "green", "blue", "blue"]
    result = fooling_rate(fixed_classifier(True), patches, categories=cats)
    assert result.per_category["green"]["rate"] == 1.0
    assert len(result.per_patch) == 6
    # the rate is recomputable from the per-patch log
    recount = sum(1 for e in result.per_patch if e["predicted_clean"])
    assert recount / len(result.per_patch) == result.overall


def test_fooling_rate_empty_input():
    with pytest.raises(InputError):
        fooling_rate(fixed_classifier(True), np.zeros((0, 32, 32, 3), dtype=np.uint8))


def test_fooling_rate_category_length_mismatch():
    patches = color_pool((100, 100, 100), 4)
    with pytest.raises(InputError):
        fooling_rate(fixed_classifier(True), patches, categories=["black"])


def test_classifier_save_load_round_trip(tmp_path):
    marker = color_pool((40, 60, 150), 30, seed=5)
    clean = color_pool((232, 186, 208), 30, seed=6)
    trained = train_classifier(marker, clean, toy_config())
    save_classifier(trained, tmp_path / "cls.pt")
    loaded = load_classifier(tmp_path / "cls.pt")
    assert loaded.val_accuracy == trained.val_accuracy
    probe = color_pool((40, 60, 150), 4, seed=7)
    assert np.array_equal(loaded.predict_clean(probe), trained.predict_clean(probe))
