import numpy as np
import pytest

from deinker.core import MASK_CLEAN, MASK_INK, MarkerMask
from deinker.synth import synthesize_tissue


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tissue_patch(rng):
    """One 64x64 pseudo-H&E patch."""
    img, _ = synthesize_tissue(rng, 64, 64)
    return img


def make_mask(slide_id: str, downsample: int, shape: tuple, ink_rects=()) -> MarkerMask:
    """Mask helper: ink_rects are (x, y, w, h) in mask coordinates."""
    mask = np.full(shape, MASK_CLEAN, dtype=np.uint8)
    for x, y, w, h in ink_rects:
        mask[y : y + h, x : x + w] = MASK_INK
    return MarkerMask(slide_id=slide_id, downsample=downsample, mask=mask)
