import numpy as np
import pytest
import torch

from deinker.core import MASK_INK
from deinker.errors import GeometryError
from deinker.restore import (
    TilePlan,
    check_ink_coverage,
    coverage_counts,
    identity_generator,
    plan_tiles,
    restore_batchwise,
    restore_slide,
)
from deinker.synth import synthesize_tissue

from conftest import make_mask


# --------------------------------------------------------------------------- #
# plan_tiles
# --------------------------------------------------------------------------- #
def test_axis_origins_overlap_case():
    mask = make_mask("s", 1, (7, 7))
    plan = plan_tiles(7, 7, mask, tile=4, stride=3)
    xs = sorted({x for x, _ in plan.origins})
    assert xs == [0, 3]
    # column 3 is covered by both x-origins
    counts = np.zeros(7, dtype=int)
    for x in xs:
        counts[x : x + 4] += 1
    assert counts[3] == 2


def test_axis_origins_clamped():
    mask = make_mask("s", 1, (10, 10))
    plan = plan_tiles(10, 10, mask, tile=4, stride=3)
    xs = sorted({x for x, _ in plan.origins})
    assert xs == [0, 3, 6]  # 6 == 10 - 4, the clamped final origin


def test_axis_origins_clamp_appends():
    mask = make_mask("s", 1, (9, 9))
    plan = plan_tiles(9, 9, mask, tile=4, stride=3)
    xs = sorted({x for x, _ in plan.origins})
    assert xs == [0, 3, 5]  # 5 == 9 - 4 appended after lattice 0,3


def test_empty_mask_no_ink_tiles():
    mask = make_mask("s", 1, (16, 16))
    plan = plan_tiles(16, 16, mask, tile=8, stride=4)
    assert plan.ink_tiles() == []


def test_tile_larger_than_slide():
    mask = make_mask("s", 1, (4, 4))
    with pytest.raises(GeometryError):
        plan_tiles(4, 4, mask, tile=8, stride=4)
    with pytest.raises(GeometryError):
        plan_tiles(4, 4, mask, tile=4, stride=5)


def test_ink_flags_mark_intersecting_tiles():
    mask = make_mask("s", 2, (8, 8), [(2, 2, 1, 1)])  # full-res rect (4..6, 4..6)
    plan = plan_tiles(16, 16, mask, tile=4, stride=4)
    flagged = set(plan.ink_tiles())
    assert (4, 4) in flagged
    assert (0, 0) not in flagged
    assert (12, 12) not in flagged


def test_every_ink_pixel_covered(rng):
    for seed in range(5):
        local = np.random.default_rng(seed)
        w, h = int(local.integers(40, 120)), int(local.integers(40, 120))
        tile = int(local.integers(8, 32))
        tile = min(tile, w, h)
        stride = int(local.integers(1, tile + 1))
        ds = int(local.choice([1, 2, 4]))
        mw, mh = -(-w // ds), -(-h // ds)
        m = (local.random((mh, mw)) < 0.1).astype(np.uint8) * 255
        mask = make_mask("s", ds, (mh, mw))
        mask.mask[:] = m
        plan = plan_tiles(w, h, mask, tile=tile, stride=stride)
        assert check_ink_coverage(mask, w, h, plan)


# --------------------------------------------------------------------------- #
# restore_slide
# --------------------------------------------------------------------------- #
def test_identity_restore_small(rng):
    slide, _ = synthesize_tissue(rng, 128, 96)
    mask = make_mask("s", 8, (12, 16), [(3, 3, 4, 2)])
    plan = plan_tiles(128, 96, mask, tile=32, stride=25)
    out = restore_slide(slide, mask, identity_generator, plan)
    diff = np.abs(out.astype(np.int64) - slide.astype(np.int64))
    assert diff.max() <= 1
    covered = coverage_counts(slide.shape, plan) > 0
    assert np.array_equal(out[~covered], slide[~covered])


def test_empty_mask_output_identical(rng):
    slide, _ = synthesize_tissue(rng, 64, 64)
    mask = make_mask("s", 8, (8, 8))
    plan = plan_tiles(64, 64, mask, tile=32, stride=25)
    out = restore_slide(slide, mask, identity_generator, plan)
    assert np.array_equal(out, slide)


def test_overlap_averaging_by_hand():
    # two overlapping tiles write constants 10 and 20; shared column averages to 15
    slide = np.zeros((4, 7, 3), dtype=np.uint8)
    mask = make_mask("s", 1, (4, 7), [(0, 0, 7, 4)])
    plan = plan_tiles(7, 4, mask, tile=4, stride=3)
    assert [xy for xy in plan.origins] == [(0, 0), (3, 0)]

    values = iter([10, 20])

    def constant_generator(batch):
        v = next(values)
        return torch.full_like(batch, v / 127.5 - 1.0)

    out = restore_slide(slide, mask, constant_generator, plan)
    assert (out[:, :3] == 10).all()
    assert (out[:, 3] == 15).all()
    assert (out[:, 4:] == 20).all()


def test_rounding_half_away_from_zero():
    # counts 2 with sum 10+15=25 -> 12.5 -> 13
    slide = np.zeros((4, 7, 3), dtype=np.uint8)
    mask = make_mask("s", 1, (4, 7), [(0, 0, 7, 4)])
    plan = plan_tiles(7, 4, mask, tile=4, stride=3)
    values = iter([10, 15])

    def constant_generator(batch):
        v = next(values)
        return torch.full_like(batch, v / 127.5 - 1.0)

    out = restore_slide(slide, mask, constant_generator, plan)
    assert (out[:, 3] == 13).all()


# --------------------------------------------------------------------------- #
# restore_batchwise
# --------------------------------------------------------------------------- #
def make_scripted_generator():
    """Deterministic per-tile transform independent of batch composition."""

    def generator(batch):
        return (-batch).clamp(-1.0, 1.0)

    return generator


def test_batchwise_equivalence(rng):
    slide, _ = synthesize_tissue(rng, 96, 96)
    mask = make_mask("s", 8, (12, 12), [(0, 0, 12, 12)])
    plan = plan_tiles(96, 96, mask, tile=32, stride=20)
    gen = make_scripted_generator()
    single = restore_batchwise(slide, mask, gen, plan, batch_size=1)
    batched = restore_batchwise(slide, mask, gen, plan, batch_size=32)
    serial = restore_slide(slide, mask, gen, plan)
    assert np.array_equal(single, batched)
    assert np.array_equal(single, serial)


def test_batch_larger_than_tiles_single_invocation(rng):
    slide, _ = synthesize_tissue(rng, 64, 64)
    mask = make_mask("s", 8, (8, 8), [(0, 0, 8, 8)])
    plan = plan_tiles(64, 64, mask, tile=32, stride=32)
    calls = []

    def counting_generator(batch):
        calls.append(batch.shape[0])
        return batch

    restore_batchwise(slide, mask, counting_generator, plan, batch_size=999)
    assert len(calls) == 1
    assert calls[0] == len(plan.ink_tiles())


def test_batch_invocation_count(rng):
    # 64 ink tiles at batch 32 -> exactly 2 generator invocations
    slide, _ = synthesize_tissue(rng, 72, 72)
    mask = make_mask("s", 8, (9, 9), [(0, 0, 9, 9)])
    plan = plan_tiles(72, 72, mask, tile=8, stride=8)
    assert len(plan.ink_tiles()) == 81
    calls = []

    def counting_generator(batch):
        calls.append(batch.shape[0])
        return batch

    restore_batchwise(slide, mask, counting_generator, plan, batch_size=32)
    assert len(calls) == int(np.ceil(81 / 32))


def test_order_independence(rng):
    slide, _ = synthesize_tissue(rng, 96, 96)
    mask = make_mask("s", 8, (12, 12), [(2, 2, 8, 8)])
    plan = plan_tiles(96, 96, mask, tile=32, stride=20)
    gen = make_scripted_generator()
    out1 = restore_slide(slide, mask, gen, plan)
    perm = np.random.default_rng(0).permutation(len(plan.origins))
    shuffled = TilePlan(
        tile=plan.tile,
        stride=plan.stride,
        origins=tuple(plan.origins[i] for i in perm),
        ink_flags=tuple(plan.ink_flags[i] for i in perm),
    )
    out2 = restore_slide(slide, mask, gen, shuffled)
    assert np.array_equal(out1, out2)


def test_conservatism_outside_ink_tiles(rng):
    slide, _ = synthesize_tissue(rng, 96, 96)
    mask = make_mask("s", 8, (12, 12), [(1, 1, 2, 2)])
    plan = plan_tiles(96, 96, mask, tile=32, stride=20)
    gen = make_scripted_generator()
    out = restore_batchwise(slide, mask, gen, plan, batch_size=4)
    covered = coverage_counts(slide.shape, plan) > 0
    assert covered.any() and not covered.all()
    assert np.array_equal(out[~covered], slide[~covered])
    assert not np.array_equal(out[covered], slide[covered])
