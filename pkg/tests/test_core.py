import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deinker.core import (
    DatasetManifest,
    MarkerMask,
    PatchRecord,
    RngStream,
    crop,
    load_manifest,
    load_mask,
    load_raster,
    save_manifest,
    save_mask,
    save_raster,
)
from deinker.errors import BoundsError, FormatError


# --------------------------------------------------------------------------- #
# Raster I/O
# --------------------------------------------------------------------------- #
def test_round_trip_rgb(tmp_path, rng):
    img = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    path = tmp_path / "img.png"
    save_raster(img, path)
    loaded = load_raster(path)
    assert loaded.shape == (16, 16, 3)
    assert np.array_equal(loaded, img)


def test_round_trip_zero_mask(tmp_path):
    mask = np.zeros((4, 4), dtype=np.uint8)
    save_raster(mask, tmp_path / "m.png")
    assert np.array_equal(load_raster(tmp_path / "m.png"), mask)


def test_dimensions_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (128, 128, 3), dtype=np.uint8)
    save_raster(img, tmp_path / "p.png")
    out = load_raster(tmp_path / "p.png")
    assert out.shape == (128, 128, 3)


def test_single_gray_pixel(tmp_path):
    img = np.array([[255]], dtype=np.uint8)
    save_raster(img, tmp_path / "one.png")
    out = load_raster(tmp_path / "one.png")
    assert out.shape == (1, 1)
    assert out[0, 0] == 255


def test_truncated_file_is_format_error(tmp_path, rng):
    img = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    path = tmp_path / "t.png"
    save_raster(img, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(FormatError):
        load_raster(path)


def test_garbage_file_is_format_error(tmp_path):
    path = tmp_path / "junk.png"
    path.write_bytes(b"this is not an image at all")
    with pytest.raises(FormatError):
        load_raster(path)


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(OSError):
        load_raster(tmp_path / "absent.png")


def test_unwritable_path_is_io_error(tmp_path):
    img = np.zeros((2, 2, 3), dtype=np.uint8)
    with pytest.raises(OSError):
        save_raster(img, tmp_path / "no" / "such" / "dir" / "x.png")


def test_unsupported_mode_is_format_error(tmp_path):
    from PIL import Image

    Image.new("RGBA", (4, 4)).save(tmp_path / "rgba.png")
    with pytest.raises(FormatError):
        load_raster(tmp_path / "rgba.png")


@settings(max_examples=25, deadline=None)
@given(
    w=st.integers(1, 24),
    h=st.integers(1, 24),
    channels=st.sampled_from([1, 3]),
    seed=st.integers(0, 2**32 - 1),
)
def test_round_trip_property(tmp_path_factory, w, h, channels, seed):
    rng = np.random.default_rng(seed)
    shape = (h, w) if channels == 1 else (h, w, 3)
    img = rng.integers(0, 256, shape, dtype=np.uint8)
    path = tmp_path_factory.mktemp("rt") / "x.png"
    save_raster(img, path)
    assert np.array_equal(load_raster(path), img)


# --------------------------------------------------------------------------- #
# Crop
# --------------------------------------------------------------------------- #
def test_crop_identity(rng):
    img = rng.integers(0, 256, (9, 7, 3), dtype=np.uint8)
    assert np.array_equal(crop(img, 0, 0, 7, 9), img)


def test_crop_hand_enumerated():
    img = np.arange(9, dtype=np.uint8).reshape(3, 3)
    out = crop(img, 1, 0, 2, 2)
    # rows 0-1, cols 1-2 of [[0,1,2],[3,4,5],[6,7,8]]
    assert np.array_equal(out, np.array([[1, 2], [4, 5]], dtype=np.uint8))


def test_crop_out_of_bounds():
    img = np.zeros((4, 4, 3), dtype=np.uint8)
    with pytest.raises(BoundsError):
        crop(img, 2, 0, 3, 2)
    with pytest.raises(BoundsError):
        crop(img, -1, 0, 2, 2)


@settings(max_examples=50, deadline=None)
@given(data=st.data())
def test_crop_composition(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
    img = rng.integers(0, 256, (12, 15, 3), dtype=np.uint8)
    ax = data.draw(st.integers(0, 10))
    ay = data.draw(st.integers(0, 8))
    aw = data.draw(st.integers(1, 15 - ax))
    ah = data.draw(st.integers(1, 12 - ay))
    bx = data.draw(st.integers(0, aw - 1))
    by = data.draw(st.integers(0, ah - 1))
    bw = data.draw(st.integers(1, aw - bx))
    bh = data.draw(st.integers(1, ah - by))
    nested = crop(crop(img, ax, ay, aw, ah), bx, by, bw, bh)
    composed = crop(img, ax + bx, ay + by, bw, bh)
    assert np.array_equal(nested, composed)


# --------------------------------------------------------------------------- #
# Masks
# --------------------------------------------------------------------------- #
def test_mask_rejects_intermediate_values():
    bad = np.full((4, 4), 17, dtype=np.uint8)
    with pytest.raises(FormatError):
        MarkerMask(slide_id="s", downsample=1, mask=bad)


def test_mask_save_load_round_trip(tmp_path):
    mask = MarkerMask(slide_id="s1", downsample=4, mask=np.full((5, 6), 255, dtype=np.uint8))
    save_mask(mask, tmp_path / "m.png")
    loaded = load_mask(tmp_path / "m.png")
    assert loaded.slide_id == "s1"
    assert loaded.downsample == 4
    assert np.array_equal(loaded.mask, mask.mask)


def test_mask_load_thresholds_intermediate_with_warning(tmp_path):
    raw = np.array([[0, 100], [128, 255]], dtype=np.uint8)
    save_raster(raw, tmp_path / "m.png")
    (tmp_path / "m.png.json").write_text('{"slide_id": "s", "downsample": 2}')
    with pytest.warns(UserWarning):
        mask = load_mask(tmp_path / "m.png")
    assert np.array_equal(mask.mask, np.array([[0, 0], [255, 255]], dtype=np.uint8))


def test_mask_geometry_check():
    mask = MarkerMask(slide_id="s", downsample=8, mask=np.zeros((13, 16), dtype=np.uint8))
    assert mask.matches_slide(128, 100)  # ceil(100/8)=13, ceil(128/8)=16
    assert not mask.matches_slide(128, 128)


# --------------------------------------------------------------------------- #
# Manifest serialization
# --------------------------------------------------------------------------- #
def test_manifest_round_trip(tmp_path):
    records = [
        PatchRecord("s1", 0, 0, 128, "marker", "black", "train"),
        PatchRecord("s1", 10, 4, 128, "clean_tissue", "black", "train"),
    ]
    manifest = DatasetManifest(records=records, seed=7)
    save_manifest(manifest, tmp_path / "m.jsonl")
    loaded = load_manifest(tmp_path / "m.jsonl")
    assert loaded.seed == 7
    assert loaded.records == records
    assert loaded.counts == manifest.counts


def test_record_rejects_unknown_label():
    with pytest.raises(FormatError):
        PatchRecord("s", 0, 0, 128, "mystery", "black", "train")


# --------------------------------------------------------------------------- #
# RNG streams
# --------------------------------------------------------------------------- #
def test_rng_stream_determinism():
    a = RngStream(seed=42, stream_id=3).generator().random(1000)
    b = RngStream(seed=42, stream_id=3).generator().random(1000)
    assert np.array_equal(a, b)


def test_rng_streams_differ():
    a = RngStream(seed=42, stream_id=0).generator().random(100)
    b = RngStream(seed=42, stream_id=1).generator().random(100)
    assert not np.array_equal(a, b)


def test_rng_child_stable():
    parent = RngStream(seed=9)
    assert parent.child(5) == parent.child(5)
    assert parent.child(4) != parent.child(5)
    assert parent.child(0).generator().random() == parent.child(0).generator().random()
