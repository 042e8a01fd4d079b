import json

import numpy as np
import pytest

from gdce.errors import DataError
from gdce.image import (
    DatasetManifest,
    ManifestEntry,
    RawImage,
    UnitImage,
    Window,
    load_image,
    load_manifest,
    normalize_full_range,
    normalize_window,
    normalize_zscore,
    save_image,
    save_manifest,
    save_raw_image,
    sidecar_path,
)


def _raw(pixels, bit_depth=16, **kw):
    return RawImage(pixels=np.asarray(pixels), bit_depth=bit_depth, **kw)


def test_window_requires_positive_width():
    Window(100.0, 50.0)
    with pytest.raises(DataError):
        Window(100.0, 0.0)
    with pytest.raises(DataError):
        Window(100.0, -1.0)


def test_raw_image_validation():
    ok = _raw([[0, 65535]], bit_depth=16)
    assert ok.width == 2 and ok.height == 1 and ok.max_count == 65535
    with pytest.raises(DataError):
        _raw([[0, 256]], bit_depth=8)
    with pytest.raises(DataError):
        _raw([[-1, 0]])
    with pytest.raises(DataError):
        _raw([[0.5, 1.0]])
    with pytest.raises(DataError):
        _raw([0, 1])  # 1-D
    with pytest.raises(DataError):
        _raw(np.zeros((0, 4), dtype=np.uint16))
    with pytest.raises(DataError):
        _raw([[0]], bit_depth=7)
    with pytest.raises(DataError):
        _raw([[0]], bit_depth=17)


def test_raw_image_pixels_become_readonly():
    px = np.array([[1, 2], [3, 4]], dtype=np.uint16)
    img = RawImage(px, bit_depth=12)
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 9


def test_unit_image_validation():
    UnitImage(np.array([[0.0, 1.0]]))
    with pytest.raises(DataError):
        UnitImage(np.array([[0.0, 1.0001]]))
    with pytest.raises(DataError):
        UnitImage(np.array([[-1e-9, 0.5]]))
    with pytest.raises(DataError):
        UnitImage(np.array([[np.nan, 0.5]]))
    with pytest.raises(DataError):
        UnitImage(np.array([[0, 1]]))  # integer dtype


def test_full_range_minmax():
    img = _raw([[100, 300], [200, 500]], bit_depth=12)
    u = normalize_full_range(img)
    assert u.values.min() == 0.0 and u.values.max() == 1.0
    assert np.isclose(u.values[0, 1], (300 - 100) / 400)


def test_full_range_constant_image_maps_to_zeros():
    u = normalize_full_range(_raw([[7, 7], [7, 7]], bit_depth=8))
    assert (u.values == 0.0).all()


def test_full_range_bitdepth_mode():
    img = _raw([[0, 1024, 4095]], bit_depth=12)
    u = normalize_full_range(img, mode="bitdepth")
    assert np.allclose(u.values, [[0.0, 1024 / 4095, 1.0]])
    with pytest.raises(ValueError):
        normalize_full_range(img, mode="percentile")


def test_window_normalization_ramp_and_clamp():
    # window [lo, hi] = [center - width/2, center + width/2]
    img = _raw([[0, 50, 100, 150, 200]], bit_depth=8, window=Window(100.0, 100.0))
    u = normalize_window(img)
    assert np.allclose(u.values, [[0.0, 0.0, 0.5, 1.0, 1.0]])


def test_window_normalization_requires_window():
    with pytest.raises(DataError):
        normalize_window(_raw([[0, 1]]))


def test_zscore_normalization():
    rng = np.random.default_rng(3)
    px = rng.integers(0, 4096, size=(32, 32))
    z = normalize_zscore(_raw(px, bit_depth=12))
    assert abs(z.mean()) < 1e-12
    assert abs(z.std() - 1.0) < 1e-12  # population std
    with pytest.raises(DataError):
        normalize_zscore(_raw([[5, 5]], bit_depth=8))


def test_pgm_round_trip_16bit(tmp_path):
    rng = np.random.default_rng(11)
    px = rng.integers(0, 1 << 12, size=(9, 7)).astype(np.uint16)
    img = RawImage(px, bit_depth=12)
    p = tmp_path / "a.pgm"
    save_raw_image(img, p)
    back = load_image(p)
    assert back.bit_depth == 12
    assert np.array_equal(back.pixels, px)


def test_pgm_samples_are_big_endian(tmp_path):
    img = _raw([[258]], bit_depth=16)  # 258 = 0x0102
    p = tmp_path / "one.pgm"
    save_raw_image(img, p)
    data = p.read_bytes()
    assert data.startswith(b"P5")
    assert data.endswith(b"\x01\x02")


def test_pgm_8bit_uses_single_bytes(tmp_path):
    img = _raw([[0, 255]], bit_depth=8)
    p = tmp_path / "b.pgm"
    save_raw_image(img, p)
    assert p.read_bytes().endswith(b"\x00\xff")
    assert np.array_equal(load_image(p).pixels, [[0, 255]])


def test_pgm_rejects_bad_magic_and_truncation(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P2\n2 2\n255\n....")
    with pytest.raises(DataError):
        load_image(p)
    p.write_bytes(b"P5\n4 4\n255\nxx")  # raster too short
    with pytest.raises(DataError):
        load_image(p)


def test_png_round_trip_8_and_16bit(tmp_path):
    rng = np.random.default_rng(5)
    for depth in (8, 16):
        px = rng.integers(0, 1 << depth, size=(6, 8)).astype(np.uint16)
        img = RawImage(px, bit_depth=depth)
        p = tmp_path / f"img{depth}.png"
        save_raw_image(img, p)
        back = load_image(p)
        assert back.bit_depth == depth
        assert np.array_equal(back.pixels, px)


def test_save_image_quantizes_by_rounding(tmp_path):
    u = UnitImage(np.array([[0.0, 0.5, 1.0]]))
    p = tmp_path / "q.pgm"
    save_image(u, p, bit_depth=8)
    px = load_image(p).pixels
    assert px.tolist() == [[0, 128, 255]]  # rint(0.5*255) = 128


def test_unsupported_format_rejected(tmp_path):
    u = UnitImage(np.zeros((2, 2)))
    with pytest.raises(DataError):
        save_image(u, tmp_path / "x.tiff")
    with pytest.raises(DataError):
        load_image(tmp_path / "missing.pgm")


def test_sidecar_round_trip(tmp_path):
    px = np.arange(12, dtype=np.uint16).reshape(3, 4)
    img = RawImage(px, bit_depth=12, window=Window(2000.0, 800.0),
                   scanner_id="ref", label=2)
    p = tmp_path / "meta.png"
    save_raw_image(img, p)
    assert sidecar_path(p).exists()
    back = load_image(p)
    assert back.bit_depth == 12  # sidecar overrides the 16-bit container
    assert back.window == Window(2000.0, 800.0)
    assert back.scanner_id == "ref"
    assert back.label == 2


def test_sidecar_bit_depth_conflicting_with_samples_rejected(tmp_path):
    img = _raw([[4000]], bit_depth=12)
    p = tmp_path / "c.pgm"
    save_raw_image(img, p)
    meta = json.loads(sidecar_path(p).read_text())
    meta["bit_depth"] = 8  # 4000 does not fit in 8 bits
    sidecar_path(p).write_text(json.dumps(meta))
    with pytest.raises(DataError):
        load_image(p)


def test_malformed_sidecar_rejected(tmp_path):
    img = _raw([[1]], bit_depth=8)
    p = tmp_path / "m.pgm"
    save_raw_image(img, p)
    sidecar_path(p).write_text("{not json")
    with pytest.raises(DataError):
        load_image(p)


def _manifest():
    entries = [
        ManifestEntry("img0.pgm", 0, "ref", 0),
        ManifestEntry("img1.pgm", 1, "alt", 3),
        ManifestEntry("img2.pgm", 1, "ref", 4),
    ]
    return DatasetManifest(entries, ["A", "B"])


def test_manifest_round_trip(tmp_path):
    m = _manifest()
    p = tmp_path / "manifest.json"
    save_manifest(m, p)
    back = load_manifest(p)
    assert back.class_names == ["A", "B"]
    assert back.entries == m.entries
    assert back.root == tmp_path
    assert back.image_path(back.entries[1]) == tmp_path / "img1.pgm"


def test_manifest_validation():
    with pytest.raises(DataError):
        DatasetManifest([], ["A"])
    with pytest.raises(DataError):
        DatasetManifest([ManifestEntry("x", 2, "s", 0)], ["A", "B"])
    with pytest.raises(DataError):
        DatasetManifest([ManifestEntry("x", 0, "s", 5)], ["A"])


def test_manifest_subset():
    m = _manifest()
    ref = m.subset(lambda e: e.scanner_id == "ref")
    assert [e.path for e in ref.entries] == ["img0.pgm", "img2.pgm"]
    assert ref.num_classes == 2


def test_missing_manifest_rejected(tmp_path):
    with pytest.raises(DataError):
        load_manifest(tmp_path / "nope.json")
