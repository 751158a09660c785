import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pixprune import imgio
from pixprune.imgio import NormParams


def test_read_ppm_single_red_pixel(tmp_path):
    path = tmp_path / "red.ppm"
    path.write_bytes(b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
    img = imgio.read_ppm(path)
    assert img.shape == (1, 1, 3)
    np.testing.assert_array_equal(img[0, 0], [1.0, 0.0, 0.0])


def test_ppm_roundtrip_is_byte_identical(tmp_path, rng):
    data = rng.integers(0, 256, size=(7, 5, 3), dtype=np.uint8)
    src = tmp_path / "a.ppm"
    src.write_bytes(b"P6\n5 7\n255\n" + data.tobytes())
    dst = tmp_path / "b.ppm"
    imgio.write_ppm(imgio.read_ppm(src), dst)
    assert dst.read_bytes() == src.read_bytes()


def test_ppm_header_with_comment(tmp_path):
    path = tmp_path / "c.ppm"
    path.write_bytes(b"P6\n# made by hand\n2 1\n255\n" + bytes(range(6)))
    img = imgio.read_ppm(path)
    np.testing.assert_array_equal(img.reshape(-1) * 255, np.arange(6, dtype=np.float32))


@pytest.mark.parametrize("payload, exc", [
    (b"P5\n1 1\n255\n\x00", imgio.UnsupportedFormat),
    (b"P6\n1 1\n65535\n" + bytes(6), imgio.UnsupportedFormat),
    (b"P6\n2 2\n255\n" + bytes(5), imgio.MalformedFile),
    (b"P6\nx 2\n255\n" + bytes(12), imgio.MalformedFile),
    (b"P6\n2", imgio.MalformedFile),
])
def test_ppm_rejects_bad_files(tmp_path, payload, exc):
    path = tmp_path / "bad.ppm"
    path.write_bytes(payload)
    with pytest.raises(exc):
        imgio.read_ppm(path)


def _pfm_bytes(magic, w, h, scale, values, dtype="<f4"):
    return f"{magic}\n{w} {h}\n{scale}\n".encode() + np.asarray(values, dtype=dtype).tobytes()


def test_pfm_rows_are_stored_bottom_up(tmp_path):
    path = tmp_path / "m.pfm"
    path.write_bytes(_pfm_bytes("Pf", 2, 2, "-1.0", [0, 1, 2, 3]))
    m = imgio.read_pfm(path)
    # first stored row is the bottom image row
    np.testing.assert_array_equal(m, [[2, 3], [0, 1]])


def test_pfm_roundtrip_bit_exact(tmp_path, rng):
    for arr in (rng.normal(size=(4, 6)).astype(np.float32),
                rng.normal(size=(3, 2, 3)).astype(np.float32)):
        path = tmp_path / "x.pfm"
        imgio.write_pfm(arr, path)
        back = imgio.read_pfm(path)
        assert back.dtype == np.float32
        assert back.tobytes() == arr.tobytes()
        first = path.read_bytes()
        imgio.write_pfm(back, path)
        assert path.read_bytes() == first


def test_pfm_rejects_big_endian(tmp_path):
    path = tmp_path / "be.pfm"
    path.write_bytes(_pfm_bytes("Pf", 1, 1, "1.0", [1.0], dtype=">f4"))
    with pytest.raises(imgio.UnsupportedFormat, match="big-endian"):
        imgio.read_pfm(path)


def test_pfm_rejects_nan_and_truncation(tmp_path):
    path = tmp_path / "nan.pfm"
    path.write_bytes(_pfm_bytes("Pf", 2, 1, "-1.0", [1.0, np.nan]))
    with pytest.raises(imgio.MalformedFile, match="NaN"):
        imgio.read_pfm(path)
    path.write_bytes(_pfm_bytes("PF", 2, 1, "-1.0", [1.0, 2.0]))
    with pytest.raises(imgio.MalformedFile, match="truncated"):
        imgio.read_pfm(path)
    path.write_bytes(_pfm_bytes("P7", 1, 1, "-1.0", [1.0]))
    with pytest.raises(imgio.UnsupportedFormat):
        imgio.read_pfm(path)


@pytest.mark.parametrize("byte, expected", [(255, True), (0, False)])
def test_pgm_uniform_masks(tmp_path, byte, expected):
    path = tmp_path / "m.pgm"
    path.write_bytes(b"P5\n3 2\n255\n" + bytes([byte] * 6))
    mask = imgio.read_pgm(path)
    assert mask.dtype == bool and mask.shape == (2, 3)
    assert np.all(mask == expected)


def test_pgm_gray_level_is_ambiguous(tmp_path):
    path = tmp_path / "m.pgm"
    path.write_bytes(b"P5\n2 1\n255\n" + bytes([255, 128]))
    with pytest.raises(imgio.AmbiguousMask):
        imgio.read_pgm(path)


def test_pgm_roundtrip(tmp_path, rng):
    mask = rng.random((5, 9)) > 0.3
    path = tmp_path / "m.pgm"
    imgio.write_pgm(mask, path)
    np.testing.assert_array_equal(imgio.read_pgm(path), mask)
    assert path.read_bytes()[-45:] == np.where(mask, 255, 0).astype(np.uint8).tobytes()


def test_preprocess_identity_and_closed_form():
    img = np.full((2, 2, 3), 1.0, dtype=np.float32)
    np.testing.assert_array_equal(imgio.preprocess(img, NormParams((0, 0, 0), (1, 1, 1))), img)
    out = imgio.preprocess(img, NormParams((0.5, 0.5, 0.5), (0.5, 0.5, 0.5)))
    np.testing.assert_allclose(out, 1.0)


def test_depreprocess_clamps():
    p = NormParams((0, 0, 0), (1, 1, 1))
    out = imgio.depreprocess(np.array([[[-0.1, 1.2, 0.3]]]), p)
    np.testing.assert_allclose(out, [[[0.0, 1.0, 0.3]]])


def test_norm_params_reject_nonpositive_std():
    with pytest.raises(ValueError):
        NormParams((0, 0, 0), (1, 0, 1))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, (4, 3, 3), elements=st.floats(0, 1, width=32)))
def test_preprocess_roundtrip(img):
    back = imgio.depreprocess(imgio.preprocess(img))
    np.testing.assert_allclose(back, img, atol=1e-6)


def test_atomic_write_leaves_no_temp_on_failure(tmp_path, monkeypatch):
    target = tmp_path / "out.bin"
    target.write_bytes(b"old")

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(imgio.os, "replace", boom)
    with pytest.raises(OSError):
        imgio.atomic_write_bytes(target, b"new")
    assert target.read_bytes() == b"old"
    assert [p.name for p in tmp_path.iterdir()] == ["out.bin"]
