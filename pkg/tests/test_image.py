import numpy as np
import pytest

from warpreg.errors import DimensionError, FormatError
from warpreg.image import (load_pgm, normalize, sample_bilinear, save_pgm,
                           write_overlay)


def _write(path, data):
    path.write_bytes(data)
    return path


def test_load_pgm_scales_by_maxval(tmp_path):
    p = _write(tmp_path / "a.pgm", b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
    img = load_pgm(p)
    assert img.dtype == np.float32
    np.testing.assert_allclose(img, [[0, 1], [128 / 255, 64 / 255]], rtol=1e-6)
    np.testing.assert_allclose(img[1], [0.50196, 0.25098], atol=1e-5)


def test_load_pgm_16bit(tmp_path):
    p = _write(tmp_path / "b.pgm", b"P5 # comment\n1 2\n65535\n" + b"\xff\xff\x00\x00")
    img = load_pgm(p)
    assert img.shape == (2, 1)
    assert img[0, 0] == 1.0 and img[1, 0] == 0.0


def test_load_pgm_rejects_ascii_magic(tmp_path):
    p = _write(tmp_path / "c.pgm", b"P2\n2 2\n255\n0 1 2 3\n")
    with pytest.raises(FormatError, match="magic"):
        load_pgm(p)


def test_load_pgm_malformed_header_names_offset(tmp_path):
    p = _write(tmp_path / "d.pgm", b"P5\n2 x\n255\n")
    with pytest.raises(FormatError, match="byte offset 5"):
        load_pgm(p)


def test_load_pgm_truncated(tmp_path):
    p = _write(tmp_path / "e.pgm", b"P5\n4 4\n255\n" + bytes(3))
    with pytest.raises(FormatError, match="truncated"):
        load_pgm(p)


@pytest.mark.parametrize("value,byte", [(0.0, 0), (1.0, 255), (0.5, 128)])
def test_save_pgm_bytes(tmp_path, value, byte):
    p = tmp_path / "x.pgm"
    save_pgm(np.full((3, 4), value), p)
    raw = p.read_bytes()
    header = b"P5\n4 3\n255\n"
    assert raw.startswith(header)
    assert raw[len(header):] == bytes([byte]) * 12


def test_save_load_roundtrip_error_bound(tmp_path, rng):
    img = rng.random((17, 23)).astype(np.float32)
    p = tmp_path / "r.pgm"
    save_pgm(img, p)
    assert np.abs(load_pgm(p) - img).max() <= 1 / 510 + 1e-7


def test_save_pgm_clamps(tmp_path):
    p = tmp_path / "c.pgm"
    save_pgm(np.array([[-1.0, 2.0]]), p)
    assert p.read_bytes().endswith(bytes([0, 255]))


def test_normalize():
    np.testing.assert_allclose(normalize([[2, 4], [6, 10]]), [[0, 0.25], [0.5, 1.0]])
    assert not normalize(np.full((3, 3), 7.0)).any()
    x = np.array([[0.0, 0.3], [1.0, 0.6]], np.float32)
    np.testing.assert_array_equal(normalize(x), x)


def test_normalize_idempotent(rng):
    x = normalize(rng.normal(size=(9, 9)))
    np.testing.assert_allclose(normalize(x), x, atol=1e-7)


def test_sample_bilinear_cases():
    img = np.array([[0.0, 1.0], [1.0, 1.0]])
    assert sample_bilinear(img, 0.5, 0.5) == pytest.approx(0.75)
    assert sample_bilinear(img, -3.0, 0.0) == sample_bilinear(img, 0.0, 0.0)
    assert sample_bilinear(img, 5.0, 9.0) == 1.0


def test_sample_bilinear_integer_coords_exact(rng):
    img = rng.random((6, 7))
    for i in range(6):
        for j in range(7):
            assert sample_bilinear(img, i, j) == img[i, j]


def test_sample_bilinear_continuity(rng):
    img = rng.random((8, 8))
    for _ in range(50):
        y, x = rng.uniform(0, 6, 2)
        eps = rng.uniform(0, 0.99)
        i0, j0 = int(y), int(x)
        nb = img[i0:i0 + 3, j0:j0 + 2]
        bound = eps * (nb.max() - nb.min()) + 1e-12
        assert abs(sample_bilinear(img, y, x) - sample_bilinear(img, y + eps, x)) <= bound


def _read_ppm(path):
    raw = path.read_bytes()
    header, _, rest = raw.partition(b"255\n")
    w, h = map(int, header.split()[1:3])
    return np.frombuffer(rest, np.uint8).reshape(h, w, 3)


def test_overlay_grey_when_equal(tmp_path, rng):
    w = rng.random((5, 6))
    p = tmp_path / "o.ppm"
    write_overlay(w, w, p)
    rgb = _read_ppm(p)
    assert p.read_bytes().startswith(b"P6\n6 5\n255\n")
    assert (rgb[..., 0] == rgb[..., 1]).all() and (rgb[..., 1] == rgb[..., 2]).all()


def test_overlay_pure_colours(tmp_path):
    p = tmp_path / "g.ppm"
    write_overlay(np.ones((2, 2)), np.zeros((2, 2)), p)
    assert (_read_ppm(p) == [0, 255, 0]).all()
    write_overlay(np.zeros((2, 2)), np.ones((2, 2)), p)
    assert (_read_ppm(p) == [255, 0, 255]).all()


def test_overlay_shape_mismatch(tmp_path):
    with pytest.raises(DimensionError):
        write_overlay(np.zeros((2, 2)), np.zeros((3, 2)), tmp_path / "x.ppm")
