import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from rectidic.errors import ImageIOError, InvalidParameter, OutOfBounds
from rectidic.image import (GrayImage, InterpolationKind, gaussian_blur, gaussian_kernel, load_image,
                            sample, sample_many, save_image)

BIL, BIC = InterpolationKind.BILINEAR, InterpolationKind.BICUBIC


def test_gray_image_is_immutable_and_validated():
    img = GrayImage([[0.0, 1.0], [0.5, 0.25]])
    assert img.width == 2 and img.height == 2
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 3.0
    with pytest.raises(InvalidParameter):
        GrayImage([[np.nan]])
    with pytest.raises(InvalidParameter):
        GrayImage(np.zeros((0, 3)))


def test_bilinear_midpoint():
    assert sample(GrayImage([[0, 0], [1, 1]]), 0.5, 0.5, BIL) == 0.5


def test_integer_sampling_returns_pixel(rng):
    img = GrayImage(rng.random((7, 9)))
    for kind in (BIL, BIC):
        for j in range(7):
            for i in range(9):
                assert sample(img, i, j, kind) == img.pixels[j, i]


def test_bilinear_ramp_exact():
    ramp = GrayImage(np.tile(np.arange(4.0), (4, 1)))
    # independent formula: (1 - t) * p(1) + t * p(2) with t = 0.25
    assert sample(ramp, 1.25, 2.0, BIL) == pytest.approx(0.75 * 1 + 0.25 * 2, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 15), st.floats(0, 11), st.floats(-2, 2), st.floats(-2, 2), st.floats(-1, 1))
def test_bilinear_exact_on_linear_ramps(x, y, a, b, c):
    yy, xx = np.mgrid[0:12, 0:16].astype(float)
    img = GrayImage(a * xx + b * yy + c)
    assert sample(img, x, y, BIL) == pytest.approx(a * x + b * y + c, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 6), st.floats(0, 6))
def test_bilinear_is_convex_combination(x, y):
    img = GrayImage(np.random.default_rng(5).random((7, 7)))
    i, j = min(int(x), 5), min(int(y), 5)
    v = sample(img, x, y, BIL)
    nb = img.pixels[j:j + 2, i:i + 2]
    assert nb.min() - 1e-12 <= v <= nb.max() + 1e-12


def test_bilinear_continuity(rng):
    img = GrayImage(rng.random((10, 10)))
    for x in (2.0, 3.0, 4.5):
        assert abs(sample(img, x - 1e-9, 4.3) - sample(img, x + 1e-9, 4.3)) < 1e-6


def test_sample_out_of_bounds():
    img = GrayImage(np.zeros((4, 4)))
    for x, y in ((-0.01, 1), (1, 3.01), (3.5, 0)):
        with pytest.raises(OutOfBounds):
            sample(img, x, y)


def test_sample_many_fill_and_agreement(rng):
    img = GrayImage(rng.random((8, 8)))
    xs = np.array([1.3, -1.0, 7.0, 2.5])
    ys = np.array([2.7, 1.0, 7.0, 8.5])
    out = sample_many(img, xs, ys, BIL, fill=-3.0)
    assert out[0] == pytest.approx(sample(img, 1.3, 2.7))
    assert out[1] == -3.0 and out[3] == -3.0
    assert out[2] == img.pixels[7, 7]


def test_bicubic_reproduces_quadratics_in_interior():
    yy, xx = np.mgrid[0:12, 0:12].astype(float)
    img = GrayImage(0.01 * xx * xx - 0.02 * xx * yy + 0.3 * yy)
    # Keys a = -0.5 reproduces polynomials up to degree 2
    x, y = 5.3, 6.8
    assert sample(img, x, y, BIC) == pytest.approx(0.01 * x * x - 0.02 * x * y + 0.3 * y, abs=1e-12)


def test_kernel_normalized_and_truncated():
    k = gaussian_kernel(1.6)
    assert k.sum() == pytest.approx(1.0, abs=1e-15)
    assert len(k) == 2 * math.ceil(4 * 1.6) + 1
    with pytest.raises(InvalidParameter):
        gaussian_kernel(0.0)
    with pytest.raises(InvalidParameter):
        gaussian_blur(GrayImage(np.ones((3, 3))), -1)


def test_blur_preserves_constant():
    img = GrayImage(np.full((20, 30), 0.37))
    np.testing.assert_allclose(gaussian_blur(img, 2.3).pixels, 0.37, atol=1e-15)


def test_blur_impulse_peak():
    z = np.zeros((33, 33))
    z[16, 16] = 1.0
    out = gaussian_blur(GrayImage(z), 1.6)
    # independent kernel: sampled exp(-t^2 / 2 s^2) on +-ceil(4 s), normalized
    r = math.ceil(4 * 1.6)
    w = [math.exp(-t * t / (2 * 1.6 ** 2)) for t in range(-r, r + 1)]
    peak = (1.0 / sum(w)) ** 2
    assert out.pixels[16, 16] == pytest.approx(peak, abs=1e-14)


def test_blur_semigroup():
    z = np.zeros((41, 41))
    z[20, 20] = 1.0
    a = gaussian_blur(gaussian_blur(GrayImage(z), 1.0), 1.0)
    b = gaussian_blur(GrayImage(z), math.sqrt(2.0))
    assert np.abs(a.pixels - b.pixels).max() < 1e-3


def test_blur_mean_preserved_interior_dominated(rng):
    arr = np.full((200, 200), 0.5)
    arr[50:150, 50:150] += 0.3 * rng.random((100, 100))
    img = GrayImage(arr)
    assert gaussian_blur(img, 2.0).pixels.mean() == pytest.approx(arr.mean(), abs=1e-6)


def test_blur_is_pure(speckle128):
    assert gaussian_blur(speckle128, 1.3) == gaussian_blur(speckle128, 1.3)


def test_png_roundtrip_8bit(tmp_path, rng):
    img = GrayImage(rng.random((64, 64)))
    p = tmp_path / "a.png"
    save_image(img, p)
    back = load_image(p)
    np.testing.assert_array_equal(back.pixels, np.rint(img.pixels * 255) / 255)


def test_pgm_roundtrip(tmp_path, rng):
    img = GrayImage(rng.random((16, 20)))
    p = tmp_path / "a.pgm"
    save_image(img, p)
    assert p.read_bytes()[:2] == b"P5"
    np.testing.assert_array_equal(load_image(p).pixels, np.rint(img.pixels * 255) / 255)


def test_load_16bit(tmp_path):
    arr = np.array([[0, 65535], [32768, 1000]], dtype=np.uint16)
    p = tmp_path / "b.png"
    Image.fromarray(arr).save(p)
    np.testing.assert_allclose(load_image(p).pixels, arr / 65535.0, atol=1e-15)


def test_16bit_save_roundtrip(tmp_path, rng):
    img = GrayImage(rng.random((10, 10)))
    p = tmp_path / "c.png"
    save_image(img, p, bits=16)
    np.testing.assert_array_equal(load_image(p).pixels, np.rint(img.pixels * 65535) / 65535)


def test_load_rgb_is_channel_mean(tmp_path):
    rgb = np.zeros((2, 2, 3), dtype=np.uint8)
    rgb[0, 0] = (30, 60, 90)
    rgb[1, 1] = (255, 0, 0)
    p = tmp_path / "c.png"
    Image.fromarray(rgb).save(p)
    out = load_image(p).pixels
    assert out[0, 0] == pytest.approx(60 / 255)
    assert out[1, 1] == pytest.approx(85 / 255)


def test_load_errors(tmp_path):
    with pytest.raises(ImageIOError):
        load_image(tmp_path / "missing.png")
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not an image")
    with pytest.raises(ImageIOError):
        load_image(bad)
    with pytest.raises(ImageIOError):
        save_image(GrayImage(np.zeros((2, 2))), tmp_path / "x.tiff")
