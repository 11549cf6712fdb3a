import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.ndimage import gaussian_filter

from rectidic.dic import (Criterion, DisplacementField, RoiMask, SubsetParams, WarpParams, correlation,
                          optimize_subset, refine_seed, rg_dic, seed_candidates, seed_initial_guess,
                          subset_offsets, warp_subset)
from rectidic.dic import _icgn
from rectidic.dic import rg as rg_module
from rectidic.dic.field import OUTSIDE_ROI, UNREACHABLE
from rectidic.errors import DegenerateSubset, InvalidParameter, OutOfBounds, SeedFailed
from rectidic.image import GrayImage, InterpolationKind, sample_many
from rectidic.synthesis import speckle_image

BIC = InterpolationKind.BICUBIC


def _shifted(img, dx, dy, kind=BIC):
    """Image whose content is ``img`` moved by (+dx, +dy)."""
    ys, xs = np.mgrid[0:img.height, 0:img.width].astype(float)
    return GrayImage(sample_many(img, xs - dx, ys - dy, kind, fill=0.0))


def _affine(img, p, c):
    """Render the first-order warp p about centre c by backward mapping."""
    ys, xs = np.mgrid[0:img.height, 0:img.width].astype(float)
    a = np.array([[1 + p.dudx, p.dudy], [p.dvdx, 1 + p.dvdy]])
    ai = np.linalg.inv(a)
    rx, ry = xs - c[0] - p.u, ys - c[1] - p.v
    sx = c[0] + ai[0, 0] * rx + ai[0, 1] * ry
    sy = c[1] + ai[1, 0] * rx + ai[1, 1] * ry
    return GrayImage(sample_many(img, sx, sy, BIC, fill=0.0))


# ---------------------------------------------------------------- criteria

def _pair(seed, n=23 * 23):
    r = np.random.default_rng(seed)
    return r.random(n), r.random(n)


def test_self_correlation():
    f, _ = _pair(0)
    assert correlation(f, f, Criterion.ZNCC) == pytest.approx(1.0, abs=1e-12)
    assert correlation(f, f, Criterion.ZNSSD) == pytest.approx(0.0, abs=1e-12)
    assert correlation(f, f, Criterion.SSD) == 0.0
    assert correlation(f, f, Criterion.CC) == pytest.approx(np.sum(f * f))


def test_zncc_affine_intensity():
    f, _ = _pair(1)
    assert correlation(f, 2 * f + 0.1, Criterion.ZNCC) == pytest.approx(1.0, abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.01, 100), st.floats(-10, 10))
def test_criteria_identities(seed, a, b):
    f, g = _pair(seed, 121)
    zncc = correlation(f, g, Criterion.ZNCC)
    znssd = correlation(f, g, Criterion.ZNSSD)
    assert -1 - 1e-12 <= zncc <= 1 + 1e-12
    assert znssd >= 0 and correlation(f, g, Criterion.SSD) >= 0
    assert znssd == pytest.approx(2 * (1 - zncc), abs=1e-10)
    assert correlation(f, a * g + b, Criterion.ZNCC) == pytest.approx(zncc, abs=1e-10)


def test_criteria_match_textbook_formulas():
    f, g = _pair(2, 50)
    fm, gm = f - f.mean(), g - g.mean()
    assert correlation(f, g, Criterion.CC) == pytest.approx(np.sum(f * g))
    assert correlation(f, g, Criterion.SSD) == pytest.approx(np.sum((f - g) ** 2))
    assert correlation(f, g, Criterion.ZNCC) == pytest.approx(
        np.sum(fm * gm) / math.sqrt(np.sum(fm ** 2) * np.sum(gm ** 2)))
    assert correlation(f, g, Criterion.ZNSSD) == pytest.approx(
        np.sum((fm / math.sqrt(np.sum(fm ** 2)) - gm / math.sqrt(np.sum(gm ** 2))) ** 2))


def test_flat_subset_degenerate():
    f, _ = _pair(3, 25)
    with pytest.raises(DegenerateSubset):
        correlation(f, np.ones(25), Criterion.ZNCC)
    with pytest.raises(DegenerateSubset):
        correlation(np.ones(25), f, Criterion.ZNSSD)
    assert correlation(np.ones(25), f, Criterion.SSD) > 0
    with pytest.raises(InvalidParameter):
        correlation(f, f[:5], Criterion.SSD)


# ---------------------------------------------------------------- shape function

def test_warp_subset_cases():
    off = subset_offsets(2)
    assert off.shape == (25, 2)
    c = (10.0, 20.0)
    np.testing.assert_array_equal(warp_subset(WarpParams(), c, off), off + c)
    np.testing.assert_array_equal(warp_subset(WarpParams(3, 2), c, off), off + c + (3, 2))
    w = 0.01
    out = warp_subset(WarpParams(0, 0, 0, -w, w, 0), c, off) - c
    np.testing.assert_allclose(out[:, 0], off[:, 0] - w * off[:, 1])
    np.testing.assert_allclose(out[:, 1], off[:, 1] + w * off[:, 0])


def test_warp_params_validation_and_shift():
    with pytest.raises(InvalidParameter):
        WarpParams(np.nan)
    p = WarpParams(1, 2, 0.1, 0.2, 0.3, 0.4)
    q = p.shifted(5, -5)
    assert (q.u, q.v) == pytest.approx((1 + 0.5 - 1.0, 2 + 1.5 - 2.0))
    assert WarpParams.from_array(p.as_array()) == p


def test_subset_params_validation():
    assert SubsetParams.from_size(23).half_width == 11
    with pytest.raises(InvalidParameter):
        SubsetParams.from_size(22)
    with pytest.raises(InvalidParameter):
        SubsetParams(half_width=4)
    with pytest.raises(InvalidParameter):
        SubsetParams(spacing=0)
    with pytest.raises(InvalidParameter):
        SubsetParams(criterion=Criterion.SSD)


# ---------------------------------------------------------------- IC-GN

def test_integer_translation(speckle128):
    d = GrayImage(np.roll(np.roll(speckle128.pixels, 2, 0), 3, 1))
    r = optimize_subset(speckle128, d, (64, 64), WarpParams(2.5, 1.5))
    assert r.converged
    np.testing.assert_allclose(r.p.as_array(), [3, 2, 0, 0, 0, 0], atol=0.01)
    assert r.zncc > 0.999


def test_half_pixel_translation(speckle128):
    r = optimize_subset(speckle128, _shifted(speckle128, 0.5, 0.0), (64, 64), WarpParams())
    assert r.converged and abs(r.p.u - 0.5) < 0.02 and abs(r.p.v) < 0.02


def test_identity_pair(speckle128):
    r = optimize_subset(speckle128, speckle128, (50, 70), WarpParams())
    np.testing.assert_allclose(r.p.as_array(), 0, atol=1e-12)
    assert r.zncc == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("p", [WarpParams(1.3, -0.7, 0.01, -0.02, 0.015, -0.01),
                               WarpParams(-2.2, 0.4, -0.02, 0.01, 0.0, 0.02)])
def test_first_order_warp_recovered(speckle128, p):
    c = (64, 64)
    d = _affine(speckle128, p, c)
    r = optimize_subset(speckle128, d, c, WarpParams(round(p.u), round(p.v)))
    assert r.converged
    assert abs(r.p.u - p.u) < 0.01 and abs(r.p.v - p.v) < 0.01
    np.testing.assert_allclose(r.p.as_array()[2:], p.as_array()[2:], atol=1e-3)


def test_bilinear_option(speckle128):
    prm = SubsetParams(interpolation=InterpolationKind.BILINEAR)
    d = GrayImage(np.roll(speckle128.pixels, 4, 1))
    r = optimize_subset(speckle128, d, (64, 64), WarpParams(3.6, 0.3), prm)
    assert r.converged and abs(r.p.u - 4) < 0.01 and abs(r.p.v) < 0.01


def test_out_of_bounds(speckle128):
    with pytest.raises(OutOfBounds):
        optimize_subset(speckle128, speckle128, (5, 64), WarpParams())
    with pytest.raises(OutOfBounds):
        optimize_subset(speckle128, speckle128, (64, 64), WarpParams(60.0, 0.0))


def test_flat_reference(speckle128):
    flat = GrayImage(np.full((128, 128), 0.5))
    with pytest.raises(DegenerateSubset):
        optimize_subset(flat, speckle128, (64, 64), WarpParams())


def test_integer_centre_required(speckle128):
    with pytest.raises(InvalidParameter):
        optimize_subset(speckle128, speckle128, (64.5, 64), WarpParams())


def test_max_iterations_flagged(speckle128):
    d = GrayImage(np.roll(speckle128.pixels, 2, 1))
    r = optimize_subset(speckle128, d, (64, 64), WarpParams(1.0), SubsetParams(max_iterations=1))
    assert not r.converged and r.status_name == "not_converged" and r.iterations == 1


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_jacobian_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    img = GrayImage(gaussian_filter(rng.random((40, 40)), 1.2))
    cx, cy, M = 20, 20, 7
    ok, f, dxs, dys, J0 = _icgn.reference_subset(img.pixels, cx, cy, M)
    assert ok
    nf, _, J = _icgn.normalized_jacobian(f, J0)

    def residual(dp):
        # normalized reference subset sampled through the incremental warp
        x = cx + dxs + dp[0] + dp[2] * dxs + dp[3] * dys
        y = cy + dys + dp[1] + dp[4] * dxs + dp[5] * dys
        s = sample_many(img, x, y, BIC)
        s = s - s.mean()
        return s / np.linalg.norm(s)

    h = 1e-5
    fd = np.empty_like(J)
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        fd[:, k] = (residual(e) - residual(-e)) / (2 * h)
    np.testing.assert_allclose(residual(np.zeros(6)), nf, atol=1e-12)
    assert np.linalg.norm(fd - J) / np.linalg.norm(J) < 1e-4


# ---------------------------------------------------------------- seed search

def test_seed_integer_shift(speckle128):
    d = GrayImage(np.roll(np.roll(speckle128.pixels, -4, 0), 7, 1))
    g = seed_initial_guess(speckle128, d, (64, 64), 10)
    assert g == WarpParams(7.0, -4.0)
    assert seed_initial_guess(speckle128, speckle128, (64, 64), 10) == WarpParams()


def _brute_force_best(ref, d, c, radius, M=11):
    f = ref.pixels[c[1] - M:c[1] + M + 1, c[0] - M:c[0] + M + 1]
    best = None
    for v in range(-radius, radius + 1):
        for u in range(-radius, radius + 1):
            y0, x0 = c[1] + v - M, c[0] + u - M
            if y0 < 0 or x0 < 0 or y0 + 2 * M >= d.height or x0 + 2 * M >= d.width:
                continue
            z = correlation(f, d.pixels[y0:y0 + 2 * M + 1, x0:x0 + 2 * M + 1], Criterion.ZNCC)
            if best is None or z > best[0] + 1e-12:
                best = (z, u, v)
    return best


def test_seed_out_of_range_shift():
    # fine-grained texture: a 2 px start error lies outside the basin of convergence
    a = gaussian_filter(np.random.default_rng(0).random((96, 128)), 0.5)
    ref, d = GrayImage(a), GrayImage(np.roll(a, 12, 1))
    g = seed_initial_guess(ref, d, (48, 48), 10)
    z, u, v = _brute_force_best(ref, d, (48, 48), 10)
    assert (g.u, g.v) == (u, v)
    assert abs(g.u) <= 10 and abs(g.v) <= 10
    r = optimize_subset(ref, d, (48, 48), g)
    assert not r.converged


def test_seed_matches_brute_force(speckle128):
    d = _shifted(speckle128, 3.4, -2.6)
    g = seed_initial_guess(speckle128, d, (60, 66), 6)
    _, u, v = _brute_force_best(speckle128, d, (60, 66), 6)
    assert (g.u, g.v) == (u, v) == (3.0, -3.0)


def test_seed_candidates_sorted(speckle128):
    c = seed_candidates(speckle128, _shifted(speckle128, 5, 1), (64, 64), 8, count=4)
    assert c[0][0] == WarpParams(5.0, 1.0)
    assert [z for _, z in c] == sorted((z for _, z in c), reverse=True)


def test_seed_window_errors(speckle128):
    with pytest.raises(OutOfBounds):
        seed_initial_guess(speckle128, speckle128, (5, 64), 10)
    with pytest.raises(DegenerateSubset):
        seed_initial_guess(GrayImage(np.zeros((64, 64))), speckle128, (32, 32), 5)


def test_refine_seed(speckle128):
    d = _shifted(speckle128, -6.3, 2.2)
    r = refine_seed(speckle128, d, (64, 64), 10)
    assert r.converged and abs(r.p.u + 6.3) < 0.02 and abs(r.p.v - 2.2) < 0.02


# ---------------------------------------------------------------- ROI and fields

def test_roi_validation_and_reachability():
    m = np.zeros((5, 7), dtype=bool)
    m[:, :3] = True
    m[:, 4:] = True
    roi = RoiMask(m, (2, 1), (10, 20), 5)
    assert roi.node_xy(2, 1) == (15, 30)
    np.testing.assert_array_equal(roi.reachable(), np.pad(np.ones((5, 3), bool), ((0, 0), (0, 4))))
    assert roi.unreachable().sum() == 15
    with pytest.raises(InvalidParameter):
        RoiMask(m, (0, 3))
    diag = np.eye(3, dtype=bool)
    assert RoiMask(diag, (0, 0)).reachable().sum() == 1  # 4-connectivity only


def test_roi_from_pixel_mask():
    pm = np.zeros((60, 80), dtype=bool)
    pm[10:50, 20:70] = True
    roi = RoiMask.from_pixel_mask(pm, 5, (44, 31), margin=3)
    assert roi.origin == (5, 5) and roi.spacing == 5
    x, y = roi.node_xy(*roi.seed)
    assert (x, y) == (45, 30)
    X, Y = roi.grid_xy()
    assert np.all(pm[Y[roi.mask], X[roi.mask]])


def test_field_csv_roundtrip(tmp_path):
    m = np.ones((3, 4), dtype=bool)
    m[0, 0] = False
    f = DisplacementField.empty(RoiMask(m, (1, 1), (10, 15), 5), {"k": 1})
    f.u[:] = np.arange(12).reshape(3, 4) / 7
    f.v[:] = -f.u
    f.zncc[:] = 0.9
    f.valid[:] = m
    f.valid[2, 3] = False
    p = tmp_path / "f.csv"
    f.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "x,y,u,v,zncc,valid" and len(lines) == 12
    assert (tmp_path / "f.json").exists()
    g = DisplacementField.from_csv(p)
    assert g.origin == (10, 15) and g.spacing == 5 and g.shape == (3, 4) and g.meta == {"k": 1}
    np.testing.assert_array_equal(g.u[m], f.u[m])
    np.testing.assert_array_equal(g.valid, f.valid)
    (tmp_path / "f.json").unlink()
    h = DisplacementField.from_csv(p)
    assert h.origin == (10, 15) and h.spacing == 5 and h.shape == (3, 4)
    np.testing.assert_array_equal(h.v[m], f.v[m])


# ---------------------------------------------------------------- reliability-guided

@pytest.fixture(scope="module")
def ref256():
    return speckle_image(256, 256, seed=21)


def _full_roi(shape=(256, 256), spacing=8, seed=(128, 128)):
    return RoiMask.from_pixel_mask(np.ones(shape, dtype=bool), spacing, seed, margin=16)


def test_rg_identity(ref256):
    f = rg_dic(ref256, ref256, _full_roi(), SubsetParams(), WarpParams())
    assert f.valid.all()
    np.testing.assert_allclose(f.u, 0, atol=1e-12)
    np.testing.assert_allclose(f.v, 0, atol=1e-12)
    np.testing.assert_allclose(f.zncc, 1, atol=1e-12)


def test_rg_uniform_translation(ref256):
    d = _shifted(ref256, 2.3, -1.7)
    roi = _full_roi()
    f = rg_dic(ref256, d, roi, SubsetParams(), WarpParams(2.0, -2.0))
    assert np.all(f.status[roi.reachable()] != UNREACHABLE)
    assert f.valid.mean() > 0.95
    assert np.all(np.abs(f.u[f.valid] - 2.3) < 0.02)
    assert np.all(np.abs(f.v[f.valid] + 1.7) < 0.02)
    assert np.all(np.isfinite(f.u[f.valid]))


def test_rg_unreachable_component(ref256):
    roi = _full_roi()
    m = roi.mask.copy()
    m[:, 5] = False
    roi2 = RoiMask(m, roi.seed, roi.origin, roi.spacing)
    f = rg_dic(ref256, ref256, roi2, SubsetParams(), WarpParams())
    island = roi2.unreachable()
    assert island.any()
    assert not f.valid[island].any() and np.all(f.status[island] == UNREACHABLE)
    assert f.valid[roi2.reachable()].all()
    assert np.all(f.status[~m] == OUTSIDE_ROI)


def test_rg_heap_discipline_and_single_evaluation(ref256, monkeypatch):
    d = _shifted(ref256, 1.2, 0.4)
    roi = _full_roi(spacing=10)
    calls = Counter()
    real = _icgn.solve

    def counting(ref, dimg, cx, cy, *args):
        calls[(cx, cy)] += 1
        return real(ref, dimg, cx, cy, *args)

    monkeypatch.setattr(rg_module._icgn, "solve", counting)
    trace = []
    f = rg_dic(ref256, d, roi, SubsetParams(), WarpParams(1.0, 0.0), trace=trace)
    assert max(calls.values()) == 1
    assert len(calls) == roi.reachable().sum()
    live = {}
    for ev, i, j, z in trace:
        if ev == "push":
            live[(i, j)] = z
        else:
            assert z == max(live.values())
            del live[(i, j)]
    assert not live
    assert sum(ev == "pop" for ev, *_ in trace) == f.valid.sum()


def test_rg_invalid_points_do_not_propagate(ref256):
    arr = ref256.pixels.copy()
    arr[:, 150:] = 0.5  # textureless right part
    ref = GrayImage(arr)
    roi = _full_roi(seed=(64, 128))
    f = rg_dic(ref, ref, roi, SubsetParams(), WarpParams())
    X, _ = f.grid_xy()
    assert not f.valid[X >= 170].any()
    assert f.valid[X <= 120].all()


def test_rg_seed_failure(ref256):
    noise = GrayImage(np.random.default_rng(0).random((256, 256)))
    with pytest.raises(SeedFailed):
        rg_dic(ref256, noise, _full_roi(), SubsetParams(), WarpParams())
    with pytest.raises(SeedFailed):
        rg_dic(ref256, ref256, _full_roi(), SubsetParams(), WarpParams(200.0, 0.0))
