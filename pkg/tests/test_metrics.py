"""Metrics: PSNR, SSIM, reprojection consistency, and localization."""

import math

import numpy as np
import pytest

from epiview.metrics import (
    localization_accuracy,
    localization_study,
    metrics_csv_rows,
    psnr,
    reprojection_consistency,
    ssim,
)
from epiview.geometry import SphericalCamera
from epiview.scenegen import Box, Scene, make_scene, render


class TestPsnr:
    def test_identical_is_infinite(self):
        a = np.random.default_rng(0).random((8, 8, 3))
        assert psnr(a, a) == math.inf

    def test_unit_error_is_zero_db(self):
        assert abs(psnr(np.zeros((4, 4, 3)), np.ones((4, 4, 3)))) < 1e-12

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((6, 6, 3)), rng.random((6, 6, 3))
        want = 10 * math.log10(1.0 / np.mean((a - b) ** 2))
        assert abs(psnr(a, b) - want) < 1e-12

    def test_symmetric(self):
        rng = np.random.default_rng(2)
        a, b = rng.random((5, 5, 3)), rng.random((5, 5, 3))
        assert psnr(a, b) == psnr(b, a)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(3)
        a, b = rng.random((4, 4, 3)), rng.random((4, 4, 3))
        perm = rng.permutation(16)
        ap = a.reshape(16, 3)[perm].reshape(4, 4, 3)
        bp = b.reshape(16, 3)[perm].reshape(4, 4, 3)
        assert abs(psnr(a, b) - psnr(ap, bp)) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)))


def naive_ssim(a, b, window=8, c1=0.01 ** 2, c2=0.03 ** 2):
    """Double-loop reference over every window and channel."""
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    h, w, c = a.shape
    scores = []
    for ch in range(c):
        for y in range(h - window + 1):
            for x in range(w - window + 1):
                wa = a[y:y + window, x:x + window, ch].astype(np.float64)
                wb = b[y:y + window, x:x + window, ch].astype(np.float64)
                mua, mub = wa.mean(), wb.mean()
                va = (wa ** 2).mean() - mua ** 2
                vb = (wb ** 2).mean() - mub ** 2
                cov = (wa * wb).mean() - mua * mub
                scores.append(((2 * mua * mub + c1) * (2 * cov + c2))
                              / ((mua ** 2 + mub ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(scores))


class TestSsim:
    def test_identical_is_one(self):
        a = np.random.default_rng(4).random((12, 12, 3))
        assert abs(ssim(a, a) - 1.0) < 1e-12

    def test_anticorrelated_binary_is_negative(self):
        rng = np.random.default_rng(5)
        a = (rng.random((12, 12)) > 0.5).astype(np.float64)
        assert ssim(a, 1.0 - a) < 0

    def test_matches_naive_window_oracle(self):
        rng = np.random.default_rng(6)
        a, b = rng.random((10, 11, 2)), rng.random((10, 11, 2))
        assert abs(ssim(a, b) - naive_ssim(a, b)) < 1e-9

    def test_symmetric(self):
        rng = np.random.default_rng(7)
        a, b = rng.random((9, 9)), rng.random((9, 9))
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-12

    def test_image_smaller_than_window(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((4, 4)), np.zeros((4, 4)))


class TestReprojectionConsistency:
    def test_gt_renders_score_zero(self, plain_fixture):
        scene, _, views = plain_fixture
        err, pairs = reprojection_consistency([v.rgb.data for v in views], views, scene)
        assert err < 1e-6
        assert any(p.pixels > 0 for p in pairs)

    def test_noise_view_raises_error(self, plain_fixture):
        scene, _, views = plain_fixture
        images = [v.rgb.data for v in views]
        base, _ = reprojection_consistency(images, views, scene)
        noisy = list(images)
        noisy[1] = np.random.default_rng(8).random(images[1].shape)
        worse, _ = reprojection_consistency(noisy, views, scene)
        assert worse > base + 0.01

    def test_no_overlap_pair_is_nan(self, intrinsics32):
        # one thin slab: front and back cameras see opposite faces only
        scene = Scene(seed=0, primitives=(
            Box(lo=np.array([-0.05, -0.5, -0.5]), hi=np.array([0.05, 0.5, 0.5]),
                color=np.array([1.0, 0.3, 0.3])),), bounding_radius=1.0)
        va = render(scene, SphericalCamera(0.0, 0.0, 2.5), intrinsics32)
        vb = render(scene, SphericalCamera(0.0, 180.0, 2.5), intrinsics32)
        err, pairs = reprojection_consistency([va.rgb.data, vb.rgb.data], [va, vb], scene)
        assert all(math.isnan(p.error) for p in pairs)
        assert math.isnan(err)


class TestLocalization:
    def test_accuracy_counts_within_k(self):
        argmax = np.array([[0.0, 0.0], [5.0, 5.0], [2.0, 2.0]])
        gt = np.array([[0.5, 0.0], [0.0, 0.0], [2.0, 3.5]])
        assert abs(localization_accuracy(argmax, gt, k=1.0) - 1 / 3) < 1e-12

    def test_identity_pair_full_sampling_exact_self_match(self, distinctive_fixture):
        scene, _, views = distinctive_fixture
        # k absorbs reprojection roundoff (~1e-12 px); any wrong argmax
        # would be >= 1 px away
        r = localization_study(scene, views[0], views[0], feature_size=16, k=1e-9)
        # zero baseline: epipolar geometry is degenerate, full attention
        # self-matches exactly
        assert r["full"] == 1.0
        assert r["epipolar_usable"] == 0

    def test_frozen_thresholds(self, distinctive_fixture, frozen):
        scene, _, views = distinctive_fixture
        cfg = frozen["localization"]
        tot_e = tot_f = tot_q = tot_u = 0
        for i in range(16):
            r = localization_study(scene, views[i], views[(i + 1) % 16],
                                   feature_size=cfg["feature_size"])
            tot_e += r["epipolar"] * r["epipolar_usable"]
            tot_u += r["epipolar_usable"]
            tot_f += r["full"] * r["queries"]
            tot_q += r["queries"]
        epi, full = tot_e / tot_u, tot_f / tot_q
        assert abs(epi - cfg["epipolar"]) <= cfg["drift_tolerance"]
        assert abs(full - cfg["full"]) <= cfg["drift_tolerance"]

    def test_occluded_queries_excluded(self, distinctive_fixture):
        from epiview.scenegen import correspondence_grid
        scene, _, views = distinctive_fixture
        va, vb = views[0], views[8]  # wide baseline: plenty of occlusion
        size = 16
        scale = size / 32
        vv, uu = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        uv_img = (np.stack([uu.ravel(), vv.ravel()], -1) + 0.5) / scale - 0.5
        _, vis, prim_a, _ = correspondence_grid(scene, va, vb, uv_img)
        r = localization_study(scene, va, vb, feature_size=size)
        assert r["queries"] == int(((prim_a >= 0) & vis).sum())
        assert r["queries"] < int((prim_a >= 0).sum())


class TestCsvRows:
    def test_layout(self):
        rows = metrics_csv_rows("run1", [("psnr", "0:gt", 12.5)])
        assert rows[0] == ("run_id", "metric", "view_pair", "value")
        assert rows[1] == ("run1", "psnr", "0:gt", "12.5")
