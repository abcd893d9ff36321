"""Tensor kernels: bilinear sampling, masked softmax, linear maps."""

import numpy as np
import pytest

from epiview.numerics import (
    FeatureMap,
    LinearMap,
    apply_linear,
    bilinear_sample,
    downsample_mean,
    masked_softmax,
)


class TestFeatureMap:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            FeatureMap(np.array([[[np.nan]]]))

    def test_promotes_2d(self):
        fm = FeatureMap(np.zeros((4, 5)))
        assert fm.channels == 1 and fm.height == 4 and fm.width == 5

    def test_immutable(self):
        fm = FeatureMap(np.zeros((2, 2, 3)))
        with pytest.raises(ValueError):
            fm.data[0, 0, 0] = 1.0


class TestBilinearSample:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.fm = FeatureMap(rng.standard_normal((5, 7, 3)))

    def test_exact_at_lattice_points(self):
        vals, ok = bilinear_sample(self.fm, [[2.0, 3.0]])
        assert ok[0]
        np.testing.assert_allclose(vals[0], self.fm.data[3, 2], atol=1e-7)

    def test_midpoint_blend(self):
        fm = FeatureMap(np.array([[[0.0], [1.0]]]))
        vals, ok = bilinear_sample(fm, [[0.5, 0.0]])
        assert ok[0] and abs(vals[0, 0] - 0.5) < 1e-12

    def test_out_of_grid_masked_not_clamped(self):
        vals, ok = bilinear_sample(self.fm, [[-0.5, 0.0], [0.0, -0.01], [6.01, 0.0]])
        assert not ok.any()
        assert np.all(vals == 0.0)

    def test_boundary_inclusive(self):
        vals, ok = bilinear_sample(self.fm, [[6.0, 4.0]])
        assert ok[0]
        np.testing.assert_allclose(vals[0], self.fm.data[4, 6], atol=1e-7)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(1)
        uv = rng.uniform(0, [6, 4], (50, 2))
        vals, ok = bilinear_sample(self.fm, uv)
        assert ok.all()
        grid = self.fm.data.astype(np.float64)
        for (u, v), got in zip(uv, vals):
            u0, v0 = int(np.floor(u)), int(np.floor(v))
            u0, v0 = min(u0, 5), min(v0, 3)
            du, dv = u - u0, v - v0
            want = (grid[v0, u0] * (1 - du) * (1 - dv)
                    + grid[v0, u0 + 1] * du * (1 - dv)
                    + grid[v0 + 1, u0] * (1 - du) * dv
                    + grid[v0 + 1, u0 + 1] * du * dv)
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_linear_along_axis(self):
        ramp = FeatureMap(np.arange(8, dtype=float).reshape(1, 8, 1) * 0 +
                          np.arange(8, dtype=float).reshape(1, 8, 1))
        us = np.linspace(0, 7, 29)
        vals, _ = bilinear_sample(ramp, np.stack([us, np.zeros_like(us)], axis=-1))
        np.testing.assert_allclose(vals[:, 0], us, atol=1e-6)


class TestMaskedSoftmax:
    def test_singleton(self):
        w, ok = masked_softmax(np.array([3.0, 5.0, -1.0]),
                               np.array([False, True, False]))
        assert ok
        np.testing.assert_allclose(w, [0, 1, 0], atol=0)

    def test_uniform_over_equal_logits(self):
        w, _ = masked_softmax(np.full(5, 2.0), np.array([1, 1, 0, 1, 1], dtype=bool))
        np.testing.assert_allclose(w, [0.25, 0.25, 0, 0.25, 0.25], atol=1e-15)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(2)
        logits = rng.standard_normal((20, 9))
        mask = rng.random((20, 9)) > 0.3
        mask[:, 0] = True
        w, ok = masked_softmax(logits, mask, scale=0.7)
        assert ok.all()
        for i in range(20):
            e = np.exp(logits[i][mask[i]] * 0.7)
            want = e / e.sum()
            np.testing.assert_allclose(w[i][mask[i]], want, atol=1e-12)
            assert abs(w[i].sum() - 1.0) < 1e-12

    def test_all_masked_no_nans(self):
        w, ok = masked_softmax(np.array([1.0, 2.0]), np.zeros(2, dtype=bool))
        assert not ok
        assert np.all(w == 0.0)

    def test_translation_invariance(self):
        rng = np.random.default_rng(3)
        logits = rng.standard_normal(11)
        mask = rng.random(11) > 0.4
        w1, _ = masked_softmax(logits, mask)
        w2, _ = masked_softmax(logits + 123.456, mask)
        np.testing.assert_allclose(w1, w2, atol=1e-12)

    def test_extreme_logits_stable(self):
        w, ok = masked_softmax(np.array([1e4, -1e4, 0.0]), np.ones(3, dtype=bool))
        assert ok and np.all(np.isfinite(w)) and abs(w.sum() - 1) < 1e-12


class TestApplyLinear:
    def test_identity(self):
        rng = np.random.default_rng(4)
        fm = FeatureMap(rng.standard_normal((3, 4, 5)))
        out = apply_linear(LinearMap.identity(5), fm)
        np.testing.assert_array_equal(out.data, fm.data)

    def test_zero_weight_constant_bias(self):
        fm = FeatureMap(np.random.default_rng(5).standard_normal((3, 3, 2)))
        lin = LinearMap(weight=np.zeros((4, 2)), bias=np.array([1, 2, 3, 4.0]))
        out = apply_linear(lin, fm)
        assert out.channels == 4
        np.testing.assert_allclose(out.data, np.broadcast_to([1, 2, 3, 4], (3, 3, 4)),
                                   atol=1e-7)

    def test_matches_per_pixel_oracle(self):
        rng = np.random.default_rng(6)
        fm = FeatureMap(rng.standard_normal((4, 6, 3)))
        lin = LinearMap(weight=rng.standard_normal((5, 3)),
                        bias=rng.standard_normal(5))
        out = apply_linear(lin, fm)
        w = lin.weight.astype(np.float64)
        b = lin.bias.astype(np.float64)
        for y in range(4):
            for x in range(6):
                want = w @ fm.data[y, x].astype(np.float64) + b
                np.testing.assert_allclose(out.data[y, x], want, atol=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            apply_linear(LinearMap.identity(4), FeatureMap(np.zeros((2, 2, 3))))

    def test_additive_in_input(self):
        # dyadic-rational inputs so float32 storage is exact and the test
        # isolates the affine property itself
        rng = np.random.default_rng(7)
        a = rng.integers(-64, 64, (3, 3, 4)) / 64.0
        b = rng.integers(-64, 64, (3, 3, 4)) / 64.0
        lin = LinearMap(weight=rng.integers(-8, 8, (4, 4)) / 8.0,
                        bias=rng.integers(-8, 8, 4) / 8.0)
        fa = apply_linear(lin, FeatureMap(a)).data.astype(np.float64)
        fb = apply_linear(lin, FeatureMap(b)).data.astype(np.float64)
        fab = apply_linear(lin, FeatureMap(a + b)).data.astype(np.float64)
        np.testing.assert_allclose(fab, fa + fb - lin.bias.astype(np.float64), atol=1e-9)


class TestDownsample:
    def test_block_mean(self):
        data = np.arange(16, dtype=float).reshape(4, 4, 1)
        out = downsample_mean(FeatureMap(data), 2)
        want = np.array([[2.5, 4.5], [10.5, 12.5]]).reshape(2, 2, 1)
        np.testing.assert_allclose(out.data, want, atol=1e-6)

    def test_rejects_nondivisible(self):
        with pytest.raises(ValueError):
            downsample_mean(FeatureMap(np.zeros((5, 4, 1))), 2)
