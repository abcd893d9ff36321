"""Attention blocks: self attention, parameter duplication, epipolar and
full cross attention, fusion, and multi-view aggregation."""

import numpy as np
import pytest

from epiview.attention import (
    AttentionCounters,
    AttentionParams,
    EpipolarAttentionBlock,
    duplicate_params,
    epipolar_attention,
    epipolar_similarity,
    full_cross_attention,
    fuse,
    multi_view_aggregate,
    project_context,
    self_attention,
)
from epiview.geometry import EpipolarSampleSet
from epiview.numerics import FeatureMap, apply_linear, masked_softmax


def naive_self_attention(fm, params):
    """O(N^2) double-loop reference in float64."""
    h, w = fm.height, fm.width
    n, heads, hd = h * w, params.heads, params.head_dim
    flat = fm.flat().astype(np.float64)
    q = flat @ params.q_proj.weight.T.astype(np.float64) + params.q_proj.bias
    k = flat @ params.k_proj.weight.T.astype(np.float64) + params.k_proj.bias
    v = flat @ params.v_proj.weight.T.astype(np.float64) + params.v_proj.bias
    out = np.zeros((n, heads * hd))
    for i in range(n):
        for hh in range(heads):
            qi = q[i, hh * hd:(hh + 1) * hd]
            logits = np.array([qi @ k[j, hh * hd:(hh + 1) * hd] for j in range(n)])
            logits /= np.sqrt(hd)
            e = np.exp(logits - logits.max())
            wgt = e / e.sum()
            out[i, hh * hd:(hh + 1) * hd] = sum(
                wgt[j] * v[j, hh * hd:(hh + 1) * hd] for j in range(n))
    out = out @ params.out_proj.weight.T.astype(np.float64) + params.out_proj.bias
    return out.reshape(h, w, -1)


class TestSelfAttention:
    def test_single_position(self):
        rng = np.random.default_rng(0)
        fm = FeatureMap(rng.standard_normal((1, 1, 6)))
        params = AttentionParams.seeded(6, 2, rng)
        out = self_attention(fm, params)
        want = apply_linear(params.out_proj, apply_linear(params.v_proj, fm))
        np.testing.assert_allclose(out.data, want.data, atol=1e-6)

    def test_constant_map_stays_constant(self):
        rng = np.random.default_rng(1)
        fm = FeatureMap(np.broadcast_to(rng.standard_normal(4), (5, 5, 4)).copy())
        out = self_attention(fm, AttentionParams.seeded(4, 2, rng))
        want = np.broadcast_to(out.data[0, 0], out.data.shape)
        np.testing.assert_allclose(out.data, want, atol=1e-5)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(2)
        fm = FeatureMap(rng.standard_normal((4, 4, 8)))
        params = AttentionParams.seeded(8, 2, rng)
        out = self_attention(fm, params)
        np.testing.assert_allclose(out.data, naive_self_attention(fm, params), atol=1e-6)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            self_attention(FeatureMap(np.zeros((2, 2, 3))),
                           AttentionParams.identity(4))


class TestDuplicateParams:
    def test_value_identical(self):
        src = AttentionParams.seeded(8, 2, np.random.default_rng(3))
        dup = duplicate_params(src)
        for name in ("q_proj", "k_proj", "v_proj", "out_proj"):
            np.testing.assert_array_equal(getattr(dup, name).weight,
                                          getattr(src, name).weight)
            np.testing.assert_array_equal(getattr(dup, name).bias,
                                          getattr(src, name).bias)
        assert dup.heads == src.heads

    def test_mutation_isolated(self):
        src = AttentionParams.seeded(4, 1, np.random.default_rng(4))
        dup = duplicate_params(src)
        before = src.q_proj.weight.copy()
        dup.q_proj.weight[0, 0] += 100.0
        np.testing.assert_array_equal(src.q_proj.weight, before)


class TestEpipolarFullEquivalence:
    @pytest.mark.parametrize("seed", range(20))
    def test_full_grid_sampling_equals_cross_attention(self, seed):
        rng = np.random.default_rng(seed)
        h = int(rng.integers(4, 17))
        w = int(rng.integers(4, 17))
        c, heads = 8, 2
        f_tgt = FeatureMap(rng.standard_normal((h, w, c)))
        f_ref = FeatureMap(rng.standard_normal((h, w, c)))
        params = AttentionParams.seeded(c, heads, rng)
        ctx = project_context(f_ref, params)
        samples = EpipolarSampleSet.full_grid(w, h, h * w)
        block = EpipolarAttentionBlock(params=duplicate_params(params), fusion_alpha=0.5)
        out_e, mask = epipolar_attention(f_tgt, ctx, samples, block)
        out_f, _ = full_cross_attention(f_tgt, ctx, params)
        assert mask.all()
        np.testing.assert_allclose(out_e.data, out_f.data, atol=1e-6)

    def test_degenerate_cross_equals_self(self):
        rng = np.random.default_rng(40)
        fm = FeatureMap(rng.standard_normal((5, 5, 6)))
        params = AttentionParams.seeded(6, 2, rng)
        out_c, _ = full_cross_attention(fm, project_context(fm, params), params)
        out_s = self_attention(fm, params)
        np.testing.assert_allclose(out_c.data, out_s.data, atol=1e-6)


class TestEpipolarAttention:
    def test_singleton_sample(self):
        rng = np.random.default_rng(5)
        f_tgt = FeatureMap(rng.standard_normal((2, 2, 4)))
        f_ref = FeatureMap(rng.standard_normal((2, 2, 4)))
        params = AttentionParams.seeded(4, 1, rng)
        ctx = project_context(f_ref, params)
        uv = np.tile(np.array([[1.0, 1.0], [0, 0]]), (4, 1, 1))
        valid = np.tile(np.array([True, False]), (4, 1))
        samples = EpipolarSampleSet(uv=uv, valid=valid, width=2, height=2)
        block = EpipolarAttentionBlock(params=params, fusion_alpha=0.5)
        out, mask = epipolar_attention(f_tgt, ctx, samples, block)
        assert mask.all()
        want = apply_linear(params.out_proj,
                            FeatureMap(np.broadcast_to(ctx.value.data[1, 1], (2, 2, 4)).copy()))
        np.testing.assert_allclose(out.data, want.data, atol=1e-6)

    def test_empty_sample_set_marks_no_contribution(self):
        rng = np.random.default_rng(6)
        f = FeatureMap(rng.standard_normal((3, 3, 4)))
        params = AttentionParams.identity(4)
        samples = EpipolarSampleSet(uv=np.zeros((9, 3, 2)),
                                    valid=np.zeros((9, 3), dtype=bool),
                                    width=3, height=3)
        block = EpipolarAttentionBlock(params=params, fusion_alpha=0.5)
        out, mask = epipolar_attention(f, project_context(f, params), samples, block)
        assert not mask.any()
        fused = fuse(f, out, mask, 0.7)
        np.testing.assert_array_equal(fused.data, f.data)

    def test_resolution_mismatch(self):
        params = AttentionParams.identity(3)
        with pytest.raises(ValueError):
            epipolar_attention(
                FeatureMap(np.zeros((4, 4, 3))),
                project_context(FeatureMap(np.zeros((2, 2, 3))), params),
                EpipolarSampleSet.full_grid(2, 2, 16),
                EpipolarAttentionBlock(params=params))

    def test_weights_sum_to_one_over_valid(self):
        rng = np.random.default_rng(7)
        f_tgt = FeatureMap(rng.standard_normal((4, 4, 4)))
        f_ref = FeatureMap(rng.standard_normal((4, 4, 4)))
        params = AttentionParams.seeded(4, 2, rng)
        ctx = project_context(f_ref, params)
        uv = rng.uniform(-1, 4.5, (16, 4, 2))
        valid = rng.random((16, 4)) > 0.4
        samples = EpipolarSampleSet(uv=uv, valid=valid, width=4, height=4)
        _, weights, _, eff_valid = epipolar_similarity(f_tgt, ctx, samples, params)
        sums = weights.sum(axis=-1)
        for q in range(16):
            expect = 1.0 if eff_valid[q].any() else 0.0
            np.testing.assert_allclose(sums[:, q], expect, atol=1e-12)
        assert np.all(weights[:, ~eff_valid] == 0.0)

    def test_logit_translation_invariance_carries_through(self):
        # appending a constant-key channel shifts every logit by the same
        # amount, which must not change the output
        rng = np.random.default_rng(8)
        f_tgt = rng.standard_normal((3, 3, 4))
        f_ref = rng.standard_normal((3, 3, 4))
        uv = rng.uniform(0, 2.9, (9, 5, 2))
        valid = np.ones((9, 5), dtype=bool)

        def run(extra_key):
            ft = FeatureMap(np.concatenate([f_tgt, np.ones((3, 3, 1))], axis=2))
            fr = FeatureMap(np.concatenate([f_ref, np.full((3, 3, 1), extra_key)], axis=2))
            params = AttentionParams.identity(5)
            ctx = project_context(fr, params)
            samples = EpipolarSampleSet(uv=uv, valid=valid, width=3, height=3)
            block = EpipolarAttentionBlock(params=params, fusion_alpha=0.5)
            out, _ = epipolar_attention(ft, ctx, samples, block)
            return out.data[:, :, :4]

        np.testing.assert_allclose(run(0.0), run(57.0), atol=1e-9)


class TestConfigSwitches:
    def test_value_source_raw_feature(self):
        rng = np.random.default_rng(30)
        f_ref = FeatureMap(rng.standard_normal((3, 3, 4)))
        params = AttentionParams.seeded(4, 1, rng)
        ctx_v = project_context(f_ref, params, "value_projection")
        ctx_r = project_context(f_ref, params, "raw_feature")
        assert np.array_equal(ctx_r.value.data, f_ref.data)
        assert not np.array_equal(ctx_v.value.data, f_ref.data)
        with pytest.raises(ValueError):
            project_context(f_ref, params, "nonsense")

    def test_out_proj_switch(self):
        rng = np.random.default_rng(31)
        f_tgt = FeatureMap(rng.standard_normal((3, 3, 4)))
        f_ref = FeatureMap(rng.standard_normal((3, 3, 4)))
        params = AttentionParams.seeded(4, 1, rng)
        ctx = project_context(f_ref, params)
        samples = EpipolarSampleSet.full_grid(3, 3, 9)
        with_proj, _ = epipolar_attention(
            f_tgt, ctx, samples, EpipolarAttentionBlock(params=params))
        without, _ = epipolar_attention(
            f_tgt, ctx, samples,
            EpipolarAttentionBlock(params=params, apply_out_proj=False))
        np.testing.assert_allclose(apply_linear(params.out_proj, without).data,
                                   with_proj.data, atol=1e-6)


class TestFuse:
    def setup_method(self):
        rng = np.random.default_rng(9)
        self.a = FeatureMap(rng.standard_normal((3, 3, 2)))
        self.b = FeatureMap(rng.standard_normal((3, 3, 2)))
        self.mask = np.ones((3, 3), dtype=bool)

    def test_alpha_zero_is_identity(self):
        out = fuse(self.a, self.b, self.mask, 0.0)
        np.testing.assert_array_equal(out.data, self.a.data)

    def test_alpha_one_replaces_contributing(self):
        mask = self.mask.copy()
        mask[0, 0] = False
        out = fuse(self.a, self.b, mask, 1.0)
        np.testing.assert_allclose(out.data[1:], self.b.data[1:], atol=1e-7)
        np.testing.assert_array_equal(out.data[0, 0], self.a.data[0, 0])

    def test_alpha_half_is_mean(self):
        out = fuse(self.a, self.b, self.mask, 0.5)
        want = (self.a.data.astype(np.float64) + self.b.data.astype(np.float64)) / 2
        np.testing.assert_allclose(out.data, want, atol=1e-7)

    def test_alpha_out_of_range(self):
        with pytest.raises(ValueError):
            fuse(self.a, self.b, self.mask, 1.5)


class TestMultiViewAggregate:
    def test_single_view_identity(self):
        rng = np.random.default_rng(10)
        fm = FeatureMap(rng.standard_normal((2, 2, 3)))
        mask = np.array([[True, False], [True, True]])
        out, m = multi_view_aggregate([(fm, mask)])
        np.testing.assert_allclose(out.data[mask], fm.data[mask], atol=1e-7)
        np.testing.assert_array_equal(m, mask)

    def test_mean_of_identical_views(self):
        rng = np.random.default_rng(11)
        fm = FeatureMap(rng.standard_normal((2, 2, 3)))
        mask = np.ones((2, 2), dtype=bool)
        out, _ = multi_view_aggregate([(fm, mask), (fm, mask)])
        np.testing.assert_allclose(out.data, fm.data, atol=1e-7)

    def test_masked_view_excluded_from_mean(self):
        a = FeatureMap(np.full((1, 2, 1), 2.0))
        b = FeatureMap(np.full((1, 2, 1), 4.0))
        c = FeatureMap(np.full((1, 2, 1), 99.0))
        ones = np.ones((1, 2), dtype=bool)
        out, m = multi_view_aggregate([(a, ones), (b, ones), (c, ~ones)])
        np.testing.assert_allclose(out.data, 3.0, atol=1e-7)
        assert m.all()

    def test_pixelwise_partial_contributions(self):
        a = FeatureMap(np.array([[[1.0], [1.0]]]))
        b = FeatureMap(np.array([[[3.0], [3.0]]]))
        ma = np.array([[True, False]])
        mb = np.array([[True, True]])
        out, m = multi_view_aggregate([(a, ma), (b, mb)])
        np.testing.assert_allclose(out.data[0, 0, 0], 2.0, atol=1e-7)
        np.testing.assert_allclose(out.data[0, 1, 0], 3.0, atol=1e-7)
        assert m.all()


class TestCounters:
    def test_full_attention_buffer_is_n_squared(self):
        rng = np.random.default_rng(12)
        fm = FeatureMap(rng.standard_normal((4, 4, 4)))
        params = AttentionParams.identity(4)
        counters = AttentionCounters()
        full_cross_attention(fm, project_context(fm, params), params, counters)
        assert counters.peak_elems == (4 * 4) ** 2

    def test_epipolar_buffer_bounded(self):
        rng = np.random.default_rng(13)
        fm = FeatureMap(rng.standard_normal((4, 6, 4)))
        params = AttentionParams.identity(4)
        counters = AttentionCounters()
        uv = rng.uniform(0, 3, (24, 6, 2))
        valid = np.ones((24, 6), dtype=bool)
        samples = EpipolarSampleSet(uv=uv, valid=valid, width=6, height=4)
        block = EpipolarAttentionBlock(params=params)
        epipolar_attention(fm, project_context(fm, params), samples, block, counters)
        assert counters.peak_elems == 24 * 6
        assert counters.peak_elems <= 4 * 6 * max(4, 6)
