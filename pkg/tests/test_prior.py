import numpy as np
import pytest

from cassirecon import autodiff as ad
from cassirecon import prior
from cassirecon.errors import ShapeError
from cassirecon.unfolding import UnfoldingConfig

from _oracles import naive_layer_norm, naive_spectral_attention, naive_feed_forward


def attention_store(rng, C, heads, name="blk", zero_init=False):
    store = ad.ParamStore()
    prior.init_attention_block(store, name, C, heads, 2, rng, zero_init=zero_init)
    return store


class TestLayerNorm:
    def test_constant_channels_give_zero_pre_affine(self):
        f = ad.Tensor(np.full((3, 3, 8), 2.5))
        out = prior.layer_norm(f, ad.Tensor(np.ones(8)), ad.Tensor(np.zeros(8)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_normalized_statistics(self):
        rng = np.random.default_rng(0)
        f = ad.Tensor(rng.standard_normal((5, 4, 16)))
        out = prior.layer_norm(f, ad.Tensor(np.ones(16)), ad.Tensor(np.zeros(16))).data
        mean = out.mean(axis=-1)
        var = out.var(axis=-1)
        assert np.abs(mean).max() < 1e-6
        assert np.abs(var - 1.0).max() < 1e-4

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(1)
        f = rng.standard_normal((4, 3, 6))
        g = rng.standard_normal(6)
        b = rng.standard_normal(6)
        got = prior.layer_norm(ad.Tensor(f), ad.Tensor(g), ad.Tensor(b)).data
        np.testing.assert_allclose(got, naive_layer_norm(f, g, b), rtol=1e-12, atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            prior.layer_norm(ad.Tensor(np.zeros((2, 2, 3))), ad.Tensor(np.ones(4)),
                             ad.Tensor(np.zeros(4)))


class TestPartition:
    def test_whole_map_single_cube(self):
        rng = np.random.default_rng(2)
        f = rng.standard_normal((8, 8, 3))
        cubes, info = prior.partition_cubes(ad.Tensor(f), 8)
        assert cubes.shape == (1, 64, 3)
        np.testing.assert_array_equal(cubes.data[0], f.reshape(64, 3))

    def test_row_major_tiles(self):
        f = np.arange(64.0).reshape(8, 8, 1)
        cubes, info = prior.partition_cubes(ad.Tensor(f), 4)
        assert cubes.shape == (4, 16, 1)
        np.testing.assert_array_equal(cubes.data[0, :, 0], f[:4, :4, 0].reshape(-1))
        np.testing.assert_array_equal(cubes.data[1, :, 0], f[:4, 4:, 0].reshape(-1))
        np.testing.assert_array_equal(cubes.data[2, :, 0], f[4:, :4, 0].reshape(-1))

    def test_round_trip_with_padding(self):
        rng = np.random.default_rng(3)
        f = rng.standard_normal((7, 5, 2))
        cubes, info = prior.partition_cubes(ad.Tensor(f), 4)
        assert cubes.shape[0] == 2 * 2
        back = prior.merge_cubes(cubes, info)
        np.testing.assert_array_equal(back.data, f)

    def test_round_trip_exhaustive(self):
        # every (H, W, L) in the supported envelope round-trips exactly
        rng = np.random.default_rng(4)
        for L in range(1, 10):
            for H in range(1, 18, 4):
                for W in range(1, 18, 3):
                    f = rng.standard_normal((H, W, 2))
                    cubes, info = prior.partition_cubes(ad.Tensor(f), L)
                    assert cubes.shape[0] == -(-H // L) * (-(-W // L))
                    np.testing.assert_array_equal(prior.merge_cubes(cubes, info).data, f)

    def test_gradient_through_partition(self):
        rng = np.random.default_rng(5)
        f = ad.Tensor(rng.standard_normal((5, 3, 2)), requires_grad=True)
        cubes, info = prior.partition_cubes(f, 4)
        ad.backward(ad.tsum(prior.merge_cubes(cubes, info)))
        np.testing.assert_allclose(f.grad, np.ones((5, 3, 2)))


class TestSpatialShift:
    def test_zero_shift_identity(self):
        f = np.arange(12.0).reshape(3, 4, 1)
        np.testing.assert_array_equal(prior.spatial_shift(f, 0, 0), f)

    def test_shift_unshift_round_trip(self):
        rng = np.random.default_rng(6)
        f = rng.standard_normal((5, 7, 2))
        np.testing.assert_array_equal(
            prior.spatial_shift(prior.spatial_shift(f, 2, -3), -2, 3), f
        )

    def test_sum_preserved(self):
        rng = np.random.default_rng(7)
        f = rng.standard_normal((4, 6, 3))
        assert prior.spatial_shift(f, 1, 5).sum() == pytest.approx(f.sum(), rel=1e-12)


class TestSpectralAttention:
    def test_attention_columns_sum_to_one(self):
        rng = np.random.default_rng(8)
        store = attention_store(rng, 8, 2)
        cubes = ad.Tensor(rng.standard_normal((3, 16, 8)))
        _, attn = prior.spectral_attention(cubes, store, "blk", 2, return_attn=True)
        np.testing.assert_allclose(attn.data.sum(axis=-2), 1.0, atol=1e-6)

    def test_large_beta_flattens_to_uniform(self):
        rng = np.random.default_rng(9)
        store = attention_store(rng, 8, 2)
        cubes = ad.Tensor(rng.standard_normal((2, 16, 8)))
        _, attn = prior.spectral_attention(cubes, store, "blk", 2, return_attn=True,
                                           beta_override=[1e6, 1e6])
        np.testing.assert_allclose(attn.data, 0.25, atol=1e-4)

    @pytest.mark.parametrize("C,heads", [(4, 1), (4, 2), (8, 2)])
    def test_matches_triple_loop_oracle(self, C, heads):
        rng = np.random.default_rng(10 + C + heads)
        L = 2
        store = ad.ParamStore()
        wq = rng.standard_normal((C, C))
        wk = rng.standard_normal((C, C))
        wv = rng.standard_normal((C, C))
        wo = rng.standard_normal((C, C))
        bo = rng.standard_normal(C)
        store.add("a.wq.w", wq)
        store.add("a.wk.w", wk)
        store.add("a.wv.w", wv)
        store.add("a.wo.w", wo)
        store.add("a.wo.b", bo)
        beta = rng.uniform(0.5, 3.0, heads)
        cube = rng.standard_normal((L * L, C))
        got = prior.spectral_attention(ad.Tensor(cube[None]), store, "a", heads,
                                       beta_override=beta).data[0]
        want = naive_spectral_attention(cube, wq, wk, wv, wo, bo, beta, heads)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_spatial_permutation_leaves_attention_matrix_unchanged(self):
        rng = np.random.default_rng(11)
        store = attention_store(rng, 6, 1)
        cube = rng.standard_normal((1, 9, 6))
        perm = rng.permutation(9)
        _, a1 = prior.spectral_attention(ad.Tensor(cube), store, "blk", 1, return_attn=True)
        _, a2 = prior.spectral_attention(ad.Tensor(cube[:, perm, :]), store, "blk", 1,
                                         return_attn=True)
        np.testing.assert_allclose(a1.data, a2.data, rtol=1e-12, atol=1e-14)

    def test_head_divisibility(self):
        rng = np.random.default_rng(12)
        store = attention_store(rng, 6, 2)
        with pytest.raises(ShapeError):
            prior.spectral_attention(ad.Tensor(np.zeros((1, 4, 7))), store, "blk", 2)


class TestFeedForward:
    def test_zero_weights_give_zero(self):
        rng = np.random.default_rng(13)
        store = attention_store(rng, 4, 1, zero_init=True)
        f = ad.Tensor(rng.standard_normal((3, 3, 4)))
        out = prior.feed_forward(f, store, "blk")
        np.testing.assert_array_equal(out.data, 0.0)

    def test_spatial_permutation_equivariance(self):
        rng = np.random.default_rng(14)
        store = attention_store(rng, 4, 1)
        f = rng.standard_normal((4, 5, 4))
        out = prior.feed_forward(ad.Tensor(f), store, "blk").data
        perm = rng.permutation(4)
        out_p = prior.feed_forward(ad.Tensor(f[perm]), store, "blk").data
        np.testing.assert_allclose(out[perm], out_p, rtol=1e-12, atol=1e-14)

    def test_matches_pointwise_oracle(self):
        rng = np.random.default_rng(15)
        store = attention_store(rng, 4, 1)
        f = rng.standard_normal((3, 4, 4))
        got = prior.feed_forward(ad.Tensor(f), store, "blk").data
        want = naive_feed_forward(
            f, store["blk.ffn1.w"].data, store["blk.ffn1.b"].data,
            store["blk.ffn2.w"].data, store["blk.ffn2.b"].data,
        )
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)


class TestAttentionBlock:
    def test_zero_init_is_identity(self):
        rng = np.random.default_rng(16)
        store = attention_store(rng, 8, 2, zero_init=True)
        f = rng.standard_normal((6, 6, 8))
        for shifted in (False, True):
            out = prior.attention_block(ad.Tensor(f), store, "blk", 4, 2, shifted)
            np.testing.assert_array_equal(out.data, f)

    def test_shape_preserved_with_ragged_input(self):
        rng = np.random.default_rng(17)
        store = attention_store(rng, 8, 2)
        f = rng.standard_normal((7, 5, 8))
        out = prior.attention_block(ad.Tensor(f), store, "blk", 4, 2, True)
        assert out.shape == (7, 5, 8)

    def test_shift_changes_receptive_pattern(self):
        rng = np.random.default_rng(18)
        store = attention_store(rng, 8, 2)
        f = ad.Tensor(rng.standard_normal((8, 8, 8)))
        plain_plain = prior.attention_block(
            prior.attention_block(f, store, "blk", 4, 2, False), store, "blk", 4, 2, False)
        plain_shift = prior.attention_block(
            prior.attention_block(f, store, "blk", 4, 2, False), store, "blk", 4, 2, True)
        assert np.abs(plain_plain.data - plain_shift.data).max() > 1e-8


class TestDenoiser:
    def cfg(self):
        return UnfoldingConfig(stages=1, base_channels=8, cube_size=4, levels=2, heads=2)

    def test_zero_init_is_identity(self):
        rng = np.random.default_rng(19)
        cfg = self.cfg()
        store = ad.ParamStore()
        prior.init_denoiser(store, "d.", 3, cfg, rng, with_fusion=False, zero_init=True)
        x = rng.standard_normal((8, 8, 3))
        out, enc, dec = prior.run_denoiser(ad.Tensor(x), [], [], store, "d.", cfg)
        np.testing.assert_array_equal(out.data, x)

    def test_feature_pyramid_shapes(self):
        rng = np.random.default_rng(20)
        cfg = self.cfg()
        store = ad.ParamStore()
        prior.init_denoiser(store, "d.", 3, cfg, rng, with_fusion=False)
        x = rng.standard_normal((8, 8, 3))
        out, enc, dec = prior.run_denoiser(ad.Tensor(x), [], [], store, "d.", cfg)
        assert out.shape == (8, 8, 3)
        assert [tuple(e.shape) for e in enc] == [(8, 8, 8), (4, 4, 16)]
        assert [tuple(d.shape) for d in dec] == [(8, 8, 8), (4, 4, 16)]
        assert np.all(np.isfinite(out.data))

    def test_ragged_input_restored(self):
        rng = np.random.default_rng(21)
        cfg = self.cfg()
        store = ad.ParamStore()
        prior.init_denoiser(store, "d.", 2, cfg, rng, with_fusion=False)
        x = rng.standard_normal((7, 6, 2))
        out, _, _ = prior.run_denoiser(ad.Tensor(x), [], [], store, "d.", cfg)
        assert out.shape == (7, 6, 2)

    def test_previous_feature_shape_mismatch_names_level(self):
        rng = np.random.default_rng(22)
        cfg = self.cfg()
        store = ad.ParamStore()
        prior.init_denoiser(store, "d.", 3, cfg, rng, with_fusion=True)
        x = ad.Tensor(rng.standard_normal((8, 8, 3)))
        good = [ad.Tensor(rng.standard_normal((8, 8, 8))),
                ad.Tensor(rng.standard_normal((4, 4, 16)))]
        bad = [ad.Tensor(rng.standard_normal((8, 8, 8))),
               ad.Tensor(rng.standard_normal((4, 4, 8)))]
        with pytest.raises(ShapeError, match="level 1"):
            prior.run_denoiser(x, good, bad, store, "d.", cfg)
