import numpy as np
import pytest

from kidogo import attention as attn

IMPLS = ["numpy"] + (["compiled"] if attn.HAVE_COMPILED else [])


def rand_qkv(n_heads, seq, d, dtype=np.float32, seed=0):
    rng = np.random.default_rng(seed)
    return tuple(rng.standard_normal((n_heads, seq, d)).astype(dtype)
                 for _ in range(3))


class TestNaive:
    def test_seq1_returns_v(self):
        q, k, v = rand_qkv(2, 1, 8)
        out = attn.naive_attention(q, k, v)
        np.testing.assert_array_equal(out, v)

    def test_uniform_scores_average_prefix(self):
        # Q of zeros makes every unmasked score equal, so softmax is uniform
        # over positions 0..t and the output is the running mean of V.
        _, _, v = rand_qkv(1, 6, 4, dtype=np.float64)
        q = np.zeros_like(v)
        k = np.ones_like(v)
        out = attn.naive_attention(q, k, v)
        for t in range(6):
            np.testing.assert_allclose(out[0, t], v[0, : t + 1].mean(axis=0),
                                       atol=1e-12)

    def test_weights_rows_sum_to_one(self):
        # With V set to all ones each output element equals the row sum of
        # the attention weights.
        q, k, _ = rand_qkv(3, 17, 8, seed=5)
        v = np.ones_like(q)
        out = attn.naive_attention(q, k, v)
        np.testing.assert_allclose(out, 1.0, atol=1e-6)


class TestStreaming:
    @pytest.mark.parametrize("impl", IMPLS)
    @pytest.mark.parametrize("tile", [1, 16, 128])
    def test_matches_naive_float32(self, impl, tile):
        q, k, v = rand_qkv(4, 128, 64, seed=1)
        ref = attn.naive_attention(q, k, v)
        got = attn.streaming_attention(q, k, v, tile_size=tile, impl=impl)
        assert np.max(np.abs(got - ref)) < 1e-5

    @pytest.mark.parametrize("impl", IMPLS)
    def test_tile_beyond_seq_is_single_tile(self, impl):
        q, k, v = rand_qkv(2, 24, 16, seed=2)
        a = attn.streaming_attention(q, k, v, tile_size=24, impl=impl)
        b = attn.streaming_attention(q, k, v, tile_size=1000, impl=impl)
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("impl", IMPLS)
    def test_extreme_logit_stays_finite(self, impl):
        q, k, v = rand_qkv(1, 32, 16, seed=3)
        # force one score to +50 by aligning a q/k row pair
        q[0, 20] = 0.0
        k[0, 5] = 0.0
        q[0, 20, 0] = 50.0 / attn.default_scale(16)
        k[0, 5, 0] = 1.0
        ref = attn.naive_attention(q.astype(np.float64), k.astype(np.float64),
                                   v.astype(np.float64))
        got = attn.streaming_attention(q, k, v, tile_size=8, impl=impl)
        assert np.all(np.isfinite(got))
        assert np.max(np.abs(got - ref)) < 1e-5

    @pytest.mark.parametrize("impl", IMPLS)
    def test_score_magnitude_80_finite(self, impl):
        rng = np.random.default_rng(8)
        q, k, v = rand_qkv(1, 16, 8, seed=8)
        q[0, :, 0] = rng.choice([-80.0, 80.0], size=16) / attn.default_scale(8)
        k[0, :, 0] = 1.0
        k[0, :, 1:] = 0.0
        got = attn.streaming_attention(q, k, v, tile_size=4, impl=impl)
        assert np.all(np.isfinite(got))

    @pytest.mark.parametrize("impl", IMPLS)
    def test_random_shapes_oracle(self, impl):
        rng = np.random.default_rng(11)
        for _ in range(20):
            heads = int(rng.integers(1, 5))
            seq = int(rng.integers(1, 96))
            d = int(rng.integers(2, 48))
            tile = int(rng.choice([1, 3, 16, seq]))
            q, k, v = rand_qkv(heads, seq, d, seed=int(rng.integers(1 << 30)))
            ref = attn.naive_attention(q, k, v)
            got = attn.streaming_attention(q, k, v, tile_size=tile, impl=impl)
            assert np.max(np.abs(got - ref)) < 1e-5

    @pytest.mark.parametrize("impl", IMPLS)
    def test_causality_bitwise(self, impl):
        q, k, v = rand_qkv(2, 12, 8, seed=4)
        base = attn.streaming_attention(q, k, v, tile_size=4, impl=impl)
        k2, v2 = k.copy(), v.copy()
        t = 7
        k2[:, t + 1 :] += 3.0
        v2[:, t + 1 :] -= 5.0
        pert = attn.streaming_attention(q, k2, v2, tile_size=4, impl=impl)
        np.testing.assert_array_equal(base[:, : t + 1], pert[:, : t + 1])

    def test_bad_tile_size(self):
        q, k, v = rand_qkv(1, 4, 4)
        with pytest.raises(ValueError):
            attn.streaming_attention(q, k, v, tile_size=0)


class TestBackward:
    def test_finite_difference(self):
        rng = np.random.default_rng(6)
        q, k, v = rand_qkv(1, 4, 4, dtype=np.float64, seed=6)
        d_out = rng.standard_normal(q.shape)
        dq, dk, dv = attn.attention_backward(q, k, v, d_out)
        eps = 1e-6

        def loss(q_, k_, v_):
            return float((attn.naive_attention(q_, k_, v_) * d_out).sum())

        for name, arr, grad in (("q", q, dq), ("k", k, dk), ("v", v, dv)):
            for _ in range(20):
                idx = tuple(rng.integers(0, s) for s in arr.shape)
                orig = arr[idx]
                arr[idx] = orig + eps
                up = loss(q, k, v)
                arr[idx] = orig - eps
                down = loss(q, k, v)
                arr[idx] = orig
                num = (up - down) / (2 * eps)
                denom = max(abs(num), abs(grad[idx]), 1e-8)
                assert abs(num - grad[idx]) / denom < 1e-3, name

    def test_dv_causality_transposed(self):
        q, k, v = rand_qkv(1, 6, 4, dtype=np.float64, seed=7)
        s = 4
        d_out = np.zeros_like(q)
        d_out[0, :s] = 1.0  # only outputs before position s carry gradient
        _, _, dv = attn.attention_backward(q, k, v, d_out)
        np.testing.assert_array_equal(dv[0, s:], 0.0)

    def test_seq1(self):
        q, k, v = rand_qkv(3, 1, 5, dtype=np.float64, seed=9)
        d_out = np.random.default_rng(9).standard_normal(q.shape)
        dq, dk, dv = attn.attention_backward(q, k, v, d_out)
        np.testing.assert_array_equal(dv, d_out)
        np.testing.assert_array_equal(dq, 0.0)
        np.testing.assert_array_equal(dk, 0.0)


class TestBenchmark:
    def test_reports_all_impls(self):
        rows = attn.benchmark(seq=32, tile_size=8, n_heads=2, head_dim=16,
                              repeats=1)
        impls = {r["impl"] for r in rows}
        assert "naive" in impls and "streaming-numpy" in impls
        if attn.HAVE_COMPILED:
            assert "streaming-compiled" in impls
        for r in rows:
            assert r["ms"] > 0
            assert r["score_buffer_bytes"] > 0
        naive = next(r for r in rows if r["impl"] == "naive")
        stream = next(r for r in rows if r["impl"] == "streaming-numpy")
        assert stream["score_buffer_bytes"] < naive["score_buffer_bytes"]
