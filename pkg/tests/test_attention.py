"""Attention layers: direct-formula oracles, mask semantics, equivariance."""

import numpy as np
import pytest

from aan import Tensor
from aan import attention as A
from aan import tensor as T
from aan.errors import ContractError, DimensionError, ParameterError


def direct_attention_oracle(q, k, v, allowed=None):
    """Independent evaluation: softmax(q k^T / sqrt(d_k)) v via plain numpy."""
    scores = q @ k.T / np.sqrt(q.shape[-1])
    if allowed is not None:
        scores = np.where(allowed, scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w = w / w.sum(axis=-1, keepdims=True)
    return w @ v


class TestScaledDotProductAttention:
    def test_single_key_value(self):
        rng = np.random.default_rng(0)
        q = Tensor(rng.uniform(-3, 3, (4, 2)))
        k = Tensor(rng.uniform(-3, 3, (1, 2)))
        v = Tensor([[0.7, -1.2, 3.0]])
        out = A.scaled_dot_product_attention(q, k, v)
        np.testing.assert_allclose(out.data, np.tile(v.data, (4, 1)), atol=1e-14)

    def test_zero_query_gives_mean_of_values(self):
        rng = np.random.default_rng(1)
        k = Tensor(rng.uniform(-1, 1, (5, 3)))
        v = Tensor(rng.uniform(-1, 1, (5, 2)))
        out = A.scaled_dot_product_attention(Tensor(np.zeros((2, 3))), k, v)
        np.testing.assert_allclose(out.data, np.tile(v.data.mean(axis=0), (2, 1)), atol=1e-12)

    def test_two_key_scalar_case(self):
        # d_k = 1: weights are softmax([1, -1]) so the output is e/(e+e^-1) * 1
        out = A.scaled_dot_product_attention(
            Tensor([[1.0]]), Tensor([[1.0], [-1.0]]), Tensor([[1.0], [0.0]])
        )
        np.testing.assert_allclose(out.data, [[0.8807970779778824]], atol=1e-15)

    def test_matches_direct_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n_q, n_k, d_k, d_v = rng.integers(1, 6, size=4)
            q = rng.uniform(-2, 2, (n_q, d_k))
            k = rng.uniform(-2, 2, (n_k, d_k))
            v = rng.uniform(-2, 2, (n_k, d_v))
            out = A.scaled_dot_product_attention(Tensor(q), Tensor(k), Tensor(v))
            np.testing.assert_allclose(out.data, direct_attention_oracle(q, k, v), atol=1e-12)

    def test_outputs_in_convex_hull_of_values(self):
        rng = np.random.default_rng(3)
        v = rng.uniform(-1, 1, (6, 4))
        q = Tensor(rng.uniform(-2, 2, (5, 3)))
        k = Tensor(rng.uniform(-2, 2, (6, 3)))
        out = A.scaled_dot_product_attention(q, k, Tensor(v)).data
        assert np.all(out <= v.max(axis=0) + 1e-12)
        assert np.all(out >= v.min(axis=0) - 1e-12)

    def test_masked_weights_exactly_zero(self):
        rng = np.random.default_rng(4)
        n = 4
        mask = A.make_causal_mask(n)
        q = Tensor(rng.uniform(-1, 1, (n, 3)))
        k = Tensor(rng.uniform(-1, 1, (n, 3)))
        v = Tensor(rng.uniform(-1, 1, (n, 2)))
        _, weights = A.scaled_dot_product_attention(q, k, v, mask, return_weights=True)
        w = weights.data
        assert np.all(w[~mask.allowed] == 0.0)
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)

    def test_fully_masked_row_rejected(self):
        mask = A.AttentionMask([[True, True], [False, False]])
        x = Tensor(np.zeros((2, 2)))
        with pytest.raises(ContractError):
            A.scaled_dot_product_attention(x, x, x, mask)

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            A.scaled_dot_product_attention(
                Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4)))
            )


class TestMultiHeadAttention:
    def test_single_token_is_linear_image_of_value(self):
        rng = np.random.default_rng(5)
        cfg = A.AttentionConfig(d_model=6, n_heads=2)
        params = A.init_mha(rng, cfg)
        x = Tensor(rng.uniform(-1, 1, (1, 6)))
        out = A.multi_head_attention(x, x, None, params)
        # with one key the attention weight is 1, so out = concat(v_h) W_o + b_o
        vs = [A.linear(x, wv).data for wv in params.wv]
        manual = np.concatenate(vs, axis=-1) @ params.out.w.data + params.out.b.data
        np.testing.assert_allclose(out.data, manual, atol=1e-12)

    def test_output_shape_contract(self):
        rng = np.random.default_rng(6)
        cfg = A.AttentionConfig(d_model=8, n_heads=2)
        params = A.init_mha(rng, cfg)
        q = Tensor(rng.uniform(-1, 1, (7, 8)))
        kv = Tensor(rng.uniform(-1, 1, (4, 8)))
        assert A.multi_head_attention(q, kv, None, params).shape == (7, 8)

    def test_single_head_reduces_to_composition(self):
        rng = np.random.default_rng(7)
        cfg = A.AttentionConfig(d_model=6, n_heads=1)
        params = A.init_mha(rng, cfg)
        x = Tensor(rng.uniform(-1, 1, (5, 6)))
        out = A.multi_head_attention(x, x, None, params)
        q = A.linear(x, params.wq[0])
        k = A.linear(x, params.wk[0])
        v = A.linear(x, params.wv[0])
        manual = A.linear(A.scaled_dot_product_attention(q, k, v), params.out)
        np.testing.assert_allclose(out.data, manual.data, atol=1e-12)

    def test_width_mismatch(self):
        rng = np.random.default_rng(8)
        params = A.init_mha(rng, A.AttentionConfig(d_model=6, n_heads=2))
        with pytest.raises(DimensionError):
            A.multi_head_attention(Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4))), None, params)


class TestPositionalEncoding:
    def test_position_zero_alternates(self):
        pe = A.positional_encoding(3, 8).data
        np.testing.assert_array_equal(pe[0], [0.0, 1.0] * 4)

    def test_first_frequency_is_unit(self):
        # omega_0 = 1, so entry (1, 0) is sin(1)
        pe = A.positional_encoding(2, 8).data
        np.testing.assert_allclose(pe[1, 0], 0.8414709848078965, atol=1e-15)

    def test_entries_bounded(self):
        pe = A.positional_encoding(500, 16).data
        assert np.all(pe >= -1.0) and np.all(pe <= 1.0)

    def test_rows_distinct_up_to_ten_thousand(self):
        pe = A.positional_encoding(10_000, 8).data
        assert len(np.unique(pe, axis=0)) == 10_000

    def test_odd_width_rejected(self):
        with pytest.raises(ParameterError):
            A.positional_encoding(4, 7)


class TestReducedFFN:
    def test_zero_input_zero_bias(self):
        params = A.LinearParams(
            w=Tensor(np.ones((4, 4)), requires_grad=True),
            b=Tensor(np.zeros(4), requires_grad=True),
        )
        out = A.reduced_ffn(Tensor(np.zeros((3, 4))), params)
        np.testing.assert_array_equal(out.data, np.zeros((3, 4)))

    def test_identity_on_positive_input(self):
        params = A.LinearParams(w=Tensor(np.eye(4)), b=Tensor(np.zeros(4)))
        x = np.abs(np.random.default_rng(9).uniform(0.1, 1, (3, 4)))
        np.testing.assert_allclose(A.reduced_ffn(Tensor(x), params).data, x, atol=1e-15)

    def test_matches_affine_relu_oracle(self):
        rng = np.random.default_rng(10)
        w = rng.uniform(-1, 1, (4, 4))
        b = rng.uniform(-1, 1, 4)
        x = rng.uniform(-1, 1, (6, 4))
        params = A.LinearParams(w=Tensor(w), b=Tensor(b))
        oracle = np.maximum(x @ w + b, 0.0)
        np.testing.assert_allclose(A.reduced_ffn(Tensor(x), params).data, oracle, atol=1e-12)


def _zero_encoder_layer(d):
    """All linear maps zeroed, layer-norm affine left at identity."""
    rng = np.random.default_rng(0)
    cfg = A.AttentionConfig(d_model=d, n_heads=2, n_layers=1)
    layer = A.init_encoder(rng, cfg).layers[0]
    for lp in layer.self_attn.wq + layer.self_attn.wk + layer.self_attn.wv + [layer.self_attn.out, layer.ffn]:
        lp.w.assign(np.zeros(lp.w.shape))
        lp.b.assign(np.zeros(lp.b.shape))
    return layer


class TestEncoder:
    def test_shape_preserved(self):
        rng = np.random.default_rng(11)
        cfg = A.AttentionConfig(d_model=8, n_heads=2, n_layers=2)
        params = A.init_encoder(rng, cfg)
        x = Tensor(rng.uniform(-1, 1, (5, 8)))
        assert A.encoder_stack(x, params).shape == (5, 8)

    def test_zeroed_sublayers_reduce_to_double_layer_norm(self):
        layer = _zero_encoder_layer(6)
        rng = np.random.default_rng(12)
        x = Tensor(rng.uniform(-1, 1, (4, 6)))
        out = A.encoder_layer(x, layer)
        gain, bias = Tensor(np.ones(6)), Tensor(np.zeros(6))
        expected = T.layer_norm(T.layer_norm(x, gain, bias), gain, bias)
        np.testing.assert_allclose(out.data, expected.data, atol=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(13)
        cfg = A.AttentionConfig(d_model=8, n_heads=2, n_layers=2)
        params = A.init_encoder(rng, cfg)
        x = rng.uniform(-1, 1, (5, 8))
        perm = rng.permutation(5)
        out = A.encoder_stack(Tensor(x), params).data
        out_perm = A.encoder_stack(Tensor(x[perm]), params).data
        np.testing.assert_allclose(out_perm, out[perm], atol=1e-9, rtol=0)


class TestDecoder:
    def _params(self, d=8, n_layers=2, seed=14):
        rng = np.random.default_rng(seed)
        cfg = A.AttentionConfig(d_model=d, n_heads=2, n_layers=n_layers)
        return A.init_decoder(rng, cfg)

    def test_single_token_shape(self):
        params = self._params()
        t = Tensor(np.random.default_rng(15).uniform(-1, 1, (1, 8)))
        m = Tensor(np.random.default_rng(16).uniform(-1, 1, (1, 8)))
        mask = A.make_causal_mask(1)
        assert A.decoder_stack(t, m, mask, mask, params).shape == (1, 8)

    def test_causal_self_mask_blocks_later_targets(self):
        params = self._params()
        rng = np.random.default_rng(17)
        targets = rng.uniform(-1, 1, (3, 8))
        memory = Tensor(rng.uniform(-1, 1, (3, 8)))
        mask = A.make_causal_mask(3)
        base = A.decoder_stack(Tensor(targets), memory, mask, mask, params).data
        perturbed = targets.copy()
        perturbed[1:] += 0.5
        out = A.decoder_stack(Tensor(perturbed), memory, mask, mask, params).data
        np.testing.assert_allclose(out[0], base[0], atol=1e-12)

    def test_causal_cross_mask_blocks_later_memory(self):
        params = self._params()
        rng = np.random.default_rng(18)
        targets = Tensor(rng.uniform(-1, 1, (4, 8)))
        memory = rng.uniform(-1, 1, (4, 8))
        mask = A.make_causal_mask(4)
        base = A.decoder_stack(targets, Tensor(memory), mask, mask, params).data
        for t in range(4):
            perturbed = memory.copy()
            perturbed[t + 1 :] -= 2.0
            out = A.decoder_stack(targets, Tensor(perturbed), mask, mask, params).data
            np.testing.assert_allclose(out[: t + 1], base[: t + 1], atol=1e-9, rtol=0)


class TestCausalMask:
    def test_single_position(self):
        mask = A.make_causal_mask(1)
        assert mask.allowed.tolist() == [[True]]

    def test_allowed_count(self):
        mask = A.make_causal_mask(3)
        assert mask.allowed.sum() == 6  # n(n+1)/2

    def test_config_validation(self):
        with pytest.raises(ParameterError):
            A.AttentionConfig(d_model=7, n_heads=2)
        with pytest.raises(ParameterError):
            A.AttentionConfig(d_model=8, n_heads=0)
        with pytest.raises(ParameterError):
            A.AttentionConfig(d_model=8, n_layers=0)
        cfg = A.AttentionConfig(d_model=8, n_heads=2)
        assert cfg.d_k == 4 and cfg.d_v == 4
