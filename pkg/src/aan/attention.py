"""Attention primitives and encoder/decoder layers.

The layer geometry follows the model presets used throughout this package:
two heads, a stack depth of two by default, and a reduced position-wise
feed-forward consisting of a single linear map followed by ReLU. All layers
accept rank-2 inputs (tokens x width) or rank-3 inputs with a leading batch
axis, and preserve token count and width.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, ParameterError
from .tensor import Tensor

MASK_NEG = -1e9  # additive logit for forbidden positions; exp underflows to exactly 0


@dataclass(frozen=True)
class AttentionConfig:
    """Architecture knobs shared by every attention stack."""

    d_model: int
    n_heads: int = 2
    n_layers: int = 2
    dropout_rate: float = 0.1
    ffn_dim: int | None = None  # width of the single feed-forward map; defaults to d_model

    def __post_init__(self):
        if self.n_heads < 1:
            raise ParameterError(f"n_heads must be >= 1, got {self.n_heads}")
        if self.n_layers < 1:
            raise ParameterError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.d_model % self.n_heads != 0:
            raise ParameterError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ParameterError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.ffn_dim is not None and self.ffn_dim != self.d_model:
            # the feed-forward output re-enters a residual sum, so it must keep the width
            raise ParameterError(f"ffn_dim={self.ffn_dim} must equal d_model={self.d_model}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    @property
    def d_v(self) -> int:
        return self.d_model // self.n_heads


class AttentionMask:
    """Allow/forbid flags over (query position, key position)."""

    def __init__(self, allowed):
        arr = np.asarray(allowed, dtype=bool)
        if arr.ndim != 2:
            raise DimensionError(f"mask must be 2-D, got shape {arr.shape}")
        self.allowed = arr
        self.allowed.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.allowed.shape

    def additive_bias(self) -> Tensor:
        return Tensor(np.where(self.allowed, 0.0, MASK_NEG))

    def multiplier(self) -> Tensor:
        return Tensor(self.allowed.astype(np.float64))

    def check_has_support(self) -> None:
        if not self.allowed.any(axis=1).all():
            bad = int(np.flatnonzero(~self.allowed.any(axis=1))[0])
            raise ContractError(f"attention mask forbids every key for query position {bad}")


def make_causal_mask(n: int) -> AttentionMask:
    """Position i may attend to positions 0..i only."""
    if n < 1:
        raise ParameterError(f"causal mask size must be >= 1, got {n}")
    return AttentionMask(np.tril(np.ones((n, n), dtype=bool)))


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass
class LinearParams:
    w: Tensor
    b: Tensor


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor


@dataclass
class MHAParams:
    wq: list[LinearParams]  # one projection triple per head
    wk: list[LinearParams]
    wv: list[LinearParams]
    out: LinearParams


@dataclass
class EncoderLayerParams:
    self_attn: MHAParams
    ln_attn: LayerNormParams
    ffn: LinearParams
    ln_ffn: LayerNormParams


@dataclass
class DecoderLayerParams:
    self_attn: MHAParams
    ln_self: LayerNormParams
    cross_attn: MHAParams
    ln_cross: LayerNormParams
    ffn: LinearParams
    ln_ffn: LayerNormParams


@dataclass
class EncoderParams:
    layers: list[EncoderLayerParams] = field(default_factory=list)


@dataclass
class DecoderParams:
    layers: list[DecoderLayerParams] = field(default_factory=list)


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int) -> LinearParams:
    bound = np.sqrt(1.0 / fan_in)
    w = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)
    b = Tensor(np.zeros(fan_out), requires_grad=True)
    return LinearParams(w=w, b=b)


def init_layer_norm(d: int) -> LayerNormParams:
    return LayerNormParams(
        gain=Tensor(np.ones(d), requires_grad=True),
        bias=Tensor(np.zeros(d), requires_grad=True),
    )


def init_mha(rng: np.random.Generator, config: AttentionConfig) -> MHAParams:
    d, dk, dv, h = config.d_model, config.d_k, config.d_v, config.n_heads
    return MHAParams(
        wq=[init_linear(rng, d, dk) for _ in range(h)],
        wk=[init_linear(rng, d, dk) for _ in range(h)],
        wv=[init_linear(rng, d, dv) for _ in range(h)],
        out=init_linear(rng, h * dv, d),
    )


def init_encoder(rng: np.random.Generator, config: AttentionConfig) -> EncoderParams:
    layers = [
        EncoderLayerParams(
            self_attn=init_mha(rng, config),
            ln_attn=init_layer_norm(config.d_model),
            ffn=init_linear(rng, config.d_model, config.d_model),
            ln_ffn=init_layer_norm(config.d_model),
        )
        for _ in range(config.n_layers)
    ]
    return EncoderParams(layers=layers)


def init_decoder(rng: np.random.Generator, config: AttentionConfig) -> DecoderParams:
    layers = [
        DecoderLayerParams(
            self_attn=init_mha(rng, config),
            ln_self=init_layer_norm(config.d_model),
            cross_attn=init_mha(rng, config),
            ln_cross=init_layer_norm(config.d_model),
            ffn=init_linear(rng, config.d_model, config.d_model),
            ln_ffn=init_layer_norm(config.d_model),
        )
        for _ in range(config.n_layers)
    ]
    return DecoderParams(layers=layers)


# ---------------------------------------------------------------------------
# forward operations
# ---------------------------------------------------------------------------


def linear(x: Tensor, params: LinearParams) -> Tensor:
    return T.add(T.matmul(x, params.w), params.b)


def scaled_dot_product_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: AttentionMask | None = None,
    return_weights: bool = False,
):
    """softmax(Q K^T / sqrt(d_k)) V with optional pre-softmax masking.

    Masked entries receive an additive -1e9 logit and are multiplied to an
    exact 0 after the softmax, so forbidden positions carry no weight at all.
    """
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"attention: query width {q.shape} differs from key width {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention: key count {k.shape} differs from value count {v.shape}")
    n_q, n_k = q.shape[-2], k.shape[-2]
    if mask is not None:
        if mask.shape != (n_q, n_k):
            raise DimensionError(f"attention: mask shape {mask.shape} does not match ({n_q}, {n_k})")
        mask.check_has_support()
    d_k = q.shape[-1]
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(d_k))
    if mask is not None:
        scores = T.add(scores, mask.additive_bias())
    weights = T.softmax_rows(scores)
    if mask is not None:
        weights = T.mul(weights, mask.multiplier())
    out = T.matmul(weights, v)
    if return_weights:
        return out, weights
    return out


def multi_head_attention(
    query_seq: Tensor,
    kv_seq: Tensor,
    mask: AttentionMask | None,
    params: MHAParams,
) -> Tensor:
    """Per-head projections, scaled attention, concatenation, output map."""
    d_model = params.wq[0].w.shape[0]
    if query_seq.shape[-1] != d_model or kv_seq.shape[-1] != d_model:
        raise DimensionError(
            f"multi_head_attention: widths {query_seq.shape}/{kv_seq.shape} do not match d_model={d_model}"
        )
    heads = []
    for wq, wk, wv in zip(params.wq, params.wk, params.wv):
        q = linear(query_seq, wq)
        k = linear(kv_seq, wk)
        v = linear(kv_seq, wv)
        heads.append(scaled_dot_product_attention(q, k, v, mask))
    stacked = heads[0] if len(heads) == 1 else T.concat_last_axis(heads)
    return linear(stacked, params.out)


def positional_encoding(n_positions: int, d: int) -> Tensor:
    """Sinusoidal position table: (pos, 2k) -> sin, (pos, 2k+1) -> cos."""
    if d % 2 != 0 or d < 2:
        raise ParameterError(f"positional encoding width must be even and positive, got {d}")
    if n_positions < 1:
        raise ParameterError(f"need at least one position, got {n_positions}")
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    k = np.arange(d // 2, dtype=np.float64)[None, :]
    omega = np.power(10000.0, -2.0 * k / d)
    pe = np.empty((n_positions, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(omega * pos)
    pe[:, 1::2] = np.cos(omega * pos)
    return Tensor(pe)


def reduced_ffn(x: Tensor, params: LinearParams) -> Tensor:
    """Position-wise single linear map followed by ReLU."""
    if x.shape[-1] != params.w.shape[0]:
        raise DimensionError(f"reduced_ffn: input width {x.shape} does not match {params.w.shape}")
    return T.relu(linear(x, params))


def encoder_layer(
    x: Tensor,
    params: EncoderLayerParams,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    attn = multi_head_attention(x, x, None, params.self_attn)
    x = T.layer_norm(T.add(x, T.dropout(attn, dropout_rate, training, rng)), params.ln_attn.gain, params.ln_attn.bias)
    ffn = reduced_ffn(x, params.ffn)
    return T.layer_norm(T.add(x, T.dropout(ffn, dropout_rate, training, rng)), params.ln_ffn.gain, params.ln_ffn.bias)


def encoder_stack(
    x: Tensor,
    params: EncoderParams,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    for layer in params.layers:
        x = encoder_layer(x, layer, dropout_rate, training, rng)
    return x


def decoder_layer(
    targets: Tensor,
    memory: Tensor,
    self_mask: AttentionMask | None,
    cross_mask: AttentionMask | None,
    params: DecoderLayerParams,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    attn = multi_head_attention(targets, targets, self_mask, params.self_attn)
    t = T.layer_norm(
        T.add(targets, T.dropout(attn, dropout_rate, training, rng)),
        params.ln_self.gain,
        params.ln_self.bias,
    )
    cross = multi_head_attention(t, memory, cross_mask, params.cross_attn)
    t = T.layer_norm(
        T.add(t, T.dropout(cross, dropout_rate, training, rng)),
        params.ln_cross.gain,
        params.ln_cross.bias,
    )
    ffn = reduced_ffn(t, params.ffn)
    return T.layer_norm(
        T.add(t, T.dropout(ffn, dropout_rate, training, rng)),
        params.ln_ffn.gain,
        params.ln_ffn.bias,
    )


def decoder_stack(
    targets: Tensor,
    memory: Tensor,
    self_mask: AttentionMask | None,
    cross_mask: AttentionMask | None,
    params: DecoderParams,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    for layer in params.layers:
        targets = decoder_layer(targets, memory, self_mask, cross_mask, layer, dropout_rate, training, rng)
    return targets
