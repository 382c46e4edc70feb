"""The three affect-prediction model variants.

* Feature model: five projected modality tokens -> encoder -> mean pool ->
  dropout -> scalar head. No positional term, so the prediction is invariant
  to permutations of the post-projection tokens.
* Temporal model: per segment the five 8-wide projections are concatenated
  into a 40-wide token; the token sequence (plus positional encoding) is the
  cross-attention memory of a decoder whose masked self-attention stream
  carries the duplicated previous outputs, one step behind: target slot t
  holds the output of position t-1 and slot 0 holds the start value. With
  causal self and cross masks, the position-t prediction depends only on
  segment features at positions <= t and previous outputs at positions < t.
* Combined model: the feature encoder summarizes each segment to one 8-wide
  vector; the temporal decoder then runs over those summaries with d_model=8.

Forward functions operate on single records/windows; the batched entry
points (`feature_forward_batch`, `temporal_forward_batch`, ...) accept
stacked modality matrices and are what the training loop uses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, is_dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import attention as A
from . import tensor as T
from .attention import AttentionConfig, DecoderParams, EncoderParams, LinearParams
from .dataio import MODALITY_DIMS, MODALITY_ORDER, AffectLabel, FeatureRecord
from .errors import ContractError, FeatureSchemaError, ParameterError
from .tensor import Tensor

TOKEN_DIM = 8  # width of every projected modality token
TEMPORAL_DIM = TOKEN_DIM * len(MODALITY_ORDER)  # 40-wide concatenated segment token

__all__ = [
    "AffectLabel",
    "ModalitySpec",
    "MODALITIES",
    "ModelConfig",
    "FeatureAANParams",
    "TemporalAANParams",
    "FeatureTemporalAANParams",
    "init_feature_aan",
    "init_temporal_aan",
    "init_feature_temporal_aan",
    "project_modalities",
    "feature_aan_forward",
    "duplicate_output",
    "temporal_aan_forward",
    "autoregressive_predict",
    "feature_temporal_forward",
    "named_parameters",
    "trainable_parameters",
    "save_params",
    "load_params",
]


@dataclass(frozen=True)
class ModalitySpec:
    name: str
    input_dim: int


MODALITIES: tuple[ModalitySpec, ...] = tuple(
    ModalitySpec(name=name, input_dim=MODALITY_DIMS[name]) for name in MODALITY_ORDER
)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture preset: two heads and two layers unless overridden."""

    n_heads: int = 2
    n_layers: int = 2


@dataclass
class FeatureAANParams:
    projections: dict[str, LinearParams]
    encoder: EncoderParams
    head: LinearParams
    dropout_rate: float
    config: AttentionConfig


@dataclass
class TemporalAANParams:
    projections: dict[str, LinearParams]
    decoder: DecoderParams
    head: LinearParams
    dropout_rate: float
    config: AttentionConfig
    seq_len: int
    start_value: float = 0.0


@dataclass
class FeatureTemporalAANParams:
    projections: dict[str, LinearParams]
    encoder: EncoderParams
    decoder: DecoderParams
    head: LinearParams
    dropout_rate: float
    encoder_config: AttentionConfig
    decoder_config: AttentionConfig
    seq_len: int
    start_value: float = 0.0


def _init_projections(rng: np.random.Generator) -> dict[str, LinearParams]:
    return {spec.name: A.init_linear(rng, spec.input_dim, TOKEN_DIM) for spec in MODALITIES}


def init_feature_aan(
    rng: np.random.Generator,
    model_config: ModelConfig = ModelConfig(),
    dropout_rate: float = 0.1,
) -> FeatureAANParams:
    config = AttentionConfig(
        d_model=TOKEN_DIM,
        n_heads=model_config.n_heads,
        n_layers=model_config.n_layers,
        dropout_rate=dropout_rate,
    )
    return FeatureAANParams(
        projections=_init_projections(rng),
        encoder=A.init_encoder(rng, config),
        head=A.init_linear(rng, TOKEN_DIM, 1),
        dropout_rate=dropout_rate,
        config=config,
    )


def init_temporal_aan(
    rng: np.random.Generator,
    model_config: ModelConfig = ModelConfig(),
    dropout_rate: float = 0.5,
    seq_len: int = 5,
    start_value: float = 0.0,
) -> TemporalAANParams:
    config = AttentionConfig(
        d_model=TEMPORAL_DIM,
        n_heads=model_config.n_heads,
        n_layers=model_config.n_layers,
        dropout_rate=dropout_rate,
    )
    return TemporalAANParams(
        projections=_init_projections(rng),
        decoder=A.init_decoder(rng, config),
        head=A.init_linear(rng, TEMPORAL_DIM, 1),
        dropout_rate=dropout_rate,
        config=config,
        seq_len=seq_len,
        start_value=start_value,
    )


def init_feature_temporal_aan(
    rng: np.random.Generator,
    model_config: ModelConfig = ModelConfig(),
    dropout_rate: float = 0.5,
    seq_len: int = 5,
    start_value: float = 0.0,
) -> FeatureTemporalAANParams:
    config = AttentionConfig(
        d_model=TOKEN_DIM,
        n_heads=model_config.n_heads,
        n_layers=model_config.n_layers,
        dropout_rate=dropout_rate,
    )
    return FeatureTemporalAANParams(
        projections=_init_projections(rng),
        encoder=A.init_encoder(rng, config),
        decoder=A.init_decoder(rng, config),
        head=A.init_linear(rng, TOKEN_DIM, 1),
        dropout_rate=dropout_rate,
        encoder_config=config,
        decoder_config=config,
        seq_len=seq_len,
        start_value=start_value,
    )


# ---------------------------------------------------------------------------
# input validation and stacking
# ---------------------------------------------------------------------------


def _validate_record(record: FeatureRecord) -> None:
    if not isinstance(record, FeatureRecord):
        raise FeatureSchemaError(f"expected a FeatureRecord, got {type(record).__name__}")
    record.validate()


def stack_records(records: Sequence[FeatureRecord]) -> dict[str, np.ndarray]:
    """Stack per-modality vectors into [batch, dim] matrices."""
    for rec in records:
        _validate_record(rec)
    return {
        spec.name: np.stack([np.asarray(r.get(spec.name), dtype=np.float64) for r in records])
        for spec in MODALITIES
    }


def stack_windows(windows: Sequence[Sequence[FeatureRecord]]) -> dict[str, np.ndarray]:
    """Stack windows of records into [batch, seq_len, dim] arrays."""
    lengths = {len(w) for w in windows}
    if len(lengths) != 1:
        raise ContractError(f"all windows must share one length, got {sorted(lengths)}")
    mats = {spec.name: [] for spec in MODALITIES}
    for window in windows:
        per = stack_records(list(window))
        for name, mat in per.items():
            mats[name].append(mat)
    return {name: np.stack(rows) for name, rows in mats.items()}


# ---------------------------------------------------------------------------
# feature model
# ---------------------------------------------------------------------------


def _project_tokens(inputs: dict[str, np.ndarray], projections: dict[str, LinearParams]) -> Tensor:
    """Project each modality and stack tokens: [batch, 5, 8]."""
    tokens = []
    for spec in MODALITIES:
        x = Tensor(inputs[spec.name])
        proj = A.linear(x, projections[spec.name])  # [B, 8]
        b = proj.shape[0]
        tokens.append(T.reshape(proj, (b, 1, TOKEN_DIM)))
    return T.concat(tokens, axis=1)


def feature_head_from_tokens(
    tokens: Tensor,
    params: FeatureAANParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Encoder, mean pool, dropout, scalar head over [batch, 5, 8] tokens."""
    encoded = A.encoder_stack(tokens, params.encoder, params.dropout_rate, training, rng)
    pooled = T.mean_over_axis(encoded, axis=1)  # [B, 8]
    pooled = T.dropout(pooled, params.dropout_rate, training, rng)
    out = A.linear(pooled, params.head)  # [B, 1]
    return T.reshape(out, (out.shape[0],))


def feature_forward_batch(
    inputs: dict[str, np.ndarray],
    params: FeatureAANParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Batched feature-model forward: [batch, dim] per modality -> [batch]."""
    tokens = _project_tokens(inputs, params.projections)
    return feature_head_from_tokens(tokens, params, training, rng)


def project_modalities(record: FeatureRecord, params) -> Tensor:
    """One 8-wide token per modality, in the fixed modality order: [5, 8]."""
    _validate_record(record)
    tokens = _project_tokens(stack_records([record]), params.projections)
    return T.reshape(tokens, (len(MODALITIES), TOKEN_DIM))


def feature_aan_forward(
    record: FeatureRecord,
    params: FeatureAANParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Scalar affect prediction for one record."""
    out = feature_forward_batch(stack_records([record]), params, training, rng)
    return T.reshape(out, ())


# ---------------------------------------------------------------------------
# temporal model
# ---------------------------------------------------------------------------


def duplicate_output(y, d: int = TEMPORAL_DIM) -> Tensor:
    """Copy a scalar already-produced output into a d-wide token."""
    if d < 1:
        raise ParameterError(f"duplicate width must be positive, got {d}")
    if isinstance(y, Tensor):
        if y.data.size != 1:
            raise ContractError(f"duplicate_output expects a scalar, got shape {y.shape}")
        return T.expand_last(T.reshape(y, ()), d)
    return Tensor(np.full(d, float(y)))


def _shifted_targets(prev: np.ndarray, start_value: float) -> np.ndarray:
    """Slot t carries the output of position t-1; slot 0 carries the start value."""
    b, length = prev.shape
    return np.concatenate([np.full((b, 1), start_value), prev[:, : length - 1]], axis=1)


def _decoder_predictions(
    memory: Tensor,
    prev: np.ndarray,
    start_value: float,
    decoder: DecoderParams,
    head: LinearParams,
    d_model: int,
    dropout_rate: float,
    training: bool,
    rng: np.random.Generator | None,
) -> Tensor:
    b, length = prev.shape
    pe = A.positional_encoding(length, d_model)
    memory = T.add(memory, pe)
    shifted = Tensor(_shifted_targets(prev, start_value))
    targets = T.add(T.expand_last(shifted, d_model), pe)
    causal = A.make_causal_mask(length)
    decoded = A.decoder_stack(targets, memory, causal, causal, decoder, dropout_rate, training, rng)
    decoded = T.dropout(decoded, dropout_rate, training, rng)
    out = A.linear(decoded, head)  # [B, L, 1]
    return T.reshape(out, (b, length))


def temporal_forward_batch(
    inputs: dict[str, np.ndarray],
    prev_outputs: np.ndarray,
    params: TemporalAANParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
    start_value: float | None = None,
) -> Tensor:
    """Batched temporal forward: [batch, L, dim] inputs -> [batch, L] predictions.

    ``prev_outputs[b, t]`` is the (teacher or generated) output at position t;
    internally the decoder target stream is shifted one step so position t
    never sees it.
    """
    prev = np.asarray(prev_outputs, dtype=np.float64)
    some = inputs[MODALITIES[0].name]
    if prev.shape != some.shape[:2]:
        raise ContractError(f"prev_outputs shape {prev.shape} does not match segments {some.shape[:2]}")
    tokens = [
        A.linear(Tensor(inputs[spec.name]), params.projections[spec.name])  # [B, L, 8]
        for spec in MODALITIES
    ]
    memory = T.concat_last_axis(tokens)  # [B, L, 40]
    start = params.start_value if start_value is None else float(start_value)
    return _decoder_predictions(
        memory,
        prev,
        start,
        params.decoder,
        params.head,
        TEMPORAL_DIM,
        params.dropout_rate,
        training,
        rng,
    )


def temporal_aan_forward(
    segments: Sequence[FeatureRecord],
    prev_outputs: Sequence[float],
    params: TemporalAANParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
    start_value: float | None = None,
) -> Tensor:
    """Per-position predictions for one window of L segments: shape (L,)."""
    if len(segments) != len(prev_outputs):
        raise ContractError(
            f"got {len(segments)} segments but {len(prev_outputs)} previous outputs"
        )
    inputs = stack_windows([list(segments)])
    prev = np.asarray(prev_outputs, dtype=np.float64)[None, :]
    out = temporal_forward_batch(inputs, prev, params, training, rng, start_value)
    return T.reshape(out, (len(segments),))


def autoregressive_predict_batch(
    inputs: dict[str, np.ndarray],
    params,
    start_value: float | None = None,
    forward=None,
) -> np.ndarray:
    """Generate positions left to right, re-feeding each new output: [batch]."""
    forward = forward or temporal_forward_batch
    some = inputs[MODALITIES[0].name]
    b, length = some.shape[:2]
    prev = np.zeros((b, length))
    preds = None
    for t in range(length):
        preds = forward(inputs, prev, params, training=False, rng=None, start_value=start_value)
        prev[:, t] = preds.data[:, t]
    return np.array(preds.data[:, length - 1])


def autoregressive_predict(
    segments: Sequence[FeatureRecord],
    params: TemporalAANParams,
    start_value: float | None = None,
) -> float:
    """Last-position prediction after autoregressive generation over L steps."""
    if len(segments) != params.seq_len:
        raise ContractError(
            f"expected {params.seq_len} segments (configured sequence length), got {len(segments)}"
        )
    inputs = stack_windows([list(segments)])
    return float(autoregressive_predict_batch(inputs, params, start_value)[0])


# ---------------------------------------------------------------------------
# combined feature+temporal model
# ---------------------------------------------------------------------------


def feature_temporal_forward_batch(
    inputs: dict[str, np.ndarray],
    prev_outputs: np.ndarray,
    params: FeatureTemporalAANParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
    start_value: float | None = None,
) -> Tensor:
    """Stage 1 encodes each segment's modality tokens to one 8-wide summary;
    stage 2 runs the temporal decoder over the summaries with d_model=8."""
    prev = np.asarray(prev_outputs, dtype=np.float64)
    some = inputs[MODALITIES[0].name]
    b, length = some.shape[:2]
    if prev.shape != (b, length):
        raise ContractError(f"prev_outputs shape {prev.shape} does not match segments {(b, length)}")
    flat = {name: mat.reshape(b * length, mat.shape[-1]) for name, mat in inputs.items()}
    tokens = _project_tokens(flat, params.projections)  # [B*L, 5, 8]
    encoded = A.encoder_stack(tokens, params.encoder, params.dropout_rate, training, rng)
    summaries = T.mean_over_axis(encoded, axis=1)  # [B*L, 8]
    memory = T.reshape(summaries, (b, length, TOKEN_DIM))
    start = params.start_value if start_value is None else float(start_value)
    return _decoder_predictions(
        memory,
        prev,
        start,
        params.decoder,
        params.head,
        TOKEN_DIM,
        params.dropout_rate,
        training,
        rng,
    )


def feature_temporal_forward(
    segments: Sequence[FeatureRecord],
    prev_outputs: Sequence[float],
    params: FeatureTemporalAANParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
    start_value: float | None = None,
) -> Tensor:
    if len(segments) != len(prev_outputs):
        raise ContractError(
            f"got {len(segments)} segments but {len(prev_outputs)} previous outputs"
        )
    inputs = stack_windows([list(segments)])
    prev = np.asarray(prev_outputs, dtype=np.float64)[None, :]
    out = feature_temporal_forward_batch(inputs, prev, params, training, rng, start_value)
    return T.reshape(out, (len(segments),))


# ---------------------------------------------------------------------------
# parameter trees
# ---------------------------------------------------------------------------


def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Walk a params tree, yielding (dotted name, tensor) pairs in a stable order."""
    if isinstance(obj, Tensor):
        yield prefix or "param", obj
    elif is_dataclass(obj) and not isinstance(obj, type):
        for f in fields(obj):
            child = getattr(obj, f.name)
            sub = f"{prefix}.{f.name}" if prefix else f.name
            yield from named_parameters(child, sub)
    elif isinstance(obj, dict):
        for key, child in obj.items():
            yield from named_parameters(child, f"{prefix}.{key}" if prefix else str(key))
    elif isinstance(obj, (list, tuple)):
        for i, child in enumerate(obj):
            yield from named_parameters(child, f"{prefix}.{i}" if prefix else str(i))
    # scalars/strings/configs carry no tensors


def trainable_parameters(params) -> list[Tensor]:
    return [t for _, t in named_parameters(params) if t.requires_grad]


_MODEL_KINDS = ("feature", "temporal", "feature_temporal")


def init_model(
    kind: str,
    rng: np.random.Generator,
    model_config: ModelConfig = ModelConfig(),
    dropout_rate: float | None = None,
    seq_len: int = 5,
    start_value: float = 0.0,
):
    if kind == "feature":
        return init_feature_aan(rng, model_config, 0.1 if dropout_rate is None else dropout_rate)
    if kind == "temporal":
        return init_temporal_aan(
            rng, model_config, 0.5 if dropout_rate is None else dropout_rate, seq_len, start_value
        )
    if kind == "feature_temporal":
        return init_feature_temporal_aan(
            rng, model_config, 0.5 if dropout_rate is None else dropout_rate, seq_len, start_value
        )
    raise ParameterError(f"unknown model kind {kind!r}; expected one of {_MODEL_KINDS}")


def save_params(path: str | Path, kind: str, params, extra: dict | None = None) -> None:
    if kind not in _MODEL_KINDS:
        raise ParameterError(f"unknown model kind {kind!r}")
    config = params.config if hasattr(params, "config") else params.decoder_config
    meta = {
        "kind": kind,
        "n_heads": config.n_heads,
        "n_layers": config.n_layers,
        "dropout_rate": params.dropout_rate,
        "seq_len": getattr(params, "seq_len", None),
        "start_value": getattr(params, "start_value", None),
    }
    if extra:
        meta.update(extra)
    arrays = {name: np.asarray(t.data) for name, t in named_parameters(params)}
    np.savez(Path(path), __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def read_params_meta(path: str | Path) -> dict:
    with np.load(Path(path)) as data:
        return json.loads(bytes(data["__meta__"]).decode())


def load_params(path: str | Path):
    """Rebuild a params tree from a saved file; returns (kind, params)."""
    with np.load(Path(path)) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        arrays = {name: data[name] for name in data.files if name != "__meta__"}
    kind = meta["kind"]
    params = init_model(
        kind,
        np.random.default_rng(0),
        ModelConfig(n_heads=meta["n_heads"], n_layers=meta["n_layers"]),
        dropout_rate=meta["dropout_rate"],
        seq_len=meta["seq_len"] or 5,
        start_value=meta["start_value"] or 0.0,
    )
    named = dict(named_parameters(params))
    if set(named) != set(arrays):
        raise ContractError(f"{path}: parameter names do not match the {kind!r} architecture")
    for name, tensor in named.items():
        tensor.assign(arrays[name])
    return kind, params
