"""Loss, optimizer, early stopping, and per-dataset hyperparameter presets.

The training objective is MSE plus one minus the Pearson correlation between
predictions and targets, computed per mini-batch. Temporal models are
teacher-forced (the target stream carries ground-truth history) and their
loss uses only the last position of each window. Early stopping monitors the
validation loss and restores the parameters of the best epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import models as M
from . import tensor as T
from .dataio import FeatureRecord
from .errors import ContractError, ParameterError, TrainingError
from .tensor import Tape, Tensor, backward

VARIANCE_FLOOR = 1e-12  # below this, the correlation is defined as 0


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    max_epochs: int
    dropout_rate: float
    batch_size: int
    patience: int = 30
    seq_len: int | None = None
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 2:
            raise ParameterError(f"batch_size must be >= 2 (batch PCC needs it), got {self.batch_size}")
        if self.patience < 1:
            raise ParameterError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ParameterError(f"max_epochs must be >= 1, got {self.max_epochs}")


def get_preset(name: str, target: str = "arousal") -> TrainConfig:
    """Named hyperparameter bundles; EIMT16 batch size depends on the target."""
    if target not in ("arousal", "valence"):
        raise ParameterError(f"target must be 'arousal' or 'valence', got {target!r}")
    eimt_batch = 40 if target == "arousal" else 20
    presets = {
        "cognimuse_feature": TrainConfig(
            learning_rate=0.0005, max_epochs=500, dropout_rate=0.1, batch_size=30
        ),
        "cognimuse_temporal": TrainConfig(
            learning_rate=0.001, max_epochs=1000, dropout_rate=0.5, batch_size=30, seq_len=5
        ),
        "eimt16_feature": TrainConfig(
            learning_rate=0.01, max_epochs=500, dropout_rate=0.1, batch_size=eimt_batch
        ),
        "eimt16_temporal": TrainConfig(
            learning_rate=0.01, max_epochs=1000, dropout_rate=0.5, batch_size=eimt_batch, seq_len=4
        ),
    }
    if name not in presets:
        raise ParameterError(f"unknown preset {name!r}; expected one of {sorted(presets)}")
    return presets[name]


PRESET_NAMES = ("cognimuse_feature", "cognimuse_temporal", "eimt16_feature", "eimt16_temporal")


# ---------------------------------------------------------------------------
# metrics and loss
# ---------------------------------------------------------------------------


def pcc(x, y) -> float:
    """Sample Pearson correlation; 0 when either side is (near-)constant."""
    xv = np.asarray(x, dtype=np.float64).ravel()
    yv = np.asarray(y, dtype=np.float64).ravel()
    if xv.size != yv.size:
        raise ContractError(f"pcc: length mismatch {xv.size} vs {yv.size}")
    if xv.size < 2:
        raise ContractError(f"pcc: need at least 2 values, got {xv.size}")
    xc = xv - xv.mean()
    yc = yv - yv.mean()
    if float(np.mean(xc * xc)) < VARIANCE_FLOOR or float(np.mean(yc * yc)) < VARIANCE_FLOOR:
        return 0.0
    return float(np.sum(xc * yc) / np.sqrt(np.sum(xc * xc) * np.sum(yc * yc)))


def mse(x, y) -> float:
    xv = np.asarray(x, dtype=np.float64).ravel()
    yv = np.asarray(y, dtype=np.float64).ravel()
    if xv.size != yv.size:
        raise ContractError(f"mse: length mismatch {xv.size} vs {yv.size}")
    return float(np.mean((xv - yv) ** 2))


@dataclass
class LossReport:
    """Differentiable loss terms: total = mse + (1 - pcc)."""

    mse: Tensor
    pcc: Tensor
    total: Tensor

    @property
    def mse_value(self) -> float:
        return self.mse.item()

    @property
    def pcc_value(self) -> float:
        return self.pcc.item()

    @property
    def total_value(self) -> float:
        return self.total.item()


def loss(pred: Tensor, target) -> LossReport:
    """Mean squared error plus (1 - Pearson correlation), differentiable in pred.

    A (near-)constant prediction or target vector has an undefined
    correlation; it is defined as 0 here so the loss degrades to MSE + 1
    instead of producing NaN gradients.
    """
    tv = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.ndim != 1:
        raise ContractError(f"loss expects a prediction vector, got shape {pred.shape}")
    n = pred.shape[0]
    if tv.shape != (n,):
        raise ContractError(f"loss: prediction length {n} != target length {tv.shape}")
    if n < 2:
        raise ContractError(f"loss: need at least 2 elements, got {n}")
    t_const = Tensor(tv)

    diff = T.sub(pred, t_const)
    mse_term = T.mean_over_axis(T.mul(diff, diff), axis=0)

    pv = np.asarray(pred.data)
    var_p = float(np.mean((pv - pv.mean()) ** 2))
    var_t = float(np.mean((tv - tv.mean()) ** 2))
    if var_p < VARIANCE_FLOOR or var_t < VARIANCE_FLOOR:
        rho = Tensor(0.0)
    else:
        p_centered = T.sub(pred, T.mean_over_axis(pred, axis=0))
        t_centered = tv - tv.mean()
        num = T.sum_all(T.mul(p_centered, Tensor(t_centered)))
        den = T.mul(
            T.sqrt(T.sum_all(T.mul(p_centered, p_centered))),
            T.sqrt(Tensor(np.sum(t_centered * t_centered))),
        )
        rho = T.div(num, den)
    total = T.add(mse_term, T.sub(Tensor(1.0), rho))
    return LossReport(mse=mse_term, pcc=rho, total=total)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0


def init_adam(params: Sequence[Tensor]) -> AdamState:
    return AdamState(
        m=[np.zeros(p.shape) for p in params],
        v=[np.zeros(p.shape) for p in params],
    )


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray] | None,
    state: AdamState,
    config: TrainConfig,
) -> tuple[Sequence[Tensor], AdamState]:
    """One bias-corrected Adam update; parameters are updated in place."""
    if grads is None:
        grads = [np.zeros(p.shape) if p.grad is None else p.grad for p in params]
    if len(grads) != len(params) or len(state.m) != len(params):
        raise ContractError(
            f"adam_step: got {len(params)} params, {len(grads)} grads, {len(state.m)} moment buffers"
        )
    b1, b2, eps, lr = config.adam_beta1, config.adam_beta2, config.adam_eps, config.learning_rate
    state.t += 1
    correct1 = 1.0 - b1**state.t
    correct2 = 1.0 - b2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ContractError(f"adam_step: grad shape {g.shape} != param shape {p.shape}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / correct1
        v_hat = state.v[i] / correct2
        p.assign(p.data - lr * m_hat / (np.sqrt(v_hat) + eps))
    return params, state


# ---------------------------------------------------------------------------
# training examples
# ---------------------------------------------------------------------------


@dataclass
class FeatureExample:
    record: FeatureRecord
    target: float


@dataclass
class SequenceExample:
    """One chronological window; the training target is the last position."""

    records: list[FeatureRecord]
    targets: list[float]

    def __post_init__(self):
        if len(self.records) != len(self.targets):
            raise ContractError(
                f"window has {len(self.records)} records but {len(self.targets)} targets"
            )


@dataclass
class EpochLog:
    epoch: int
    train_mse: float
    train_pcc: float
    train_loss: float
    val_mse: float
    val_pcc: float
    val_loss: float

    def csv_row(self) -> str:
        return (
            f"{self.epoch},{self.train_mse:.10g},{self.train_pcc:.10g},{self.train_loss:.10g},"
            f"{self.val_mse:.10g},{self.val_pcc:.10g},{self.val_loss:.10g}"
        )


TRAINING_LOG_HEADER = "epoch,train_mse,train_pcc,train_loss,val_mse,val_pcc,val_loss"


def format_training_log(log: Sequence[EpochLog]) -> str:
    return "\n".join([TRAINING_LOG_HEADER] + [row.csv_row() for row in log]) + "\n"


@dataclass
class FitResult:
    params: object
    log: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")


def split_train_val(examples: Sequence, fraction: float, rng: np.random.Generator):
    """Hold out a seeded random fraction (at least 2 examples) for validation."""
    n = len(examples)
    n_val = max(2, int(round(fraction * n)))
    if n - n_val < 2:
        raise ContractError(f"too few examples ({n}) to split off a validation set")
    order = rng.permutation(n)
    val_idx = set(order[:n_val].tolist())
    train = [examples[i] for i in range(n) if i not in val_idx]
    val = [examples[i] for i in range(n) if i in val_idx]
    return train, val


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


class _FeatureTask:
    def __init__(self, examples: Sequence[FeatureExample]):
        self.inputs = M.stack_records([ex.record for ex in examples])
        self.targets = np.array([ex.target for ex in examples], dtype=np.float64)
        self.n = len(examples)

    def slice(self, idx: np.ndarray):
        return {k: v[idx] for k, v in self.inputs.items()}, self.targets[idx]

    @staticmethod
    def forward(inputs, params, training, rng):
        return M.feature_forward_batch(inputs, params, training, rng)


class _SequenceTask:
    def __init__(self, examples: Sequence[SequenceExample], forward):
        self.inputs = M.stack_windows([ex.records for ex in examples])
        self.history = np.array([ex.targets for ex in examples], dtype=np.float64)
        self.targets = self.history[:, -1].copy()
        self.n = len(examples)
        self._forward = forward

    def slice(self, idx: np.ndarray):
        return (
            {k: v[idx] for k, v in self.inputs.items()},
            self.history[idx],
        ), self.targets[idx]

    def forward(self, inputs, params, training, rng):
        mats, history = inputs
        preds = self._forward(mats, history, params, training, rng)
        length = preds.shape[1]
        last = T.slice_axis(preds, axis=1, start=length - 1, stop=length)
        return T.reshape(last, (last.shape[0],))


def _make_task(model_kind: str, examples):
    if model_kind == "feature":
        return _FeatureTask(examples)
    if model_kind == "temporal":
        return _SequenceTask(examples, M.temporal_forward_batch)
    if model_kind == "feature_temporal":
        return _SequenceTask(examples, M.feature_temporal_forward_batch)
    raise ParameterError(f"unknown model kind {model_kind!r}")


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    start = 0
    slices = []
    while start < n:
        stop = min(start + batch_size, n)
        slices.append(order[start:stop])
        start = stop
    # a lone trailing example cannot produce a batch correlation; fold it back
    if len(slices) > 1 and len(slices[-1]) < 2:
        slices[-2] = np.concatenate([slices[-2], slices[-1]])
        slices.pop()
    return slices


def _snapshot(params) -> dict[str, np.ndarray]:
    return {name: np.array(t.data) for name, t in M.named_parameters(params)}


def _restore(params, snapshot: dict[str, np.ndarray]) -> None:
    for name, t in M.named_parameters(params):
        t.assign(snapshot[name])


def fit(
    model_kind: str,
    train_set: Sequence,
    val_set: Sequence | None,
    config: TrainConfig,
    model_config: M.ModelConfig = M.ModelConfig(),
    params=None,
) -> FitResult:
    """Mini-batch training with early stopping on the validation loss.

    When ``val_set`` is None a seeded ``val_fraction`` split of ``train_set``
    is held out. Temporal models are teacher-forced and compute the loss on
    the last position of each window only. Returns the parameters of the
    best validation epoch together with the full epoch log.
    """
    rng = np.random.default_rng(config.seed)
    if val_set is None:
        train_set, val_set = split_train_val(list(train_set), config.val_fraction, rng)
    if not len(val_set):
        raise ContractError("fit: validation set must be nonempty")
    train_task = _make_task(model_kind, train_set)
    val_task = _make_task(model_kind, val_set)

    if params is None:
        start_value = float(np.mean(train_task.targets))
        params = M.init_model(
            model_kind,
            rng,
            model_config,
            dropout_rate=config.dropout_rate,
            seq_len=config.seq_len or 5,
            start_value=start_value,
        )
    weights = M.trainable_parameters(params)
    state = init_adam(weights)

    result = FitResult(params=params)
    best: dict[str, np.ndarray] | None = None
    for epoch in range(1, config.max_epochs + 1):
        epoch_preds: list[np.ndarray] = []
        epoch_targets: list[np.ndarray] = []
        for idx in _batches(train_task.n, config.batch_size, rng):
            inputs, targets = train_task.slice(idx)
            T.zero_grads(weights)
            with Tape():
                preds = train_task.forward(inputs, params, True, rng)
                report = loss(preds, targets)
                backward(report.total)
            if not np.isfinite(report.total_value):
                raise TrainingError(f"training loss diverged at epoch {epoch}", epoch=epoch)
            adam_step(weights, None, state, config)
            epoch_preds.append(np.asarray(preds.data))
            epoch_targets.append(targets)

        train_p = np.concatenate(epoch_preds)
        train_t = np.concatenate(epoch_targets)
        train_mse = mse(train_p, train_t)
        train_pcc = pcc(train_p, train_t)
        val_inputs, val_targets = val_task.slice(np.arange(val_task.n))
        val_preds = np.asarray(val_task.forward(val_inputs, params, False, None).data)
        val_mse = mse(val_preds, val_targets)
        val_pcc = pcc(val_preds, val_targets)
        val_loss = val_mse + (1.0 - val_pcc)
        if not np.isfinite(val_loss):
            raise TrainingError(f"validation loss diverged at epoch {epoch}", epoch=epoch)
        result.log.append(
            EpochLog(
                epoch=epoch,
                train_mse=train_mse,
                train_pcc=train_pcc,
                train_loss=train_mse + (1.0 - train_pcc),
                val_mse=val_mse,
                val_pcc=val_pcc,
                val_loss=val_loss,
            )
        )
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best = _snapshot(params)
        elif epoch - result.best_epoch >= config.patience:
            break
    if best is not None:
        _restore(params, best)
    result.params = params
    return result
