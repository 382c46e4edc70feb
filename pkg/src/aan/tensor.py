"""Dense float64 tensor engine with tape-based reverse-mode differentiation.

Tensors are immutable values: the underlying buffer is marked read-only at
creation and never mutated. Parameters are updated between training steps by
swapping the buffer with :meth:`Tensor.assign`. While a :class:`Tape` is
active, operations on tensors that require gradients append nodes to it in
execution order (inputs always precede consumers); :func:`backward` replays
the nodes once, in reverse, and accumulates gradients on the leaf tensors.

Only the shapes the models need are supported: rank 0 to 3, with a leading
batch axis on rank-3 activations. Broadcasting is limited to suffix
alignment (a trailing-shape operand against a larger one) plus scalars.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError, ParameterError

Array = np.ndarray

_TAPE_STACK: list["Tape"] = []


class Tensor:
    """A dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "tape")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.array(values, dtype=np.float64)
        arr.setflags(write=False)
        self.data: Array = arr
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> Array:
        return self.data

    def assign(self, values) -> None:
        """Replace the buffer (for parameter updates between steps)."""
        arr = np.array(values, dtype=np.float64)
        if arr.shape != self.data.shape:
            raise DimensionError(f"assign: shape {arr.shape} does not match {self.data.shape}")
        arr.setflags(write=False)
        self.data = arr

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class TapeNode:
    __slots__ = ("inputs", "output", "rule")

    def __init__(self, inputs: tuple[Tensor, ...], output: Tensor, rule: Callable):
        self.inputs = inputs
        self.output = output
        # rule(upstream_grad, needs) -> per-input gradient arrays (None where skipped)
        self.rule = rule


class Tape:
    """Ordered record of primitive operations for one backward pass.

    Use as a context manager around the forward computation; nodes are
    appended in execution order, so every node's inputs precede it.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"

    def backward(self, loss: Tensor) -> None:
        """Populate grad on every requires_grad leaf reachable from loss."""
        if loss.shape != ():
            raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
        pending: dict[int, Array] = {id(loss): np.ones((), dtype=np.float64)}
        for node in reversed(self.nodes):
            g = pending.pop(id(node.output), None)
            if g is None:
                continue
            needs = tuple(t.requires_grad for t in node.inputs)
            input_grads = node.rule(g, needs)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor.tape is self:
                    key = id(tensor)
                    held = pending.get(key)
                    pending[key] = grad if held is None else held + grad
                else:
                    tensor.grad = grad if tensor.grad is None else tensor.grad + grad


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(loss: Tensor) -> None:
    """Run the backward pass of the tape that recorded ``loss``."""
    if loss.shape != ():
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss.tape is None:
        raise ContractError("loss was not recorded on a tape (no gradient path)")
    loss.tape.backward(loss)


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def _wrap(value: Array, inputs: tuple[Tensor, ...], rule: Callable) -> Tensor:
    """Build the output tensor and record a node when gradients are needed."""
    value = np.asarray(value, dtype=np.float64)
    value.setflags(write=False)
    out = Tensor.__new__(Tensor)
    out.data = value
    out.grad = None
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.tape = tape
        tape.nodes.append(TapeNode(inputs, out, rule))
    else:
        out.requires_grad = False
        out.tape = None
    return out


def _reduce_to(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum the leading axes of g away so it matches a suffix-broadcast shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return g


def _check_suffix_compatible(op: str, a: Array, b: Array) -> None:
    small, big = (a, b) if a.ndim <= b.ndim else (b, a)
    if small.shape != big.shape[big.ndim - small.ndim:]:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not suffix-compatible")


# ---------------------------------------------------------------------------
# elementwise and affine primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.data, b.data
    _check_suffix_compatible("add", av, bv)
    value = av + bv

    def rule(g, needs):
        da = _reduce_to(g, av.shape) if needs[0] else None
        db = _reduce_to(g, bv.shape) if needs[1] else None
        return da, db

    return _wrap(value, (a, b), rule)


def sub(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.data, b.data
    _check_suffix_compatible("sub", av, bv)
    value = av - bv

    def rule(g, needs):
        da = _reduce_to(g, av.shape) if needs[0] else None
        db = -_reduce_to(g, bv.shape) if needs[1] else None
        return da, db

    return _wrap(value, (a, b), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.data, b.data
    _check_suffix_compatible("mul", av, bv)
    value = av * bv

    def rule(g, needs):
        da = _reduce_to(g * bv, av.shape) if needs[0] else None
        db = _reduce_to(g * av, bv.shape) if needs[1] else None
        return da, db

    return _wrap(value, (a, b), rule)


def div(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.data, b.data
    _check_suffix_compatible("div", av, bv)
    value = av / bv

    def rule(g, needs):
        da = _reduce_to(g / bv, av.shape) if needs[0] else None
        db = _reduce_to(-g * av / (bv * bv), bv.shape) if needs[1] else None
        return da, db

    return _wrap(value, (a, b), rule)


def scale(x: Tensor, factor: float) -> Tensor:
    xv = x.data
    factor = float(factor)
    return _wrap(xv * factor, (x,), lambda g, needs: (g * factor if needs[0] else None,))


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def relu(x: Tensor) -> Tensor:
    xv = x.data
    value = np.maximum(xv, 0.0)

    def rule(g, needs):
        return (g * (xv > 0.0) if needs[0] else None,)

    return _wrap(value, (x,), rule)


def sqrt(x: Tensor) -> Tensor:
    xv = x.data
    if np.any(xv < 0.0):
        raise NumericError("sqrt: negative input")
    value = np.sqrt(xv)

    def rule(g, needs):
        return (g * 0.5 / np.sqrt(xv) if needs[0] else None,)

    return _wrap(value, (x,), rule)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.data, b.data
    if av.ndim == 2 and bv.ndim == 2:
        if av.shape[1] != bv.shape[0]:
            raise DimensionError(f"matmul: inner dimensions disagree for {av.shape} x {bv.shape}")

        def rule(g, needs):
            da = g @ bv.T if needs[0] else None
            db = av.T @ g if needs[1] else None
            return da, db

    elif av.ndim == 3 and bv.ndim == 2:
        if av.shape[2] != bv.shape[0]:
            raise DimensionError(f"matmul: inner dimensions disagree for {av.shape} x {bv.shape}")

        def rule(g, needs):
            da = g @ bv.T if needs[0] else None
            db = np.tensordot(av, g, axes=([0, 1], [0, 1])) if needs[1] else None
            return da, db

    elif av.ndim == 3 and bv.ndim == 3:
        if av.shape[0] != bv.shape[0] or av.shape[2] != bv.shape[1]:
            raise DimensionError(f"matmul: dimensions disagree for {av.shape} x {bv.shape}")

        def rule(g, needs):
            da = g @ bv.transpose(0, 2, 1) if needs[0] else None
            db = av.transpose(0, 2, 1) @ g if needs[1] else None
            return da, db

    else:
        raise DimensionError(f"matmul: unsupported ranks for {av.shape} x {bv.shape}")
    return _wrap(av @ bv, (a, b), rule)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    xv = x.data
    if xv.ndim == 2:
        value = xv.T
        axes = (1, 0)
    elif xv.ndim == 3:
        axes = (0, 2, 1)
        value = xv.transpose(axes)
    else:
        raise DimensionError(f"transpose: rank-{xv.ndim} tensor unsupported")

    def rule(g, needs):
        return (g.transpose(axes) if needs[0] else None,)

    return _wrap(value, (x,), rule)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    xv = x.data
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != xv.size:
        raise DimensionError(f"reshape: cannot view {xv.shape} as {shape}")

    def rule(g, needs):
        return (g.reshape(xv.shape) if needs[0] else None,)

    return _wrap(xv.reshape(shape), (x,), rule)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ContractError("concat: need at least one tensor")
    values = [t.data for t in tensors]
    ndim = values[0].ndim
    axis = axis % ndim if ndim else 0
    for v in values[1:]:
        if v.ndim != ndim:
            raise DimensionError(f"concat: mixed ranks {values[0].shape} vs {v.shape}")
        for ax in range(ndim):
            if ax != axis and v.shape[ax] != values[0].shape[ax]:
                raise DimensionError(f"concat: shapes {values[0].shape} and {v.shape} differ off-axis")
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)

    def rule(g, needs):
        grads = []
        for i in range(len(values)):
            if needs[i]:
                index = [slice(None)] * ndim
                index[axis] = slice(offsets[i], offsets[i + 1])
                grads.append(g[tuple(index)])
            else:
                grads.append(None)
        return tuple(grads)

    return _wrap(np.concatenate(values, axis=axis), tuple(tensors), rule)


def concat_last_axis(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=-1)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    xv = x.data
    axis = axis % xv.ndim
    if not (0 <= start < stop <= xv.shape[axis]):
        raise DimensionError(f"slice_axis: [{start}:{stop}] out of bounds for axis {axis} of {xv.shape}")
    index = [slice(None)] * xv.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def rule(g, needs):
        if not needs[0]:
            return (None,)
        full = np.zeros(xv.shape, dtype=np.float64)
        full[index] = g
        return (full,)

    return _wrap(xv[index], (x,), rule)


def expand_last(x: Tensor, n: int) -> Tensor:
    """Append an axis of length n holding n copies of each element."""
    if n < 1:
        raise ParameterError(f"expand_last: n must be positive, got {n}")
    xv = x.data
    value = np.repeat(xv[..., None], n, axis=-1)

    def rule(g, needs):
        return (g.sum(axis=-1) if needs[0] else None,)

    return _wrap(value, (x,), rule)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum_all(x: Tensor) -> Tensor:
    xv = x.data

    def rule(g, needs):
        return (np.full(xv.shape, float(g)) if needs[0] else None,)

    return _wrap(np.asarray(xv.sum()), (x,), rule)


def mean_over_axis(x: Tensor, axis: int) -> Tensor:
    xv = x.data
    axis = axis % xv.ndim
    n = xv.shape[axis]

    def rule(g, needs):
        if not needs[0]:
            return (None,)
        return (np.broadcast_to(np.expand_dims(g, axis), xv.shape) / n,)

    return _wrap(xv.mean(axis=axis), (x,), rule)


# ---------------------------------------------------------------------------
# nonlinear layers
# ---------------------------------------------------------------------------


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis, stabilized by max subtraction."""
    xv = x.data
    if not np.all(np.isfinite(xv)):
        raise NumericError("softmax_rows: input contains NaN or Inf")
    shifted = xv - xv.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def rule(g, needs):
        if not needs[0]:
            return (None,)
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _wrap(s, (x,), rule)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each last-axis vector to mean 0 / variance 1, then affine."""
    xv, gv, bv = x.data, gain.data, bias.data
    d = xv.shape[-1]
    if d < 2:
        raise DimensionError(f"layer_norm: last axis must have length >= 2, got {d}")
    if gv.shape != (d,) or bv.shape != (d,):
        raise DimensionError(f"layer_norm: gain/bias shapes {gv.shape}/{bv.shape} do not match width {d}")
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    value = xhat * gv + bv

    def rule(g, needs):
        dx = dgain = dbias = None
        if needs[0]:
            dxhat = g * gv
            dx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        if needs[1]:
            dgain = (g * xhat).reshape(-1, d).sum(axis=0)
        if needs[2]:
            dbias = g.reshape(-1, d).sum(axis=0)
        return dx, dgain, dbias

    return _wrap(value, (x, gain, bias), rule)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Zero elements independently with probability rate, rescaling survivors.

    Identity in evaluation mode. The generator must be supplied in training
    mode so runs are reproducible.
    """
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout: training mode requires an explicit random generator")
    xv = x.data
    mask = (rng.random(xv.shape) >= rate) / (1.0 - rate)

    def rule(g, needs):
        return (g * mask if needs[0] else None,)

    return _wrap(xv * mask, (x,), rule)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


class GradCheckEntry:
    __slots__ = ("name", "max_rel_error", "n_checked")

    def __init__(self, name: str, max_rel_error: float, n_checked: int):
        self.name = name
        self.max_rel_error = max_rel_error
        self.n_checked = n_checked


class GradCheckReport:
    """Per-tensor relative errors between autodiff and central differences."""

    def __init__(self, entries: list[GradCheckEntry], tol: float):
        self.entries = entries
        self.tol = tol

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def __repr__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"GradCheckReport({status}, max_rel_error={self.max_rel_error:.3e}, tol={self.tol:g})"


def grad_check(
    f: Callable[..., Tensor],
    xs: Tensor | Sequence[Tensor],
    step: float = 1e-5,
    tol: float = 1e-4,
    max_elements: int | None = None,
    rng: np.random.Generator | None = None,
    names: Sequence[str] | None = None,
) -> GradCheckReport:
    """Compare autodiff gradients of a scalar function against central differences.

    ``f`` must be deterministic and re-runnable: it is evaluated once under a
    tape and then twice per checked element with perturbed inputs. When
    ``max_elements`` is given, at most that many elements per tensor are
    probed (sampled with ``rng``), which keeps whole-model checks fast.
    """
    tensors = [xs] if isinstance(xs, Tensor) else list(xs)
    for t in tensors:
        t.grad = None
    with Tape():
        out = f(*tensors)
        if out.shape != ():
            raise ContractError(f"grad_check: function must return a scalar, got shape {out.shape}")
        backward(out)
    analytic = [np.zeros(t.shape) if t.grad is None else np.array(t.grad) for t in tensors]
    for t in tensors:
        t.grad = None

    sampler = rng or np.random.default_rng(0)
    entries = []
    for i, t in enumerate(tensors):
        base = np.array(t.data)
        size = base.size
        if max_elements is not None and size > max_elements:
            idx = np.sort(sampler.choice(size, size=max_elements, replace=False))
        else:
            idx = np.arange(size)
        max_rel = 0.0
        try:
            for fi in idx:
                plus = base.copy()
                plus.flat[fi] += step
                t.assign(plus)
                fp = f(*tensors).item()
                minus = base.copy()
                minus.flat[fi] -= step
                t.assign(minus)
                fm = f(*tensors).item()
                fd = (fp - fm) / (2.0 * step)
                ad = float(analytic[i].flat[fi])
                rel = abs(ad - fd) / max(abs(ad), abs(fd), 1e-6)
                max_rel = max(max_rel, rel)
        finally:
            t.assign(base)
        name = names[i] if names is not None else f"x{i}"
        entries.append(GradCheckEntry(name, max_rel, len(idx)))
    return GradCheckReport(entries, tol)
