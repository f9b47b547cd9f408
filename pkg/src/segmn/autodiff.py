"""A small reverse-mode autodiff engine over dense float64 numpy arrays.

Operations applied while a :class:`Tape` is active are recorded on it;
``tape.backward(loss)`` walks the records once in reverse and accumulates
``.grad`` on every tensor with ``requires_grad``. Outside a tape the same
functions just compute values, which is what evaluation uses.

All primitives broadcast like numpy (``matmul`` batches over leading axes).
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


_ACTIVE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("segmn_tape", default=None)
_ids = iter(range(1, 1 << 62))


class Tensor:
    __slots__ = ("values", "requires_grad", "grad", "node_id", "tape")
    __array_priority__ = 100

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node_id = next(_ids)
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.values)

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return hadamard(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    records: list[_Record] = field(default_factory=list)
    consumed: bool = False
    _token: contextvars.Token | None = field(default=None, repr=False)

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.reset(self._token)
        self._token = None

    def backward(self, loss: Tensor) -> None:
        backward(loss)


def active_tape() -> Tape | None:
    return _ACTIVE.get()


def _record(op: str, inputs: Sequence[Tensor], out_values: np.ndarray, bwd) -> Tensor:
    out = Tensor(out_values)
    tape = _ACTIVE.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        if tape.consumed:
            raise TapeError("tape already consumed by backward; start a new Tape")
        out.requires_grad = True
        out.tape = tape
        tape.records.append(_Record(op, tuple(inputs), out, bwd))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every requires_grad tensor that ``loss`` depends on."""
    if loss.values.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss.tape
    if tape is None:
        raise TapeError("loss was not recorded on a tape")
    if tape.consumed:
        raise TapeError("backward already ran on this tape")
    tape.consumed = True
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.values)}
    for rec in reversed(tape.records):
        g = grads.pop(rec.output.node_id, None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.tape is tape:
                prev = grads.get(inp.node_id)
                grads[inp.node_id] = gi if prev is None else prev + gi
            else:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------------
# primitives


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.values, b.values
    if bv.ndim == 2 and av.ndim > 2:
        # stacked @ weight: one flat GEMM instead of a loop over the stack
        a2 = av.reshape(-1, av.shape[-1])
        out = (a2 @ bv).reshape(av.shape[:-1] + (bv.shape[1],))

        def bwd(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bv.T).reshape(av.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _record("matmul", (a, b), out, bwd)
    try:
        out = np.matmul(av, bv)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape) if b.requires_grad else None
        return ga, gb

    return _record("matmul", (a, b), out, bwd)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _record("add", (a, b), a.values + b.values, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _record("sub", (a, b), a.values - b.values, lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _record("scale", (a,), a.values * c, lambda g: (g * c,))


def hadamard(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("hadamard", a, b)
    av, bv = a.values, b.values

    def bwd(g):
        return (
            _unbroadcast(g * bv, av.shape) if a.requires_grad else None,
            _unbroadcast(g * av, bv.shape) if b.requires_grad else None,
        )

    return _record("hadamard", (a, b), av * bv, bwd)


def concat_cols(*xs) -> Tensor:
    """Concatenate along the last axis."""
    xs = tuple(as_tensor(x) for x in xs)
    lead = {x.shape[:-1] for x in xs}
    if len(lead) != 1:
        raise ShapeError(f"concat_cols: incompatible shapes {' and '.join(str(x.shape) for x in xs)}")
    widths = np.cumsum([0] + [x.shape[-1] for x in xs])

    def bwd(g):
        return [g[..., widths[k]:widths[k + 1]] for k in range(len(xs))]

    return _record("concat_cols", xs, np.concatenate([x.values for x in xs], axis=-1), bwd)


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError(f"transpose: need at least 2 axes, got shape {a.shape}")
    return _record("transpose", (a,), np.swapaxes(a.values, -1, -2), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.values.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _record("reshape", (a,), out, lambda g: (g.reshape(old),))


def row_softmax_masked(a, mask) -> Tensor:
    """Softmax along the last axis over entries where ``mask`` is true.

    Masked entries are exactly zero in value and gradient; a row with no valid
    entry is all zero.
    """
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeError(f"row_softmax_masked: incompatible shapes {a.shape} and {mask.shape}")
    z = np.where(mask, a.values, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    e = np.where(mask, np.exp(z - zmax), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    p = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def bwd(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _record("row_softmax_masked", (a,), p, bwd)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.values)
    return _record("tanh", (a,), y, lambda g: (g * (1.0 - y * y),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.values > 0
    return _record("relu", (a,), np.where(pos, a.values, 0.0), lambda g: (g * pos,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.values))
    return _record("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", (a,), a.values.sum(axis=axis, keepdims=keepdims), bwd)


def mean_rows(a) -> Tensor:
    """Mean over the row axis (second to last), keeping leading axes."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError(f"mean_rows: need at least 2 axes, got shape {a.shape}")
    n = a.shape[-2]
    shape = a.shape
    return _record("mean_rows", (a,), a.values.mean(axis=-2), lambda g: (np.broadcast_to(np.expand_dims(g, -2) / n, shape).copy(),))


def max_pool(a, axis) -> Tensor:
    """Max over ``axis`` (int or tuple); the gradient goes to the first argmax."""
    a = as_tensor(a)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % a.ndim for ax in axes)
    keep = [ax for ax in range(a.ndim) if ax not in axes]
    moved = np.transpose(a.values, keep + list(axes))
    flat = moved.reshape(moved.shape[: len(keep)] + (-1,))
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        gmoved = gflat.reshape(moved.shape)
        return (np.transpose(gmoved, np.argsort(keep + list(axes))),)

    return _record("max_pool", (a,), out, bwd)


def mse(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: incompatible shapes {pred.shape} and {target.shape}")
    diff = pred.values - target.values
    n = diff.size

    def bwd(g):
        gp = g * 2.0 * diff / n
        return gp, -gp

    return _record("mse", (pred, target), np.asarray(np.mean(diff * diff)), bwd)


# --------------------------------------------------------------------------
# optimisation and checkpoints


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray | None],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One in-place Adam update. Missing gradients count as zero.

    Raises NonFiniteGradientError (leaving params and state untouched) if any
    gradient has a NaN or inf.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.values)
        elif g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient shape {g.shape} != parameter {name!r} shape {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.values)
            v = np.zeros_like(p.values)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        p.values = p.values - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


class Adam:
    def __init__(self, params: Mapping[str, Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        grads = {k: p.grad for k, p in self.params.items()}
        adam_step(self.params, grads, self.state, self.lr, self.betas[0], self.betas[1], self.eps)


def save_checkpoint(path: str | Path, params: Mapping[str, Tensor]) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, **{k: p.values for k, p in params.items()})


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    with np.load(path) as data:
        return {k: data[k].copy() for k in data.files}


def parameters_checksum(params: Iterable[Tensor]) -> str:
    import hashlib

    h = hashlib.sha256()
    for p in params:
        h.update(np.ascontiguousarray(p.values).tobytes())
    return h.hexdigest()
