"""A small reverse-mode autodiff engine over float64 numpy arrays.

Every differentiable operation is a :class:`Function` subclass with a numpy
``forward`` and a ``backward`` that maps the output gradient to one gradient
per input. Operations broadcast over leading (batch) axes the way numpy does;
gradients are summed back to each input's shape.

Graphs are built implicitly: each op output remembers the function instance
and its inputs. :func:`trace` flattens the graph reachable from a tensor into
a topologically ordered :class:`ComputationRecord`, which :func:`backward`
walks in reverse.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

DTYPE = np.float64
# stand-in for -inf on masked logits; keeps every intermediate finite
MASK_FILL = -np.finfo(DTYPE).max


class Tensor:
    """Dense float64 array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_fn", "_inputs", "name")
    __array_priority__ = 100
    # make numpy defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._fn: Function | None = None
        self._inputs: tuple[Tensor, ...] = ()
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._fn is None

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return Index(index=index)(self)

    @property
    def T(self) -> "Tensor":
        return swap_last(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape(shape=tuple(shape))(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Sum(axis=axis, keepdims=keepdims)(self)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Function:
    """One differentiable operation; instances hold their attributes and saved activations."""

    kind = "op"

    def __init__(self, **attrs):
        self.attrs = attrs
        self.saved: tuple = ()
        self.input_shapes: tuple[tuple[int, ...], ...] = ()

    def __call__(self, *inputs) -> Tensor:
        tensors = tuple(as_tensor(x) for x in inputs)
        self.input_shapes = tuple(t.shape for t in tensors)
        out = Tensor(self.forward(*(t.data for t in tensors)))
        if any(t.requires_grad for t in tensors):
            out.requires_grad = True
            out._fn = self
            out._inputs = tensors
        return out

    def fresh(self) -> "Function":
        """A new instance with identical attributes and no saved state."""
        return type(self)(**self.attrs)

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        raise NotImplementedError


class Add(Function):
    kind = "add"

    def forward(self, a, b):
        return a + b

    def backward(self, g):
        sa, sb = self.input_shapes
        return _unbroadcast(g, sa), _unbroadcast(g, sb)


class Sub(Function):
    kind = "sub"

    def forward(self, a, b):
        return a - b

    def backward(self, g):
        sa, sb = self.input_shapes
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)


class Mul(Function):
    kind = "mul"

    def forward(self, a, b):
        self.saved = (a, b)
        return a * b

    def backward(self, g):
        a, b = self.saved
        sa, sb = self.input_shapes
        return _unbroadcast(g * b, sa), _unbroadcast(g * a, sb)


class Neg(Function):
    kind = "neg"

    def forward(self, a):
        return -a

    def backward(self, g):
        return (-g,)


class MatMul(Function):
    """``a @ b`` with numpy semantics: 1-D operands are promoted, batch axes broadcast."""

    kind = "matmul"

    def forward(self, a, b):
        if a.ndim == 0 or b.ndim == 0:
            raise ValueError(f"matmul needs at least 1-D operands, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
            raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        self.saved = (a, b)
        return a @ b

    def backward(self, g):
        a, b = self.saved
        if a.ndim == 1 and b.ndim == 1:
            return g * b, g * a
        a2 = a[None, :] if a.ndim == 1 else a
        b2 = b[:, None] if b.ndim == 1 else b
        if a.ndim == 1:
            g = np.expand_dims(g, -2)
        if b.ndim == 1:
            g = g[..., None]
        ga = g @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g
        if a.ndim == 1:
            ga = _unbroadcast(ga, a2.shape).reshape(a.shape)
        if b.ndim == 1:
            gb = _unbroadcast(gb, b2.shape).reshape(b.shape)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


class Tanh(Function):
    kind = "tanh"

    def forward(self, a):
        y = np.tanh(a)
        self.saved = (y,)
        return y

    def backward(self, g):
        (y,) = self.saved
        return (g * (1.0 - y * y),)


class Sigmoid(Function):
    kind = "sigmoid"

    def forward(self, a):
        # split by sign so exp never overflows
        y = np.empty_like(a)
        pos = a >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        y[~pos] = ea / (1.0 + ea)
        self.saved = (y,)
        return y

    def backward(self, g):
        (y,) = self.saved
        return (g * y * (1.0 - y),)


class Relu(Function):
    kind = "relu"

    def forward(self, a):
        self.saved = (a > 0,)
        return np.where(a > 0, a, 0.0)

    def backward(self, g):
        (pos,) = self.saved
        return (g * pos,)


class Exp(Function):
    kind = "exp"

    def forward(self, a):
        y = np.exp(a)
        self.saved = (y,)
        return y

    def backward(self, g):
        return (g * self.saved[0],)


class Log(Function):
    kind = "log"

    def forward(self, a):
        self.saved = (a,)
        return np.log(a)

    def backward(self, g):
        return (g / self.saved[0],)


def _masked_logits(x: np.ndarray, mask) -> np.ndarray:
    if mask is None:
        return x
    mask = np.broadcast_to(mask, x.shape)
    if np.any(mask.all(axis=-1)):
        raise ValueError("softmax row is fully masked")
    return np.where(mask, MASK_FILL, x)


class Softmax(Function):
    """Softmax over the last axis. ``mask`` is True where an entry is excluded."""

    kind = "softmax"

    def forward(self, x):
        z = _masked_logits(x, self.attrs.get("mask"))
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)
        self.saved = (y,)
        return y

    def backward(self, g):
        (y,) = self.saved
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)


class LogSoftmax(Function):
    kind = "log_softmax"

    def forward(self, x):
        z = _masked_logits(x, self.attrs.get("mask"))
        z = z - z.max(axis=-1, keepdims=True)
        y = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        self.saved = (np.exp(y),)
        return y

    def backward(self, g):
        (p,) = self.saved
        return (g - p * g.sum(axis=-1, keepdims=True),)


class Sum(Function):
    kind = "sum"

    def forward(self, a):
        return np.sum(a, axis=self.attrs["axis"], keepdims=self.attrs["keepdims"])

    def backward(self, g):
        (shape,) = self.input_shapes
        axis = self.attrs["axis"]
        if axis is not None and not self.attrs["keepdims"]:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            g = np.expand_dims(g, tuple(ax % len(shape) for ax in axes))
        return (np.broadcast_to(g, shape).copy(),)


class Reshape(Function):
    kind = "reshape"

    def forward(self, a):
        return a.reshape(self.attrs["shape"])

    def backward(self, g):
        return (g.reshape(self.input_shapes[0]),)


class Transpose(Function):
    kind = "transpose"

    def forward(self, a):
        return np.transpose(a, self.attrs["axes"])

    def backward(self, g):
        return (np.transpose(g, np.argsort(self.attrs["axes"])),)


class Index(Function):
    """Basic (slice/int) indexing."""

    kind = "index"

    def forward(self, a):
        return a[self.attrs["index"]].copy()

    def backward(self, g):
        out = np.zeros(self.input_shapes[0])
        out[self.attrs["index"]] = g
        return (out,)


class Concat(Function):
    kind = "concat"

    def forward(self, *arrays):
        return np.concatenate(arrays, axis=self.attrs["axis"])

    def backward(self, g):
        axis = self.attrs["axis"]
        sizes = [s[axis] for s in self.input_shapes]
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))


class Embedding(Function):
    """Row gather ``table[ids]`` for an integer id array of any shape."""

    kind = "embedding"

    def forward(self, table):
        return table[self.attrs["ids"]]

    def backward(self, g):
        out = np.zeros(self.input_shapes[0])
        ids = self.attrs["ids"]
        np.add.at(out, ids.reshape(-1), g.reshape(-1, out.shape[-1]))
        return (out,)


class PickLast(Function):
    """``x[..., ids]`` elementwise along the last axis (one id per leading position)."""

    kind = "pick_last"

    def forward(self, x):
        ids = self.attrs["ids"]
        return np.take_along_axis(x, ids[..., None], axis=-1)[..., 0]

    def backward(self, g):
        out = np.zeros(self.input_shapes[0])
        np.put_along_axis(out, self.attrs["ids"][..., None], g[..., None], axis=-1)
        return (out,)


# functional surface

def add(a, b) -> Tensor:
    return Add()(a, b)


def sub(a, b) -> Tensor:
    return Sub()(a, b)


def mul(a, b) -> Tensor:
    return Mul()(a, b)


def neg(a) -> Tensor:
    return Neg()(a)


def matmul(a, b) -> Tensor:
    return MatMul()(a, b)


def tanh(a) -> Tensor:
    return Tanh()(a)


def sigmoid(a) -> Tensor:
    return Sigmoid()(a)


def relu(a) -> Tensor:
    return Relu()(a)


def exp(a) -> Tensor:
    return Exp()(a)


def log(a) -> Tensor:
    return Log()(a)


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
}


def activation(x, kind: str) -> Tensor:
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def softmax(x, mask=None) -> Tensor:
    """Softmax over the last axis; ``mask`` (broadcastable bool) is True where excluded."""
    return Softmax(mask=None if mask is None else np.asarray(mask, dtype=bool))(x)


softmax_rows = softmax


def log_softmax(x, mask=None) -> Tensor:
    return LogSoftmax(mask=None if mask is None else np.asarray(mask, dtype=bool))(x)


def transpose(x, axes: Sequence[int]) -> Tensor:
    return Transpose(axes=tuple(axes))(x)


def swap_last(x) -> Tensor:
    x = as_tensor(x)
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    return Concat(axis=axis)(*tensors)


def embedding(table: Tensor, ids) -> Tensor:
    return Embedding(ids=np.asarray(ids, dtype=np.int64))(table)


def pick_last(x, ids) -> Tensor:
    return PickLast(ids=np.asarray(ids, dtype=np.int64))(x)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.shape[axis]
    return Sum(axis=axis, keepdims=False)(x) * (1.0 / count)


def lstm_step(x, h, c, w: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM cell update on rows of ``x`` (..., in) and state (..., d).

    ``w`` is (in + d, 4d) and ``b`` is (4d,), with gate blocks ordered
    input, forget, output, candidate.
    """
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    d = h.shape[-1]
    if w.shape != (x.shape[-1] + d, 4 * d) or b.shape != (4 * d,):
        raise ValueError(
            f"lstm weights {w.shape}/{b.shape} do not fit input {x.shape[-1]} and hidden {d}"
        )
    if c.shape != h.shape:
        raise ValueError(f"cell state {c.shape} does not match hidden state {h.shape}")
    z = concat([x, h], axis=-1) @ w + b
    i = sigmoid(z[..., 0:d])
    f = sigmoid(z[..., d : 2 * d])
    o = sigmoid(z[..., 2 * d : 3 * d])
    g = tanh(z[..., 3 * d : 4 * d])
    c_new = f * c + i * g
    h_new = o * tanh(c_new)
    return h_new, c_new


# graph traversal

@dataclass
class RecordEntry:
    kind: str
    inputs: tuple[int, ...]
    output: int
    fn: Function | None
    value: np.ndarray


@dataclass
class ComputationRecord:
    """Topologically ordered list of graph nodes; leaves carry ``kind == 'leaf'``."""

    entries: list[RecordEntry] = field(default_factory=list)
    tensors: list[Tensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def replay(self) -> list[np.ndarray]:
        """Recompute every node from the leaves; returns the values by node id."""
        values: list[np.ndarray] = []
        for entry in self.entries:
            if entry.fn is None:
                values.append(entry.value)
            else:
                values.append(entry.fn.fresh().forward(*(values[i] for i in entry.inputs)))
        return values


def trace(root: Tensor) -> ComputationRecord:
    """Flatten the graph behind ``root`` into a ComputationRecord."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._inputs):
            if id(parent) not in seen:
                stack.append((parent, False))
    ids = {id(t): i for i, t in enumerate(order)}
    record = ComputationRecord()
    for i, t in enumerate(order):
        fn = t._fn
        record.entries.append(
            RecordEntry(
                kind="leaf" if fn is None else fn.kind,
                inputs=tuple(ids[id(p)] for p in t._inputs),
                output=i,
                fn=fn,
                value=t.data,
            )
        )
        record.tensors.append(t)
    return record


def backward(loss: Tensor, params: Iterable[Tensor] = ()) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Tensors listed in ``params`` that the loss does not depend on get a zero
    gradient instead of ``None``.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    if not loss.requires_grad:
        return
    record = trace(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(record.tensors):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t._fn is None:
            if t.requires_grad:
                t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t._inputs, t._fn.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# optimisation

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float = 4e-4,
    beta1: float = 0.8,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """In-place Adam step with bias correction; returns ``state`` for chaining."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        if m.shape != p.shape or v.shape != p.shape:
            raise ValueError(f"optimizer state for {name!r} has shape {m.shape}, param is {p.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if total <= max_norm or total == 0.0:
        return dict(grads), total
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}, total


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], theta: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Central differences of scalar ``f`` at ``theta``, one coordinate at a time."""
    theta = np.array(theta, dtype=DTYPE)
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(theta))
        flat[i] = orig - eps
        fm = float(f(theta))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a|, |n|, floor), taken over the whole array."""
    a = np.asarray(analytic, dtype=DTYPE)
    n = np.asarray(numeric, dtype=DTYPE)
    denom = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(n), initial=0.0)), floor)
    return float(np.max(np.abs(a - n), initial=0.0)) / denom
