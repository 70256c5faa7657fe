"""Dense float64 tensors with reverse-mode automatic differentiation.

A small dynamic-tape engine: every differentiable operation executed while
recording is appended to a global tape, and ``backward`` replays the tape in
reverse recording order (which is a valid reverse topological order, since an
operation can only consume tensors that already exist). Everything is 64-bit;
the engine is built for exact gradient checks at desk scale, not for speed.

Broadcasting is deliberately restricted to scalar*tensor and adding a row
vector to a matrix; anything else needs an explicit reshape.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeMismatchError

# Additive-bias value for disallowed attention entries. Large but finite so
# row-max stabilisation never computes (-inf) - (-inf); exp() still
# underflows to exactly 0.0 for these entries.
MASKED_BIAS = -1e30


class _Node:
    """One recorded operation: output tensor, inputs, and a backward rule."""

    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out, inputs, backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations; replaying it in reverse is backprop."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.enabled = True

    def record(self, out: "Tensor", inputs, backward_fn) -> None:
        node = _Node(out, tuple(inputs), backward_fn)
        out.node = node
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()

    def backward(self, loss: "Tensor") -> None:
        if loss.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        recorded = {id(n.out) for n in self.nodes}
        pending = {id(loss): np.ones_like(loss.data)}
        if id(loss) not in recorded:
            # loss is itself a leaf; nothing to propagate
            if loss.requires_grad:
                g = np.ones_like(loss.data)
                loss.grad = g if loss.grad is None else loss.grad + g
            return
        for node in reversed(self.nodes):
            out_grad = pending.pop(id(node.out), None)
            if out_grad is None:
                continue
            input_grads = node.backward_fn(out_grad)
            for inp, g in zip(node.inputs, input_grads):
                if g is None or not inp.requires_grad:
                    continue
                if id(inp) in recorded:
                    acc = pending.get(id(inp))
                    pending[id(inp)] = g if acc is None else acc + g
                else:
                    inp.grad = g.copy() if inp.grad is None else inp.grad + g


_TAPE = Tape()


def tape() -> Tape:
    return _TAPE


def clear_tape() -> None:
    _TAPE.clear()


def backward(loss: "Tensor") -> None:
    _TAPE.backward(loss)


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        self._prev = _TAPE.enabled
        _TAPE.enabled = False
        return self

    def __exit__(self, *exc):
        _TAPE.enabled = self._prev
        return False


class Tensor:
    """N-d float64 array, optionally tracked on the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: _Node | None = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        _TAPE.backward(self)

    # operator sugar; all real work lives in the module-level functions
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.data.shape)}{flag})"


def _result(out: Tensor, inputs, backward_fn) -> Tensor:
    if _TAPE.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPE.record(out, inputs, backward_fn)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatchError(
            f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}"
        )
    out = Tensor(a.data @ b.data)

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _result(out, (a, b), bw)


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        out = Tensor(a.data + b)
        return _result(out, (a,), lambda g: (g,))
    if a.data.shape == b.data.shape:
        out = Tensor(a.data + b.data)
        return _result(out, (a, b), lambda g: (g, g))
    if (
        a.data.ndim == 2
        and b.data.ndim == 1
        and a.data.shape[1] == b.data.shape[0]
    ):
        out = Tensor(a.data + b.data)  # row-vector broadcast
        return _result(out, (a, b), lambda g: (g, g.sum(axis=0)))
    raise ShapeMismatchError(f"add: incompatible shapes {a.data.shape} + {b.data.shape}")


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        out = Tensor(a.data - b)
        return _result(out, (a,), lambda g: (g,))
    if a.data.shape == b.data.shape:
        out = Tensor(a.data - b.data)
        return _result(out, (a, b), lambda g: (g, -g))
    if (
        a.data.ndim == 2
        and b.data.ndim == 1
        and a.data.shape[1] == b.data.shape[0]
    ):
        out = Tensor(a.data - b.data)
        return _result(out, (a, b), lambda g: (g, -g.sum(axis=0)))
    raise ShapeMismatchError(f"sub: incompatible shapes {a.data.shape} - {b.data.shape}")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"mul: incompatible shapes {a.data.shape} * {b.data.shape}")
    out = Tensor(a.data * b.data)

    def bw(g):
        return g * b.data, g * a.data

    return _result(out, (a, b), bw)


def scale(a: Tensor, factor: float) -> Tensor:
    out = Tensor(a.data * factor)
    return _result(out, (a,), lambda g: (g * factor,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    out = Tensor(np.where(mask, a.data, 0.0))
    return _result(out, (a,), lambda g: (g * mask,))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatchError(f"transpose expects a matrix, got shape {a.data.shape}")
    out = Tensor(a.data.T.copy())
    return _result(out, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    old = a.data.shape
    return _result(out, (a,), lambda g: (g.reshape(old),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _result(out, tuple(tensors), bw)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = Tensor(a.data[index].copy())

    def bw(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _result(out, (a,), bw)


def gather_rows(a: Tensor, indices) -> Tensor:
    indices = np.asarray(indices, dtype=np.intp)
    out = Tensor(a.data[indices])

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, indices, g)
        return (full,)

    return _result(out, (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())
    return _result(out, (a,), lambda g: (np.full_like(a.data, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(a.data.mean())
    return _result(out, (a,), lambda g: (np.full_like(a.data, float(g) / n),))


def masked_softmax(scores: Tensor, bias: np.ndarray) -> Tensor:
    """Row-wise softmax with an additive bias of 0 (allowed) / MASKED_BIAS.

    Disallowed columns receive exactly zero weight; each row must have at
    least one allowed column (the mask builder guarantees this upstream).
    """
    bias = np.asarray(bias, dtype=np.float64)
    if bias.shape != scores.data.shape:
        raise ShapeMismatchError(
            f"masked_softmax: scores {scores.data.shape} vs bias {bias.shape}"
        )
    allowed = bias > MASKED_BIAS / 2
    if not allowed.any(axis=1).all():
        bad = np.where(~allowed.any(axis=1))[0]
        raise ContractError(f"masked_softmax: fully disallowed rows {bad.tolist()}")
    z = scores.data + bias
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p)

    def bw(g):
        inner = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - inner),)

    return _result(out, (scores,), bw)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero mean / unit variance over the last axis, then affine."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or shift.data.shape != (d,):
        raise ShapeMismatchError(
            f"layer_norm: x {x.data.shape} with gain {gain.data.shape}, shift {shift.data.shape}"
        )
    if eps <= 0:
        raise ContractError("layer_norm: eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Tensor(xhat * gain.data + shift.data)
    lead_axes = tuple(range(x.data.ndim - 1))

    def bw(g):
        dgain = (g * xhat).sum(axis=lead_axes)
        dshift = g.sum(axis=lead_axes)
        gx = g * gain.data
        dx = inv * (
            gx
            - gx.mean(axis=-1, keepdims=True)
            - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgain, dshift

    return _result(out, (x, gain, shift), bw)
