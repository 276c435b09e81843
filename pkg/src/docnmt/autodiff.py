"""Dense float64 tensors with reverse-mode automatic differentiation.

Define-by-run: every differentiable op appends one node to a module-level
tape, so insertion order is already a topological order.  ``backward`` walks
the tape once in reverse, accumulates gradients additively, writes them into
the ``grad`` field of leaf tensors and clears the tape.  One forward pass per
backward call; evaluation code should run under ``no_grad()``.

Shapes are explicit.  The only implicit broadcasting is scalar-times-tensor
(one operand with a single element); everything else must match exactly or go
through a dedicated op such as ``add_bias`` / ``scale_rows``.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import ContractError, NumericalError, ShapeError

Array = np.ndarray

_grad_enabled: bool = True
_finite_checks: bool = True
_tape: list["_Node"] = []

# how often clamped_log had to clamp; exposed for the cross-entropy flag
clamp_events: int = 0


def set_finite_checks(enabled: bool) -> None:
    """Toggle the NaN/Inf check run after every forward op."""
    global _finite_checks
    _finite_checks = bool(enabled)


def finite_checks_enabled() -> bool:
    return _finite_checks


@contextmanager
def no_grad():
    """Disable tape recording (evaluation / cached-state passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def tape_size() -> int:
    return len(_tape)


def clear_tape() -> None:
    _tape.clear()


class _Node:
    __slots__ = ("out", "inputs", "bwd", "tag")

    def __init__(self, out, inputs, bwd, tag):
        self.out = out
        self.inputs = inputs
        self.bwd = bwd
        self.tag = tag


class Tensor:
    """Row-major float64 array plus optional gradient.

    Tensors created by ops own fresh storage; tensors not attached to the
    tape are treated as read-only constants and may be shared.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64, order="C")
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)

    @classmethod
    def _wrap(cls, arr: Array) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = False
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> Array:
        return self.data

    # -- arithmetic sugar ---------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return affine(self, 1.0, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return affine(self, 1.0, -float(other))

    def __rsub__(self, other):
        return affine(self, -1.0, float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return affine(self, float(other), 0.0)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return affine(self, 1.0 / float(other), 0.0)

    def __neg__(self):
        return affine(self, -1.0, 0.0)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- reductions / views -------------------------------------------------

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return _reduce(self, axis, keepdims, np.sum, lambda n: 1.0)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return _reduce(self, axis, keepdims, np.mean, lambda n: 1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})\n{self.data!r}"


def _finite(arr: Array, tag: str) -> None:
    if _finite_checks and not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values produced by op '{tag}'")


def _out(arr: Array, inputs: tuple, bwd, tag: str, check: bool = True) -> Tensor:
    if check:
        _finite(arr, tag)
    t = Tensor._wrap(arr)
    if _grad_enabled and any(i.requires_grad for i in inputs):
        t.requires_grad = True
        _tape.append(_Node(t, inputs, bwd, tag))
    return t


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss; accumulates into leaf ``grad``.

    Walks the tape in reverse insertion order (each node visited once),
    summing contributions where a tensor feeds several ops, then clears the
    tape so the next forward pass starts a fresh graph.
    """
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        _tape.clear()
        return
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {id(loss): loss}
    try:
        for node in reversed(_tape):
            g = grads.pop(id(node.out), None)
            leaves.pop(id(node.out), None)
            if g is None:
                continue
            for inp, ig in zip(node.inputs, node.bwd(g)):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
                    leaves[key] = inp
        for key, t in leaves.items():
            g = grads[key].reshape(t.data.shape)
            t.grad = g.copy() if t.grad is None else t.grad + g
    finally:
        _tape.clear()


# ---------------------------------------------------------------------------
# elementwise / scalar ops


def _bcast_pair(a: Tensor, b: Tensor, tag: str):
    """Allow identical shapes or a single-element operand; nothing else."""
    if a.data.shape == b.data.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(f"{tag}: shapes {a.shape} and {b.shape} do not broadcast")


def _fit(g: Array, shape: tuple) -> Array:
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape) if int(np.prod(shape)) == 1 else g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _bcast_pair(a, b, "add")
    return _out(a.data + b.data, (a, b),
                lambda g: (_fit(g, a.data.shape), _fit(g, b.data.shape)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _bcast_pair(a, b, "sub")
    return _out(a.data - b.data, (a, b),
                lambda g: (_fit(g, a.data.shape), _fit(-g, b.data.shape)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _bcast_pair(a, b, "mul")
    return _out(a.data * b.data, (a, b),
                lambda g: (_fit(g * b.data, a.data.shape),
                           _fit(g * a.data, b.data.shape)), "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _bcast_pair(a, b, "div")
    return _out(a.data / b.data, (a, b),
                lambda g: (_fit(g / b.data, a.data.shape),
                           _fit(-g * a.data / (b.data * b.data), b.data.shape)), "div")


def affine(x: Tensor, m: float, c: float) -> Tensor:
    """m * x + c with python scalars (covers negation and 1 - x)."""
    return _out(m * x.data + c, (x,), lambda g: (m * g,), "affine")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-d vector to every row of an [n, d] matrix."""
    if x.data.ndim != 2 or b.data.shape != (x.data.shape[1],):
        raise ShapeError(f"add_bias: {x.shape} + {b.shape}")
    return _out(x.data + b.data[None, :], (x, b),
                lambda g: (g, g.sum(axis=0)), "add_bias")


def scale_rows(x: Tensor, col: Tensor) -> Tensor:
    """Multiply row i of [n, d] ``x`` by ``col[i]`` (col shaped [n, 1])."""
    if x.data.ndim != 2 or col.data.shape != (x.data.shape[0], 1):
        raise ShapeError(f"scale_rows: {x.shape} scaled by {col.shape}")
    return _out(x.data * col.data, (x, col),
                lambda g: (g * col.data, (g * x.data).sum(axis=1, keepdims=True)),
                "scale_rows")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _out(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _out(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def log(x: Tensor) -> Tensor:
    return _out(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def clamped_log(x: Tensor, floor: float = 1e-12) -> Tensor:
    """log(max(x, floor)); counts clamp events and caps the gradient at 1/floor."""
    global clamp_events
    clamped = np.maximum(x.data, floor)
    n_clamped = int(np.count_nonzero(x.data < floor))
    if n_clamped:
        clamp_events += n_clamped
    return _out(np.log(clamped), (x,), lambda g: (g / clamped,), "clamped_log")


# ---------------------------------------------------------------------------
# linear algebra / shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    return _out(a.data @ b.data, (a, b),
                lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose: need 2-d, got {x.shape}")
    return _out(np.ascontiguousarray(x.data.T), (x,),
                lambda g: (np.ascontiguousarray(g.T),), "transpose")


def reshape(x: Tensor, shape: tuple) -> Tensor:
    arr = x.data.reshape(shape)
    return _out(np.ascontiguousarray(arr), (x,),
                lambda g: (g.reshape(x.data.shape),), "reshape")


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat of zero tensors")
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _out(np.concatenate([p.data for p in parts], axis=axis),
                tuple(parts), bwd, "concat")


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis of a 2-d tensor."""
    if x.data.ndim != 2 or axis not in (0, 1):
        raise ShapeError(f"narrow: need 2-d, got {x.shape}")
    idx = (slice(start, start + length), slice(None)) if axis == 0 else \
        (slice(None), slice(start, start + length))

    def bwd(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return _out(np.ascontiguousarray(x.data[idx]), (x,), bwd, "narrow")


def _reduce(x: Tensor, axis, keepdims, fn, scale_fn) -> Tensor:
    arr = fn(x.data, axis=axis, keepdims=keepdims)
    if axis is None:
        n = x.data.size
    else:
        n = x.data.shape[axis]
    s = scale_fn(n)

    def bwd(g):
        if axis is None:
            return (np.full_like(x.data, float(g) * s),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, x.data.shape) * s,)

    return _out(np.asarray(arr), (x,), bwd, "reduce")


# ---------------------------------------------------------------------------
# neural-net specific ops


def softmax_lastdim(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis (max subtraction).

    Rows that are entirely -inf are a caller bug (fully masked attention row)
    and raise ContractError.
    """
    d = x.data
    if d.size == 0 or d.shape[-1] == 0:
        raise ContractError("softmax_lastdim on empty tensor")
    m = np.max(d, axis=-1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise ContractError("softmax_lastdim: a row is fully masked (-inf)")
    e = np.exp(d - m)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = np.sum(g * out, axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _out(out, (x,), bwd, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row of [n, d] to zero mean / unit variance, then affine."""
    if x.data.ndim != 2 or gain.data.shape != (x.data.shape[1],) \
            or bias.data.shape != (x.data.shape[1],):
        raise ShapeError(f"layer_norm: x {x.shape}, gain {gain.shape}, bias {bias.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gain.data[None, :] + bias.data[None, :]

    def bwd(g):
        gy = g * gain.data[None, :]
        m1 = gy.mean(axis=1, keepdims=True)
        m2 = (gy * xhat).mean(axis=1, keepdims=True)
        dx = (gy - m1 - xhat * m2) * inv
        return (dx, (g * xhat).sum(axis=0), g.sum(axis=0))

    return _out(out, (x, gain, bias), bwd, "layer_norm")


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0.  Training-path only."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate {rate} outside [0, 1)")
    if rate == 0.0:
        return x
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return _out(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def masked_fill(x: Tensor, mask: Array, value: float) -> Tensor:
    """Replace entries where ``mask`` is True by ``value`` (usually -inf)."""
    if mask.shape != x.data.shape:
        raise ShapeError(f"masked_fill: mask {mask.shape} vs x {x.shape}")
    keep = ~mask
    return _out(np.where(mask, value, x.data), (x,),
                lambda g: (g * keep,), "masked_fill", check=False)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of a [vocab, d] table; gradient scatter-adds into the table."""
    idx = np.asarray(ids, dtype=np.intp)
    if table.data.ndim != 2:
        raise ShapeError(f"embedding_lookup: table {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ContractError("embedding_lookup: id out of range")

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return _out(table.data[idx].copy(), (table,), bwd, "embedding")


def take_per_row(x: Tensor, ids) -> Tensor:
    """out[i] = x[i, ids[i]] for an [n, m] tensor; used by cross-entropy."""
    idx = np.asarray(ids, dtype=np.intp)
    n = x.data.shape[0]
    if x.data.ndim != 2 or idx.shape != (n,):
        raise ShapeError(f"take_per_row: x {x.shape}, ids {idx.shape}")
    rows = np.arange(n)

    def bwd(g):
        full = np.zeros_like(x.data)
        full[rows, idx] = g
        return (full,)

    return _out(x.data[rows, idx].copy(), (x,), bwd, "take_per_row")


def gather1d(x: Tensor, ids) -> Tensor:
    """Gather entries of a 1-d tensor (duplicates allowed)."""
    idx = np.asarray(ids, dtype=np.intp)
    if x.data.ndim != 1:
        raise ShapeError(f"gather1d: need 1-d, got {x.shape}")

    def bwd(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _out(x.data[idx].copy(), (x,), bwd, "gather1d")


def scatter_add1d(values: Tensor, ids, size: int) -> Tensor:
    """out[ids[k]] += values[k] into a fresh zero vector of ``size``."""
    idx = np.asarray(ids, dtype=np.intp)
    if values.data.ndim != 1 or idx.shape != values.data.shape:
        raise ShapeError(f"scatter_add1d: values {values.shape}, ids {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise ContractError("scatter_add1d: id out of range")
    out = np.zeros(size, dtype=np.float64)
    np.add.at(out, idx, values.data)
    return _out(out, (values,), lambda g: (g[idx],), "scatter_add1d")
