"""Reverse-mode automatic differentiation on a flat tape.

Tensors wrap numpy arrays. While a Tape is active, every primitive that
touches a tracked tensor appends one node (op name, inputs, output, backward
closure). Tape.backward replays the nodes in strictly reverse append order,
accumulating gradients additively whenever a tensor feeds several consumers.
Gradients are written only to leaf tensors created with requires_grad=True;
everything else receives gradient transiently or not at all.
"""

from __future__ import annotations

import numpy as np

# Additive pre-softmax mask value. Finite so backward stays NaN-free, but
# large enough that exp() underflows to exactly 0.0 after max subtraction.
MASK_NEG = -1e9


class ShapeError(ValueError):
    """Operand shapes violate an op's shape rule."""


class DomainError(ValueError):
    """Input outside an op's mathematical domain (e.g. log of x <= 0)."""


_TAPE: "Tape | None" = None


class Tape:
    """Ordered record of primitive applications for one forward pass."""

    def __init__(self):
        self.nodes = []          # (op_name, inputs, output, backward_fn)
        self._produced = set()   # id() of every output recorded on this tape
        self._outer = None

    def __enter__(self):
        global _TAPE
        self._outer = _TAPE
        _TAPE = self
        return self

    def __exit__(self, *exc):
        global _TAPE
        _TAPE = self._outer
        return False

    def _record(self, op, inputs, out, backward):
        self.nodes.append((op, inputs, out, backward))
        self._produced.add(id(out))

    def backward(self, root: "Tensor"):
        """Propagate d(root)/d(leaf) into every requires_grad leaf.

        root is usually a scalar loss; for non-scalars the seed gradient is
        all-ones. Traversal is strictly reverse append order, so every
        consumer of a tensor has already deposited its contribution by the
        time the producing node is replayed.
        """
        interior = {}

        def send(t, g):
            if t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g
            elif id(t) in self._produced:
                prev = interior.get(id(t))
                interior[id(t)] = g if prev is None else prev + g
            # constants (requires_grad=False, not produced here) get nothing

        send(root, np.ones_like(root.data))
        for _op, inputs, out, backward in reversed(self.nodes):
            g = interior.pop(id(out), None)
            if g is None:
                continue
            for t, gt in zip(inputs, backward(g)):
                if gt is not None:
                    send(t, gt)

    def first_nonfinite(self):
        """Name of the earliest op whose output has a non-finite entry."""
        for op, _inputs, out, _backward in self.nodes:
            if not np.all(np.isfinite(out.data)):
                return op
        return None


class Tensor:
    """Dense n-d value: row-major numpy array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        """Constant view of the same buffer (drops graph membership)."""
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"

    # operator sugar; all routed through the module-level primitives
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or (_TAPE is not None and id(t) in _TAPE._produced)


def _maybe_record(op, inputs, out, backward):
    if _TAPE is not None and any(_tracked(t) for t in inputs):
        _TAPE._record(op, inputs, out, backward)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise suite
# ---------------------------------------------------------------------------

def add(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = Tensor(a.data + b.data)
    na, nb = _tracked(a), _tracked(b)

    def backward(g):
        return (_unbroadcast(g, a.data.shape) if na else None,
                _unbroadcast(g, b.data.shape) if nb else None)

    _maybe_record("add", (a, b), out, backward)
    return out


def sub(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = Tensor(a.data - b.data)
    na, nb = _tracked(a), _tracked(b)

    def backward(g):
        return (_unbroadcast(g, a.data.shape) if na else None,
                _unbroadcast(-g, b.data.shape) if nb else None)

    _maybe_record("sub", (a, b), out, backward)
    return out


def mul(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = Tensor(a.data * b.data)
    na, nb = _tracked(a), _tracked(b)

    def backward(g):
        return (_unbroadcast(g * b.data, a.data.shape) if na else None,
                _unbroadcast(g * a.data, b.data.shape) if nb else None)

    _maybe_record("mul", (a, b), out, backward)
    return out


def div(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = Tensor(a.data / b.data)
    na, nb = _tracked(a), _tracked(b)

    def backward(g):
        return (_unbroadcast(g / b.data, a.data.shape) if na else None,
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape) if nb else None)

    _maybe_record("div", (a, b), out, backward)
    return out


def scale(a, c: float):
    """Multiply by a python scalar without creating a constant tensor."""
    a = _as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c)
    na = _tracked(a)

    def backward(g):
        return (g * c if na else None,)

    _maybe_record("scale", (a,), out, backward)
    return out


def relu(a):
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, 0))
    na = _tracked(a)

    def backward(g):
        # subgradient at 0 is 0
        return (g * (a.data > 0) if na else None,)

    _maybe_record("relu", (a,), out, backward)
    return out


def sigmoid(a):
    a = _as_tensor(a)
    x = a.data
    # stable in both tails
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    s = s.astype(x.dtype, copy=False)
    out = Tensor(s)
    na = _tracked(a)

    def backward(g):
        return (g * s * (1.0 - s) if na else None,)

    _maybe_record("sigmoid", (a,), out, backward)
    return out


def exp(a):
    a = _as_tensor(a)
    e = np.exp(a.data)
    out = Tensor(e)
    na = _tracked(a)

    def backward(g):
        return (g * e if na else None,)

    _maybe_record("exp", (a,), out, backward)
    return out


def log(a):
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive input, got min "
                          f"{a.data.min()}")
    out = Tensor(np.log(a.data))
    na = _tracked(a)

    def backward(g):
        return (g / a.data if na else None,)

    _maybe_record("log", (a,), out, backward)
    return out


def sqrt(a):
    a = _as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt requires nonnegative input, got min "
                          f"{a.data.min()}")
    r = np.sqrt(a.data)
    out = Tensor(r)
    na = _tracked(a)

    def backward(g):
        return (g / (2.0 * r) if na else None,)

    _maybe_record("sqrt", (a,), out, backward)
    return out


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _restore_axes(g, src_shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, src_shape)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(ax % len(src_shape) for ax in axes)
        kept = list(g.shape)
        for ax in sorted(axes):
            kept.insert(ax, 1)
        g = g.reshape(kept)
    return np.broadcast_to(g, src_shape)


def sum_(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    na = _tracked(a)

    def backward(g):
        if not na:
            return (None,)
        return (_restore_axes(g, a.data.shape, axis, keepdims).astype(a.dtype, copy=False).copy(),)

    _maybe_record("sum", (a,), out, backward)
    return out


def mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    na = _tracked(a)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def backward(g):
        if not na:
            return (None,)
        spread = _restore_axes(g, a.data.shape, axis, keepdims)
        return ((spread / n).astype(a.dtype, copy=False),)

    _maybe_record("mean", (a,), out, backward)
    return out


def l1_norm(a):
    a = _as_tensor(a)
    out = Tensor(np.abs(a.data).sum())
    na = _tracked(a)

    def backward(g):
        # subgradient: sign, with sign(0) = 0
        return (g * np.sign(a.data) if na else None,)

    _maybe_record("l1_norm", (a,), out, backward)
    return out


# ---------------------------------------------------------------------------
# linear algebra / structure
# ---------------------------------------------------------------------------

def matmul(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))
    na, nb = _tracked(a), _tracked(b)

    def backward(g):
        ga = gb = None
        if na:
            ga = _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.data.shape)
        if nb:
            gb = _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.data.shape)
        return ga, gb

    _maybe_record("matmul", (a, b), out, backward)
    return out


def transpose(a, axes=None):
    a = _as_tensor(a)
    out = Tensor(np.transpose(a.data, axes))
    na = _tracked(a)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inv) if na else None,)

    _maybe_record("transpose", (a,), out, backward)
    return out


def reshape(a, shape):
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    na = _tracked(a)

    def backward(g):
        return (g.reshape(a.data.shape) if na else None,)

    _maybe_record("reshape", (a,), out, backward)
    return out


def concat(tensors, axis=0):
    ts = [_as_tensor(t) for t in tensors]
    rank = ts[0].ndim
    for t in ts[1:]:
        if t.ndim != rank:
            raise ShapeError(f"concat rank mismatch: {ts[0].shape} vs {t.shape}")
        for ax in range(rank):
            if ax != axis % rank and t.shape[ax] != ts[0].shape[ax]:
                raise ShapeError(f"concat extent mismatch on axis {ax}: "
                                 f"{ts[0].shape} vs {t.shape}")
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    needs = [_tracked(t) for t in ts]
    sizes = [t.shape[axis % rank] for t in ts]

    def backward(g):
        pieces = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        return tuple(p if n else None for p, n in zip(pieces, needs))

    _maybe_record("concat", tuple(ts), out, backward)
    return out


def stack(tensors, axis=0):
    """Stack along a new axis; composed from reshape + concat."""
    expanded = []
    for t in tensors:
        t = _as_tensor(t)
        shp = list(t.shape)
        shp.insert(axis % (t.ndim + 1), 1)
        expanded.append(reshape(t, tuple(shp)))
    return concat(expanded, axis=axis)


def slice_(a, key):
    a = _as_tensor(a)
    out = Tensor(a.data[key])
    na = _tracked(a)

    def backward(g):
        if not na:
            return (None,)
        ga = np.zeros_like(a.data)
        ga[key] = g
        return (ga,)

    _maybe_record("slice", (a,), out, backward)
    return out


def embedding_lookup(table, ids):
    """Row gather: out[i...] = table[ids[i...]]. ids is a plain int array."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding ids out of range [0, {table.shape[0]})")
    out = Tensor(table.data[ids])
    nt = _tracked(table)

    def backward(g):
        if not nt:
            return (None,)
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    _maybe_record("embedding_lookup", (table,), out, backward)
    return out


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------

def softmax(a, axis=-1):
    a = _as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)
    na = _tracked(a)

    def backward(g):
        if not na:
            return (None,)
        inner = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - inner),)

    _maybe_record("softmax", (a,), out, backward)
    return out


def log_softmax(a, axis=-1):
    a = _as_tensor(a)
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    ls = shifted - lse
    out = Tensor(ls)
    na = _tracked(a)

    def backward(g):
        if not na:
            return (None,)
        return (g - np.exp(ls) * g.sum(axis=axis, keepdims=True),)

    _maybe_record("log_softmax", (a,), out, backward)
    return out


# ---------------------------------------------------------------------------
# model-specific primitives
# ---------------------------------------------------------------------------

def interp_linear(a, t_out: int):
    """Linearly resample rows of a [T_in, D] tensor to t_out rows.

    Sample positions are numpy's linspace(0, T_in-1, t_out): the identity
    when t_out == T_in, constant replication when T_in == 1. The map is a
    fixed sparse matrix, so backward is its transpose.
    """
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"interp_linear expects [T, D], got {a.shape}")
    if t_out <= 0:
        raise ValueError(f"t_out must be positive, got {t_out}")
    t_in = a.shape[0]
    w = _interp_matrix(t_in, t_out, a.dtype)
    out = Tensor(w @ a.data)
    na = _tracked(a)

    def backward(g):
        return (w.T @ g if na else None,)

    _maybe_record("interp_linear", (a,), out, backward)
    return out


def _interp_matrix(t_in, t_out, dtype):
    w = np.zeros((t_out, t_in), dtype=dtype)
    pos = np.linspace(0.0, t_in - 1.0, t_out)
    lo = np.floor(pos).astype(int)
    lo = np.minimum(lo, t_in - 1)
    hi = np.minimum(lo + 1, t_in - 1)
    frac = (pos - lo).astype(dtype)
    rows = np.arange(t_out)
    np.add.at(w, (rows, lo), 1.0 - frac)
    np.add.at(w, (rows, hi), frac)
    return w


def cosine_distance(a, b, eps: float = 1e-8):
    """1 - cos(a, b) with an epsilon-guarded denominator; a, b are vectors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"cosine_distance expects equal-length vectors, got "
                         f"{a.shape} and {b.shape}")
    ra = reshape(a, (1, a.shape[0]))
    rb = reshape(b, (b.shape[0], 1))
    dot = reshape(matmul(ra, rb), ())
    na = sqrt(sum_(mul(a, a)))
    nb = sqrt(sum_(mul(b, b)))
    denom = add(mul(na, nb), Tensor(np.asarray(eps, dtype=a.dtype)))
    return sub(Tensor(np.asarray(1.0, dtype=a.dtype)), div(dot, denom))


def ste_threshold(a, theta: float):
    """Hard threshold with a straight-through gradient.

    Forward: 1 where a >= theta else 0. Backward: upstream gradient passes
    through unchanged, as if the op were the identity.
    """
    a = _as_tensor(a)
    if not (0.0 < theta < 1.0):
        raise ValueError(f"threshold must lie in (0, 1), got {theta}")
    out = Tensor((a.data >= theta).astype(a.dtype))
    na = _tracked(a)

    def backward(g):
        return (g.copy() if na else None,)

    _maybe_record("ste_threshold", (a,), out, backward)
    return out


# ---------------------------------------------------------------------------
# composites used all over the model
# ---------------------------------------------------------------------------

def linear(x, w, b=None):
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def layer_norm(x, gain, bias, eps: float = 1e-5):
    """Normalize the last axis, then scale and shift. Composite op."""
    mu = mean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = mean(mul(centered, centered), axis=-1, keepdims=True)
    inv = div(centered, sqrt(add(var, Tensor(np.asarray(eps, dtype=x.dtype)))))
    return add(mul(inv, gain), bias)
