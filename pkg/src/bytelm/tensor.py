"""Dense tensors with reverse-mode automatic differentiation on numpy.

The graph is recorded eagerly. Every differentiable op stores its parent
tensors and a closure mapping the output gradient to per-parent gradient
contributions. `Tensor.backward` collects the reachable subgraph and
replays closures in decreasing creation order, which is a valid reverse
topological order because an op's output is always created after its
inputs. Forward values are plain numpy arrays, so results are
deterministic for a fixed reduction order.

Tensors are treated as immutable once created; the one sanctioned
mutation outside gradient accumulation is an optimizer updating leaf
`.data` between training steps, after the previous graph is dropped.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import erf

from .errors import DataError, NumericError, ShapeError

DEFAULT_DTYPE = np.float32
MASK_CONST = -1e30  # additive attention mask value; large but exp-safe in f32

_serial = itertools.count()


class Tensor:
    """A numpy array plus optional gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "_grad", "_parents", "_backward", "_serial")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self._grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._serial = next(_serial)

    # -- bookkeeping ----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def grad(self) -> np.ndarray:
        """Accumulated gradient; zeros if backward never reached this tensor."""
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    def zero_grad(self):
        self._grad = None

    def _accum(self, g: np.ndarray):
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != value shape {self.data.shape}")
        if self._grad is None:
            self._grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self._grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"

    # -- autodiff -------------------------------------------------------

    def backward(self, grad=None):
        """Accumulate gradients of self (scalar unless `grad` given) into leaves."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            raise ShapeError(f"seed shape {grad.shape} != value shape {self.data.shape}")
        nodes: dict[int, Tensor] = {}
        stack = [self]
        while stack:
            t = stack.pop()
            if id(t) in nodes:
                continue
            nodes[id(t)] = t
            stack.extend(t._parents)
        self._accum(grad)
        for t in sorted(nodes.values(), key=lambda n: -n._serial):
            if t._backward is None or t._grad is None:
                continue
            for parent, pg in zip(t._parents, t._backward(t._grad)):
                if parent.requires_grad and pg is not None:
                    parent._accum(pg)

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, scale(other, -1.0))
        return shift(self, -float(other))

    def __truediv__(self, other):
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis, keepdims)


def _op(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    """Build an op output, recording the graph only when a parent needs it."""
    out = Tensor(data, dtype=data.dtype)
    if any(p.requires_grad or p._backward is not None for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- arithmetic ----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}")
    return _op(data, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}")
    return _op(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    return _op(a.data * a.data.dtype.type(c), (a,), lambda g: (g * a.data.dtype.type(c),))


def shift(a: Tensor, c: float) -> Tensor:
    return _op(a.data + a.data.dtype.type(c), (a,), lambda g: (g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _op(data, (a, b), backward)


# -- shape ops -----------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    return _op(data, (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeError(f"transpose axes {axes} invalid for ndim {a.data.ndim}")
    inv = tuple(np.argsort(axes))
    return _op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` entries from `start` along one axis."""
    axis = axis % a.data.ndim
    if start < 0 or length < 0 or start + length > a.data.shape[axis]:
        raise ShapeError(
            f"narrow [{start}:{start + length}] out of range for axis {axis} of {a.shape}"
        )
    sl = tuple(slice(None) if i != axis else slice(start, start + length) for i in range(a.data.ndim))

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[sl] = g
        return (ga,)

    return _op(a.data[sl].copy(), (a,), backward)


def concat(parts: list[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    axis = axis % parts[0].data.ndim
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: mismatched shapes {[p.shape for p in parts]}")
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _op(data, tuple(parts), backward)


# -- reductions ----------------------------------------------------------


def _expand_reduced(g, src_shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(src_shape)), src_shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(src_shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, src_shape)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)
    return _op(
        np.asarray(data, dtype=a.data.dtype),
        (a,),
        lambda g: (_expand_reduced(g, a.data.shape, axis, keepdims).copy(),),
    )


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.mean(axis=axis, keepdims=keepdims, dtype=a.data.dtype)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax % a.data.ndim] for ax in ((axis,) if isinstance(axis, int) else axis)]
    )
    inv = a.data.dtype.type(1.0 / n)
    return _op(
        np.asarray(data, dtype=a.data.dtype),
        (a,),
        lambda g: (_expand_reduced(g * inv, a.data.shape, axis, keepdims).copy(),),
    )


# -- nonlinearities -------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _op(y, (a,), backward)


def layer_norm(a: Tensor, gain: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean and unit variance, then scale."""
    d = a.data.shape[-1]
    if gain.data.shape != (d,):
        raise ShapeError(f"layer_norm gain shape {gain.shape} != ({d},)")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True, dtype=x.dtype)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True, dtype=x.dtype)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv

    def backward(g):
        dgain = (g * xhat).reshape(-1, d).sum(axis=0)
        dxhat = g * gain.data
        term = dxhat.mean(axis=-1, keepdims=True) + xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        return (inv * (dxhat - term), dgain.astype(gain.data.dtype))

    return _op(xhat * gain.data, (a, gain), backward)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact-erf gaussian error linear unit."""
    x = a.data
    phi = 0.5 * (1.0 + erf(x * x.dtype.type(_INV_SQRT2)))
    phi = phi.astype(x.dtype, copy=False)

    def backward(g):
        dens = np.exp(-0.5 * x * x) * x.dtype.type(_INV_SQRT2PI)
        return (g * (phi + x * dens),)

    return _op(x * phi, (a,), backward)


# -- attention helpers -----------------------------------------------------


def rope_apply(a: Tensor, positions=None, base: float = 10000.0) -> Tensor:
    """Rotate interleaved feature pairs by position-dependent angles.

    Pair j of the last axis turns by pos * base**(-2j/d). Shape
    [..., T, d] with even d; `positions` defaults to 0..T-1.
    """
    d = a.data.shape[-1]
    if d % 2:
        raise ShapeError(f"rope needs an even last axis, got {d}")
    t = a.data.shape[-2]
    pos = np.arange(t, dtype=np.float64) if positions is None else np.asarray(positions, dtype=np.float64)
    if pos.shape != (t,):
        raise ShapeError(f"positions shape {pos.shape} != ({t},)")
    theta = base ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    ang = pos[:, None] * theta[None, :]
    cos = np.cos(ang).astype(a.data.dtype)
    sin = np.sin(ang).astype(a.data.dtype)
    even = a.data[..., 0::2]
    odd = a.data[..., 1::2]
    out = np.empty_like(a.data)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos

    def backward(g):
        g0 = g[..., 0::2]
        g1 = g[..., 1::2]
        ga = np.empty_like(g)
        ga[..., 0::2] = g0 * cos + g1 * sin
        ga[..., 1::2] = -g0 * sin + g1 * cos
        return (ga,)

    return _op(out, (a,), backward)


def causal_mask(t: int, window: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """[t, t] additive mask: 0 where key in [max(0, q-window+1), q], else MASK_CONST."""
    q = np.arange(t)[:, None]
    k = np.arange(t)[None, :]
    allowed = (k <= q) & (k > q - window)
    return np.where(allowed, dtype(0.0), dtype(MASK_CONST))


def add_mask(a: Tensor, mask: np.ndarray) -> Tensor:
    """Add a constant (non-learned) additive mask, broadcast over leading axes."""
    try:
        data = a.data + mask.astype(a.data.dtype, copy=False)
    except ValueError:
        raise ShapeError(f"mask shape {mask.shape} does not broadcast to {a.shape}")
    return _op(data, (a,), lambda g: (g,))


# -- table and index ops ----------------------------------------------------


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup: out[..., :] = table[ids[...], :]."""
    ids = np.asarray(ids)
    v, d = table.data.shape
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        raise DataError(f"embedding ids outside [0, {v})")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.ravel(), g.reshape(-1, d))
        return (gt,)

    return _op(table.data[ids], (table,), backward)


def gather_time(x: Tensor, idx) -> Tensor:
    """out[b, k, :] = x[b, idx[b, k], :] for x of shape [B, T, D]."""
    idx = np.asarray(idx, dtype=np.int64)
    b, t, d = x.data.shape
    if idx.ndim != 2 or idx.shape[0] != b:
        raise ShapeError(f"gather_time idx shape {idx.shape} mismatches batch {b}")
    if idx.size and (idx.min() < 0 or idx.max() >= t):
        raise ShapeError(f"gather_time indices outside [0, {t})")
    data = np.take_along_axis(x.data, idx[:, :, None], axis=1)
    flat_idx = (idx + np.arange(b)[:, None] * t).ravel()

    def backward(g):
        gx = np.zeros_like(x.data).reshape(b * t, d)
        np.add.at(gx, flat_idx, g.reshape(-1, d))
        return (gx.reshape(b, t, d),)

    return _op(data, (x,), backward)


def scatter_add_time(x: Tensor, idx, y: Tensor, counts) -> Tensor:
    """out = x, plus y[b, k, :] added at x[b, idx[b, k], :] for k < counts[b]."""
    idx = np.asarray(idx, dtype=np.int64)
    counts = np.asarray(counts, dtype=np.int64)
    b, t, d = x.data.shape
    g_slots = idx.shape[1]
    if y.data.shape != (b, g_slots, d):
        raise ShapeError(f"scatter_add_time y shape {y.shape} != {(b, g_slots, d)}")
    if idx.size and (idx.min() < 0 or idx.max() >= t):
        raise ShapeError(f"scatter_add_time indices outside [0, {t})")
    valid = np.arange(g_slots)[None, :] < counts[:, None]
    flat_idx = (idx + np.arange(b)[:, None] * t)[valid]
    data = x.data.copy().reshape(b * t, d)
    np.add.at(data, flat_idx, y.data[valid])

    def backward(g):
        gy = np.take_along_axis(g, idx[:, :, None], axis=1)
        gy = np.where(valid[:, :, None], gy, 0.0).astype(y.data.dtype)
        return (g, gy)

    return _op(data.reshape(b, t, d), (x, y), backward)


# -- loss -------------------------------------------------------------------


def cross_entropy_masked(logits: Tensor, targets) -> Tensor:
    """Mean token cross-entropy in nats; target -1 means "score nothing here".

    Ignored positions contribute neither to the value nor the gradient.
    All targets ignored yields exactly 0 with zero gradient.
    """
    targets = np.asarray(targets, dtype=np.int64)
    v = logits.data.shape[-1]
    if targets.shape != logits.data.shape[:-1]:
        raise ShapeError(f"targets shape {targets.shape} != logits {logits.data.shape[:-1]}")
    if targets.size and (targets.min() < -1 or targets.max() >= v):
        raise DataError(f"targets must lie in [-1, {v})")
    x = logits.data.reshape(-1, v)
    t = targets.ravel()
    valid = t >= 0
    count = int(valid.sum())
    m = x.max(axis=1, keepdims=True)
    z = np.exp(x - m)
    lse = m[:, 0] + np.log(z.sum(axis=1))
    if count:
        rows = np.flatnonzero(valid)
        nll = lse[rows] - x[rows, t[rows]]
        value = nll.sum(dtype=np.float64) / count
    else:
        value = 0.0
    if not np.isfinite(value):
        raise NumericError("non-finite cross-entropy")

    def backward(g):
        if count == 0:
            return (np.zeros_like(logits.data),)
        p = z / z.sum(axis=1, keepdims=True)
        rows = np.flatnonzero(valid)
        p[rows, t[rows]] -= 1.0
        p[~valid] = 0.0
        p *= float(g) / count
        return (p.reshape(logits.data.shape).astype(logits.data.dtype),)

    return _op(np.asarray(value, dtype=logits.data.dtype), (logits,), backward)
