"""Dense tensors with reverse-mode automatic differentiation.

The tape is the implicit graph of op records built during a forward pass
(define-by-run): every op output stores its parents, a backward rule, and
a monotonically increasing creation index. ``backward`` walks the records
reachable from a scalar loss in exact reverse creation order, which is a
valid topological order by construction. Calling ``backward`` twice on
the same output without re-running the forward pass is an error.

Reference precision is 64-bit. ``set_dtype(np.float32)`` switches to a
faster 32-bit mode; gradient checks are only meaningful in 64-bit.

Broadcasting is restricted to scalar-tensor; anything else goes through
``expand`` so shape bugs fail loudly. Non-smooth ops (abs, relu, L2 norm)
take subgradient 0 at their kinks.
"""

import itertools
from math import prod

import numpy as np

from .errors import DataError, NumericError

_DTYPE = np.float64
_ORDER = itertools.count()


class ShapeError(DataError):
    """Operand shapes violate an op's contract."""


class DomainError(NumericError):
    """Op evaluated outside its numeric domain (log of <= 0, x/0, ...)."""


def set_dtype(dtype):
    """Switch the element type for newly created tensors (performance mode)."""
    global _DTYPE
    if dtype not in (np.float32, np.float64):
        raise DataError(f"unsupported dtype {dtype!r}; use np.float32 or np.float64")
    _DTYPE = dtype


def get_dtype():
    return _DTYPE


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "_order", "_done")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = "leaf"
        self._parents = ()
        self._backward = None
        self._order = next(_ORDER)
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item: tensor has {self.data.size} elements")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __abs__(self):
        return absval(self)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def backward(self):
        backward(self)


def constant(data):
    return Tensor(data, requires_grad=False)


def parameter(data):
    return Tensor(data, requires_grad=True)


def zeros(shape):
    return Tensor(np.zeros(shape, dtype=_DTYPE))


def _result(data, op, parents, back):
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = back
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _is_scalar(t):
    return t.data.ndim == 0 or t.data.size == 1 and t.data.ndim <= 1


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf.

    ``loss`` must be a scalar. Leaves not connected to ``loss`` keep
    ``grad=None``, which downstream code treats as zero.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._done:
        raise RuntimeError("backward already ran on this output; re-run the forward pass first")
    loss._done = True

    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda t: t._order, reverse=True)

    grads = {id(loss): np.ones_like(loss.data)}
    for t in nodes:
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t._parents:
            for p, pg in zip(t._parents, t._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else acc + pg
        elif t.requires_grad:
            t.grad = g if t.grad is None else t.grad + g


def gradient(loss, leaves):
    """Run backward and return d(loss)/d(leaf) for each leaf.

    Resets the listed leaves' ``grad`` first; disconnected leaves get zeros.
    """
    for leaf in leaves:
        leaf.grad = None
    backward(loss)
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        return _result(a.data + b.data, "add", (a, b), lambda g: (g, g))
    if _is_scalar(b):
        return _result(a.data + b.data, "add", (a, b), lambda g: (g, np.sum(g).reshape(b.shape)))
    if _is_scalar(a):
        return _result(a.data + b.data, "add", (a, b), lambda g: (np.sum(g).reshape(a.shape), g))
    raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        return _result(a.data - b.data, "sub", (a, b), lambda g: (g, -g))
    if _is_scalar(b):
        return _result(a.data - b.data, "sub", (a, b), lambda g: (g, -np.sum(g).reshape(b.shape)))
    if _is_scalar(a):
        return _result(a.data - b.data, "sub", (a, b), lambda g: (np.sum(g).reshape(a.shape), -g))
    raise ShapeError(f"sub: shape mismatch {a.shape} vs {b.shape}")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        return _result(a.data * b.data, "mul", (a, b), lambda g: (g * b.data, g * a.data))
    if _is_scalar(b):
        return _result(
            a.data * b.data, "mul", (a, b), lambda g: (g * b.data, np.sum(g * a.data).reshape(b.shape))
        )
    if _is_scalar(a):
        return _result(
            a.data * b.data, "mul", (a, b), lambda g: (np.sum(g * b.data).reshape(a.shape), g * a.data)
        )
    raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if np.any(b.data == 0.0):
        raise DomainError("div: division by zero")
    if a.shape == b.shape:
        return _result(
            a.data / b.data,
            "div",
            (a, b),
            lambda g: (g / b.data, -g * a.data / (b.data * b.data)),
        )
    if _is_scalar(b):
        return _result(
            a.data / b.data,
            "div",
            (a, b),
            lambda g: (g / b.data, np.sum(-g * a.data / (b.data * b.data)).reshape(b.shape)),
        )
    if _is_scalar(a):
        return _result(
            a.data / b.data,
            "div",
            (a, b),
            lambda g: (np.sum(g / b.data).reshape(a.shape), -g * a.data / (b.data * b.data)),
        )
    raise ShapeError(f"div: shape mismatch {a.shape} vs {b.shape}")


def neg(a):
    a = _as_tensor(a)
    return _result(-a.data, "neg", (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# linear algebra and structure


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    return _result(
        a.data @ b.data, "matmul", (a, b), lambda g: (g @ b.data.T, a.data.T @ g)
    )


def transpose(a):
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expects 2-D, got {a.shape}")
    return _result(a.data.T.copy(), "transpose", (a,), lambda g: (g.T,))


def concat(tensors, axis):
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: empty input list")
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _result(data, "concat", ts, back)


def getitem(a, key):
    a = _as_tensor(a)
    out = a.data[key]
    if isinstance(out, np.ndarray):
        out = out.copy()

    def back(g):
        z = np.zeros_like(a.data)
        z[key] = g
        return (z,)

    return _result(out, "slice", (a,), back)


def expand(a, axis, n):
    """Tile a length-1 axis to length ``n`` (explicit broadcast)."""
    a = _as_tensor(a)
    if axis >= a.data.ndim or a.shape[axis] != 1:
        raise ShapeError(f"expand: axis {axis} of shape {a.shape} must have extent 1")
    return _result(
        np.repeat(a.data, n, axis=axis),
        "expand",
        (a,),
        lambda g: (np.sum(g, axis=axis, keepdims=True),),
    )


def _unreduce(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    data = np.sum(a.data, axis=axis, keepdims=keepdims)
    return _result(data, "sum", (a,), lambda g: (_unreduce(g, a.shape, axis, keepdims),))


def tmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    count = a.data.size if axis is None else prod(
        a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))
    )
    data = np.mean(a.data, axis=axis, keepdims=keepdims)
    return _result(data, "mean", (a,), lambda g: (_unreduce(g, a.shape, axis, keepdims) / count,))


# ---------------------------------------------------------------------------
# nonlinearities


def sigmoid(a):
    a = _as_tensor(a)
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _result(y, "sigmoid", (a,), lambda g: (g * y * (1.0 - y),))


def relu(a):
    a = _as_tensor(a)
    return _result(np.maximum(a.data, 0.0), "relu", (a,), lambda g: (g * (a.data > 0),))


def exp(a):
    a = _as_tensor(a)
    y = np.exp(a.data)
    if not np.all(np.isfinite(y)):
        raise DomainError("exp: overflow to non-finite value")
    return _result(y, "exp", (a,), lambda g: (g * y,))


def log(a):
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log: non-positive input")
    return _result(np.log(a.data), "log", (a,), lambda g: (g / a.data,))


def absval(a):
    a = _as_tensor(a)
    return _result(np.abs(a.data), "abs", (a,), lambda g: (g * np.sign(a.data),))


def powf(a, p):
    a = _as_tensor(a)
    p = float(p)
    if p != int(p) and np.any(a.data < 0.0):
        raise DomainError("powf: fractional power of negative base")
    if p < 0 and np.any(a.data == 0.0):
        raise DomainError("powf: zero base with negative exponent")
    y = a.data**p
    if not np.all(np.isfinite(y)):
        raise DomainError("powf: non-finite result")

    def back(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = p * a.data ** (p - 1.0)
        return (g * np.where(np.isfinite(d), d, 0.0),)

    return _result(y, "powf", (a,), back)


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient passes through unclamped elements only."""
    a = _as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), "clip", (a,), lambda g: (g * mask,))


def softmax(a, axis):
    a = _as_tensor(a)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def back(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _result(y, "softmax", (a,), back)


# ---------------------------------------------------------------------------
# norms and composites


def l2_norm(a, axis=None, keepdims=False):
    """Euclidean norm over ``axis``; subgradient 0 at the zero vector."""
    a = _as_tensor(a)
    n = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=keepdims))

    def back(g):
        full = _unreduce(g, a.shape, axis, keepdims)
        nfull = _unreduce(n, a.shape, axis, keepdims)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(nfull > 0, a.data / nfull, 0.0)
        return (full * d,)

    return _result(n, "l2_norm", (a,), back)


def l1_norm(a, axis=None, keepdims=False):
    return tsum(absval(a), axis, keepdims)


def cosine_similarity(u, v, axis=0, eps=1e-8):
    """Cosine of the angle between slices of u and v along ``axis``.

    ``eps`` is added inside each squared norm so zero vectors stay finite.
    """
    u, v = _as_tensor(u), _as_tensor(v)
    _check_same_shape("cosine_similarity", u, v)
    num = tsum(mul(u, v), axis)
    du = powf(add(tsum(mul(u, u), axis), eps), 0.5)
    dv = powf(add(tsum(mul(v, v), axis), eps), 0.5)
    return div(num, mul(du, dv))


def layer_norm(a, axis, eps=1e-5):
    """Normalize to zero mean / unit variance along ``axis`` (no affine)."""
    a = _as_tensor(a)
    n = a.shape[axis]
    mu = tmean(a, axis, keepdims=True)
    centered = sub(a, expand(mu, axis, n))
    var = tmean(mul(centered, centered), axis, keepdims=True)
    inv = powf(add(var, eps), -0.5)
    return mul(centered, expand(inv, axis, n))
