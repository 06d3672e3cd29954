"""Dense float64 tensors with a reverse-mode tape.

Every op records its parents and a closure that maps the output gradient
to parent gradients.  Broadcasting is deliberately absent apart from a
row-wise bias add and a shared right-hand weight in ``matmul``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, GraphError, NonFiniteError

__all__ = [
    "Tensor", "tensor", "parameter", "add", "sub", "mul", "scale", "add_bias",
    "matmul", "transpose", "reshape", "concat", "take", "embedding", "tsum",
    "mean", "gelu", "layer_norm", "softmax_rows", "log_softmax_rows",
    "scaled_dot_attention", "backward", "OptimizerState", "adam_step",
]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "_released")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values produced by {op}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = tuple(_parents)
        self._backward = _backward
        self.op = op
        self._released = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return not self._parents

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data.copy()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def backward(self, retain_graph=False):
        backward(self, retain_graph=retain_graph)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def parameter(data):
    return Tensor(data, requires_grad=True)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn, op):
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, op=op)


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def add_bias(x, b):
    """x[..., n] + b[n]; the only broadcasting the tape allows."""
    x, b = _as_tensor(x), _as_tensor(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"add_bias: bias {b.shape} does not match rows of {x.shape}")
    lead = tuple(range(x.ndim - 1))
    return _node(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=lead)), "add_bias")


def matmul(a, b):
    """(..., m, k) @ (k, n) with a shared right operand, or equal leading dims."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    shared = b.ndim == 2 and a.ndim > 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch dims differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if shared:
            k, n = bd.shape
            gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _node(ad @ bd, (a, b), back, "matmul")


def transpose(x):
    x = _as_tensor(x)
    if x.ndim < 2:
        raise DimensionError("transpose needs >=2-D input")
    return _node(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def reshape(x, shape):
    x = _as_tensor(x)
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors, axis=0):
    ts = [_as_tensor(t) for t in tensors]
    ts = [t for t in ts if t.data.size or len(ts) == 1]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(out, tuple(ts), back, "concat")


def take(x, key):
    """Basic or integer-array indexing; gradients scatter back with add.at."""
    x = _as_tensor(x)
    out = x.data[key]
    shape = x.shape

    def back(g):
        gx = np.zeros(shape)
        np.add.at(gx, key, g)
        return (gx,)

    return _node(np.array(out), (x,), back, "take")


def embedding(table, ids):
    """Row gather ``table[ids]`` for an integer array of any shape."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range for table of {table.shape[0]} rows")
    return take(table, ids)


def tsum(x):
    x = _as_tensor(x)
    shape = x.shape
    return _node(x.data.sum(), (x,), lambda g: (np.full(shape, float(g)),), "sum")


def mean(x):
    x = _as_tensor(x)
    n = x.data.size
    return scale(tsum(x), 1.0 / n)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x):
    """tanh-approximate GELU; smooth everywhere, unlike ReLU."""
    x = _as_tensor(x)
    xd = x.data
    x2 = xd * xd
    t = np.tanh(_GELU_C * xd * (1.0 + 0.044715 * x2))
    out = 0.5 * xd * (1.0 + t)

    def back(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t**2) * du),)

    return _node(out, (x,), back, "gelu")


def layer_norm(x, gain, bias, eps=1e-5):
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError("layer_norm: gain/bias must match the last dim")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc**2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    lead = tuple(range(x.ndim - 1))

    def back(g):
        gh = g * gain.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _node(out, (x, gain, bias), back, "layer_norm")


def _row_mask(x, mask):
    if mask is None:
        return None
    m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not m.any(axis=-1).all():
        raise ValueError("softmax_rows: a row has every entry masked")
    return m


def softmax_rows(x, mask=None):
    """Softmax over the last axis; ``mask`` (bool, broadcastable) keeps True entries."""
    x = _as_tensor(x)
    if x.ndim < 2:
        raise DimensionError("softmax_rows expects a matrix or a stack of matrices")
    if x.shape[-1] == 0:
        raise ValueError("softmax_rows: empty row")
    m = _row_mask(x, mask)
    z = x.data if m is None else np.where(m, x.data, -np.inf)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _node(p, (x,), back, "softmax_rows")


def log_softmax_rows(x, mask=None):
    """Log-softmax over the last axis; masked entries come out as 0 with no gradient."""
    x = _as_tensor(x)
    if x.ndim < 1 or x.shape[-1] == 0:
        raise ValueError("log_softmax_rows: empty row")
    m = _row_mask(x, mask)
    z = x.data if m is None else np.where(m, x.data, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    if m is not None:
        out = np.where(m, out, 0.0)

    def back(g):
        if m is not None:
            g = np.where(m, g, 0.0)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _node(out, (x,), back, "log_softmax_rows")


def scaled_dot_attention(q, k, v, scale_by=None, mask=None, return_weights=False):
    """softmax(q kᵀ / scale) v over the last two axes."""
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"attention: key width {k.shape[-1]} != query width {q.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError("attention: keys and values differ in length")
    if scale_by is None:
        scale_by = np.sqrt(q.shape[-1])
    w = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / scale_by), mask=mask)
    out = matmul(w, v)
    return (out, w) if return_weights else out


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, retain_graph=False):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf on the tape."""
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node._released:
                raise GraphError(f"backward reached a released {node.op} node; use retain_graph=True")
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    if not retain_graph:
        for node in order:
            if not node.is_leaf:
                node._parents = ()
                node._backward = None
                node._released = True


@dataclass
class OptimizerState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ConfigError("Adam needs beta1, beta2 in [0, 1) and eps > 0")


def adam_step(state, params, grads=None):
    """One in-place Adam update; ``grads`` defaults to each param's ``.grad``."""
    if not state.lr > 0:
        raise ConfigError(f"learning rate must be > 0, got {state.lr}")
    if grads is None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    if len(grads) != len(params):
        raise DimensionError("adam_step: one gradient per parameter required")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise DimensionError(f"adam_step: grad {g.shape} vs param {p.shape}")
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        mhat = state.m[i] / (1 - b1**t)
        vhat = state.v[i] / (1 - b2**t)
        p.data = p.data - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return params
