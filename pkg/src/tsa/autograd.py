"""A small reverse-mode automatic differentiation library on top of numpy.

Every operation builds a node holding its output array, its parent tensors and
a closure that maps the upstream gradient to one gradient per parent.
:func:`backward` walks the graph in reverse topological order.  Gradients of
leaf tensors accumulate in ``Tensor.grad`` until :meth:`Tensor.zero_grad`;
gradients of intermediate nodes are discarded once propagated.

Arrays are 64-bit floats throughout.
"""

import math

import numpy as np

from .errors import InvalidClass, NotScalar, RangeOutOfBounds, ShapeMismatch

DTYPE = np.float64
_GELU_C = math.sqrt(2.0 / math.pi)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------- graph walk


def _topological_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent._parents and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss):
    """Populate ``grad`` on every leaf tensor that ``loss`` depends on."""
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar, got shape {loss.shape}")
    seed = np.ones_like(loss.data)
    if not loss._parents:
        if loss.requires_grad:
            loss.grad = seed if loss.grad is None else loss.grad + seed
        return
    pending = {id(loss): seed}
    for node in reversed(_topological_order(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._parents:
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg
            else:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), back)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), back)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), back)


def gelu(x):
    """tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    x = as_tensor(x)
    xd = x.data
    x2 = xd * xd
    t = np.tanh(_GELU_C * xd * (1.0 + 0.044715 * x2))
    out = 0.5 * xd * (1.0 + t)

    def back(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

    return _node(out, (x,), back)


def dropout(x, rate, rng):
    """Inverted dropout; identity when ``rate`` is 0."""
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def back(g):
        return (g * keep,)

    return _node(x.data * keep, (x,), back)


# ---------------------------------------------------------------- shape ops


def reshape(x, shape):
    old = x.shape

    def back(g):
        return (g.reshape(old),)

    return _node(x.data.reshape(shape), (x,), back)


def transpose(x, axes):
    inverse = np.argsort(axes)

    def back(g):
        return (g.transpose(inverse),)

    return _node(x.data.transpose(axes), (x,), back)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    """Matrix product; leading axes of ``a`` broadcast against a 2-D ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    out = a.data @ b.data

    if b.ndim == 2:
        k, n = b.shape

        def back(g):
            ga = g @ b.data.T
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            return ga, gb

    else:

        def back(g):
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            return ga, gb

    return _node(out, (a, b), back)


def linear(x, weight, bias):
    """``x @ weight + bias`` with ``x`` of shape (..., in)."""
    if x.shape[-1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise ShapeMismatch(f"linear: x {x.shape}, weight {weight.shape}, bias {bias.shape}")
    k, n = weight.shape
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, k)
    out = (x2 @ weight.data + bias.data).reshape(lead + (n,))

    def back(g):
        g2 = g.reshape(-1, n)
        return (g2 @ weight.data.T).reshape(x.shape), x2.T @ g2, g2.sum(axis=0)

    return _node(out, (x, weight, bias), back)


# ---------------------------------------------------------------- normalisation


def softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _node(s, (x,), back)


def layer_norm(x, gamma, beta, eps=1e-12):
    """Normalise over the last axis with population variance."""
    h = x.shape[-1]
    if gamma.shape != (h,) or beta.shape != (h,):
        raise ShapeMismatch(f"layer_norm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gamma.data + beta.data

    def back(g):
        gx_hat = g * gamma.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        g2 = g.reshape(-1, h)
        return gx, (g2 * xhat.reshape(-1, h)).sum(axis=0), g2.sum(axis=0)

    return _node(out, (x, gamma, beta), back)


# ---------------------------------------------------------------- indexing


def embedding(weight, ids):
    """Row lookup ``weight[ids]`` for an integer array ``ids`` of any shape."""
    ids = np.asarray(ids, dtype=np.int64)

    def back(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (gw,)

    return _node(weight.data[ids], (weight,), back)


def select_rows(h, positions):
    """Pick one row per batch item: ``h[b, positions[b]]`` for ``h`` of shape (B, T, H)."""
    positions = np.asarray(positions, dtype=np.int64)
    batch = np.arange(h.shape[0])
    if np.any(positions < 0) or np.any(positions >= h.shape[1]):
        raise RangeOutOfBounds(f"positions {positions} outside sequence of {h.shape[1]}")

    def back(g):
        gh = np.zeros_like(h.data)
        gh[batch, positions] = g
        return (gh,)

    return _node(h.data[batch, positions], (h,), back)


def masked_max_pool(h, span):
    """Elementwise max over rows ``first..last`` (inclusive) of a (T, H) tensor.

    The gradient goes to the arg-max row of every column, ties resolved to
    the lowest row index.
    """
    first, last = span
    if not 0 <= first <= last < h.shape[0]:
        raise RangeOutOfBounds(f"range {span} outside {h.shape[0]} rows")
    out = span_max_pool(reshape(h, (1,) + h.shape), [first], [last])
    return reshape(out, (h.shape[1],))


def span_max_pool(h, firsts, lasts):
    """Batched :func:`masked_max_pool` for ``h`` of shape (B, T, H)."""
    firsts = np.asarray(firsts, dtype=np.int64)
    lasts = np.asarray(lasts, dtype=np.int64)
    b, t, _ = h.shape
    if np.any(firsts < 0) or np.any(lasts >= t) or np.any(firsts > lasts):
        raise RangeOutOfBounds(f"ranges {list(zip(firsts, lasts))} outside {t} rows")
    pos = np.arange(t)
    inside = (pos >= firsts[:, None]) & (pos <= lasts[:, None])
    masked = np.where(inside[:, :, None], h.data, -np.inf)
    arg = masked.argmax(axis=1)
    batch = np.arange(b)[:, None]
    cols = np.arange(h.shape[2])[None, :]
    out = masked[batch, arg, cols]

    def back(g):
        gh = np.zeros_like(h.data)
        gh[batch, arg, cols] = g
        return (gh,)

    return _node(out, (h,), back)


# ---------------------------------------------------------------- reductions and loss


def sum_all(x):
    x = as_tensor(x)

    def back(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(x.data.sum(), (x,), back)


def mean_all(x):
    x = as_tensor(x)
    n = x.size

    def back(g):
        return (np.full(x.shape, float(g) / n),)

    return _node(x.data.mean(), (x,), back)


def weighted_cross_entropy(logits, gold, weights):
    """Class-weighted negative log-likelihood of ``gold`` under ``softmax(logits)``.

    ``logits`` is (C,) with an integer ``gold`` or (B, C) with a length-B
    array; in the batched case the per-example losses are averaged.
    """
    logits = as_tensor(logits)
    w = np.asarray(weights.data if isinstance(weights, Tensor) else weights, dtype=DTYPE)
    single = logits.ndim == 1
    z = logits.data.reshape(1, -1) if single else logits.data
    n, c = z.shape
    gold = np.atleast_1d(np.asarray(gold, dtype=np.int64))
    if gold.shape != (n,) or np.any(gold < 0) or np.any(gold >= c):
        raise InvalidClass(f"gold labels {gold.tolist()} invalid for {c} classes")
    if w.shape != (c,):
        raise ShapeMismatch(f"weights {w.shape} for {c} classes")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    rows = np.arange(n)
    wg = w[gold]
    loss = -(wg * logp[rows, gold]).mean()

    def back(g):
        grad = np.exp(logp)
        grad[rows, gold] -= 1.0
        grad *= (wg / n)[:, None] * g
        return (grad.reshape(logits.shape),)

    return _node(loss, (logits,), back)
