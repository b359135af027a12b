"""Tape-based reverse-mode automatic differentiation over float64 numpy arrays.

Operations are only recorded while a :class:`Tape` is active and at least one
input requires a gradient.  Outside a tape every op is a plain numpy
computation, which is how evaluation passes avoid graph bookkeeping.

    >>> w = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_(w * w)
    >>> backward(loss)
    >>> w.grad
    array([2., 4.])
"""

import itertools

import numpy as np
from scipy.special import ndtr

__all__ = [
    "ShapeError", "Tensor", "Tape", "backward", "active_tape", "constant",
    "add", "sub", "mul", "div", "neg", "matmul", "transpose", "reshape",
    "sum_", "mean", "exp", "log", "square", "abs_", "sigmoid", "tanh", "relu",
    "gelu", "softplus", "softmax", "log_softmax", "layer_norm", "concat",
    "append_one", "affine", "stack", "getitem", "embedding", "dropout",
    "cross_entropy", "forward_primitive",
]

LAYER_NORM_EPS = 1e-12

_ids = itertools.count()
_tapes = []


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with a primitive."""


def active_tape():
    return _tapes[-1] if _tapes else None


class Tape:
    """Ordered record of the nodes created while it is active.

    Recording order is a topological order of the graph, so walking the
    record backwards is a valid reverse traversal.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tapes.append(self)
        return self

    def __exit__(self, *exc):
        _tapes.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss):
        backward(loss)


class Tensor:
    """A float64 array that may take part in a recorded computation."""

    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn",
                 "node_id", "name", "tape", "__weakref__")

    __array_priority__ = 100

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.array(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.value) if requires_grad else None
        self.parents = ()
        self.backward_fn = None
        self.node_id = next(_ids)
        self.name = name
        self.tape = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def is_leaf(self):
        return self.backward_fn is None

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.value)

    def numpy(self):
        return self.value

    def item(self):
        return float(self.value)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)


def constant(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward_fn):
    out = Tensor.__new__(Tensor)
    out.value = value
    out.grad = None
    out.parents = ()
    out.backward_fn = None
    out.node_id = next(_ids)
    out.name = None
    out.tape = None
    out.requires_grad = False
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = backward_fn
        out.tape = tape
        tape.nodes.append(out)
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def backward(loss):
    """Accumulate d(loss)/d(node) into ``grad`` for every node feeding ``loss``.

    Gradients of intermediate nodes are reset on each call; leaf gradients
    accumulate until zeroed (``sgd_step`` zeroes them after updating).
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        shape = loss.shape if isinstance(loss, Tensor) else type(loss).__name__
        raise ShapeError(f"backward needs a scalar loss, got shape {shape}")
    if loss.tape is None:
        if loss.requires_grad and loss.grad is not None:
            loss.grad += 1.0
        return
    nodes = loss.tape.nodes
    for node in nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    stop = nodes.index(loss)
    for node in reversed(nodes[:stop + 1]):
        if node.grad is None:
            continue
        grads = node.backward_fn(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            g = _unbroadcast(np.asarray(g, dtype=np.float64), parent.value.shape)
            if parent.grad is None:
                parent.grad = g.copy()
            else:
                parent.grad += g


# --- elementwise arithmetic -------------------------------------------------

def add(a, b):
    a, b = constant(a), constant(b)
    _check_broadcast("add", a, b)
    return _node(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = constant(a), constant(b)
    _check_broadcast("sub", a, b)
    return _node(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = constant(a), constant(b)
    _check_broadcast("mul", a, b)
    av, bv = a.value, b.value
    return _node(av * bv, (a, b), lambda g: (g * bv, g * av))


def div(a, b):
    a, b = constant(a), constant(b)
    _check_broadcast("div", a, b)
    av, bv = a.value, b.value
    return _node(av / bv, (a, b), lambda g: (g / bv, -g * av / (bv * bv)))


def neg(a):
    a = constant(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def exp(a):
    a = constant(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    a = constant(a)
    av = a.value
    with np.errstate(divide="ignore"):
        out = np.log(av)
    return _node(out, (a,), lambda g: (g / av,))


def square(a):
    a = constant(a)
    av = a.value
    return _node(av * av, (a,), lambda g: (2.0 * g * av,))


def abs_(a):
    a = constant(a)
    av = a.value
    return _node(np.abs(av), (a,), lambda g: (g * np.sign(av),))


# --- activations --------------------------------------------------------------

def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(a):
    a = constant(a)
    out = _sigmoid(a.value)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    a = constant(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a):
    a = constant(a)
    av = a.value
    return _node(np.maximum(av, 0.0), (a,), lambda g: (g * (av > 0.0),))


_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a):
    """Exact GELU, x * Phi(x)."""
    a = constant(a)
    av = a.value
    cdf = ndtr(av)
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * av * av)
    return _node(av * cdf, (a,), lambda g: (g * (cdf + av * pdf),))


def softplus(a):
    a = constant(a)
    av = a.value
    return _node(np.logaddexp(0.0, av), (a,), lambda g: (g * _sigmoid(av),))


def softmax(a, axis=-1):
    a = constant(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), grad_fn)


def _log_softmax(x, axis=-1):
    m = x.max(axis=axis, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def log_softmax(a, axis=-1):
    a = constant(a)
    out = _log_softmax(a.value, axis)

    def grad_fn(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), grad_fn)


def layer_norm(x, gain, bias, eps=LAYER_NORM_EPS):
    """Normalize over the last axis, then apply elementwise gain and bias."""
    x, gain, bias = constant(x), constant(gain), constant(bias)
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise ShapeError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} must be ({width},)")
    mu = x.value.mean(axis=-1, keepdims=True)
    xc = x.value - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gv = gain.value

    def grad_fn(g):
        gx_hat = g * gv
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, g * xhat, g

    return _node(xhat * gv + bias.value, (x, gain, bias), grad_fn)


# --- shape and linear algebra -------------------------------------------------

def matmul(a, b):
    a, b = constant(a), constant(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    av, bv = a.value, b.value

    def grad_fn(g):
        return g @ np.swapaxes(bv, -1, -2), np.swapaxes(av, -1, -2) @ g

    return _node(av @ bv, (a, b), grad_fn)


def transpose(a):
    """Swap the last two axes."""
    a = constant(a)
    return _node(np.swapaxes(a.value, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape):
    a = constant(a)
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {shape}") from None
    return _node(out, (a,), lambda g: (g.reshape(old),))


def sum_(a, axis=None):
    a = constant(a)
    shape = a.shape

    def grad_fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _node(np.asarray(a.value.sum(axis=axis)), (a,), grad_fn)


def mean(a, axis=None):
    a = constant(a)
    count = a.size if axis is None else a.shape[axis]
    return sum_(a, axis) * (1.0 / count)


def concat(tensors, axis=-1):
    tensors = [constant(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
                i != ax and p != q for i, (p, q) in enumerate(zip(t.shape, ref))):
            raise ShapeError(f"concat: incompatible shapes {[x.shape for x in tensors]} on axis {axis}")
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=ax))

    return _node(np.concatenate([t.value for t in tensors], axis=ax), tuple(tensors), grad_fn)


def append_one(a):
    """Append a constant-one column on the last axis (the folded bias input)."""
    a = constant(a)
    ones = np.ones(a.shape[:-1] + (1,))
    return _node(np.concatenate([a.value, ones], axis=-1), (a,), lambda g: (g[..., :-1],))


def affine(x, weight):
    """``weight @ [x, 1]`` applied along the last axis of ``x``.

    ``weight`` has shape ``(out, in + 1)``; its last column is the bias.
    Equivalent to ``matmul(append_one(x), transpose(weight))`` without the copy.
    """
    x, weight = constant(x), constant(weight)
    if weight.ndim != 2 or weight.shape[1] != x.shape[-1] + 1:
        raise ShapeError(
            f"affine: weight {weight.shape} does not match input width {x.shape[-1]} + 1")
    xv, wv = x.value, weight.value
    out = xv @ wv[:, :-1].T + wv[:, -1]

    def grad_fn(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = xv.reshape(-1, xv.shape[-1])
        gw = np.empty_like(wv)
        gw[:, :-1] = g2.T @ x2
        gw[:, -1] = g2.sum(axis=0)
        return g @ wv[:, :-1], gw

    return _node(out, (x, weight), grad_fn)


def stack(tensors, axis=0):
    tensors = [constant(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ {sorted(shapes)}")

    def grad_fn(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _node(np.stack([t.value for t in tensors], axis=axis), tuple(tensors), grad_fn)


def getitem(a, index):
    a = constant(a)
    shape = a.shape

    def grad_fn(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _node(np.array(a.value[index]), (a,), grad_fn)


def embedding(table, ids):
    """Column lookup: ``table`` is ``(dim, vocab)``; result has shape ``ids.shape + (dim,)``."""
    table = constant(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[1]):
        raise ShapeError(f"embedding: ids outside [0, {table.shape[1]})")
    tv = table.value

    def grad_fn(g):
        full = np.zeros_like(tv.T)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, tv.shape[0]))
        return (full.T,)

    return _node(tv.T[ids], (table,), grad_fn)


def dropout(a, mask):
    """Multiply by a precomputed inverted-dropout mask (already scaled by 1/keep)."""
    a = constant(a)
    mask = np.asarray(mask.value if isinstance(mask, Tensor) else mask, dtype=np.float64)
    if mask.shape != a.shape:
        raise ShapeError(f"dropout: mask {mask.shape} does not match input {a.shape}")
    return _node(a.value * mask, (a,), lambda g: (g * mask,))


def cross_entropy(logits, targets, mask=None):
    """Summed negative log-softmax probability of ``targets`` over unmasked positions."""
    logits = constant(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    weights = np.ones(targets.shape) if mask is None else np.asarray(mask, dtype=np.float64)
    logp = _log_softmax(logits.value)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * weights).sum()

    def grad_fn(g):
        d = np.exp(logp)
        np.put_along_axis(d, targets[..., None],
                          np.take_along_axis(d, targets[..., None], axis=-1) - 1.0, axis=-1)
        return (g * d * weights[..., None],)

    return _node(np.asarray(loss), (logits,), grad_fn)


_PRIMITIVES = {
    "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg,
    "matmul": matmul, "transpose": transpose, "sum": sum_, "mean": mean,
    "exp": exp, "log": log, "square": square, "abs": abs_,
    "sigmoid": sigmoid, "tanh": tanh, "relu": relu, "gelu": gelu,
    "softplus": softplus, "softmax": softmax, "log-softmax": log_softmax,
    "layer-norm": layer_norm, "concat": concat, "concat-with-bias-one": append_one,
    "affine": affine, "stack": stack, "dropout-mask": dropout,
    "embedding-lookup": embedding, "cross-entropy": cross_entropy,
}


def forward_primitive(kind, *inputs, **kwargs):
    """Dispatch a primitive by name, e.g. ``forward_primitive("sigmoid", x)``."""
    try:
        fn = _PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}; known: {sorted(_PRIMITIVES)}") from None
    return fn(*inputs, **kwargs)
