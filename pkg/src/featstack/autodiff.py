"""Dense-matrix reverse-mode automatic differentiation.

Every value is a 2-D float64 numpy array.  A :class:`Tensor` records the
operation that produced it together with its parents; :func:`backward` walks
the graph in reverse topological order and accumulates gradients.

Only the handful of operations the stacking networks need are provided.  There
is no general broadcasting: elementwise binary operations require equal
shapes, with two explicit exceptions (:func:`add_bias` for a ``1 x m`` row and
:func:`div_rows` for an ``n x 1`` column).
"""

import numpy as np

from .errors import InvalidInputError, ShapeError


def _as_matrix(value):
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got {arr.ndim}")
    return arr


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("value", "grad", "parents", "op", "requires_grad", "_backward")

    def __init__(self, value, parents=(), op="", requires_grad=False):
        self.value = _as_matrix(value)
        self.grad = None
        self.parents = tuple(parents)
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(lift(other, self.shape), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def lift(x, shape=None):
    """Wrap constants as non-differentiable tensors; scalars fill ``shape``."""
    if isinstance(x, Tensor):
        return x
    if np.isscalar(x) and shape is not None:
        return Tensor(np.full(shape, float(x)))
    return Tensor(x)


def parameter(value):
    """A leaf tensor that receives gradients."""
    return Tensor(value, requires_grad=True)


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a, b):
    if np.isscalar(b):
        return add_scalar(a, b)
    a, b = lift(a), lift(b)
    _same_shape(a, b, "add")
    out = Tensor(a.value + b.value, (a, b), "add")

    def _backward(g):
        return g, g

    out._backward = _backward
    return out


def add_scalar(a, c):
    out = Tensor(a.value + float(c), (a,), "add_scalar")
    out._backward = lambda g: (g,)
    return out


def sub(a, b):
    if np.isscalar(b):
        return add_scalar(a, -float(b))
    a, b = lift(a), lift(b)
    _same_shape(a, b, "sub")
    out = Tensor(a.value - b.value, (a, b), "sub")
    out._backward = lambda g: (g, -g)
    return out


def mul(a, b):
    if np.isscalar(b):
        return scale(a, b)
    a, b = lift(a), lift(b)
    _same_shape(a, b, "mul")
    out = Tensor(a.value * b.value, (a, b), "mul")
    out._backward = lambda g: (g * b.value, g * a.value)
    return out


def scale(a, c):
    c = float(c)
    out = Tensor(a.value * c, (a,), "scale")
    out._backward = lambda g: (g * c,)
    return out


def square(a):
    out = Tensor(a.value * a.value, (a,), "square")
    out._backward = lambda g: (2.0 * a.value * g,)
    return out


def matmul(a, b):
    a, b = lift(a), lift(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions {a.shape} @ {b.shape} differ")
    out = Tensor(a.value @ b.value, (a, b), "matmul")
    out._backward = lambda g: (g @ b.value.T, a.value.T @ g)
    return out


def add_bias(x, bias):
    """``x`` (n x m) plus a ``1 x m`` row added to every row."""
    x, bias = lift(x), lift(bias)
    if bias.shape != (1, x.shape[1]):
        raise ShapeError(f"add_bias: bias shape {bias.shape} does not match {x.shape}")
    out = Tensor(x.value + bias.value, (x, bias), "add_bias")
    out._backward = lambda g: (g, g.sum(axis=0, keepdims=True))
    return out


def sum_rows(x):
    """Row sums, ``n x k -> n x 1``."""
    out = Tensor(x.value.sum(axis=1, keepdims=True), (x,), "sum_rows")
    k = x.shape[1]
    out._backward = lambda g: (np.repeat(g, k, axis=1),)
    return out


def div_rows(x, s):
    """Divide each row of ``x`` (n x k) by the matching entry of ``s`` (n x 1)."""
    x, s = lift(x), lift(s)
    if s.shape != (x.shape[0], 1):
        raise ShapeError(f"div_rows: divisor shape {s.shape} does not match {x.shape}")
    val = x.value / s.value
    out = Tensor(val, (x, s), "div_rows")

    def _backward(g):
        gx = g / s.value
        gs = -(g * val).sum(axis=1, keepdims=True) / s.value
        return gx, gs

    out._backward = _backward
    return out


def total(x):
    """Sum of all entries as a ``1 x 1`` tensor."""
    out = Tensor(x.value.sum(), (x,), "sum")
    shape = x.shape
    out._backward = lambda g: (np.full(shape, g[0, 0]),)
    return out


def mean(x):
    n = x.value.size
    out = Tensor(x.value.mean(), (x,), "mean")
    shape = x.shape
    out._backward = lambda g: (np.full(shape, g[0, 0] / n),)
    return out


def elu(x, alpha=1.0):
    """``x`` where ``x >= 0``, else ``alpha * (exp(x) - 1)``."""
    x = lift(x)
    neg = np.expm1(np.minimum(x.value, 0.0))
    pos_mask = x.value >= 0
    out = Tensor(np.where(pos_mask, x.value, alpha * neg), (x,), "elu")
    deriv = np.where(pos_mask, 1.0, alpha * (neg + 1.0))
    out._backward = lambda g: (g * deriv,)
    return out


def dropout(x, rate, training, rng=None):
    """Inverted dropout; identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise InvalidInputError(f"dropout rate must lie in [0, 1), got {rate}")
    x = lift(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise InvalidInputError("dropout in train mode needs a random generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.value * mask, (x,), "dropout")
    out._backward = lambda g: (g * mask,)
    return out


class BatchNormState:
    """Learned scale/shift plus running statistics for one batch-norm layer."""

    def __init__(self, width, momentum=0.1, eps=1e-5):
        self.gamma = parameter(np.ones((1, width)))
        self.beta = parameter(np.zeros((1, width)))
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x, state, training):
    """Column-wise batch normalization.

    Train mode normalizes by the batch statistics and updates the running
    estimates (unbiased variance, as the usual framework convention); eval mode
    uses the running estimates only and leaves the state untouched.
    """
    x = lift(x)
    gamma, beta = state.gamma, state.beta
    if training:
        n = x.shape[0]
        if n < 2:
            raise InvalidInputError("batch_norm in train mode needs at least 2 rows")
        mu = x.value.mean(axis=0)
        var = x.value.var(axis=0)
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mu
        state.running_var = (1.0 - m) * state.running_var + m * var * (n / (n - 1))
    else:
        n = None
        mu = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.value - mu) * inv_std
    out = Tensor(xhat * gamma.value + beta.value, (x, gamma, beta), "batch_norm")

    def _backward(g):
        dgamma = (g * xhat).sum(axis=0, keepdims=True)
        dbeta = g.sum(axis=0, keepdims=True)
        dxhat = g * gamma.value
        if training:
            dx = inv_std / n * (
                n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
            )
        else:
            dx = dxhat * inv_std
        return dx, dgamma, dbeta

    out._backward = _backward
    return out


def mse_loss(pred, target):
    """Mean squared error between two vectors, as a ``1 x 1`` tensor."""
    pred = lift(pred)
    target = lift(target)
    if pred.value.size != target.value.size or pred.value.size == 0:
        raise ShapeError(
            f"mse_loss: prediction has {pred.value.size} entries, target has {target.value.size}"
        )
    if pred.shape != target.shape:
        target = Tensor(target.value.reshape(pred.shape))
    diff = pred.value - target.value
    n = diff.size
    out = Tensor(np.mean(diff * diff), (pred, target), "mse")
    out._backward = lambda g: (2.0 * diff / n * g[0, 0], -2.0 * diff / n * g[0, 0])
    return out


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate ``.grad`` on every differentiable node reachable from ``loss``.

    Gradients are reset before accumulation, so calling this twice on the same
    graph yields the same values.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar root, got shape {loss.shape}")
    order = _topological(loss)
    for node in order:
        node.grad = np.zeros_like(node.value)
    loss.grad = np.ones((1, 1))
    for node in reversed(order):
        if node._backward is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node.parents, grads):
            if parent.requires_grad:
                parent.grad += g
    return [node for node in order if not node.parents]
