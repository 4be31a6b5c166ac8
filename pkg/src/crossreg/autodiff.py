"""Dense float64 tensors with reverse-mode automatic differentiation.

The tape is implicit: every operation that touches a grad-requiring tensor
records a backward closure on the result node.  ``backward`` walks the graph
in reverse topological order from a scalar loss.  Tensors are immutable after
creation except for their ``data`` (updated in place by the optimizer) and
``grad`` buffers; a graph must stay confined to one thread.
"""

import contextlib

import numpy as np

from .errors import ContractError, DimensionMismatchError, NumericError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense array of float64 values, optionally tracked on the tape."""

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = parents
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        """Flat row-major view of the payload."""
        return self.data.ravel()

    @property
    def grad_values(self):
        return None if self.grad is None else self.grad.ravel()

    def detach(self):
        """A view of the same data cut off from the tape."""
        return Tensor(self.data, requires_grad=False)

    def item(self):
        return float(self.data)

    def _accumulate(self, delta):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += delta

    def backward(self):
        backward(self)

    # -- sugar -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    track = _grad_enabled and any(p.requires_grad for p in parents)
    if track:
        return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn)
    return Tensor(data)


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting.

    Only the full-shape, scalar, row-vector and column-vector cases are used
    by this package; anything numpy broadcast along is summed back out.
    """
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic ------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def back(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(out, (a, b), back)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def back(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), back)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def back(g):
        a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out, (a, b), back)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionMismatchError(
            f"matmul requires (m,k)x(k,n); got {a.data.shape} x {b.data.shape}"
        )
    out = a.data @ b.data

    def back(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return _make(out, (a, b), back)


def transpose(a):
    a = as_tensor(a)

    def back(g):
        a._accumulate(g.T)

    return _make(a.data.T, (a,), back)


# -- nonlinearities ----------------------------------------------------------


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0.0

    def back(g):
        a._accumulate(g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), back)


def sigmoid(a):
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))

    def back(g):
        a._accumulate(g * out * (1.0 - out))

    return _make(out, (a,), back)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def back(g):
        a._accumulate(g * out)

    return _make(out, (a,), back)


def log(a):
    a = as_tensor(a)

    def back(g):
        a._accumulate(g / a.data)

    return _make(np.log(a.data), (a,), back)


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def back(g):
        a._accumulate(g * 0.5 / out)

    return _make(out, (a,), back)


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient passes through the interior only."""
    a = as_tensor(a)
    mask = (a.data > lo) & (a.data < hi)

    def back(g):
        a._accumulate(g * mask)

    return _make(np.clip(a.data, lo, hi), (a,), back)


# -- reductions --------------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            a._accumulate(np.full(a.data.shape, g if np.ndim(g) == 0 else g.item()))
        else:
            expand = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(expand, a.data.shape).copy())

    return _make(out, (a,), back)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def tmax(a, axis=0, keepdims=False):
    """Max along an axis; gradient flows to the (first) argmax entries."""
    a = as_tensor(a)
    idx = a.data.argmax(axis=axis)
    out = a.data.max(axis=axis, keepdims=keepdims)

    def back(g):
        delta = np.zeros_like(a.data)
        gg = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(delta, np.expand_dims(idx, axis), gg, axis=axis)
        a._accumulate(delta)

    return _make(out, (a,), back)


def softmax_rows(a):
    """Row-wise softmax stabilized by row-max subtraction.

    Each output row sums to 1; a NaN anywhere in the input is rejected.
    """
    a = as_tensor(a)
    if np.isnan(a.data).any():
        raise NumericError("softmax_rows received NaN input")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        a._accumulate((g - dot) * out)

    return _make(out, (a,), back)


def layer_norm_rows(x, gain, bias, eps=1e-6):
    """Per-row normalization with learnable gain and bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gain.data + bias.data

    def back(g):
        n = x.data.shape[-1]
        gx = g * gain.data
        term = gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
        x._accumulate(term * inv)
        gain._accumulate(_unbroadcast(g * xhat, gain.data.shape))
        bias._accumulate(_unbroadcast(g, bias.data.shape))

    return _make(out, (x, gain, bias), back)


# -- structural ops ----------------------------------------------------------


def gather_rows(a, indices):
    """Select rows by integer index; backward scatter-adds."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    out = a.data[idx]

    def back(g):
        delta = np.zeros_like(a.data)
        np.add.at(delta, idx, g)
        a._accumulate(delta)

    return _make(out, (a,), back)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return _make(out, tuple(tensors), back)


def reshape(a, shape):
    a = as_tensor(a)

    def back(g):
        a._accumulate(g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), back)


# -- tape --------------------------------------------------------------------


def backward(loss):
    """Populate ``grad`` on every grad-requiring ancestor of a scalar loss.

    Repeated calls without zeroing accumulate into existing buffers.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss; got shape {loss.data.shape}")

    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in seen:
            continue
        if expanded:
            seen.add(id(node))
            topo.append(node)
            continue
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward_fn is not None:
            node._backward_fn(node.grad)


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


# -- optimizer ---------------------------------------------------------------


class AdamState:
    """Adam with bias correction and a stepped learning-rate decay.

    The decay multiplies the base rate by ``lr_decay`` once per
    ``lr_decay_every`` completed epochs; call ``set_epoch`` at each epoch
    boundary.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 lr_decay=0.25, lr_decay_every=5):
        self.params = list(params)
        self.step_count = 0
        self.base_lr = float(lr)
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.lr_decay = lr_decay
        self.lr_decay_every = lr_decay_every
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    @property
    def step(self):
        return self.step_count

    def set_epoch(self, epoch):
        self.lr = self.base_lr * self.lr_decay ** (epoch // self.lr_decay_every)

    def apply_step(self):
        for p in self.params:
            if p.grad is None:
                raise ContractError("adam step requires populated grads on every parameter")
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        zero_grads(self.params)
