"""Minimal reverse-mode automatic differentiation over NumPy arrays.

A Tensor wraps an ndarray and, when gradient recording is enabled, the
operations below build a DAG of backward closures. ``backward()`` on a
scalar result walks the graph in reverse topological order and accumulates
gradients into every tensor created with ``requires_grad=True``.

Only the operations needed by the classifiers and attacks are provided;
in particular there is no general broadcasting. Elementwise arithmetic
requires matching shapes or a Python scalar, and bias handling lives
inside ``conv2d`` and ``linear``.
"""

import contextlib

import numpy as np

from .errors import InvalidArgumentError, InvalidShapeError, StateError

_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block. Nests safely."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


class Tensor:
    """An ndarray with an optional gradient tape entry."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def _needs_grad(self):
        return self.requires_grad or bool(self._parents)

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if not self._needs_grad:
            raise StateError("backward() on a tensor with no recorded graph")
        if grad is None:
            if self.data.size != 1:
                raise InvalidArgumentError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise InvalidShapeError("seed gradient shape does not match tensor shape")

        # Iterative post-order walk; recursion would overflow on deep chains.
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        pending = {id(self): grad}
        for node in reversed(topo):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent._needs_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -other if isinstance(other, Tensor) else -float(other))

    def __rsub__(self, other):
        return add(-self, float(other))

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def _record(out, parents, backward):
    if _grad_enabled and any(p._needs_grad for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _as_tensor_pair(a, b, op):
    if not isinstance(a, Tensor):
        raise InvalidArgumentError(f"{op} expects a Tensor")
    if isinstance(b, Tensor):
        if a.data.shape != b.data.shape:
            raise InvalidShapeError(f"{op} requires matching shapes, got {a.shape} and {b.shape}")
        return a, b
    return a, None


def add(a, b):
    a, bt = _as_tensor_pair(a, b, "add")
    if bt is None:
        out = Tensor(a.data + float(b))
        return _record(out, (a,), lambda g: (g,))
    out = Tensor(a.data + bt.data)
    return _record(out, (a, bt), lambda g: (g, g))


def mul(a, b):
    a, bt = _as_tensor_pair(a, b, "mul")
    if bt is None:
        scale = float(b)
        out = Tensor(a.data * scale)
        return _record(out, (a,), lambda g: (g * scale,))
    out = Tensor(a.data * bt.data)
    a_data, b_data = a.data, bt.data
    return _record(out, (a, bt), lambda g: (g * b_data, g * a_data))


def relu(x):
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0))
    return _record(out, (x,), lambda g: (g * mask,))


def tensor_sum(x):
    out = Tensor(x.data.sum())
    shape, dtype = x.data.shape, x.data.dtype
    return _record(out, (x,), lambda g: (np.broadcast_to(g.astype(dtype), shape).copy(),))


def tensor_mean(x):
    size = x.data.size
    out = Tensor(x.data.mean())
    shape, dtype = x.data.shape, x.data.dtype
    return _record(out, (x,), lambda g: (np.broadcast_to(g.astype(dtype) / size, shape).copy(),))


def reshape(x, shape):
    out = Tensor(x.data.reshape(shape))
    original = x.data.shape
    return _record(out, (x,), lambda g: (g.reshape(original),))


def flatten(x):
    if x.data.ndim < 2:
        raise InvalidShapeError("flatten expects a batched tensor")
    return reshape(x, (x.data.shape[0], -1))


def pad2d(x, pad):
    if x.data.ndim != 4:
        raise InvalidShapeError("pad2d expects an NCHW tensor")
    if not isinstance(pad, int) or pad < 0:
        raise InvalidArgumentError("pad must be a non-negative int")
    if pad == 0:
        return x
    widths = ((0, 0), (0, 0), (pad, pad), (pad, pad))
    out = Tensor(np.pad(x.data, widths))
    h, w = x.data.shape[2], x.data.shape[3]
    return _record(out, (x,), lambda g: (g[:, :, pad : pad + h, pad : pad + w],))


def _check_float_dtype(name, *arrays):
    dtypes = {a.dtype for a in arrays}
    if len(dtypes) != 1:
        raise InvalidArgumentError(f"{name} operands must share a dtype, got {sorted(map(str, dtypes))}")


def conv2d(x, w, b, stride=1):
    """Valid (no padding) cross-correlation of NCHW input with FCHW weights."""
    from . import _kernels as K

    if x.data.ndim != 4 or w.data.ndim != 4 or b.data.ndim != 1:
        raise InvalidShapeError("conv2d expects x:NCHW, w:FCkk, b:F")
    n, c, h, width = x.data.shape
    f, wc, kh, kw = w.data.shape
    if wc != c:
        raise InvalidShapeError(f"conv2d channel mismatch: input has {c}, weight expects {wc}")
    if b.data.shape[0] != f:
        raise InvalidShapeError("conv2d bias length must equal the filter count")
    if kh > h or kw > width:
        raise InvalidShapeError("conv2d kernel larger than the input")
    if not isinstance(stride, int) or stride < 1:
        raise InvalidArgumentError("stride must be a positive int")
    if stride > h or stride > width:
        raise InvalidArgumentError("stride larger than the spatial extent")
    _check_float_dtype("conv2d", x.data, w.data, b.data)

    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    out = Tensor(K.conv2d_forward(xd, wd, np.ascontiguousarray(b.data), stride))

    def backward(g):
        g = np.ascontiguousarray(g)
        gx = K.conv2d_backward_input(g, wd, stride, h, width) if x._needs_grad else None
        if w._needs_grad or b._needs_grad:
            gw, gb = K.conv2d_backward_params(g, xd, kh, kw, stride)
        else:
            gw = gb = None
        return gx, gw, gb

    return _record(out, (x, w, b), backward)


def maxpool2d(x, k):
    """Non-overlapping k-by-k max pooling; trailing rows/cols that do not
    fill a window are dropped. Ties go to the first element of a row-major
    window scan."""
    from . import _kernels as K

    if x.data.ndim != 4:
        raise InvalidShapeError("maxpool2d expects an NCHW tensor")
    if not isinstance(k, int) or k < 1:
        raise InvalidArgumentError("pool size must be a positive int")
    n, c, h, w = x.data.shape
    if k > h or k > w:
        raise InvalidArgumentError("pool window larger than the input")

    y, idx = K.maxpool2d_forward(np.ascontiguousarray(x.data), k)
    out = Tensor(y)

    def backward(g):
        return (K.maxpool2d_backward(np.ascontiguousarray(g), idx, k, h, w),)

    return _record(out, (x,), backward)


def batchnorm2d(x, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel batch normalisation without affine parameters.

    Training mode normalises with biased batch statistics and, when running
    buffers are supplied, updates them in place using the unbiased variance.
    Eval mode normalises with the running buffers and raises if they are
    missing.
    """
    if x.data.ndim != 4:
        raise InvalidShapeError("batchnorm2d expects an NCHW tensor")
    c = x.data.shape[1]
    for stats in (running_mean, running_var):
        if stats is not None and stats.shape != (c,):
            raise InvalidShapeError("running statistics must have one entry per channel")
    if training:
        axes = (0, 2, 3)
        m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running_mean is not None:
            unbiased = var * (m / (m - 1)) if m > 1 else var
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
    else:
        if running_mean is None or running_var is None:
            raise StateError("batchnorm2d in eval mode needs running statistics")
        mean, var = running_mean, running_var

    invstd = 1.0 / np.sqrt(var + eps)
    mean_b = mean.reshape(1, c, 1, 1).astype(x.data.dtype)
    invstd_b = invstd.reshape(1, c, 1, 1).astype(x.data.dtype)
    xhat = (x.data - mean_b) * invstd_b
    out = Tensor(xhat)

    if training:
        m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]

        def backward(g):
            sum_g = g.sum(axis=(0, 2, 3), keepdims=True)
            sum_gx = (g * xhat).sum(axis=(0, 2, 3), keepdims=True)
            return ((invstd_b / m) * (m * g - sum_g - xhat * sum_gx),)

    else:

        def backward(g):
            return (g * invstd_b,)

    return _record(out, (x,), backward)


def dropout2d(x, p, training, rng):
    """Channel dropout: whole feature maps are zeroed with probability p and
    survivors are scaled by 1/(1-p). Identity when not training or p == 0."""
    if not 0.0 <= p < 1.0:
        raise InvalidArgumentError("dropout probability must lie in [0, 1)")
    if x.data.ndim != 4:
        raise InvalidShapeError("dropout2d expects an NCHW tensor")
    if not training or p == 0.0:
        return x
    n, c = x.data.shape[:2]
    keep = (rng.random((n, c, 1, 1)) >= p).astype(x.data.dtype)
    mask = keep / np.asarray(1.0 - p, dtype=x.data.dtype)
    out = Tensor(x.data * mask)
    return _record(out, (x,), lambda g: (g * mask,))


def linear(x, w, b):
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise InvalidShapeError("linear expects x:(N,D), w:(O,D), b:(O,)")
    if x.data.shape[1] != w.data.shape[1]:
        raise InvalidShapeError(
            f"linear feature mismatch: input has {x.data.shape[1]}, weight expects {w.data.shape[1]}"
        )
    if b.data.shape[0] != w.data.shape[0]:
        raise InvalidShapeError("linear bias length must equal the output width")
    _check_float_dtype("linear", x.data, w.data, b.data)
    out = Tensor(x.data @ w.data.T + b.data)

    def backward(g):
        gx = g @ w.data if x._needs_grad else None
        gw = g.T @ x.data if w._needs_grad else None
        gb = g.sum(axis=0) if b._needs_grad else None
        return gx, gw, gb

    return _record(out, (x, w, b), backward)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy. ``labels`` is an integer array of class
    indices; the gradient is (softmax - onehot) / N."""
    if logits.data.ndim != 2:
        raise InvalidShapeError("cross_entropy expects logits of shape (N, K)")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.data.shape[0]:
        raise InvalidShapeError("labels must be a vector matching the batch size")
    if not np.issubdtype(labels.dtype, np.integer):
        raise InvalidArgumentError("labels must be integers")
    n, k = logits.data.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise InvalidArgumentError(f"labels must lie in [0, {k})")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    loss = -log_probs[np.arange(n), labels].mean()
    out = Tensor(np.asarray(loss, dtype=logits.data.dtype))

    def backward(g):
        probs = exp / total
        probs[np.arange(n), labels] -= 1.0
        return (probs * (g / n),)

    return _record(out, (logits,), backward)
