"""Dense tensors with reverse-mode automatic differentiation.

Small tape-based engine: each op returns a new Tensor holding a backward
closure; Tensor.backward() walks the graph once in reverse topological
order. float64 throughout by default (float32 inputs are preserved for
callers that want the speed).
"""

import struct

import numpy as np

from . import accel


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad requires a scalar")
            grad = np.ones_like(self.data)
        self.grad = np.asarray(grad, dtype=self.data.dtype)

        # iterative topological sort
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Sum gradient over axes that numpy broadcasting expanded."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _make(data, parents, backward, requires_grad=None):
    out = Tensor(data)
    if requires_grad is None:
        requires_grad = any(p.requires_grad for p in parents)
    out.requires_grad = requires_grad
    if requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), back)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, (a, b), back)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), back)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(a.data / b.data, (a, b), back)


def neg(a):
    a = as_tensor(a)

    def back(g):
        if a.requires_grad:
            a._accum(-g)

    return _make(-a.data, (a,), back)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = np.matmul(a.data, b.data)

    def back(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accum(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accum(_unbroadcast(gb, b.data.shape))

    return _make(out, (a, b), back)


def pow_const(a, p):
    a = as_tensor(a)

    def back(g):
        if a.requires_grad:
            a._accum(g * p * a.data ** (p - 1))

    return _make(a.data ** p, (a,), back)


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)

    def back(g):
        if a.requires_grad:
            a._accum(g * y)

    return _make(y, (a,), back)


def log(a):
    a = as_tensor(a)

    def back(g):
        if a.requires_grad:
            a._accum(g / a.data)

    return _make(np.log(a.data), (a,), back)


def sqrt(a):
    a = as_tensor(a)
    y = np.sqrt(a.data)

    def back(g):
        if a.requires_grad:
            a._accum(g * 0.5 / y)

    return _make(y, (a,), back)


def sigmoid(a):
    a = as_tensor(a)
    y = 1.0 / (1.0 + np.exp(-a.data))

    def back(g):
        if a.requires_grad:
            a._accum(g * y * (1.0 - y))

    return _make(y, (a,), back)


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.data)

    def back(g):
        if a.requires_grad:
            a._accum(g * (1.0 - y * y))

    return _make(y, (a,), back)


def relu(a):
    a = as_tensor(a)

    def back(g):
        if a.requires_grad:
            a._accum(g * (a.data > 0))

    return _make(np.maximum(a.data, 0.0), (a,), back)


def leaky_relu(a, alpha=0.01):
    a = as_tensor(a)

    def back(g):
        if a.requires_grad:
            a._accum(g * np.where(a.data > 0, 1.0, alpha))

    return _make(np.where(a.data > 0, a.data, alpha * a.data), (a,), back)


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            a._accum(y * (g - dot))

    return _make(y, (a,), back)


def reshape(a, shape):
    a = as_tensor(a)

    def back(g):
        if a.requires_grad:
            a._accum(g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), back)


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)

    def back(g):
        if a.requires_grad:
            a._accum(g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), back)


def getitem(a, key):
    a = as_tensor(a)

    def back(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.add.at(buf, key, g)
            a._accum(buf)

    return _make(a.data[key].copy(), (a,), back)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        parts = np.split(g, splits, axis=axis)
        for t, part in zip(tensors, parts):
            if t.requires_grad:
                t._accum(part)

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tensors, back)


def _axes_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(ax % ndim for ax in axis)


def reduce_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _axes_tuple(axis, a.data.ndim)

    def back(g):
        if a.requires_grad:
            if not keepdims:
                g = np.expand_dims(g, axes)
            a._accum(np.broadcast_to(g, a.data.shape).copy())

    return _make(a.data.sum(axis=axes, keepdims=keepdims), (a,), back)


def reduce_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _axes_tuple(axis, a.data.ndim)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]

    def back(g):
        if a.requires_grad:
            if not keepdims:
                g = np.expand_dims(g, axes)
            a._accum(np.broadcast_to(g / count, a.data.shape).copy())

    return _make(a.data.mean(axis=axes, keepdims=keepdims), (a,), back)


def mse(pred, target):
    """Mean squared error over all elements; target is a constant."""
    pred = as_tensor(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.data.shape != t.shape:
        raise ValueError(f"mse shape mismatch {pred.data.shape} vs {t.shape}")
    diff = pred.data - t
    n = diff.size

    def back(g):
        if pred.requires_grad:
            pred._accum(g * 2.0 * diff / n)

    return _make(np.array(np.mean(diff * diff)), (pred,), back)


def conv2d(x, w):
    """3x3, stride-1, same-padding convolution; x (B,C,H,W), w (F,C,3,3)."""
    x, w = as_tensor(x), as_tensor(w)

    def back(g):
        if x.requires_grad:
            x._accum(accel.conv2d_grad_input(g, w.data))
        if w.requires_grad:
            w._accum(accel.conv2d_grad_weight(x.data, g))

    return _make(accel.conv2d_forward(x.data, w.data), (x, w), back)


def batch_norm(x, gamma, beta, running_mean, running_var, channel_axis,
               training, momentum=0.1, eps=1e-5):
    """Batch normalization over all axes except channel_axis.

    gamma/beta are flat (C,) Tensors; running_mean/var are flat (C,)
    Tensors updated in place (no gradient) while training.
    """
    x = as_tensor(x)
    ndim = x.data.ndim
    channel_axis = channel_axis % ndim
    axes = tuple(ax for ax in range(ndim) if ax != channel_axis)
    bshape = [1] * ndim
    bshape[channel_axis] = x.data.shape[channel_axis]
    gamma_r = reshape(gamma, bshape)
    beta_r = reshape(beta, bshape)

    if training:
        mean = reduce_mean(x, axis=axes, keepdims=True)
        centered = sub(x, mean)
        var = reduce_mean(mul(centered, centered), axis=axes, keepdims=True)
        inv_std = div(Tensor(1.0), sqrt(add(var, Tensor(eps))))
        xhat = mul(centered, inv_std)
        # running statistics track detached batch moments (unbiased variance)
        n = 1
        for ax in axes:
            n *= x.data.shape[ax]
        bm = mean.data.reshape(-1)
        bv = var.data.reshape(-1) * (n / (n - 1)) if n > 1 else var.data.reshape(-1)
        running_mean.data *= (1.0 - momentum)
        running_mean.data += momentum * bm
        running_var.data *= (1.0 - momentum)
        running_var.data += momentum * bv
    else:
        rm = running_mean.data.reshape(bshape)
        rv = running_var.data.reshape(bshape)
        xhat = mul(sub(x, Tensor(rm)), Tensor(1.0 / np.sqrt(rv + eps)))
    return add(mul(gamma_r, xhat), beta_r)


def grad_check(f, params, eps=1e-5):
    """Max relative error between tape gradients and central differences.

    f() rebuilds and returns the scalar loss from the current parameter
    values. Relative error per coordinate uses |a|+|b| with a 1e-5 floor.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps out of the supported range")
    for p in params:
        p.grad = None
    loss = f()
    if not np.isfinite(loss.data):
        raise FloatingPointError("non-finite loss in grad_check")
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    max_rel = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().data)
            flat[i] = orig - eps
            fm = float(f().data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("non-finite loss in grad_check")
            num = (fp - fm) / (2.0 * eps)
            rel = abs(aflat[i] - num) / max(abs(aflat[i]) + abs(num), 1e-5)
            max_rel = max(max_rel, rel)
    return max_rel


# ---------------------------------------------------------------------------
# Named-array serialization (checkpoint payload). Byte-stable: fixed-order
# little-endian layout, float64 buffers.
# ---------------------------------------------------------------------------

_MAGIC = b"FCT1"


def write_named_arrays(entries):
    """entries: iterable of (name, ndarray, is_batchnorm, trainable)."""
    entries = list(entries)
    out = [_MAGIC, struct.pack("<I", len(entries))]
    for name, arr, is_bn, trainable in entries:
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<B", (1 if is_bn else 0) | (2 if trainable else 0)))
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype("<f8").tobytes())
    return b"".join(out)


def read_named_arrays(blob):
    if blob[:4] != _MAGIC:
        raise ValueError("bad checkpoint magic")
    off = 4
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    entries = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (flags,) = struct.unpack_from("<B", blob, off)
        off += 1
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=off).copy()
        off += 8 * size
        entries.append((name, arr.reshape(shape), bool(flags & 1), bool(flags & 2)))
    return entries
