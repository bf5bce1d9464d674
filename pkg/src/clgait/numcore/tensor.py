"""Minimal reverse-mode autodiff over numpy arrays.

A ``Var`` wraps an ndarray plus a record of the producing operation.
Calling :func:`backward` on a scalar Var walks the tape once in reverse
topological order and accumulates gradients into every reachable leaf.

Training runs in f32; gradient verification runs the same code in f64
(finite differences are unreliable in f32).
"""

import threading
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when an operand shape is inconsistent with an operation."""

    def __init__(self, op, operand, got, expected):
        super().__init__(
            f"{op}: operand '{operand}' has shape {tuple(got)}, expected {expected}"
        )


# per-thread so concurrent inference (no_grad) never disables recording
# for a training thread
_state = threading.local()


def _grad_on():
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    prev = _grad_on()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Var:
    """A tensor value plus the upstream record for reverse traversal."""

    __slots__ = ("data", "grad", "parents", "_backward", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.parents = ()
        self._backward = None
        self.requires_grad = requires_grad and _grad_on()
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Var(shape={self.data.shape}, dtype={self.data.dtype}, name={self.name})"

    # convenience operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def as_var(x, dtype=None):
    if isinstance(x, Var):
        return x
    data = np.asarray(x, dtype=dtype)
    return Var(data)


def _make(data, parents, backward_fn):
    """Build a result Var; record the tape only if some parent needs grad."""
    requires = _grad_on() and any(p.requires_grad for p in parents)
    out = Var(data, requires_grad=requires)
    if requires:
        out.parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_var(a), as_var(b)
    data = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(data, (a, b), bw)


def sub(a, b):
    a, b = as_var(a), as_var(b)
    data = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(data, (a, b), bw)


def mul(a, b):
    a, b = as_var(a), as_var(b)
    data = a.data * b.data

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(data, (a, b), bw)


def matmul(a, b):
    a, b = as_var(a), as_var(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError("matmul", "rhs", b.data.shape, f"(..., {a.data.shape[-1]}, *)")
    data = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _make(data, (a, b), bw)


def reshape(a, shape):
    a = as_var(a)
    data = a.data.reshape(shape)

    def bw(g):
        return (g.reshape(a.data.shape),)

    return _make(data, (a,), bw)


def transpose(a, axes):
    a = as_var(a)
    data = a.data.transpose(axes)
    inv = np.argsort(axes)

    def bw(g):
        return (g.transpose(inv),)

    return _make(data, (a,), bw)


def take(a, idx):
    """Basic (slice/int tuple) indexing."""
    a = as_var(a)
    data = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _make(data, (a,), bw)


def concat(vars_, axis=0):
    vs = [as_var(v) for v in vars_]
    data = np.concatenate([v.data for v in vs], axis=axis)
    sizes = [v.data.shape[axis] for v in vs]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(vs))
        )

    return _make(data, tuple(vs), bw)


def vsum(a, axis=None, keepdims=False):
    a = as_var(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _make(data, (a,), bw)


def vmean(a, axis=None, keepdims=False):
    a = as_var(a)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    inv = np.asarray(1.0 / float(n), dtype=a.data.dtype)
    return mul(vsum(a, axis=axis, keepdims=keepdims), inv)


def vmax(a, axis):
    """Max over one axis; gradient flows to the first max element (ties)."""
    a = as_var(a)
    data = a.data.max(axis=axis)
    arg = a.data.argmax(axis=axis)

    def bw(g):
        full = np.zeros_like(a.data)
        expanded = np.expand_dims(arg, axis)
        np.put_along_axis(full, expanded, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _make(data, (a,), bw)


def relu(a):
    a = as_var(a)
    mask = a.data > 0
    data = np.where(mask, a.data, a.data.dtype.type(0))

    def bw(g):
        return (g * mask,)

    return _make(data, (a,), bw)


def sqrt(a):
    a = as_var(a)
    data = np.sqrt(a.data)

    def bw(g):
        return (g * (0.5 / data),)

    return _make(data, (a,), bw)


# ---------------------------------------------------------------------------
# neural-net primitives
# ---------------------------------------------------------------------------

def _im2col(x, kh, kw, stride, pad):
    n, h, w, c = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    # win: (n, ho, wo, c, kh, kw) -> (n, ho, wo, kh, kw, c)
    ho, wo = win.shape[1], win.shape[2]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(n * ho * wo, kh * kw * c), ho, wo


def _col2im(cols, x_shape, kh, kw, stride, pad, ho, wo):
    n, h, w, c = x_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    out = np.zeros((n, hp, wp, c), dtype=cols.dtype)
    cols = cols.reshape(n, ho, wo, kh, kw, c)
    for i in range(kh):
        for j in range(kw):
            out[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[
                :, :, :, i, j
            ]
    if pad:
        out = out[:, pad : pad + h, pad : pad + w]
    return out


def conv2d(x, w, b=None, stride=1, pad=0):
    """2D convolution, NHWC input, (kh, kw, cin, cout) kernel, zero padding."""
    x, w = as_var(x), as_var(w)
    if x.data.ndim != 4:
        raise ShapeError("conv2d", "input", x.data.shape, "(N, H, W, C)")
    kh, kw, cin, cout = w.data.shape
    if x.data.shape[3] != cin:
        raise ShapeError("conv2d", "input", x.data.shape, f"(N, H, W, {cin})")
    cols, ho, wo = _im2col(x.data, kh, kw, stride, pad)
    n = x.data.shape[0]
    y = cols @ w.data.reshape(-1, cout)
    y = y.reshape(n, ho, wo, cout)
    parents = [x, w]
    if b is not None:
        b = as_var(b)
        if b.data.shape != (cout,):
            raise ShapeError("conv2d", "bias", b.data.shape, f"({cout},)")
        y = y + b.data
        parents.append(b)

    def bw(g):
        gf = g.reshape(-1, cout)
        gw = (cols.T @ gf).reshape(w.data.shape)
        gcols = gf @ w.data.reshape(-1, cout).T
        gx = _col2im(gcols, x.data.shape, kh, kw, stride, pad, ho, wo)
        if b is not None:
            return gx, gw, gf.sum(axis=0)
        return gx, gw

    return _make(y, tuple(parents), bw)


def maxpool2d(x, size=2, stride=None):
    """Max pooling, NHWC; gradient routes to the first max in each window."""
    x = as_var(x)
    if x.data.ndim != 4:
        raise ShapeError("maxpool2d", "input", x.data.shape, "(N, H, W, C)")
    stride = stride or size
    win = sliding_window_view(x.data, (size, size), axis=(1, 2))[:, ::stride, ::stride]
    n, ho, wo, c = win.shape[:4]
    flat = win.reshape(n, ho, wo, c, size * size)
    data = flat.max(axis=-1)
    arg = flat.argmax(axis=-1)

    def bw(g):
        gx = np.zeros_like(x.data)
        ai, aj = np.divmod(arg, size)
        ii, jj = np.meshgrid(np.arange(ho), np.arange(wo), indexing="ij")
        rows = ii[None, :, :, None] * stride + ai
        colx = jj[None, :, :, None] * stride + aj
        nn = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, None, None, :]
        np.add.at(gx, (nn, rows, colx, cc), g)
        return (gx,)

    return _make(data, (x,), bw)


def linear(x, w, b=None):
    """Affine map on the last axis: x @ w + b."""
    x, w = as_var(x), as_var(w)
    if x.data.shape[-1] != w.data.shape[0]:
        raise ShapeError("linear", "weight", w.data.shape, f"({x.data.shape[-1]}, *)")
    y = matmul(x, w)
    if b is not None:
        y = add(y, b)
    return y


def l2_normalize(x, axis=-1, min_norm=1e-12):
    """Unit-normalize along `axis`; near-zero vectors are an error."""
    x = as_var(x)
    norm = np.sqrt((x.data.astype(np.float64) ** 2).sum(axis=axis, keepdims=True))
    if np.any(norm < min_norm):
        raise ValueError("l2_normalize: degenerate vector (norm < 1e-12)")
    norm = norm.astype(x.data.dtype)
    data = x.data / norm

    def bw(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return ((g - data * dot) / norm,)

    return _make(data, (x,), bw)


def softmax_cross_entropy(logits, targets):
    """Mean of -log softmax(logits)[target] over rows; max-subtraction stable."""
    logits = as_var(logits)
    t = np.asarray(targets)
    n, k = logits.data.shape
    if t.shape != (n,):
        raise ShapeError("softmax_cross_entropy", "targets", t.shape, f"({n},)")
    if np.any((t < 0) | (t >= k)):
        raise ValueError(f"softmax_cross_entropy: target out of range [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sez = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(sez)
    loss = -logp[np.arange(n), t].mean()

    def bw(g):
        grad = ez / sez
        grad[np.arange(n), t] -= 1.0
        return (grad * (g / n),)

    return _make(np.asarray(loss, dtype=logits.data.dtype), (logits,), bw)


def primitive_forward(kind, inputs, **attrs):
    """Dispatch a named primitive; the one-stop surface for forward ops."""
    table = {
        "conv2d": conv2d,
        "relu": relu,
        "maxpool2d": maxpool2d,
        "linear": linear,
        "l2_normalize": l2_normalize,
    }
    if kind not in table:
        raise ValueError(f"unknown primitive kind '{kind}'")
    return table[kind](*inputs, **attrs)


# ---------------------------------------------------------------------------
# reverse traversal
# ---------------------------------------------------------------------------

def backward(out: Var):
    """Accumulate gradients of scalar `out` into every reachable Var."""
    if out.data.size != 1:
        raise ValueError("backward: output must be a scalar")
    topo = []
    visited = set()
    stack = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    out.grad = np.ones_like(out.data)
    for node in reversed(topo):
        if node._backward is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node.parents, grads):
            if not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g


def gradient(out: Var, leaves):
    """Gradients of scalar `out` w.r.t. a dict of leaf Vars (zero if unused)."""
    backward(out)
    return {
        name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
        for name, leaf in leaves.items()
    }
