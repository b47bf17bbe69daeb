"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Just enough machinery for the noise-prediction network: a ``Var`` node
wraps an array, ops build a DAG of closures, and :func:`backward`
accumulates vector-Jacobian products leaf-ward. Convolutions are
realized as im2col gathers plus BLAS matmuls so the heavy lifting stays
inside numpy; the adjoint of a stride-1 same-padding convolution is the
convolution with the in/out-swapped, spatially flipped kernel, which
keeps the backward pass BLAS-bound as well.
"""

import numpy as np

from .. import kernels


class Var:
    """A graph node: value, accumulated gradient, and a vjp closure."""

    __slots__ = ("value", "grad", "_parents", "_vjp")

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape


def as_var(x):
    return x if isinstance(x, Var) else Var(x)


def _topo(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


def backward(root):
    """Accumulate d(root)/d(leaf) into every node's .grad; root must be scalar."""
    if root.value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    order = _topo(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if g is None:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


def _unbroadcast(grad, shape):
    """Sum a broadcasted gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


# -- arithmetic ---------------------------------------------------------------

def add(a, b):
    a, b = as_var(a), as_var(b)
    return Var(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = as_var(a), as_var(b)
    return Var(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = as_var(a), as_var(b)
    return Var(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.shape),
            _unbroadcast(g * a.value, b.shape),
        ),
    )


def scale(a, c: float):
    a = as_var(a)
    return Var(a.value * c, (a,), lambda g: (g * c,))


def matmul(a, b):
    """2-D matrix product; shapes (n, k) @ (k, m)."""
    a, b = as_var(a), as_var(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    return Var(
        a.value @ b.value,
        (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
    )


def concat(parts, axis=-1):
    parts = [as_var(p) for p in parts]
    values = [p.value for p in parts]
    sizes = [v.shape[axis] for v in values]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Var(np.concatenate(values, axis=axis), tuple(parts), vjp)


def reshape(a, shape):
    a = as_var(a)
    old = a.shape
    return Var(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes):
    a = as_var(a)
    inv = np.argsort(axes)
    return Var(a.value.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def mean(a, axis):
    a = as_var(a)
    n = a.value.shape[axis]

    def vjp(g):
        return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return Var(a.value.mean(axis=axis), (a,), vjp)


def mean_all(a):
    a = as_var(a)
    n = a.value.size
    return Var(
        np.asarray(a.value.mean()),
        (a,),
        lambda g: (np.full(a.shape, float(g) / n),),
    )


def sqrt(a):
    a = as_var(a)
    root = np.sqrt(a.value)
    safe = np.maximum(root, 1e-12)
    return Var(root, (a,), lambda g: (g * 0.5 / safe,))


# -- activations --------------------------------------------------------------

def leaky_relu(a, slope=0.1):
    a = as_var(a)
    pos = a.value > 0
    return Var(
        np.where(pos, a.value, slope * a.value),
        (a,),
        lambda g: (np.where(pos, g, slope * g),),
    )


# LeCun's scaled tanh: odd, so bias-free stacks map zero to zero exactly.
_TANH_A = 1.7159
_TANH_B = 2.0 / 3.0


def scaled_tanh(a):
    a = as_var(a)
    th = np.tanh(_TANH_B * a.value)
    return Var(_TANH_A * th, (a,), lambda g: (g * (_TANH_A * _TANH_B) * (1.0 - th * th),))


def smooth_l1(a):
    """Elementwise 0.5 x^2 inside |x| < 1, |x| - 0.5 outside."""
    a = as_var(a)
    x = a.value
    inside = np.abs(x) < 1.0
    value = np.where(inside, 0.5 * x * x, np.abs(x) - 0.5)
    return Var(value, (a,), lambda g: (g * np.where(inside, x, np.sign(x)),))


# -- gather / scatter ---------------------------------------------------------

def gather_rows(a, idx):
    """Select rows of a (M, C) table; idx may be any integer shape."""
    a = as_var(a)
    idx = np.asarray(idx, dtype=np.int64)
    m, c = a.shape

    def vjp(g):
        return (kernels.segment_sum(g.reshape(-1, c), idx.reshape(-1), m),)

    return Var(a.value[idx], (a,), vjp)


def segment_mean(a, seg, n_segments):
    """Mean of rows per segment id; empty segments produce zero rows."""
    a = as_var(a)
    seg = np.asarray(seg, dtype=np.int64)
    counts = np.bincount(seg, minlength=n_segments).astype(np.float64)
    safe = np.maximum(counts, 1.0)
    total = kernels.segment_sum(a.value, seg, n_segments)

    def vjp(g):
        return ((g / safe[:, None])[seg],)

    return Var(total / safe[:, None], (a,), vjp)


def broadcast_middle(a, k):
    """(N, C) -> (N, k, C) by repetition; gradient sums over the new axis."""
    a = as_var(a)
    n, c = a.shape
    return Var(
        np.broadcast_to(a.value[:, None, :], (n, k, c)).copy(),
        (a,),
        lambda g: (g.sum(axis=1),),
    )


# -- convolutions -------------------------------------------------------------

_COL_CACHE = {}


def _conv_indices(c_in, spatial, kernel, dilation):
    """Flat gather indices (V, Cin*k^d) into the zero-padded (Cin, *padded) block.

    The channel axis is folded into the index table so one fancy-index
    gather yields the im2col matrix in its final (V, Cin*K) layout.
    """
    key = (c_in, spatial, kernel, dilation)
    cached = _COL_CACHE.get(key)
    if cached is not None:
        return cached
    ndim = len(spatial)
    pad = tuple(dilation * (kernel - 1) // 2 for _ in range(ndim))
    padded = tuple(s + 2 * p for s, p in zip(spatial, pad))
    taps = np.arange(kernel) * dilation
    grids = np.meshgrid(*[np.arange(s) for s in spatial], indexing="ij")
    base = [g.reshape(-1) for g in grids]
    offs = np.meshgrid(*[taps] * ndim, indexing="ij")
    offs = [o.reshape(-1) for o in offs]
    flat = np.zeros((base[0].size, offs[0].size), dtype=np.int64)
    for ax in range(ndim):
        coord = base[ax][:, None] + offs[ax][None, :]
        flat = flat * padded[ax] + coord
    # (V, Cin, K) -> (V, Cin*K) with the kernel-weight memory layout
    vol = int(np.prod(padded))
    full = (np.arange(c_in, dtype=np.int64)[None, :, None] * vol + flat[:, None, :]).reshape(
        flat.shape[0], c_in * flat.shape[1]
    )
    _COL_CACHE[key] = (pad, full)
    return pad, full


def _conv_raw(x, w, dilation):
    """Correlation of x (Cin, *spatial) with w (Cout, Cin, *k); same padding."""
    c_in = x.shape[0]
    spatial = x.shape[1:]
    kernel = w.shape[2]
    pad, idx = _conv_indices(c_in, spatial, kernel, dilation)
    xp = np.pad(x, ((0, 0),) + tuple((p, p) for p in pad))
    cols = xp.reshape(-1)[idx]  # (V, Cin*K)
    out = cols @ w.reshape(w.shape[0], -1).T  # (V, Cout)
    return np.ascontiguousarray(out.T).reshape((w.shape[0],) + spatial), cols


def _flip_swap(w):
    """Swap in/out channels and flip every spatial axis."""
    flipped = w[(slice(None), slice(None)) + (slice(None, None, -1),) * (w.ndim - 2)]
    return np.ascontiguousarray(np.swapaxes(flipped, 0, 1))


def _conv(x, w, dilation):
    x, w = as_var(x), as_var(w)
    kernel = w.value.shape[2]
    if kernel % 2 != 1:
        raise ValueError(f"convolution kernels must be odd, got {kernel}")
    if x.value.shape[0] != w.value.shape[1]:
        raise ValueError(
            f"channel mismatch: input has {x.value.shape[0]}, kernel expects {w.value.shape[1]}"
        )
    out, cols = _conv_raw(x.value, w.value, dilation)
    cache = [cols]  # released after the (single) backward visit
    del cols

    def vjp(g):
        grad_x, _ = _conv_raw(g, _flip_swap(w.value), dilation)
        saved = cache[0]
        if saved is None:
            _, saved = _conv_raw(x.value, w.value, dilation)
        cache[0] = None
        g2 = g.reshape(g.shape[0], -1)  # (Cout, V)
        grad_w = (g2 @ saved).reshape(w.value.shape)
        return grad_x, grad_w

    return Var(out, (x, w), vjp)


def conv3d(x, w, dilation=1):
    """x (Cin, nx, ny, nz) with w (Cout, Cin, k, k, k), stride 1, same padding."""
    x = as_var(x)
    if x.value.ndim != 4:
        raise ValueError("conv3d expects a (C, nx, ny, nz) input")
    return _conv(x, w, dilation)


def conv2d(x, w):
    """x (Cin, H, W) with w (Cout, Cin, k, k), stride 1, same padding."""
    x = as_var(x)
    if x.value.ndim != 3:
        raise ValueError("conv2d expects a (C, H, W) input")
    return _conv(x, w, 1)


def avgpool2(a):
    """2x2 average pooling over (C, H, W); H and W must be even."""
    a = as_var(a)
    c, h, w = a.shape
    if h % 2 or w % 2:
        raise ValueError(f"avgpool2 needs even spatial dims, got {(h, w)}")
    out = a.value.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))

    def vjp(g):
        return (np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25,)

    return Var(out, (a,), vjp)


def upsample2(a):
    """2x nearest-neighbor upsampling over (C, H, W)."""
    a = as_var(a)
    c, h, w = a.shape
    out = np.repeat(np.repeat(a.value, 2, axis=1), 2, axis=2)

    def vjp(g):
        return (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),)

    return Var(out, (a,), vjp)


# -- composite helpers --------------------------------------------------------

def linear(x, weight, bias=None):
    """Row-wise affine map: x (N, F) @ weight (F, H) + bias."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def linear_nd(x, weight, bias=None):
    """Affine map over the last axis for inputs with extra leading axes."""
    x = as_var(x)
    lead = x.shape[:-1]
    flat = reshape(x, (-1, x.shape[-1]))
    out = linear(flat, weight, bias)
    return reshape(out, lead + (out.shape[-1],))
