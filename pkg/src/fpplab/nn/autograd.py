"""A small reverse-mode automatic differentiation engine over numpy arrays.

Each operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients. ``backward`` walks
the recorded graph in reverse topological order, accumulates ``.grad`` on
leaf tensors that require it, and then frees the graph.

Piecewise operations (relu, abs, max-pool, wrap, cell lookup in sampling)
can report which branch each element took; :func:`record_branches` collects
those so a finite-difference check can tell when a perturbation crossed a kink.
"""

from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InvalidArgument, InvalidState

TWO_PI = 2.0 * np.pi

_branch_log: list | None = None
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a graph (inference and logging passes)."""
    global _grad_enabled
    saved, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = saved


@contextlib.contextmanager
def record_branches():
    """Collect the branch choices of piecewise ops executed inside the block."""
    global _branch_log
    saved, _branch_log = _branch_log, []
    try:
        yield _branch_log
    finally:
        _branch_log = saved


def note_branch(arr):
    if _branch_log is not None:
        _branch_log.append(np.asarray(arr).copy())


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_freed", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self._freed = False
        self.name = name

    # -- basic protocol ---------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise InvalidArgument(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # -- graph traversal ---------------------------------------------------
    def backward(self, grad=None):
        """Back-propagate from this tensor; the graph is freed afterwards."""
        if self._freed:
            raise InvalidState("graph already freed by a previous backward(); run forward again")
        if grad is None:
            if self.size != 1:
                raise InvalidArgument("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not _needs_grad(parent):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node._freed = True

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise InvalidArgument("division by a tensor is not supported")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _topological(root: Tensor) -> list:
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
        for p in node._parents:
            if id(p) not in seen and _needs_grad(p):
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    if not _grad_enabled or not any(_needs_grad(p) for p in parents):
        return Tensor(data)
    return Tensor(data, _parents=tuple(parents), _backward=backward)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # split on sign for overflow-free evaluation
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    note_branch(pos)
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def leaky_relu(a, slope: float = 0.1) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    note_branch(pos)
    scale = np.where(pos, 1.0, slope)
    return _make(a.data * scale, (a,), lambda g: (g * scale,))


def tabs(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    note_branch(sign)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,))


def wrap(a) -> Tensor:
    """Wrap to (-pi, pi]; piecewise identity, so the gradient passes unchanged."""
    a = as_tensor(a)
    shift = np.ceil((a.data - np.pi) / TWO_PI)
    note_branch(shift)
    return _make(a.data - TWO_PI * shift + 0.0, (a,), lambda g: (g,))


def unit_range(a) -> Tensor:
    """Shift wrapped values into [0, 2pi); identity gradient."""
    a = as_tensor(a)
    neg_part = a.data < 0
    note_branch(neg_part)
    return _make(np.where(neg_part, a.data + TWO_PI, a.data) + 0.0, (a,), lambda g: (g,))


# ---------------------------------------------------------------------------
# reductions and shape ops

def tsum(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _make(np.sum(a.data), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    shape, n = a.shape, a.size
    return _make(np.mean(a.data), (a,), lambda g: (np.full(shape, float(g) / n),))


def masked_mean(a, mask) -> Tensor:
    """Mean of ``a`` over the True entries of ``mask``."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise InvalidArgument(f"mask shape {mask.shape} != tensor shape {a.shape}")
    n = int(mask.sum())
    if n == 0:
        raise InvalidArgument("mask is empty")
    weights = mask / n
    return _make(np.sum(a.data[mask]) / n, (a,), lambda g: (float(g) * weights,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


# ---------------------------------------------------------------------------
# image ops on (C, H, W) tensors

def conv2d(x, weight, bias=None) -> Tensor:
    """'Same' 2-D cross-correlation of a (C, H, W) input with (O, C, k, k) weights."""
    x, weight = as_tensor(x), as_tensor(weight)
    c, h, w = x.shape
    o, ci, k, k2 = weight.shape
    if ci != c or k != k2 or k % 2 == 0:
        raise InvalidArgument(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p))) if p else x.data
    # (C, H, W, k, k) -> (C*k*k, H*W)
    cols = sliding_window_view(xp, (k, k), axis=(1, 2)).transpose(0, 3, 4, 1, 2).reshape(c * k * k, h * w)
    w2 = weight.data.reshape(o, c * k * k)
    out = w2 @ cols
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data[:, None]
        parents.append(bias)
    out = out.reshape(o, h, w)

    def backward(g):
        g2 = g.reshape(o, h * w)
        gw = (g2 @ cols.T).reshape(weight.shape)
        gx = None
        if _needs_grad(x):
            dcols = (w2.T @ g2).reshape(c, k, k, h, w)
            gxp = np.zeros((c, h + 2 * p, w + 2 * p))
            for i in range(k):
                for j in range(k):
                    gxp[:, i:i + h, j:j + w] += dcols[:, i, j]
            gx = gxp[:, p:p + h, p:p + w] if p else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=1))
        return tuple(grads)

    return _make(out, parents, backward)


def max_pool2d(x) -> Tensor:
    """2x2 max pooling with stride 2; ties resolve to the first window element."""
    x = as_tensor(x)
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise InvalidArgument(f"max_pool2d needs even spatial size, got {h}x{w}")
    win = x.data.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=-1)
    note_branch(idx)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros((c, h // 2, w // 2, 4))
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        return (gw.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w),)

    return _make(out, (x,), backward)


def upsample2x(x) -> Tensor:
    """Nearest-neighbour 2x upsampling."""
    x = as_tensor(x)
    c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)
    return _make(out, (x,), lambda g: (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),))


# ---------------------------------------------------------------------------
# circular bilinear sampling

def sample_wrapped(grid: np.ndarray, x, y: np.ndarray, mode: str = "geodesic") -> Tensor:
    """Bilinearly sample a wrapped-phase grid at real coordinates.

    ``grid`` is an (H_g, W_g) array of phases in (-pi, pi]; ``x`` (tensor,
    column) and ``y`` (array, row) give per-pixel sample positions, clamped to
    the grid. Only ``x`` is differentiable.

    mode ``geodesic`` unwraps the three other cell corners relative to the
    first and interpolates the phase itself, exact for phase that is linear
    inside a cell. mode ``sincos`` interpolates (cos, sin) and recombines with
    atan2. Both cross the 2*pi seam correctly; results are wrapped to (-pi, pi].
    """
    x = as_tensor(x)
    grid = np.asarray(grid, dtype=np.float64)
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), x.shape)
    hg, wg = grid.shape
    xs = np.clip(x.data, 0.0, wg - 1)
    ys = np.clip(y, 0.0, hg - 1)
    x0 = np.minimum(np.floor(xs), wg - 2).astype(np.intp) if wg > 1 else np.zeros(x.shape, np.intp)
    y0 = np.minimum(np.floor(ys), hg - 2).astype(np.intp) if hg > 1 else np.zeros(x.shape, np.intp)
    note_branch(x0)
    x1 = np.minimum(x0 + 1, wg - 1)
    y1 = np.minimum(y0 + 1, hg - 1)
    tx = xs - x0
    ty = ys - y0
    inside = (x.data >= 0) & (x.data <= wg - 1)
    note_branch(inside)
    v00, v01 = grid[y0, x0], grid[y0, x1]
    v10, v11 = grid[y1, x0], grid[y1, x1]
    if mode == "geodesic":
        d01 = _wrap_np(v01 - v00)
        d10 = _wrap_np(v10 - v00)
        d11 = _wrap_np(v11 - v00)
        val = v00 + (1 - ty) * tx * d01 + ty * (1 - tx) * d10 + ty * tx * d11
        out = _wrap_np(val)
        dtx = (1 - ty) * d01 + ty * (d11 - d10)
    elif mode == "sincos":
        c00, c01, c10, c11 = np.cos(v00), np.cos(v01), np.cos(v10), np.cos(v11)
        s00, s01, s10, s11 = np.sin(v00), np.sin(v01), np.sin(v10), np.sin(v11)
        cc = (1 - ty) * ((1 - tx) * c00 + tx * c01) + ty * ((1 - tx) * c10 + tx * c11)
        ss = (1 - ty) * ((1 - tx) * s00 + tx * s01) + ty * ((1 - tx) * s10 + tx * s11)
        out = _wrap_np(np.arctan2(ss, cc))
        dc = (1 - ty) * (c01 - c00) + ty * (c11 - c10)
        ds = (1 - ty) * (s01 - s00) + ty * (s11 - s10)
        r2 = cc * cc + ss * ss
        dtx = np.divide(cc * ds - ss * dc, r2, out=np.zeros_like(r2), where=r2 > 0)
    else:
        raise InvalidArgument(f"unknown sampling mode {mode!r}")
    dtx = np.where(inside, dtx, 0.0)
    return _make(out, (x,), lambda g: (g * dtx,))


def _wrap_np(p):
    return p - TWO_PI * np.ceil((p - np.pi) / TWO_PI) + 0.0
