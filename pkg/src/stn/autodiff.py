"""Minimal reverse-mode automatic differentiation over numpy float64 arrays.

Every differentiable computation in this package runs through the Tensor
type below: forward passes build a tape, backward() walks it once.  Nodes
whose inputs all have requires_grad=False are created without parents, so
inference reuses the same code path with no tape growth.
"""

import numpy as np


def _as_array(x):
    return np.asarray(x, dtype=np.float64)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents")

    def __init__(self, data, requires_grad=False, parents=()):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad
        # parents: tuple of (Tensor, fn) where fn maps upstream grad -> grad
        # contribution for that parent.
        self._parents = parents

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return "Tensor(shape=%s, grad=%s)" % (self.data.shape, self.requires_grad)

    # -- graph construction ------------------------------------------------

    def backward(self, seed=None):
        """Accumulate gradients of this node into every reachable leaf.

        seed defaults to ones_like(data); pass an explicit upstream gradient
        to backpropagate from a non-scalar output.
        """
        if seed is None:
            seed = np.ones_like(self.data)
        grads = {id(self): _as_array(seed)}
        for node in reversed(_topo_order(self)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            for parent, fn in node._parents:
                contrib = fn(g)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib

    # -- operators ---------------------------------------------------------

    def __neg__(self):
        return _op(np.negative(self.data), [(self, lambda g: -g)])

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        out = self.data[key]
        if not self.requires_grad:
            return Tensor(out)

        def back(g, key=key, shape=self.data.shape):
            full = np.zeros(shape)
            full[key] = g
            return full

        return Tensor(out, True, ((self, back),))


def _topo_order(root):
    """Iterative DFS topological order (graphs outgrow the recursion limit)."""
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def wrap(x):
    """Lift an array or scalar into a constant Tensor (no-op on Tensors)."""
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(x):
    return Tensor(x, requires_grad=True)


def _op(data, parents):
    tracked = tuple((p, fn) for p, fn in parents if p.requires_grad)
    return Tensor(data, bool(tracked), tracked)


def _unbroadcast(g, shape):
    """Sum g down to `shape` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic --------------------------------------------------------------


def add(a, b):
    a, b = wrap(a), wrap(b)
    return _op(a.data + b.data, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ])


def sub(a, b):
    a, b = wrap(a), wrap(b)
    return _op(a.data - b.data, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(-g, b.data.shape)),
    ])


def mul(a, b):
    a, b = wrap(a), wrap(b)
    return _op(a.data * b.data, [
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    ])


def div(a, b):
    a, b = wrap(a), wrap(b)
    return _op(a.data / b.data, [
        (a, lambda g: _unbroadcast(g / b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
    ])


def square(a):
    a = wrap(a)
    return _op(a.data * a.data, [(a, lambda g: 2.0 * a.data * g)])


def matmul(a, b):
    """2-d or batched 3-d matrix product.  Batched case is (N,m,k)@(N,k,n)."""
    a, b = wrap(a), wrap(b)
    out = a.data @ b.data

    def back_a(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        return _unbroadcast(ga, a.data.shape)

    def back_b(g):
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(gb, b.data.shape)

    return _op(out, [(a, back_a), (b, back_b)])


# -- elementwise nonlinearities ----------------------------------------------


def relu(a):
    a = wrap(a)
    mask = a.data > 0
    return _op(np.where(mask, a.data, 0.0), [(a, lambda g: g * mask)])


def tanh(a):
    a = wrap(a)
    out = np.tanh(a.data)
    return _op(out, [(a, lambda g: g * (1.0 - out * out))])


def sigmoid(a):
    a = wrap(a)
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _op(out, [(a, lambda g: g * out * (1.0 - out))])


def softplus(a):
    """log(1 + exp(x)), overflow-safe."""
    a = wrap(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _op(out, [(a, lambda g: g * sig)])


def exp(a):
    a = wrap(a)
    out = np.exp(a.data)
    return _op(out, [(a, lambda g: g * out)])


def log(a):
    a = wrap(a)
    return _op(np.log(a.data), [(a, lambda g: g / a.data)])


# -- reductions, shape ops -----------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = wrap(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy()
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.data.shape).copy()

    return _op(out, [(a, back)])


def tmean(a, axis=None, keepdims=False):
    a = wrap(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    a = wrap(a)
    return _op(a.data.reshape(shape), [(a, lambda g: g.reshape(a.data.shape))])


def transpose(a, axes):
    a = wrap(a)
    inv = np.argsort(axes)
    return _op(a.data.transpose(axes), [(a, lambda g: g.transpose(inv))])


def concat(parts, axis):
    parts = [wrap(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    edges, start = [], 0

    for p in parts:
        n = p.data.shape[axis]
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(start, start + n)
        edges.append((p, lambda g, sl=tuple(sl): g[sl]))
        start += n
    return _op(out, edges)


def take_rows(table, idx):
    """Row gather (embedding lookup): table (V,D), idx int array -> (..,D)."""
    table = wrap(table)
    idx = np.asarray(idx)
    out = table.data[idx]

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return full

    return _op(out, [(table, back)])


def pick(a, idx):
    """a (N,V), idx (N,) -> (N,) selecting a[n, idx[n]]."""
    a = wrap(a)
    idx = np.asarray(idx)
    rows = np.arange(a.data.shape[0])
    out = a.data[rows, idx]

    def back(g):
        full = np.zeros_like(a.data)
        full[rows, idx] = g
        return full

    return _op(out, [(a, back)])


def stop_gradient(a):
    a = wrap(a)
    return Tensor(a.data)


# -- softmax family ------------------------------------------------------------


def softmax(a, axis=-1):
    """Numerically stable softmax; the max shift is a constant under the
    gradient (softmax is shift invariant)."""
    a = wrap(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - dot)

    return _op(out, [(a, back)])


def log_softmax(a, axis=-1):
    a = wrap(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def back(g):
        return g - sm * g.sum(axis=axis, keepdims=True)

    return _op(out, [(a, back)])


# -- convolution ---------------------------------------------------------------


def _im2col(x, kh, kw, stride, pad):
    """Patch matrix (C*kh*kw, N*Ho*Wo) from channel-first (C,N,H,W) input;
    one contiguous copy so the conv forward and both backwards run as plain
    BLAS matmuls on views."""
    c, n, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), (2, 3))
    windows = windows[:, :, ::stride, ::stride]      # (C, N, Ho, Wo, kh, kw)
    cols = windows.transpose(0, 4, 5, 1, 2, 3).reshape(c * kh * kw,
                                                       n * ho * wo)
    return np.ascontiguousarray(cols), ho, wo


def _col2im(gcols, x_shape, kh, kw, stride, pad):
    c, n, h, w = x_shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    gcols = gcols.reshape(c, kh, kw, n, ho, wo)
    gxp = np.zeros((c, n, h + 2 * pad, w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                gcols[:, i, j]
    if pad:
        return gxp[:, :, pad:-pad, pad:-pad]
    return gxp


def conv2d(x, w, b=None, stride=1, pad=1):
    """Channel-first convolution: x (C,N,H,W), w (Co,C,kh,kw), b (Co,)
    -> (Co,N,Ho,Wo).  The layout keeps every reshape here a view."""
    x, w = wrap(x), wrap(w)
    n = x.data.shape[1]
    co, ci, kh, kw = w.data.shape
    cols, ho, wo = _im2col(x.data, kh, kw, stride, pad)
    wmat = w.data.reshape(co, ci * kh * kw)
    out = (wmat @ cols).reshape(co, n, ho, wo)

    def back_x(g):
        gmat = g.reshape(co, n * ho * wo)
        return _col2im(wmat.T @ gmat, x.data.shape, kh, kw, stride, pad)

    def back_w(g):
        gmat = g.reshape(co, n * ho * wo)
        return (gmat @ cols.T).reshape(w.data.shape)

    edges = [(x, back_x), (w, back_w)]
    if b is not None:
        b = wrap(b)
        out = out + b.data.reshape(co, 1, 1, 1)
        edges.append((b, lambda g: g.sum(axis=(1, 2, 3))))
    return _op(out, edges)
