"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery for the sequence model: elementwise arithmetic, 2-D
matmul, strided convolution and transposed convolution (via im2col/col2im),
a few smooth activations, reshaping/concatenation/slicing, and sum
reductions. Every op builds a node whose closure accumulates gradients into
its parents; backward() walks the graph once in reverse topological order.

Arrays keep whatever dtype they were given: float64 for finite-difference
verification, float32 for desk-scale training. All ops are deterministic,
so fixed inputs give bit-identical losses and gradients.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """A numpy array plus the bookkeeping reverse-mode backprop needs."""

    __slots__ = ("data", "grad", "parents", "_backward", "requires_grad")

    def __init__(self, data, parents=(), backward=None, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.parents = tuple(parents)
        self._backward = backward
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in self.parents
        )

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into .grad over the whole graph.

    root must be a scalar (shape ()). Iterative topological sort; recursion
    would overflow on long recurrent chains.
    """
    if root.data.shape != ():
        raise ValueError("backward() expects a scalar root")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, (a, b))

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    out._backward = bwd
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data, (a, b))

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    out._backward = bwd
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, (a, b))

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    out._backward = bwd
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s, (a,))

    def bwd(g):
        _accumulate(a, g * s)

    out._backward = bwd
    return out


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def square(a: Tensor) -> Tensor:
    out = Tensor(np.square(a.data), (a,))

    def bwd(g):
        _accumulate(a, g * (2.0 * a.data))

    out._backward = bwd
    return out


def texp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y, (a,))

    def bwd(g):
        _accumulate(a, g * y)

    out._backward = bwd
    return out


def ttanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y, (a,))

    def bwd(g):
        _accumulate(a, g * (1.0 - y * y))

    out._backward = bwd
    return out


def sigmoid(a: Tensor) -> Tensor:
    # 0.5*(tanh(x/2)+1) is stable for large |x|
    y = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    out = Tensor(y, (a,))

    def bwd(g):
        _accumulate(a, g * (y * (1.0 - y)))

    out._backward = bwd
    return out


def elu(a: Tensor) -> Tensor:
    pos = a.data > 0
    y = np.where(pos, a.data, np.expm1(a.data))
    out = Tensor(y, (a,))

    def bwd(g):
        _accumulate(a, g * np.where(pos, 1.0, y + 1.0))

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), (a,))

    def bwd(g):
        _accumulate(a, g.reshape(a.shape))

    out._backward = bwd
    return out


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tensors)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def bwd(g):
        idx = [slice(None)] * g.ndim
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx[axis] = slice(int(lo), int(hi))
            _accumulate(t, g[tuple(idx)])

    out._backward = bwd
    return out


def getitem(a: Tensor, idx) -> Tensor:
    """Basic (non-fancy) slicing; backward scatters into a zero array."""
    out = Tensor(a.data[idx], (a,))

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accumulate(a, full)

    out._backward = bwd
    return out


def tile_leading(a: Tensor, reps: int) -> Tensor:
    """Repeat each leading-axis entry `reps` times: (B, ...) -> (B*reps, ...).

    Used to share per-sequence feature maps across all timesteps.
    """
    out = Tensor(np.repeat(a.data, reps, axis=0), (a,))

    def bwd(g):
        _accumulate(a, g.reshape((a.shape[0], reps) + a.shape[1:]).sum(axis=1))

    out._backward = bwd
    return out


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,))

    def bwd(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).astype(a.dtype, copy=False))
            return
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        if not keepdims:
            for ax in sorted(ax % len(a.shape) for ax in axes):
                g = np.expand_dims(g, ax)
        _accumulate(a, np.broadcast_to(g, a.shape).astype(a.dtype, copy=False))

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data @ b.data, (a, b))

    def bwd(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    out._backward = bwd
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for a (N, I) batch."""
    return add(matmul(x, w), b)


# ---------------------------------------------------------------------------
# convolution


def _conv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    if (n + 2 * pad - k) % stride != 0:
        raise ValueError(
            f"conv geometry does not tile: size={n} kernel={k} "
            f"stride={stride} pad={pad}"
        )
    return (n + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    n, h, w, c = x.shape
    oh = _conv_out_size(h, kh, stride, pad)
    ow = _conv_out_size(w, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    cols = np.empty((n, oh, ow, kh, kw, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[
                :, i : i + stride * oh : stride, j : j + stride * ow : stride, :
            ]
    return cols, oh, ow


def _col2im(cols: np.ndarray, h: int, w: int, stride: int, pad: int) -> np.ndarray:
    n, oh, ow, kh, kw, c = cols.shape
    xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[
                :, i : i + stride * oh : stride, j : j + stride * ow : stride, :
            ] += cols[:, :, :, i, j, :]
    return xp[:, pad : pad + h, pad : pad + w, :] if pad else xp


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """NHWC convolution. w: (KH, KW, Cin, Cout), b: (Cout,)."""
    n, h, wd, cin = x.shape
    kh, kw, cin_w, cout = w.shape
    if cin != cin_w:
        raise ValueError(f"conv2d channel mismatch: input {cin}, weights {cin_w}")
    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        return _conv1x1(x, w, b)
    cols, oh, ow = _im2col(x.data, kh, kw, stride, pad)
    cols_mat = cols.reshape(n * oh * ow, kh * kw * cin)
    w_mat = w.data.reshape(kh * kw * cin, cout)
    y = (cols_mat @ w_mat + b.data).reshape(n, oh, ow, cout)
    out = Tensor(y, (x, w, b))

    def bwd(g):
        g_mat = g.reshape(n * oh * ow, cout)
        _accumulate(w, (cols_mat.T @ g_mat).reshape(w.shape))
        _accumulate(b, g_mat.sum(axis=0))
        if x.requires_grad:
            dcols = (g_mat @ w_mat.T).reshape(cols.shape)
            _accumulate(x, _col2im(dcols, h, wd, stride, pad))

    out._backward = bwd
    return out


def _conv1x1(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Pointwise convolution as a single matmul (no patch extraction)."""
    n, h, wd, cin = x.shape
    cout = w.shape[3]
    x_mat = x.data.reshape(n * h * wd, cin)
    w_mat = w.data.reshape(cin, cout)
    y = (x_mat @ w_mat + b.data).reshape(n, h, wd, cout)
    out = Tensor(y, (x, w, b))

    def bwd(g):
        g_mat = g.reshape(n * h * wd, cout)
        _accumulate(w, (x_mat.T @ g_mat).reshape(w.shape))
        _accumulate(b, g_mat.sum(axis=0))
        if x.requires_grad:
            _accumulate(x, (g_mat @ w_mat.T).reshape(x.shape))

    out._backward = bwd
    return out


def conv2d_transpose(
    x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0
) -> Tensor:
    """NHWC transposed convolution (exact adjoint of conv2d's input map).

    w: (KH, KW, Cout, Cin), b: (Cout,). Output spatial size is
    (in - 1)*stride + K - 2*pad.
    """
    n, ih, iw, cin = x.shape
    kh, kw, cout, cin_w = w.shape
    if cin != cin_w:
        raise ValueError(
            f"conv2d_transpose channel mismatch: input {cin}, weights {cin_w}"
        )
    oh = (ih - 1) * stride + kh - 2 * pad
    ow = (iw - 1) * stride + kw - 2 * pad
    x_mat = x.data.reshape(n * ih * iw, cin)
    w_mat = w.data.reshape(kh * kw * cout, cin)
    cols = (x_mat @ w_mat.T).reshape(n, ih, iw, kh, kw, cout)
    y = _col2im(cols, oh, ow, stride, pad) + b.data
    out = Tensor(y, (x, w, b))

    def bwd(g):
        gcols, goh, gow = _im2col(g, kh, kw, stride, pad)
        g_mat = gcols.reshape(n * goh * gow, kh * kw * cout)
        _accumulate(b, g.sum(axis=(0, 1, 2)))
        _accumulate(w, (g_mat.T @ x_mat).reshape(w.shape))
        if x.requires_grad:
            _accumulate(x, (g_mat @ w_mat).reshape(x.shape))

    out._backward = bwd
    return out
