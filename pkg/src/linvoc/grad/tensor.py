"""Reverse-mode differentiation over numpy arrays.

A forward pass records every op that touches a tensor requiring gradients.
Each recorded node keeps its parents and a backward rule mapping the output
gradient to one gradient per parent. ``backward`` replays the recorded nodes
in reverse creation order, so every node is visited exactly once.
"""
from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_counter = itertools.count()
_grad_enabled = True
_default_dtype = np.float32


class GradError(RuntimeError):
    pass


def default_dtype():
    return _default_dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for new parameters and constants."""
    global _default_dtype
    prev = _default_dtype
    _default_dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _default_dtype = prev


_kink_log: list | None = None


@contextlib.contextmanager
def track_kinks():
    """Collect the sign pattern of every leaky_relu input evaluated inside the block."""
    global _kink_log
    prev = _kink_log
    _kink_log = []
    try:
        yield _kink_log
    finally:
        _kink_log = prev


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, (np.ndarray, np.generic)) and np.issubdtype(data.dtype, np.floating):
            self.data = np.asarray(data)
        else:
            self.data = np.asarray(data, dtype=_default_dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._id = next(_counter)
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self):
        return len(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> Tensor:
        return detach(self)

    # -- operators -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other, self)))

    def __rsub__(self, other):
        return add(_lift(other, self), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self):
        backward(self)


def tensor(data, requires_grad: bool = False, dtype=None, name: str | None = None) -> Tensor:
    arr = np.array(data, dtype=dtype or _default_dtype)
    return Tensor(arr, requires_grad=requires_grad, name=name)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else _default_dtype
    return Tensor(np.asarray(x, dtype=dtype))


def _record(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# backward driver
# ---------------------------------------------------------------------------
def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf that requires it."""
    if loss.size != 1:
        raise GradError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node._id in nodes:
            continue
        nodes[node._id] = node
        stack.extend(p for p in node._parents if p.requires_grad)

    grads: dict[int, np.ndarray] = {loss._id: np.ones_like(loss.data)}
    for nid in sorted(nodes, reverse=True):
        node = nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------
def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _record(ad * bd, (a, b), bw)


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _record(out, (a,), lambda g: (-g * out * out,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _record(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _record(out, (a,), lambda g: (g / (2.0 * out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _record(np.log(ad), (a,), lambda g: (g / ad,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    ad = a.data
    pos = ad > 0
    if _kink_log is not None:
        _kink_log.append(np.packbits(pos))
    sl = ad.dtype.type(slope)
    out = np.maximum(ad, ad * sl) if 0 <= slope <= 1 else np.where(pos, ad, ad * sl)

    def bw(g):
        m = pos.astype(g.dtype)
        m *= 1 - sl
        m += sl
        return (g * m,)

    return _record(out, (a,), bw)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    x = a.data
    x2 = x * x
    th = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + th)

    def bw(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * d_inner),)

    return _record(out, (a,), bw)


def detach(a: Tensor) -> Tensor:
    """Same values, no gradient path (the stop-gradient operator)."""
    return Tensor(a.data)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    if a.size == 0:
        raise GradError("reduction over an empty array")
    shape = a.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(a.data.sum(axis=axes, keepdims=keepdims), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    if a.size == 0:
        raise GradError("reduction over an empty array")
    count = int(np.prod([a.shape[ax] for ax in axes]))
    shape = a.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _record(a.data.mean(axis=axes, keepdims=keepdims), (a,), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, (a,), bw)


def layer_norm(a: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along ``axis`` (no affine part)."""
    x = a.data
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv
    n = x.shape[axis]

    def bw(g):
        g_mean = g.mean(axis=axis, keepdims=True)
        gx_mean = (g * out).mean(axis=axis, keepdims=True)
        return (inv * (g - g_mean - out * gx_mean),)

    if n == 0:
        raise GradError("layer_norm over an empty axis")
    return _record(out, (a,), bw)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------
def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise GradError(str(exc)) from None
    return _record(out, (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _record(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, tuple(axes))


def slice_(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g) if _is_fancy(index) else full.__setitem__(index, g)
        return (full,)

    return _record(a.data[index], (a,), bw)


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_lift(p) for p in parts]
    axis = axis % parts[0].ndim
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def bw(g):
        out = []
        for k in range(len(parts)):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(bounds[k], bounds[k + 1])
            out.append(g[tuple(idx)])
        return tuple(out)

    return _record(np.concatenate([p.data for p in parts], axis=axis), parts, bw)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [reshape(p, p.shape[:axis] + (1,) + p.shape[axis:]) for p in parts]
    return concat(parts, axis=axis)


def pad1d(a: Tensor, left: int, right: int, mode: str = "constant", axis: int = -1) -> Tensor:
    """Pad one axis (default last). ``mode`` is 'constant' (zeros) or 'reflect'."""
    if left == 0 and right == 0:
        return a
    axis = axis % a.ndim
    n = a.shape[axis]

    def sl(start, stop, step=None):
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(start, stop, step)
        return tuple(idx)

    if mode == "constant":
        width = [(0, 0)] * a.ndim
        width[axis] = (left, right)
        return _record(np.pad(a.data, width), (a,), lambda g: (g[sl(left, left + n)],))
    if mode == "reflect":
        if left >= n or right >= n:
            raise GradError(f"reflect padding {left}/{right} needs more than {n} samples")
        parts = []
        if left:
            parts.append(a[sl(left, 0, -1)])
        parts.append(a)
        if right:
            parts.append(a[sl(n - 2, n - 2 - right, -1)])
        return concat(parts, axis=axis)
    raise GradError(f"unknown pad mode {mode!r}")


# ---------------------------------------------------------------------------
# linear algebra / convolution
# ---------------------------------------------------------------------------
def _mm2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b, folding leading axes of ``a`` into one GEMM when ``b`` is a plain matrix."""
    if b.ndim == 2 and a.ndim > 2:
        return (a.reshape(-1, a.shape[-1]) @ b).reshape(a.shape[:-1] + (b.shape[-1],))
    return a @ b


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise GradError("matmul needs operands with at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise GradError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(_mm2(g, np.swapaxes(bd, -1, -2)), ad.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                # shared weight: fold the batch axes into one GEMM
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _record(_mm2(ad, bd), (a, b), bw)


def _conv1d_single(x, w, stride, padding, dilation):
    B, cin, L = x.shape
    cout, _, K = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    span = (K - 1) * dilation + 1
    lout = (xp.shape[-1] - span) // stride + 1
    if lout <= 0:
        raise GradError(f"conv1d input of length {L} too short for kernel span {span}")
    win = sliding_window_view(xp, span, axis=2)[:, :, : (lout - 1) * stride + 1 : stride, ::dilation]
    cols = win.transpose(0, 2, 1, 3).reshape(B, lout, cin * K)
    wmat = w.reshape(cout, cin * K)
    out = _mm2(cols, wmat.T).transpose(0, 2, 1)
    return out, cols, xp.shape, lout


def _conv1d_scatter(dcols, xp_shape, K, stride, padding, dilation, lout, dtype):
    B, cin = xp_shape[0], xp_shape[1]
    dcols = dcols.reshape(B, lout, cin, K)
    dxp = np.zeros(xp_shape, dtype=dtype)
    span = (K - 1) * dilation + 1
    if K <= lout:
        for k in range(K):
            start = k * dilation
            dxp[:, :, start : start + (lout - 1) * stride + 1 : stride] += dcols[:, :, :, k].transpose(0, 2, 1)
    else:
        for l in range(lout):
            start = l * stride
            dxp[:, :, start : start + span : dilation] += dcols[:, l]
    if padding:
        dxp = dxp[:, :, padding:-padding]
    return dxp


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0,
           dilation: int = 1, groups: int = 1) -> Tensor:
    """1-D cross-correlation. x: (B, C_in, L), w: (C_out, C_in/groups, K)."""
    if x.ndim != 3 or w.ndim != 3:
        raise GradError("conv1d expects x (B, C, L) and w (C_out, C_in/groups, K)")
    B, cin, L = x.shape
    cout, cin_g, K = w.shape
    if cin % groups or cout % groups or cin // groups != cin_g:
        raise GradError(f"conv1d channel mismatch: x {x.shape}, w {w.shape}, groups={groups}")
    xd, wd = x.data, w.data
    og = cout // groups
    outs, saved = [], []
    for gi in range(groups):
        xg = xd[:, gi * cin_g:(gi + 1) * cin_g] if groups > 1 else xd
        wg = wd[gi * og:(gi + 1) * og] if groups > 1 else wd
        o, cols, xp_shape, lout = _conv1d_single(xg, wg, stride, padding, dilation)
        outs.append(o)
        saved.append(cols)
    out = np.concatenate(outs, axis=1) if groups > 1 else outs[0]

    def bw(g):
        gx = np.zeros_like(xd) if x.requires_grad else None
        gw = np.zeros_like(wd) if w.requires_grad else None
        for gi in range(groups):
            gg = g[:, gi * og:(gi + 1) * og].transpose(0, 2, 1)  # (B, lout, og)
            wg = wd[gi * og:(gi + 1) * og]
            if gw is not None:
                gw[gi * og:(gi + 1) * og] = np.tensordot(gg, saved[gi], axes=([0, 1], [0, 1])).reshape(wg.shape)
            if gx is not None:
                dcols = _mm2(gg, wg.reshape(og, cin_g * K))
                gx[:, gi * cin_g:(gi + 1) * cin_g] = _conv1d_scatter(
                    dcols, (B, cin_g, xp_shape[-1]), K, stride, padding, dilation, lout, xd.dtype)
        return gx, gw

    y = _record(out, (x, w), bw)
    if b is not None:
        y = add(y, reshape(b, (1, cout, 1)))
    return y


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """2-D cross-correlation. x: (B, C_in, H, W), w: (C_out, C_in, KH, KW)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise GradError(f"conv2d shape mismatch: x {x.shape}, w {w.shape}")
    B, cin, H, W = x.shape
    cout, _, KH, KW = w.shape
    sh, sw = stride
    ph, pw = padding
    xd, wd = x.data, w.data
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xd
    hout = (xp.shape[2] - KH) // sh + 1
    wout = (xp.shape[3] - KW) // sw + 1
    if hout <= 0 or wout <= 0:
        raise GradError(f"conv2d input {x.shape} too small for kernel {(KH, KW)}")
    cols = np.empty((B, hout, wout, cin, KH, KW), dtype=xd.dtype)
    for i in range(KH):
        for j in range(KW):
            patch = xp[:, :, i:i + (hout - 1) * sh + 1:sh, j:j + (wout - 1) * sw + 1:sw]
            cols[..., i, j] = patch.transpose(0, 2, 3, 1)
    cols = cols.reshape(B, hout, wout, cin * KH * KW)
    wmat = wd.reshape(cout, -1)
    out = _mm2(cols, wmat.T).transpose(0, 3, 1, 2)

    def bw(g):
        gg = g.transpose(0, 2, 3, 1)  # (B, hout, wout, cout)
        gw = np.tensordot(gg, cols, axes=([0, 1, 2], [0, 1, 2])).reshape(wd.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = _mm2(gg, wmat).reshape(B, hout, wout, cin, KH, KW)
            dxp = np.zeros(xp.shape, dtype=xd.dtype)
            for i in range(KH):
                for j in range(KW):
                    dxp[:, :, i:i + (hout - 1) * sh + 1:sh, j:j + (wout - 1) * sw + 1:sw] += \
                        dcols[..., i, j].transpose(0, 3, 1, 2)
            gx = dxp[:, :, ph:ph + H, pw:pw + W]
        return gx, gw

    y = _record(out, (x, w), bw)
    if b is not None:
        y = add(y, reshape(b, (1, cout, 1, 1)))
    return y


def avg_pool1d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping average pooling over the last axis (length must divide by k)."""
    if k == 1:
        return x
    L = x.shape[-1]
    if L % k:
        raise GradError(f"avg_pool1d: length {L} not divisible by {k}")
    return mean(reshape(x, x.shape[:-1] + (L // k, k)), axis=-1)
