"""Differentiable primitives.

Elementwise binary ops require identical shapes; the only broadcasting
primitive is :func:`bias_add`. Python scalars are accepted wherever a second
operand is and are treated as constants.
"""
from __future__ import annotations

import numbers

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import Function, ShapeError, Tensor, as_tensor

LEAKY_SLOPE = 0.2


def _is_scalar(x) -> bool:
    return isinstance(x, numbers.Number) and not isinstance(x, bool)


def _same(name, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise arithmetic


class Add(Function):
    name = "add"
    double_backward = True

    def forward(self, a, b):
        _same(self.name, a, b)
        return a + b

    def backward(self, g, needs):
        return g, g


class Sub(Function):
    name = "sub"
    double_backward = True

    def forward(self, a, b):
        _same(self.name, a, b)
        return a - b

    def backward(self, g, needs):
        return g, (neg(g) if needs[1] else None)


class Mul(Function):
    name = "mul"
    double_backward = True

    def forward(self, a, b):
        _same(self.name, a, b)
        return a * b

    def backward(self, g, needs):
        a, b = self.inputs
        return (mul(g, b) if needs[0] else None), (mul(g, a) if needs[1] else None)


class Div(Function):
    name = "div"

    def forward(self, a, b):
        _same(self.name, a, b)
        self.a, self.b = a, b
        return a / b

    def backward(self, g, needs):
        ga = Tensor(g.data / self.b) if needs[0] else None
        gb = Tensor(-g.data * self.a / (self.b * self.b)) if needs[1] else None
        return ga, gb


class Neg(Function):
    name = "neg"
    double_backward = True

    def forward(self, a):
        return -a

    def backward(self, g, needs):
        return (neg(g),)


class AddConst(Function):
    name = "add_const"
    double_backward = True

    def __init__(self, c):
        self.c = c

    def forward(self, a):
        return a + np.asarray(self.c, dtype=a.dtype)

    def backward(self, g, needs):
        return (g,)


class MulConst(Function):
    name = "mul_const"
    double_backward = True

    def __init__(self, c):
        self.c = c

    def forward(self, a):
        return a * np.asarray(self.c, dtype=a.dtype)

    def backward(self, g, needs):
        return (mul(g, self.c),)


class Reciprocal(Function):
    name = "reciprocal"

    def forward(self, a):
        self.out = 1.0 / a
        return self.out

    def backward(self, g, needs):
        return (Tensor(-g.data * self.out * self.out),)


def add(a, b):
    if _is_scalar(b):
        return AddConst.apply(a, c=b)
    if _is_scalar(a):
        return AddConst.apply(b, c=a)
    return Add.apply(a, b)


def sub(a, b):
    if _is_scalar(b):
        return AddConst.apply(a, c=-b)
    if _is_scalar(a):
        return rsub(b, a)
    return Sub.apply(a, b)


def rsub(a, c):
    """c - a for a scalar c."""
    return AddConst.apply(Neg.apply(a), c=c)


def mul(a, b):
    if _is_scalar(b):
        return MulConst.apply(a, c=b)
    if _is_scalar(a):
        return MulConst.apply(b, c=a)
    return Mul.apply(a, b)


def div(a, b):
    if _is_scalar(b):
        return MulConst.apply(a, c=1.0 / b)
    if _is_scalar(a):
        return rdiv(b, a)
    return Div.apply(a, b)


def rdiv(a, c):
    """c / a for a scalar c."""
    return MulConst.apply(Reciprocal.apply(a), c=c)


def neg(a):
    return Neg.apply(a)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


class Exp(Function):
    name = "exp"

    def forward(self, a):
        with np.errstate(over="ignore"):
            self.out = np.exp(a)
        return self.out

    def backward(self, g, needs):
        return (Tensor(g.data * self.out),)


class Log(Function):
    name = "log"

    def forward(self, a):
        if np.any(a <= 0):
            raise ShapeError("log: input must be strictly positive")
        self.a = a
        return np.log(a)

    def backward(self, g, needs):
        return (Tensor(g.data / self.a),)


class Sin(Function):
    name = "sin"

    def forward(self, a):
        self.a = a
        return np.sin(a)

    def backward(self, g, needs):
        return (Tensor(g.data * np.cos(self.a)),)


class Cos(Function):
    name = "cos"

    def forward(self, a):
        self.a = a
        return np.cos(a)

    def backward(self, g, needs):
        return (Tensor(-g.data * np.sin(self.a)),)


def _sigmoid(a):
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, a):
        self.out = _sigmoid(a)
        return self.out

    def backward(self, g, needs):
        return (Tensor(g.data * self.out * (1.0 - self.out)),)


class Softplus(Function):
    """log(1 + e^x), evaluated as logaddexp(0, x)."""

    name = "softplus"

    def forward(self, a):
        self.a = a
        return np.logaddexp(np.zeros((), dtype=a.dtype), a)

    def backward(self, g, needs):
        return (Tensor(g.data * _sigmoid(self.a)),)


class ReLU(Function):
    name = "relu"
    double_backward = True

    def forward(self, a):
        self.mask = (a > 0).astype(a.dtype)
        return a * self.mask

    def backward(self, g, needs):
        return (mul(g, Tensor(self.mask)),)


class LeakyReLU(Function):
    name = "leaky_relu"
    double_backward = True

    def __init__(self, slope=LEAKY_SLOPE):
        self.slope = slope

    def forward(self, a):
        self.scale = np.where(a > 0, 1.0, self.slope).astype(a.dtype)
        return a * self.scale

    def backward(self, g, needs):
        return (mul(g, Tensor(self.scale)),)


class Maximum(Function):
    name = "maximum"

    def forward(self, a, b):
        _same(self.name, a, b)
        self.take_a = a >= b
        return np.maximum(a, b)

    def backward(self, g, needs):
        return (Tensor(np.where(self.take_a, g.data, 0.0)) if needs[0] else None,
                Tensor(np.where(self.take_a, 0.0, g.data)) if needs[1] else None)


def exp(a):
    return Exp.apply(a)


def log(a):
    return Log.apply(a)


def sin(a):
    return Sin.apply(a)


def cos(a):
    return Cos.apply(a)


def sigmoid(a):
    return Sigmoid.apply(a)


def softplus(a):
    return Softplus.apply(a)


def relu(a):
    return ReLU.apply(a)


def leaky_relu(a, slope=LEAKY_SLOPE):
    return LeakyReLU.apply(a, slope=slope)


def maximum(a, b):
    return Maximum.apply(a, b)


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


class Sum(Function):
    name = "sum"
    double_backward = True

    def __init__(self, axis=None, keepdims=False):
        self.axis = axis
        self.keepdims = keepdims

    def forward(self, a):
        self.in_shape = a.shape
        self.axes = _norm_axes(self.axis, a.ndim)
        return np.asarray(a.sum(axis=self.axes, keepdims=self.keepdims))

    def backward(self, g, needs):
        kept = tuple(1 if i in self.axes else n for i, n in enumerate(self.in_shape))
        return (broadcast_to(reshape(g, kept), self.in_shape),)


class BroadcastTo(Function):
    """Expand singleton axes; the adjoint of a keepdims sum."""

    name = "broadcast_to"
    double_backward = True

    def __init__(self, shape):
        self.shape = tuple(shape)

    def forward(self, a):
        if a.ndim != len(self.shape) or any(s != 1 and s != t for s, t in zip(a.shape, self.shape)):
            raise ShapeError(f"broadcast_to: cannot expand {a.shape} to {self.shape}")
        self.in_shape = a.shape
        return np.array(np.broadcast_to(a, self.shape), order="C")

    def backward(self, g, needs):
        axes = tuple(i for i, (s, t) in enumerate(zip(self.in_shape, self.shape)) if s == 1 and t != 1)
        if not axes:
            return (g,)
        return (Sum.apply(g, axis=axes, keepdims=True),)


class Reshape(Function):
    name = "reshape"
    double_backward = True

    def __init__(self, shape):
        self.shape = tuple(shape)

    def forward(self, a):
        self.in_shape = a.shape
        try:
            return a.reshape(self.shape)
        except ValueError as exc:
            raise ShapeError(f"reshape: cannot reshape {a.shape} to {self.shape}") from exc

    def backward(self, g, needs):
        return (reshape(g, self.in_shape),)


class SwapLast(Function):
    name = "swap_last"
    double_backward = True

    def forward(self, a):
        if a.ndim < 2:
            raise ShapeError(f"swap_last: need at least 2 dims, got {a.shape}")
        return np.swapaxes(a, -1, -2)

    def backward(self, g, needs):
        return (swap_last(g),)


class GetItem(Function):
    name = "getitem"

    def __init__(self, index):
        self.index = index

    def forward(self, a):
        self.in_shape, self.dtype = a.shape, a.dtype
        return np.array(a[self.index])

    def backward(self, g, needs):
        out = np.zeros(self.in_shape, dtype=self.dtype)
        np.add.at(out, self.index, g.data)
        return (Tensor(out),)


class Concat(Function):
    name = "concat"
    double_backward = True

    def __init__(self, axis):
        self.axis = axis

    def forward(self, *arrays):
        ref = arrays[0]
        ax = self.axis % ref.ndim
        for a in arrays[1:]:
            if a.ndim != ref.ndim or any(s != t for i, (s, t) in enumerate(zip(a.shape, ref.shape)) if i != ax):
                raise ShapeError(f"concat: incompatible shapes {[x.shape for x in arrays]} on axis {self.axis}")
        self.ax = ax
        self.sizes = [a.shape[ax] for a in arrays]
        return np.concatenate(arrays, axis=ax)

    def backward(self, g, needs):
        out, start = [], 0
        for size, need in zip(self.sizes, needs):
            if need:
                idx = [slice(None)] * g.ndim
                idx[self.ax] = slice(start, start + size)
                out.append(SliceView.apply(g, index=tuple(idx)))
            else:
                out.append(None)
            start += size
        return out


class SliceView(Function):
    """Basic (non-advanced) slicing; differentiable twice."""

    name = "slice"
    double_backward = True

    def __init__(self, index):
        self.index = index

    def forward(self, a):
        self.in_shape, self.dtype = a.shape, a.dtype
        return np.array(a[self.index], order="C")

    def backward(self, g, needs):
        return (PadSlice.apply(g, index=self.index, shape=self.in_shape),)


class PadSlice(Function):
    """Adjoint of :class:`SliceView`: scatter into zeros."""

    name = "pad_slice"
    double_backward = True

    def __init__(self, index, shape):
        self.index, self.shape = index, shape

    def forward(self, g):
        out = np.zeros(self.shape, dtype=g.dtype)
        out[self.index] = g
        return out

    def backward(self, gg, needs):
        return (SliceView.apply(gg, index=self.index),)


class ScatterRows(Function):
    """Place rows of ``x`` at unique positions ``index`` of a zero array with ``n`` rows."""

    name = "scatter_rows"

    def __init__(self, index, n):
        self.index, self.n = np.asarray(index), int(n)

    def forward(self, x):
        if x.shape[0] != len(self.index):
            raise ShapeError(f"scatter_rows: {x.shape[0]} rows for {len(self.index)} indices")
        out = np.zeros((self.n,) + x.shape[1:], dtype=x.dtype)
        out[self.index] = x
        return out

    def backward(self, g, needs):
        return (g[self.index],)


def scatter_rows(x, index, n):
    return ScatterRows.apply(x, index=index, n=n)


def _is_basic(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(Ellipsis))) for i in items)


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = int(np.prod([a.shape[i] for i in _norm_axes(axis, a.ndim)]))
    return MulConst.apply(Sum.apply(a, axis=axis, keepdims=keepdims), c=1.0 / n)


def broadcast_to(a, shape):
    return BroadcastTo.apply(a, shape=shape)


def reshape(a, shape):
    return Reshape.apply(a, shape=shape)


def swap_last(a):
    return SwapLast.apply(a)


def getitem(a, index):
    if _is_basic(index):
        return SliceView.apply(a, index=index)
    return GetItem.apply(a, index=index)


def concat(tensors, axis=-1):
    return Concat.apply(*tensors, axis=axis)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    shape = tensors[0].shape
    ax = axis % (len(shape) + 1)
    new = shape[:ax] + (1,) + shape[ax:]
    return concat([reshape(t, new) for t in tensors], axis=ax)


# ---------------------------------------------------------------------------
# linear algebra


class MatMul(Function):
    """(..., n, k) @ (k, m) with a shared right operand, or batched with equal leading dims."""

    name = "matmul"
    double_backward = True

    def forward(self, a, b):
        ok = a.ndim >= 2 and b.ndim >= 2 and a.shape[-1] == b.shape[-2]
        if ok and b.ndim > 2:
            ok = a.shape[:-2] == b.shape[:-2]
        if not ok:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
        return np.matmul(a, b)

    def backward(self, g, needs):
        a, b = self.inputs
        ga = gb = None
        if needs[0]:
            ga = matmul(g, swap_last(b))
        if needs[1]:
            if b.ndim == 2 and a.ndim > 2:
                k, m = b.shape
                gb = matmul(swap_last(reshape(a, (-1, k))), reshape(g, (-1, m)))
            else:
                gb = matmul(swap_last(a), g)
        return ga, gb


class BiasAdd(Function):
    """x + b where b broadcasts to x without changing x's shape."""

    name = "bias_add"
    double_backward = True

    def forward(self, x, b):
        try:
            shape = np.broadcast_shapes(x.shape, b.shape)
        except ValueError:
            shape = None
        if shape != x.shape:
            raise ShapeError(f"bias_add: bias {b.shape} does not broadcast to {x.shape}")
        self.b_shape = b.shape
        return x + b

    def backward(self, g, needs):
        gb = None
        if needs[1]:
            lead = g.ndim - len(self.b_shape)
            padded = (1,) * lead + self.b_shape
            axes = tuple(i for i, (s, t) in enumerate(zip(padded, g.shape)) if s == 1 and t != 1)
            gb = reshape(Sum.apply(g, axis=axes, keepdims=True) if axes else g, self.b_shape)
        return g, gb


def matmul(a, b):
    return MatMul.apply(a, b)


def bias_add(x, b):
    return BiasAdd.apply(x, b)


def linear(x, w, b=None):
    y = matmul(x, w)
    return y if b is None else bias_add(y, b)


# ---------------------------------------------------------------------------
# scans


class CumProd(Function):
    """Inclusive cumulative product along ``axis``.

    Factors all above 1e-12 go through log space; otherwise a direct product
    with an exact reverse recurrence for the gradient.
    """

    name = "cumprod"
    TINY = 1e-12

    def __init__(self, axis=-1):
        self.axis = axis

    def forward(self, a):
        self.a = a
        self.log_space = bool(np.all(a > self.TINY))
        if self.log_space:
            self.out = np.exp(np.cumsum(np.log(a), axis=self.axis))
        else:
            self.out = np.cumprod(a, axis=self.axis)
        return self.out

    def backward(self, g, needs):
        ax = self.axis % self.a.ndim
        if self.log_space:
            gy = np.flip(np.cumsum(np.flip(g.data * self.out, ax), axis=ax), ax)
            return (Tensor(gy / self.a),)
        # S_k = g_k + x_{k+1} S_{k+1};  dL/dx_k = prod_{i<k} x_i * S_k
        a = np.moveaxis(self.a, ax, 0)
        gm = np.moveaxis(g.data, ax, 0)
        n = a.shape[0]
        s = np.empty_like(gm)
        s[-1] = gm[-1]
        for k in range(n - 2, -1, -1):
            s[k] = gm[k] + a[k + 1] * s[k + 1]
        prefix = np.ones_like(a)
        if n > 1:
            prefix[1:] = np.cumprod(a[:-1], axis=0)
        return (Tensor(np.moveaxis(prefix * s, 0, ax)),)


def cumprod(a, axis=-1):
    return CumProd.apply(a, axis=axis)


# ---------------------------------------------------------------------------
# images (NHWC)


def _conv_out(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def _im2col(x, kh, kw, stride, pad):
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    x = np.ascontiguousarray(x)
    B, Hp, Wp, C = x.shape
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    sB, sH, sW, sC = x.strides
    win = as_strided(x, shape=(B, Ho, Wo, kh, kw, C), strides=(sB, sH * stride, sW * stride, sH, sW, sC))
    return win.reshape(B * Ho * Wo, kh * kw * C), Ho, Wo


def _col2im(cols, x_shape, kh, kw, stride, pad, Ho, Wo):
    B, H, W, C = x_shape
    cols = cols.reshape(B, Ho, Wo, kh, kw, C)
    out = np.zeros((B, H + 2 * pad, W + 2 * pad, C), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride, :] += cols[:, :, :, i, j, :]
    if pad:
        out = out[:, pad:pad + H, pad:pad + W, :]
    return np.ascontiguousarray(out)


def _conv_fwd(x, w, stride, pad):
    kh, kw, C, O = w.shape
    cols, Ho, Wo = _im2col(x, kh, kw, stride, pad)
    return (cols @ w.reshape(kh * kw * C, O)).reshape(x.shape[0], Ho, Wo, O), cols


def _conv_weight_grad(x, g, w_shape, stride, pad, cols=None):
    kh, kw, C, O = w_shape
    if cols is None:
        cols, _, _ = _im2col(x, kh, kw, stride, pad)
    return (cols.T @ g.reshape(-1, O)).reshape(w_shape)


def _conv_input_grad(g, w, x_shape, stride, pad):
    kh, kw, C, O = w.shape
    B, Ho, Wo, _ = g.shape
    gcols = g.reshape(-1, O) @ w.reshape(kh * kw * C, O).T
    return _col2im(gcols, x_shape, kh, kw, stride, pad, Ho, Wo)


class Conv2d(Function):
    """NHWC convolution, kernel laid out (kh, kw, C_in, C_out)."""

    name = "conv2d"
    double_backward = True

    def __init__(self, stride=1, pad=1):
        self.stride, self.pad = stride, pad

    def forward(self, x, w):
        if x.ndim != 4 or w.ndim != 4 or x.shape[-1] != w.shape[2]:
            raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
        if _conv_out(x.shape[1], w.shape[0], self.stride, self.pad) < 1:
            raise ShapeError(f"conv2d: input {x.shape} too small for kernel {w.shape}")
        out, self.cols = _conv_fwd(x, w, self.stride, self.pad)
        self.x_shape, self.w_shape = x.shape, w.shape
        return out

    def backward(self, g, needs):
        x, w = self.inputs
        gx = gw = None
        if needs[0]:
            gx = Conv2dInputGrad.apply(g, w, x_shape=self.x_shape, stride=self.stride, pad=self.pad)
        if needs[1]:
            if g.requires_grad:
                gw = Conv2dWeightGrad.apply(x, g, w_shape=self.w_shape, stride=self.stride, pad=self.pad)
            else:
                gw = Tensor(_conv_weight_grad(None, g.data, self.w_shape, self.stride, self.pad, cols=self.cols))
        return gx, gw


class Conv2dInputGrad(Function):
    """Transposed convolution: the input-gradient of :class:`Conv2d` as a node."""

    name = "conv2d_input_grad"

    def __init__(self, x_shape, stride, pad):
        self.x_shape, self.stride, self.pad = x_shape, stride, pad

    def forward(self, g, w):
        self.g, self.w = g, w
        return _conv_input_grad(g, w, self.x_shape, self.stride, self.pad)

    def backward(self, gg, needs):
        # <gg, J^T g> = <conv(gg, w), g>
        dg = dw = None
        if needs[0]:
            dg = Tensor(_conv_fwd(gg.data, self.w, self.stride, self.pad)[0])
        if needs[1]:
            dw = Tensor(_conv_weight_grad(gg.data, self.g, self.w.shape, self.stride, self.pad))
        return dg, dw


class Conv2dWeightGrad(Function):
    """Weight-gradient of :class:`Conv2d` as a node (bilinear in x and g)."""

    name = "conv2d_weight_grad"

    def __init__(self, w_shape, stride, pad):
        self.w_shape, self.stride, self.pad = w_shape, stride, pad

    def forward(self, x, g):
        self.x, self.g = x, g
        return _conv_weight_grad(x, g, self.w_shape, self.stride, self.pad)

    def backward(self, gw, needs):
        dx = dg = None
        if needs[0]:
            dx = Tensor(_conv_input_grad(self.g, gw.data, self.x.shape, self.stride, self.pad))
        if needs[1]:
            dg = Tensor(_conv_fwd(self.x, gw.data, self.stride, self.pad)[0])
        return dx, dg


def conv2d(x, w, stride=1, pad=1):
    return Conv2d.apply(x, w, stride=stride, pad=pad)


class UpsampleNearest2x(Function):
    name = "upsample_nearest"

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"upsample_nearest: expected NHWC, got {x.shape}")
        return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)

    def backward(self, g, needs):
        B, H2, W2, C = g.shape
        return (Tensor(g.data.reshape(B, H2 // 2, 2, W2 // 2, 2, C).sum(axis=(2, 4))),)


def _bilinear_axis(x, axis):
    # half-pixel centres: out[2i] = .75 x[i] + .25 x[i-1], out[2i+1] = .75 x[i] + .25 x[i+1], edges clamped
    x = np.moveaxis(x, axis, 0)
    prev = np.concatenate([x[:1], x[:-1]], axis=0)
    nxt = np.concatenate([x[1:], x[-1:]], axis=0)
    out = np.empty((2 * x.shape[0],) + x.shape[1:], dtype=x.dtype)
    out[0::2] = 0.75 * x + 0.25 * prev
    out[1::2] = 0.75 * x + 0.25 * nxt
    return np.moveaxis(out, 0, axis)


def _bilinear_axis_adjoint(g, axis):
    g = np.moveaxis(g, axis, 0)
    ge, go = g[0::2], g[1::2]
    out = 0.75 * (ge + go)
    out[:-1] += 0.25 * ge[1:]
    out[0] += 0.25 * ge[0]
    out[1:] += 0.25 * go[:-1]
    out[-1] += 0.25 * go[-1]
    return np.moveaxis(out, 0, axis)


class UpsampleBilinear2x(Function):
    name = "upsample_bilinear"

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"upsample_bilinear: expected NHWC, got {x.shape}")
        return np.ascontiguousarray(_bilinear_axis(_bilinear_axis(x, 1), 2))

    def backward(self, g, needs):
        return (Tensor(np.ascontiguousarray(_bilinear_axis_adjoint(_bilinear_axis_adjoint(g.data, 2), 1))),)


def upsample_nearest(x):
    return UpsampleNearest2x.apply(x)


def upsample_bilinear(x):
    return UpsampleBilinear2x.apply(x)


PRIMITIVES = {
    "matmul": matmul,
    "bias_add": bias_add,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "exp": exp,
    "log": log,
    "sin": sin,
    "cos": cos,
    "sigmoid": sigmoid,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "softplus": softplus,
    "sum": sum,
    "mean": mean,
    "cumprod": cumprod,
    "concat": concat,
    "reshape": reshape,
    "conv2d": conv2d,
    "upsample_nearest": upsample_nearest,
    "upsample_bilinear": upsample_bilinear,
    "maximum": maximum,
    "scatter_rows": scatter_rows,
}


def primitive_catalog() -> set[str]:
    """Names of the differentiable primitives the engine provides."""
    return set(PRIMITIVES)
