"""Differentiable primitives.

Each function takes tensors (or array-likes, promoted to constants) and returns
a new :class:`Tensor` whose backward closure yields one gradient per parent.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, make_result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(kind: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return make_result(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return make_result(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data
    return make_result(
        ad * bd, (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return make_result(
        out, (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)), "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_result(
        ad ** exponent, (a,),
        lambda g: (g * exponent * ad ** (exponent - 1),), "power")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def absolute(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_result(np.abs(ad), (a,), lambda g: (g * np.sign(ad),), "abs")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_result(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return make_result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log_sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = -(np.maximum(-x, 0.0) + np.log1p(np.exp(-np.abs(x))))
    # d/dx log sigmoid(x) = sigmoid(-x)
    sig_neg = np.exp(-np.maximum(x, 0.0)) / (1.0 + np.exp(-np.abs(x)))
    return make_result(out, (a,), lambda g: (g * sig_neg,), "log_sigmoid")


def arcsin(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_result(np.arcsin(ad), (a,), lambda g: (g / np.sqrt(1.0 - ad * ad),), "arcsin")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def sin(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_result(np.sin(ad), (a,), lambda g: (g * np.cos(ad),), "sin")


def cos(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_result(np.cos(ad), (a,), lambda g: (-g * np.sin(ad),), "cos")


def identity(a) -> Tensor:
    return as_tensor(a)


ACTIVATIONS = {
    "tanh": tanh,
    "relu": relu,
    "sigmoid": sigmoid,
    "identity": identity,
}


# ---------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    axes = _norm_axis(axis, a.ndim)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(a.data.sum(axis=axes, keepdims=keepdims), (a,), back, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return sum(a, axis=axes, keepdims=keepdims) * (1.0 / count)


def max(a, axis: int = -1, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Maximum along one axis; ties send the gradient to the first maximiser."""
    a = as_tensor(a)
    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    shape = a.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros(shape)
        np.put_along_axis(full, np.expand_dims(idx, axis), g, axis=axis)
        return (full,)

    if not keepdims:
        out = np.squeeze(out, axis)
    return make_result(out, (a,), back, "max")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ShapeError(f"matmul: operands must be at least 1-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    if a.ndim == 1 or b.ndim == 1:
        raise ShapeError(f"matmul: use 2-D or batched operands, got {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return (_unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape))

    return make_result(ad @ bd, (a, b), back, "matmul")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2) if a.ndim >= 2 else (0,)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {tuple(shape)}") from None
    return make_result(out, (a,), lambda g: (g.reshape(old),), "reshape")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    basic = _is_basic_index(index)

    def back(g):
        full = np.zeros(shape)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_result(a.data[index], (a,), back, "getitem")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no inputs")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors)))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, back, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ {sorted(shapes)}")
    axis_n = axis % (tensors[0].ndim + 1)

    def back(g):
        return tuple(np.take(g, i, axis=axis_n) for i in range(len(tensors)))

    return make_result(np.stack([t.data for t in tensors], axis=axis_n), tensors, back, "stack")


def gather_rows(table, index) -> Tensor:
    """Row lookup ``table[index]``; gradient scatters back into the used rows only."""
    table = as_tensor(table)
    idx = np.asarray(index, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"gather_rows: table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"gather_rows: index out of range for table with {table.shape[0]} rows")
    n_rows, dim = table.shape

    def back(g):
        full = np.zeros((n_rows, dim))
        np.add.at(full, idx.reshape(-1), g.reshape(-1, dim))
        return (full,)

    return make_result(table.data[idx], (table,), back, "gather_rows")


def logdet(a) -> Tensor:
    """log|det A| of a square matrix via LU factorisation."""
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"logdet: expected a square matrix, got {a.shape}")
    sign, value = np.linalg.slogdet(a.data)
    if sign == 0 or not np.isfinite(value):
        raise FloatingPointError("logdet: matrix is singular or determinant is not finite")
    ad = a.data
    return make_result(value, (a,), lambda g: (g * np.linalg.inv(ad).T,), "logdet")


# ---------------------------------------------------------------- softmax family

def softmax(a, mask=None) -> Tensor:
    """Softmax over the last axis. Masked-out entries (mask == 0) get exactly zero weight."""
    a = as_tensor(a)
    x = a.data
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(keep, x, -np.inf)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return make_result(out, (a,), back, "softmax")


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))
    out = x - lse
    sm = np.exp(out)

    def back(g):
        return (g - sm * g.sum(axis=-1, keepdims=True),)

    return make_result(out, (a,), back, "log_softmax")


# ---------------------------------------------------------------- images

def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # x: (B, H, W, C) already padded; returns (B, H', W', kh*kw*C)
    b, h, w, c = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    s = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, shape=(b, oh, ow, kh, kw, c), strides=(s[0], s[1], s[2], s[1], s[2], s[3]), writeable=False)
    return view.reshape(b, oh, ow, kh * kw * c)


def conv2d(x, kernel, bias=None) -> Tensor:
    """Stride-1 same-padded convolution. ``x``: (B, H, W, Cin); ``kernel``: (kh, kw, Cin, Cout)."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d: expected (B,H,W,C) input and (kh,kw,Cin,Cout) kernel, got {x.shape} and {kernel.shape}")
    kh, kw, cin, cout = kernel.shape
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d: input has {x.shape[3]} channels but kernel expects {cin}")
    if x.shape[1] < kh or x.shape[2] < kw:
        raise ShapeError(f"conv2d: image {x.shape[1:3]} smaller than kernel {(kh, kw)}")
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    pad = ((0, 0), (ph, kh - 1 - ph), (pw, kw - 1 - pw), (0, 0))
    xp = np.pad(x.data, pad)
    cols = np.ascontiguousarray(_im2col(xp, kh, kw))
    kmat = kernel.data.reshape(kh * kw * cin, cout)
    out = cols @ kmat
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)
    b, h, w, _ = x.shape

    def back(g):
        gk = np.tensordot(cols, g, axes=([0, 1, 2], [0, 1, 2])).reshape(kernel.shape)
        gcols = (g @ kmat.T).reshape(b, h, w, kh, kw, cin)
        gxp = np.zeros(xp.shape)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + h, j:j + w, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, ph:ph + h, pw:pw + w, :]
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1, 2)))
        return tuple(grads)

    return make_result(out, parents, back, "conv2d")


def max_pool2d(x) -> Tensor:
    """2x2 max pooling, stride 2, on (B, H, W, C) with even H and W."""
    x = as_tensor(x)
    b, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2d: spatial dims must be even, got {(h, w)}")
    blocks = x.data.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(b, h // 2, w // 2, c, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def back(g):
        gb = np.zeros(blocks.shape)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gx = gb.reshape(b, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(b, h, w, c)
        return (gx,)

    return make_result(out, (x,), back, "max_pool2d")


def upsample2d(x) -> Tensor:
    """Nearest-neighbour 2x upsampling on (B, H, W, C)."""
    x = as_tensor(x)
    b, h, w, c = x.shape
    out = x.data.repeat(2, axis=1).repeat(2, axis=2)

    def back(g):
        return (g.reshape(b, h, 2, w, 2, c).sum(axis=(2, 4)),)

    return make_result(out, (x,), back, "upsample2d")


# ---------------------------------------------------------------- dispatch

PRIMITIVES = {
    "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg, "power": power,
    "sqrt": sqrt, "abs": absolute, "exp": exp, "log": log, "sigmoid": sigmoid,
    "tanh": tanh, "relu": relu, "log_sigmoid": log_sigmoid, "arcsin": arcsin, "sin": sin, "cos": cos, "sum": sum, "mean": mean,
    "max": max, "matmul": matmul, "transpose": transpose, "reshape": reshape,
    "getitem": getitem, "concat": concat, "stack": stack, "gather_rows": gather_rows,
    "logdet": logdet, "softmax": softmax, "log_softmax": log_softmax,
    "conv2d": conv2d, "max_pool2d": max_pool2d, "upsample2d": upsample2d,
}


def apply_primitive(kind: str, *inputs, **kwargs) -> Tensor:
    """Apply the primitive registered under ``kind``."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise KeyError(f"unknown primitive {kind!r}; known: {', '.join(sorted(PRIMITIVES))}") from None
    return fn(*inputs, **kwargs)


def where(cond, a, b) -> Tensor:
    """Elementwise select with a constant boolean condition."""
    c = np.asarray(cond, dtype=np.float64)
    return add(mul(a, c), mul(b, 1.0 - c))

