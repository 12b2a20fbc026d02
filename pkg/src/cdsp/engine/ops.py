"""Differentiable operations on :class:`~cdsp.engine.tensor.Tensor`.

Each op computes its forward value with numpy and registers a closure that maps
the output adjoint to one adjoint per input (``None`` for inputs that do not
need one).
"""

from __future__ import annotations

import contextlib
from typing import Optional

import numpy as np

from cdsp import kernels
from cdsp.engine.tensor import DimensionError, DomainError, Tensor, as_tensor, make_result

LOG_EPS = 1e-12
NORM_EPS = 1e-8

_ordered = [False]


@contextlib.contextmanager
def ordered_summation():
    """Pin matmul/conv2d accumulation to ascending inner index, as a naive loop would."""
    _ordered.append(True)
    try:
        yield
    finally:
        _ordered.pop()


def summation_ordered() -> bool:
    return _ordered[-1]


def _coerce(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return make_result(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add"
    )


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return make_result(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub"
    )


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return make_result(ad * bd, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * ad / (bd * bd), bd.shape) if b.requires_grad else None,
        )

    return make_result(ad / bd, (a, b), backward, "div")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return make_result(x.data * x.dtype.type(c), (x,), lambda g: (g * x.dtype.type(c),), "scale")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return make_result(np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: (g * pos,), "relu")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return make_result(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor, eps: Optional[float] = None) -> Tensor:
    """Natural log. With ``eps`` the input is clamped to ``max(x, eps)`` first."""
    xd = x.data
    if eps is None:
        if np.any(xd <= 0):
            raise DomainError("log of a nonpositive value; pass eps to guard")
        return make_result(np.log(xd), (x,), lambda g: (g / xd,), "log")
    eps_t = xd.dtype.type(eps)
    live = xd > eps_t
    clamped = np.where(live, xd, eps_t)
    return make_result(np.log(clamped), (x,), lambda g: (np.where(live, g / clamped, 0).astype(xd.dtype),), "log")


def sigmoid(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # exp overflow gives the correct limit 0
        y = 1.0 / (1.0 + np.exp(-x.data))
    y = y.astype(x.dtype)
    return make_result(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def elementwise(op: str, *args, **kwargs) -> Tensor:
    """Dispatch by name: add, mul, scale, relu, log, exp."""
    table = {"add": add, "mul": mul, "scale": scale, "relu": relu, "log": log, "exp": exp, "sub": sub, "div": div}
    if op not in table:
        raise ValueError(f"unknown elementwise op {op!r}")
    return table[op](*args, **kwargs)


# -- shape ops ----------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return make_result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(x: Tensor, idx) -> Tensor:
    src_shape, dt = x.shape, x.dtype

    def backward(g):
        out = np.zeros(src_shape, dtype=dt)
        np.add.at(out, idx, g)
        return (out,)

    return make_result(x.data[idx], (x,), backward, "getitem")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        parts = np.moveaxis(g, axis, 0)
        return tuple(parts[i] for i in range(len(tensors)))

    return make_result(data, tuple(tensors), backward, "stack")


# -- reductions ---------------------------------------------------------------


def _expand(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(x: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    shape = x.shape
    return make_result(
        np.asarray(x.data.sum(axis=axis, keepdims=keepdims)),
        (x,),
        lambda g: (np.array(_expand(g, shape, axis, keepdims)),),
        "sum",
    )


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = x.shape
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([shape[a] for a in axes]))
    inv = x.dtype.type(1.0 / count)
    return make_result(
        np.asarray(x.data.mean(axis=axis, keepdims=keepdims)),
        (x,),
        lambda g: (np.array(_expand(g, shape, axis, keepdims)) * inv,),
        "mean",
    )


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared differences over every element."""
    a, b = _coerce(a, b)
    if a.shape != b.shape:
        raise DimensionError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    k = a.dtype.type(2.0 / n)

    def backward(g):
        ga = g * k * diff
        return (ga if a.requires_grad else None, -ga if b.requires_grad else None)

    return make_result(np.asarray(np.mean(diff * diff)), (a, b), backward, "mse")


def global_avg_pool(x: Tensor) -> Tensor:
    """Average each channel's spatial plane: (..., C, H, W) -> (..., C)."""
    return mean(x, axis=(-2, -1))


def reduction(op: str, *args, **kwargs) -> Tensor:
    table = {"mean": mean, "sum": sum, "global_avg_pool": global_avg_pool, "gap": global_avg_pool, "mse": mse}
    if op not in table:
        raise ValueError(f"unknown reduction {op!r}")
    return table[op](*args, **kwargs)


# -- normalisations -----------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} out of range for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return make_result(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),), "softmax")


def l2_normalize(x: Tensor, axis: int = 0, eps: float = NORM_EPS) -> Tensor:
    """Divide each slice along ``axis`` by ``max(||slice||_2, eps)``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))
    big = norm > eps
    denom = np.where(big, norm, xd.dtype.type(eps))
    y = xd / denom

    def backward(g):
        proj = (g * y).sum(axis=axis, keepdims=True)
        return (np.where(big, (g - y * proj) / denom, g / denom),)

    return make_result(y, (x,), backward, "l2_normalize")


# -- linear algebra -----------------------------------------------------------


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if summation_ordered() and a.ndim == 2 and b.ndim == 2:
        return kernels.matmul_ordered(np.ascontiguousarray(a), np.ascontiguousarray(b))
    return a @ b


def matmul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(_mm(g, np.swapaxes(bd, -1, -2)), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(_mm(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return make_result(_mm(ad, bd), (a, b), backward, "matmul")


def conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation. ``x`` is (C, H, W) or (N, C, H, W); ``w`` is (O, C, kh, kw)."""
    squeeze = x.ndim == 3
    if x.ndim not in (3, 4) or w.ndim != 4:
        raise DimensionError(f"conv2d: expected x rank 3/4 and w rank 4, got {x.shape}, {w.shape}")
    xd = x.data[None] if squeeze else x.data
    n, c, h, wd = xd.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise DimensionError(f"conv2d: input has {c} channels but kernel expects {ci} ({x.shape} vs {w.shape})")
    if stride < 1 or pad < 0:
        raise ValueError("stride must be >= 1 and pad >= 0")
    hp, wp = h + 2 * pad, wd + 2 * pad
    if kh > hp or kw > wp:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    if bias is not None and bias.shape != (o,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({o},)")
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else np.ascontiguousarray(xd)
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    cols = kernels.im2col(xp, kh, kw, stride)
    w2 = w.data.reshape(o, c * kh * kw)
    if summation_ordered():
        out = np.stack([kernels.matmul_ordered(np.ascontiguousarray(w2), cols[i]) for i in range(n)])
    else:
        out = np.matmul(w2, cols)
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = out.reshape(n, o, oh, ow)
    if squeeze:
        out = out[0]

    def backward(g):
        g = g.reshape(n, o, oh * ow)
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        if x.requires_grad:
            dcols = np.matmul(w2.T, g)
            dxp = kernels.col2im(np.ascontiguousarray(dcols), n, c, hp, wp, kh, kw, stride)
            gx = dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp
            if squeeze:
                gx = gx[0]
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, w, bias) if bias is not None else (x, w)
    return make_result(out, parents, backward, "conv2d")


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Replicate each spatial element into a ``factor`` x ``factor`` block."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"upsample factor must be an integer >= 1, got {factor}")
    f = int(factor)
    if f == 1:
        return make_result(x.data.copy(), (x,), lambda g: (g,), "upsample")
    y = np.repeat(np.repeat(x.data, f, axis=-2), f, axis=-1)
    shape = x.shape

    def backward(g):
        gs = g.reshape(*shape[:-2], shape[-2], f, shape[-1], f)
        return (gs.sum(axis=(-3, -1)),)

    return make_result(y, (x,), backward, "upsample")


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against 0/1 ``targets``."""
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise DimensionError(f"bce: shape mismatch {logits.shape} vs {t.shape}")
    z = logits.data
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    with np.errstate(over="ignore"):
        sig = 1.0 / (1.0 + np.exp(-z))
    return make_result(
        np.asarray(loss.mean()), (logits,), lambda g: (g * (sig - t).astype(z.dtype) / n,), "bce_with_logits"
    )
