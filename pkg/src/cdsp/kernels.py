"""Hot inner loops, each with a numba kernel and a pure-numpy twin.

The public names at the bottom of the module are bound to whichever backend
:mod:`cdsp._jit` selected. Both twins are importable directly so tests and the
benchmark can compare them; they must agree bitwise.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from cdsp._jit import HAVE_NUMBA, njit

# ---------------------------------------------------------------------------
# 1-D squared distance transform along the last axis (lower envelope of parabolas)
# ---------------------------------------------------------------------------


def _dt1d_lines_py(f):
    lines, n = f.shape
    out = np.empty_like(f)
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    inf = np.inf
    for line in range(lines):
        k = -1
        for q in range(n):
            fq = f[line, q]
            if fq == inf:
                continue
            if k < 0:
                k = 0
                v[0] = q
                z[0] = -inf
                z[1] = inf
                continue
            s = 0.0
            while True:
                p = v[k]
                s = ((fq + q * q) - (f[line, p] + p * p)) / (2.0 * q - 2.0 * p)
                if s <= z[k]:
                    k -= 1
                else:
                    break
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = inf
        if k < 0:
            for q in range(n):
                out[line, q] = inf
            continue
        k = 0
        for q in range(n):
            while z[k + 1] < q:
                k += 1
            p = v[k]
            out[line, q] = (q - p) * (q - p) + f[line, p]
    return out


def _dt1d_lines_np(f):
    n = f.shape[1]
    idx = np.arange(n, dtype=np.float64)
    offsets = (idx[:, None] - idx[None, :]) ** 2
    # (lines, q, p): f[p] + (q - p)^2, minimised over p
    return np.min(f[:, None, :] + offsets[None, :, :], axis=2)


# ---------------------------------------------------------------------------
# im2col / col2im for strided 2-D cross-correlation on padded input
# ---------------------------------------------------------------------------


def _im2col_py(xp, kh, kw, stride):
    n, c, h, w = xp.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    cols = np.empty((n, c * kh * kw, oh * ow), dtype=xp.dtype)
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    for y in range(oh):
                        for x in range(ow):
                            cols[b, row, y * ow + x] = xp[b, ch, y * stride + i, x * stride + j]
    return cols


def _im2col_np(xp, kh, kw, stride):
    n, c, h, w = xp.shape
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, oh * ow)


def _col2im_py(cols, n, c, h, w, kh, kw, stride):
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    xp = np.zeros((n, c, h, w), dtype=cols.dtype)
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    for y in range(oh):
                        for x in range(ow):
                            xp[b, ch, y * stride + i, x * stride + j] += cols[b, row, y * ow + x]
    return xp


def _col2im_np(cols, n, c, h, w, kh, kw, stride):
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    xp = np.zeros((n, c, h, w), dtype=cols.dtype)
    blocks = cols.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += blocks[:, :, i, j]
    return xp


# ---------------------------------------------------------------------------
# matmul with pinned summation order (k ascending, accumulator starts at 0)
# ---------------------------------------------------------------------------


def _matmul_ordered_py(a, b):
    m, kk = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=a.dtype)
    for i in range(m):
        for j in range(n):
            s = out[i, j]
            for k in range(kk):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def _matmul_ordered_np(a, b):
    out = np.zeros((a.shape[0], b.shape[1]), dtype=a.dtype)
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


if HAVE_NUMBA:
    dt1d_lines_nb = njit(_dt1d_lines_py)
    im2col_nb = njit(_im2col_py)
    col2im_nb = njit(_col2im_py)
    matmul_ordered_nb = njit(_matmul_ordered_py)

    dt1d_lines = dt1d_lines_nb
    # the strided numpy copy beats the compiled gather (benchmarks/bench_kernels.py)
    im2col = _im2col_np
    col2im = col2im_nb
    matmul_ordered = matmul_ordered_nb
else:
    dt1d_lines_nb = im2col_nb = col2im_nb = matmul_ordered_nb = None

    dt1d_lines = _dt1d_lines_np
    im2col = _im2col_np
    col2im = _col2im_np
    matmul_ordered = _matmul_ordered_np

dt1d_lines_np = _dt1d_lines_np
im2col_np = _im2col_np
col2im_np = _col2im_np
matmul_ordered_np = _matmul_ordered_np
