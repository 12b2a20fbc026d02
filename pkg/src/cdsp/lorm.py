"""Localization rectification: masked cosine-similarity attention over spatial positions.

Shapes: ``F`` is (C, H, W) or (N, C, H, W); the similarity matrix is
(HW, HW) per sample with rows indexing the query position ``i`` and columns
the reference position ``j``.
"""

from __future__ import annotations

import numpy as np

from cdsp.annotations import IGNORE
from cdsp.engine import ops
from cdsp.engine.tensor import DimensionError, Tensor


class LormParams:
    """Bias-free 1x1 projections for queries and keys, plus the rectification scale ``delta``."""

    def __init__(self, channels: int, seed: int = 0, dtype=np.float32, wq=None, wk=None):
        rng = np.random.default_rng(seed)
        std = np.sqrt(1.0 / channels)
        if wq is None:
            wq = rng.standard_normal((channels, channels)) * std
        if wk is None:
            wk = rng.standard_normal((channels, channels)) * std
        self.wq = Tensor(np.asarray(wq, dtype=dtype), requires_grad=True)
        self.wk = Tensor(np.asarray(wk, dtype=dtype), requires_grad=True)
        self.delta = Tensor(np.array(1.0, dtype=dtype), requires_grad=True)

    def named_parameters(self, prefix="lorm"):
        return [(f"{prefix}.wq", self.wq), (f"{prefix}.wk", self.wk), (f"{prefix}.delta", self.delta)]

    def parameters(self):
        return [self.wq, self.wk, self.delta]


def _flatten(F: Tensor) -> tuple[Tensor, tuple]:
    if F.ndim == 3:
        c, h, w = F.shape
        return ops.reshape(F, (1, c, h * w)), F.shape
    if F.ndim == 4:
        n, c, h, w = F.shape
        return ops.reshape(F, (n, c, h * w)), F.shape
    raise DimensionError(f"expected (C,H,W) or (N,C,H,W) features, got {F.shape}")


def similarity(F: Tensor, params: LormParams) -> Tensor:
    """Row-softmax of cosine similarities between projected query and key vectors.

    Returns (HW, HW) for a single sample, (N, HW, HW) for a batch.
    """
    flat, shape = _flatten(F)
    if flat.shape[-1] < 1:
        raise DimensionError("similarity needs at least one spatial position")
    q = ops.l2_normalize(ops.matmul(params.wq, flat), axis=-2)
    k = ops.l2_normalize(ops.matmul(params.wk, flat), axis=-2)
    cos = ops.matmul(ops.transpose(q, (0, 2, 1)), k)
    A = ops.softmax(cos, axis=-1)
    return A[0] if len(shape) == 3 else A


def foreground_mask(pseudo: np.ndarray, height: int, width: int) -> np.ndarray:
    """Binary foreground plane of a pseudo-label, nearest-neighbour resampled to (height, width)."""
    v = np.asarray(pseudo)
    H, W = v.shape[-2:]
    rows = np.minimum(((np.arange(height) + 0.5) * H / height).astype(np.int64), H - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * W / width).astype(np.int64), W - 1)
    small = v[..., rows[:, None], cols[None, :]]
    return ((small >= 1) & (small != IGNORE)).astype(np.float64)


def mask_apply(A: Tensor, mask) -> Tensor:
    """Zero the reference columns ``j`` whose mask entry is 0: ``A'[i, j] = A[i, j] * m[j]``."""
    m = np.asarray(mask, dtype=A.dtype)
    hw = A.shape[-1]
    if A.ndim == 2:
        m = m.reshape(-1)
        if m.size != hw:
            raise DimensionError(f"mask has {m.size} positions, similarity has {hw}")
        return ops.mul(A, m[None, :])
    m = m.reshape(A.shape[0], -1)
    if m.shape[1] != hw:
        raise DimensionError(f"mask has {m.shape[1]} positions, similarity has {hw}")
    return ops.mul(A, m[:, None, :])


def rectify(F: Tensor, A_masked: Tensor, delta) -> Tensor:
    """``F_hat[:, i] = delta * sum_j F[:, j] * A'[i, j]``, reshaped back to ``F``'s shape."""
    flat, shape = _flatten(F)
    hw = flat.shape[-1]
    if A_masked.shape[-2:] != (hw, hw) or (A_masked.ndim == 3 and A_masked.shape[0] != flat.shape[0]):
        raise DimensionError(f"similarity {A_masked.shape} does not match features {F.shape}")
    A = A_masked if A_masked.ndim == 3 else ops.reshape(A_masked, (1, hw, hw))
    out = ops.matmul(flat, ops.transpose(A, (0, 2, 1)))
    out = ops.mul(out, delta)
    return ops.reshape(out, shape)


def lorm_loss(F: Tensor, F_hat: Tensor, mask=None) -> Tensor:
    """Mean squared error between original and rectified features.

    With ``mask`` (same spatial layout as ``F``) only foreground positions count.
    """
    if mask is None:
        return ops.mse(F, F_hat)
    m = np.asarray(mask, dtype=F.dtype)
    m = m.reshape(m.shape[:-2] + (1,) + m.shape[-2:]) if F.ndim == m.ndim + 1 else m
    count = float(np.broadcast_to(m, F.shape).sum())
    if count == 0:
        return Tensor(np.array(0.0, dtype=F.dtype))
    diff = ops.sub(F, F_hat)
    return ops.scale(ops.sum(ops.mul(ops.mul(diff, diff), m)), 1.0 / count)


def rectify_features(F: Tensor, mask, params: LormParams, detach_input: bool = False) -> Tensor:
    """Similarity, masking and rectification in one call."""
    src = F.detach() if detach_input else F
    A = similarity(src, params)
    return rectify(src, mask_apply(A, mask), params.delta)


def lorm_forward(F: Tensor, pseudo, params: LormParams, foreground_only: bool = False, detach_input: bool = False):
    """Rectify ``F`` under the pseudo-label's foreground and return ``(F_hat, loss)``."""
    h, w = F.shape[-2:]
    mask = foreground_mask(pseudo, h, w)
    F_hat = rectify_features(F, mask, params, detach_input=detach_input)
    loss = lorm_loss(F, F_hat, mask if foreground_only else None)
    return F_hat, loss
