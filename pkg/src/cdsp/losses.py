"""Supervision terms: partial CE on scribbles, smoothed CE on pseudo-labels,
distance-weighted entropy, and their unweighted composition.

Predictions ``P`` are class probabilities laid out (K~, H, W) or
(N, K~, H, W) where K~ counts background. Labels are uint8 rasters with the
same spatial layout; 255 is ignored. A batch is reduced as one pooled pixel set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from cdsp.annotations import IGNORE
from cdsp.engine import ops
from cdsp.engine.tensor import DimensionError, Tensor

LOG_EPS = 1e-12
PARTS = ("segs", "segc", "ds", "dc", "lorm")


def _one_hot(labels: np.ndarray, num_classes: int, dtype, class_axis: int) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    valid = labels != IGNORE
    if np.any(labels[valid] >= num_classes):
        bad = int(labels[valid].max())
        raise ValueError(f"label {bad} out of range for {num_classes} predicted classes")
    onehot = (labels[..., None] == np.arange(num_classes)) & valid[..., None]
    onehot = np.moveaxis(onehot, -1, class_axis).astype(dtype)
    return onehot, valid


def _check_layout(P: Tensor, spatial_shape) -> int:
    if P.ndim not in (3, 4):
        raise DimensionError(f"predictions must be (K,H,W) or (N,K,H,W), got {P.shape}")
    expect = P.shape[:1] + P.shape[2:] if P.ndim == 4 else P.shape[1:]
    if tuple(spatial_shape) != tuple(expect):
        raise DimensionError(f"label layout {tuple(spatial_shape)} does not match predictions {P.shape}")
    return 1 if P.ndim == 4 else 0


def _zero(P: Tensor) -> Tensor:
    return Tensor(np.array(0.0, dtype=P.dtype))


def partial_ce(P: Tensor, scribble: np.ndarray) -> Tensor:
    """Mean ``-log p`` at the labeled class over non-ignore pixels; 0 when nothing is labeled."""
    scribble = np.asarray(scribble)
    axis = _check_layout(P, scribble.shape)
    onehot, valid = _one_hot(scribble, P.shape[axis], P.dtype, axis)
    count = int(valid.sum())
    if count == 0:
        return _zero(P)
    logp = ops.log(P, eps=LOG_EPS)
    return ops.scale(ops.sum(ops.mul(logp, onehot)), -1.0 / count)


def smoothed_ce(P: Tensor, pseudo: np.ndarray, epsilon: float = 0.1) -> Tensor:
    """Label-smoothed cross-entropy: ``(1-eps) * CE(y, p) + eps * CE(uniform, p)`` averaged over labeled pixels.

    The uniform target spreads over every predicted class, background included.
    """
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must be in [0, 1), got {epsilon}")
    pseudo = np.asarray(pseudo)
    axis = _check_layout(P, pseudo.shape)
    k = P.shape[axis]
    onehot, valid = _one_hot(pseudo, k, P.dtype, axis)
    count = int(valid.sum())
    if count == 0:
        return _zero(P)
    weights = (1.0 - epsilon) * onehot + (epsilon / k) * np.expand_dims(valid, axis).astype(P.dtype)
    logp = ops.log(P, eps=LOG_EPS)
    return ops.scale(ops.sum(ops.mul(logp, weights.astype(P.dtype))), -1.0 / count)


def distance_entropy(P: Tensor, d, paper_literal: bool = False) -> Tensor:
    """Distance-weighted prediction entropy, averaged over pixels with nonzero weight.

    The default returns ``(1/N) sum_i d_i * H(p_i)`` which is nonnegative and is
    minimised to sharpen predictions. ``paper_literal`` returns the same
    quantity with the opposite sign, ``(1/N) sum_i d_i * sum_k p log p``.
    """
    d = np.asarray(getattr(d, "values", d), dtype=P.dtype)
    axis = _check_layout(P, d.shape)
    n = int(np.count_nonzero(d))
    if n == 0:
        return _zero(P)
    plogp = ops.mul(P, ops.log(P, eps=LOG_EPS))
    weighted = ops.mul(plogp, np.expand_dims(d, axis))
    sign = 1.0 if paper_literal else -1.0
    return ops.scale(ops.sum(weighted), sign / n)


@dataclass
class LossReport:
    segs: Optional[float] = None
    segc: Optional[float] = None
    ds: Optional[float] = None
    dc: Optional[float] = None
    lorm: Optional[float] = None
    total: float = 0.0
    counts: dict = field(default_factory=dict)

    def as_row(self, step: int) -> list:
        def fmt(v):
            return "" if v is None else repr(float(v))

        return [step, fmt(self.segs), fmt(self.segc), fmt(self.ds), fmt(self.dc), fmt(self.lorm), fmt(self.total)]


CSV_HEADER = ["step", "segs", "segc", "ds", "dc", "lorm", "total"]


def total_loss(parts: dict, switches) -> tuple[Tensor | float, LossReport]:
    """Unit-weight sum of the enabled parts.

    ``parts`` maps names from :data:`PARTS` to Tensors (or floats); disabled parts
    are left out of the sum and reported as ``None``.
    """
    enabled = set(switches)
    unknown = enabled - set(PARTS)
    if unknown:
        raise ValueError(f"unknown loss parts {sorted(unknown)}")
    total = None
    report = LossReport()
    for name in PARTS:
        if name not in enabled or name not in parts or parts[name] is None:
            continue
        val = parts[name]
        setattr(report, name, float(val.item() if isinstance(val, Tensor) else val))
        total = val if total is None else total + val
    if total is None:
        total = 0.0
    report.total = float(total.item() if isinstance(total, Tensor) else total)
    return total, report
