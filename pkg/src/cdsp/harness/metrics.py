"""Confusion-matrix mIoU."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cdsp.annotations import IGNORE


@dataclass
class MetricsReport:
    confusion: np.ndarray  # rows = ground truth, cols = prediction
    iou: np.ndarray  # per class, NaN where the class is in neither gt nor prediction
    miou: float
    loss_curve: list = field(default_factory=list)

    def present_classes(self) -> list[int]:
        return [int(c) for c in np.flatnonzero(~np.isnan(self.iou))]


def confusion_matrix(pred, gt, num_classes: int) -> np.ndarray:
    """``num_classes`` counts every label including background; ignore pixels in ``gt`` are skipped."""
    pred = np.asarray(pred).reshape(-1).astype(np.int64)
    gt = np.asarray(gt).reshape(-1).astype(np.int64)
    keep = gt != IGNORE
    pred, gt = pred[keep], gt[keep]
    if pred.size and (pred.max() >= num_classes or gt.max() >= num_classes):
        raise ValueError("label outside [0, num_classes)")
    return np.bincount(gt * num_classes + pred, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def miou_from_confusion(conf: np.ndarray) -> tuple[np.ndarray, float]:
    tp = np.diag(conf).astype(np.float64)
    union = conf.sum(axis=0) + conf.sum(axis=1) - tp
    iou = np.full(len(tp), np.nan)
    live = union > 0
    iou[live] = tp[live] / union[live]
    return iou, float(np.mean(iou[live])) if live.any() else float("nan")


def evaluate_predictions(preds, gts, num_classes: int) -> MetricsReport:
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, g in zip(preds, gts):
        conf += confusion_matrix(p, g, num_classes)
    iou, miou = miou_from_confusion(conf)
    return MetricsReport(conf, iou, miou)


def evaluate_miou(model, samples) -> MetricsReport:
    """Score ``model.predict`` against the ground-truth masks of ``samples``."""
    k = model.num_classes + 1
    for s in samples:
        top = int(s.gt.values[s.gt.values != IGNORE].max(initial=0))
        if top >= k:
            raise ValueError(f"sample {s.image_id} holds class {top}, model predicts {k} classes")
    images = np.stack([s.image for s in samples])
    preds = model.predict(images)
    return evaluate_predictions(preds, [s.gt.values for s in samples], k)
