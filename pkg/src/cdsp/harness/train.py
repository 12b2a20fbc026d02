"""Segmentation training with any subset of the five supervision terms."""

from __future__ import annotations

import logging
import math

import numpy as np

from cdsp import losses as L
from cdsp.annotations import rasterize
from cdsp.engine import ops
from cdsp.engine.optim import SGD
from cdsp.engine.tensor import DTYPES, Tape, Tensor
from cdsp.harness.config import ExperimentConfig
from cdsp.harness.model import SegModel
from cdsp.lorm import lorm_forward

log = logging.getLogger(__name__)


class MissingInputError(ValueError):
    pass


def lr_at(epoch: float, cfg: ExperimentConfig) -> float:
    """Linear warmup to ``base_lr`` over ``warmup_epochs``, then cosine decay to 0 at ``epochs``."""
    if cfg.warmup_epochs > 0 and epoch < cfg.warmup_epochs:
        return cfg.base_lr * epoch / cfg.warmup_epochs
    span = cfg.epochs - cfg.warmup_epochs
    if span <= 0:
        return cfg.base_lr
    t = min(max((epoch - cfg.warmup_epochs) / span, 0.0), 1.0)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * t))


def _stack_optional(items, name, needed):
    if items is None or any(x is None for x in items):
        if needed:
            raise MissingInputError(f"loss needs precomputed {name} for every training image")
        return None
    return np.stack([getattr(x, "values", x) for x in items])


def _augment(rng, images, planes, brightness: float = 0.1):
    """Per-sample horizontal flip (shared by all label planes) and brightness scaling."""
    images = images.copy()
    planes = [None if p is None else p.copy() for p in planes]
    for i in range(len(images)):
        if rng.random() < 0.5:
            images[i] = images[i][:, :, ::-1]
            for p in planes:
                if p is not None:
                    p[i] = p[i][:, ::-1]
        images[i] = np.clip(images[i] * rng.uniform(1 - brightness, 1 + brightness), 0, 1)
    return images, planes


def train_segmentation(cfg: ExperimentConfig, samples, pseudo_labels=None, distance_maps=None, scribble_rasters=None):
    """Train a :class:`SegModel` and return ``(model, loss_reports)``.

    ``pseudo_labels`` holds one LabelMask per sample; ``distance_maps`` is a dict
    with optional ``"ds"`` / ``"dc"`` lists of DistanceMaps. Inputs an enabled
    loss needs must be present.
    """
    enabled = cfg.loss_set()
    if not enabled:
        raise ValueError("no losses enabled")
    distance_maps = distance_maps or {}
    dtype = DTYPES[cfg.dtype]
    images = np.stack([s.image for s in samples]).astype(dtype)
    if scribble_rasters is None:
        scribble_rasters = [rasterize(s.scribbles, cfg.thickness) for s in samples]
    scrib = np.stack([m.values for m in scribble_rasters])
    needs_pseudo = bool({"segc", "lorm"} & set(enabled))
    pseudo = _stack_optional(pseudo_labels, "pseudo-labels", needs_pseudo)
    ds = _stack_optional(distance_maps.get("ds"), "scribble distance maps", "ds" in enabled)
    dc = _stack_optional(distance_maps.get("dc"), "pseudo-boundary distance maps", "dc" in enabled)
    ds = None if ds is None else ds.astype(dtype)
    dc = None if dc is None else dc.astype(dtype)

    model = SegModel(cfg.num_classes, width=cfg.seg_width, seed=cfg.seed, dtype=dtype)
    params = model.parameters() if "lorm" in enabled else model.network_parameters()
    opt = SGD(params, lr=0.0, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 17])

    n = len(images)
    batch = min(cfg.batch, n)
    spe = max(1, n // batch)
    reports = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for s in range(spe):
            idx = np.sort(order[s * batch : (s + 1) * batch])
            planes = [scrib[idx], None if pseudo is None else pseudo[idx], None if ds is None else ds[idx], None if dc is None else dc[idx]]
            x = images[idx]
            if cfg.augment:
                x, planes = _augment(rng, x, planes)
            b_scrib, b_pseudo, b_ds, b_dc = planes
            opt.lr = lr_at((step + 1) / spe, cfg)
            with Tape() as tape:
                logits, F = model.forward(Tensor(x))
                P = ops.softmax(logits, axis=1)
                parts = {}
                if "segs" in enabled:
                    parts["segs"] = L.partial_ce(P, b_scrib)
                if "segc" in enabled:
                    parts["segc"] = L.smoothed_ce(P, b_pseudo, cfg.epsilon)
                if "ds" in enabled:
                    parts["ds"] = L.distance_entropy(P, b_ds, cfg.paper_literal_entropy)
                if "dc" in enabled:
                    parts["dc"] = L.distance_entropy(P, b_dc, cfg.paper_literal_entropy)
                if "lorm" in enabled:
                    _, parts["lorm"] = lorm_forward(
                        F, b_pseudo, model.lorm, foreground_only=cfg.lorm_foreground_only, detach_input=cfg.lorm_detach
                    )
                total, report = L.total_loss(parts, enabled)
                report.counts = {
                    "scribble": int((b_scrib != 255).sum()),
                    "pseudo": 0 if b_pseudo is None else int((b_pseudo != 255).sum()),
                    "N_s": 0 if b_ds is None else int(np.count_nonzero(b_ds)),
                    "N_c": 0 if b_dc is None else int(np.count_nonzero(b_dc)),
                }
                opt.zero_grad()
                if isinstance(total, Tensor) and total.requires_grad:
                    tape.backward(total)
            for p in params:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
            opt.step()
            reports.append(report)
            step += 1
        log.debug("epoch %d lr %.4g loss %.4f", epoch, opt.lr, reports[-1].total)
    return model, reports
