"""Multi-label classifier, class activation maps and CAM-to-pseudo-label conversion."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from cdsp.annotations import BACKGROUND, IGNORE, LabelMask, load_label_mask
from cdsp.engine import ops
from cdsp.engine.nn import Conv2d, standardize
from cdsp.engine.optim import SGD
from cdsp.engine.tensor import Tape, Tensor, no_grad

log = logging.getLogger(__name__)

DEFAULT_TAU = 0.3


class ClassifierParams:
    """Input standardisation, four conv+ReLU blocks (one of them stride 2, so CAMs are at half resolution), global average pooling, linear K-way head.

    ``W`` is the (C, K) classifier matrix; its column ``k - 1`` weights class ``k``.
    """

    def __init__(self, num_classes: int, width: int = 32, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.num_classes = num_classes
        self.trunk = [
            Conv2d(3, width // 2, 3, stride=1, rng=rng, dtype=dtype),
            Conv2d(width // 2, width, 3, stride=2, rng=rng, dtype=dtype),
            Conv2d(width, width, 3, stride=1, rng=rng, dtype=dtype),
            Conv2d(width, width, 3, stride=1, rng=rng, dtype=dtype),
        ]
        self.W = Tensor((rng.standard_normal((width, num_classes)) * np.sqrt(1.0 / width)).astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(num_classes, dtype=dtype), requires_grad=True)

    @property
    def channels(self) -> int:
        return self.W.shape[0]

    def named_parameters(self):
        out = []
        for i, conv in enumerate(self.trunk):
            out.extend(conv.named_parameters(f"trunk.{i}"))
        out.append(("W", self.W))
        out.append(("bias", self.bias))
        return out

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def features(self, x: Tensor) -> Tensor:
        x = standardize(x)
        for conv in self.trunk:
            x = ops.relu(conv(x))
        return x

    def logits(self, x: Tensor) -> Tensor:
        pooled = ops.global_avg_pool(self.features(x))
        return ops.add(ops.matmul(pooled, self.W), self.bias)


@dataclass
class ClassifierConfig:
    epochs: int = 40
    batch: int = 16
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    width: int = 32
    seed: int = 0
    dtype: type = np.float32


def train_classifier(images: np.ndarray, class_vectors: np.ndarray, config: ClassifierConfig | None = None):
    """Fit the classifier with per-class binary cross-entropy on sigmoid outputs.

    ``images`` is (N, 3, H, W); ``class_vectors`` is the (N, K) multi-hot layout
    from :func:`cdsp.annotations.extract_image_classes`. Returns the parameters
    and the per-epoch mean training loss.
    """
    cfg = config or ClassifierConfig()
    images = np.asarray(images, dtype=cfg.dtype)
    targets = np.asarray(class_vectors, dtype=cfg.dtype)
    if len(images) == 0:
        raise ValueError("train_classifier: empty dataset")
    if targets.shape[0] != images.shape[0]:
        raise ValueError("images and class vectors disagree in length")
    params = ClassifierParams(targets.shape[1], width=cfg.width, seed=cfg.seed, dtype=cfg.dtype)
    opt = SGD(params.parameters(), lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed + 1)
    n = len(images)
    batch = min(cfg.batch, n)
    steps_per_epoch = max(1, n // batch)
    total = cfg.epochs * steps_per_epoch
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for s in range(steps_per_epoch):
            idx = np.sort(order[s * batch : (s + 1) * batch])
            opt.lr = cfg.lr * 0.5 * (1 + np.cos(np.pi * step / total))
            with Tape() as tape:
                loss = ops.bce_with_logits(params.logits(Tensor(images[idx])), targets[idx])
                opt.zero_grad()
                tape.backward(loss)
            opt.step()
            losses.append(loss.item())
            step += 1
        history.append(float(np.mean(losses)))
        log.debug("classifier epoch %d loss %.4f", epoch, history[-1])
    return params, history


def resize_bilinear(plane: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centres (edge samples clamp)."""
    h, w = plane.shape
    if (h, w) == (out_h, out_w):
        return plane.astype(np.float64, copy=True)

    def axis(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, fr = axis(h, out_h)
    c0, c1, fc = axis(w, out_w)
    p = plane.astype(np.float64)
    top = p[r0][:, c0] * (1 - fc) + p[r0][:, c1] * fc
    bot = p[r1][:, c0] * (1 - fc) + p[r1][:, c1] * fc
    return top * (1 - fr[:, None]) + bot * fr[:, None]


def cam_from_features(features: np.ndarray, W: np.ndarray, k: int) -> np.ndarray:
    """ReLU of the class-``k`` weighted channel sum of a (C, h, w) feature map."""
    features = np.asarray(features, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if not 1 <= k <= W.shape[1]:
        raise ValueError(f"class id {k} outside [1, {W.shape[1]}]")
    weighted = np.tensordot(W[:, k - 1], features, axes=(0, 0))
    return np.maximum(weighted, 0.0)


def compute_cam(image: np.ndarray, params: ClassifierParams, k: int) -> np.ndarray:
    """Class activation map for class ``k`` at the image's resolution."""
    if not 1 <= k <= params.num_classes:
        raise ValueError(f"class id {k} outside [1, {params.num_classes}]")
    return compute_cams(image, params)[k - 1]


def compute_cams(image: np.ndarray, params: ClassifierParams) -> np.ndarray:
    """(K, H, W) stack of CAMs for every foreground class."""
    image = np.asarray(image, dtype=params.W.dtype)
    with no_grad():
        feats = params.features(Tensor(image[None])).data[0]
    h, w = image.shape[-2:]
    W = params.W.data
    return np.stack([resize_bilinear(cam_from_features(feats, W, k), h, w) for k in range(1, W.shape[1] + 1)])


def cams_to_pseudo(cams: np.ndarray, present_classes, tau: float = DEFAULT_TAU, unclaimed: int = BACKGROUND) -> LabelMask:
    """Threshold max-normalised CAMs of the present classes into one class-id mask.

    A pixel takes the present class with the largest normalised activation
    (lowest id on ties) if that activation reaches ``tau``; otherwise it gets
    ``unclaimed`` (background by default, or 255 to leave it unlabeled).
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    cams = np.asarray(cams, dtype=np.float64)
    present = np.asarray(present_classes).astype(bool)
    k, h, w = cams.shape
    if present.shape != (k,):
        raise ValueError(f"present_classes has shape {present.shape}, expected ({k},)")
    out = np.full((h, w), unclaimed, dtype=np.uint8)
    if not present.any():
        return LabelMask(out)
    norm = np.full((k, h, w), -1.0)
    for i in np.flatnonzero(present):
        peak = cams[i].max()
        norm[i] = cams[i] / peak if peak > 0 else 0.0
    best = np.argmax(norm, axis=0)
    score = np.take_along_axis(norm, best[None], axis=0)[0]
    claimed = score >= tau
    out[claimed] = (best[claimed] + 1).astype(np.uint8)
    return LabelMask(out)


def load_external_pseudo(path, num_classes: int) -> LabelMask:
    """Read a class-id PGM produced elsewhere; values must be in [0, K] or 255."""
    return load_label_mask(path, num_classes=num_classes)


__all__ = [
    "ClassifierConfig",
    "ClassifierParams",
    "IGNORE",
    "cam_from_features",
    "cams_to_pseudo",
    "compute_cam",
    "compute_cams",
    "load_external_pseudo",
    "resize_bilinear",
    "train_classifier",
]
