"""Toy encoder-decoder segmenter."""

from __future__ import annotations

import numpy as np

from cdsp.engine import ops
from cdsp.engine.nn import Conv2d, standardize
from cdsp.engine.tensor import Tensor, no_grad
from cdsp.lorm import LormParams


class SegModel:
    """Four conv blocks (two stride-2), a 1x1 class head on the quarter-resolution
    features upsampled by nearest replication, and a full-resolution 1x1 skip head.

    ``forward`` returns ``(logits, F)``; ``F`` is the penultimate feature map that
    the rectification loss consumes. The rectification parameters live here so
    they are checkpointed with the network, but they never touch ``logits``.
    """

    def __init__(self, num_classes: int, width: int = 32, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        half = width // 2
        self.num_classes = num_classes
        self.enc1 = Conv2d(3, half, 3, 1, rng=rng, dtype=dtype)
        self.enc2 = Conv2d(half, width, 3, 2, rng=rng, dtype=dtype)
        self.enc3 = Conv2d(width, width, 3, 2, rng=rng, dtype=dtype)
        self.enc4 = Conv2d(width, width, 3, 1, rng=rng, dtype=dtype)
        self.head = Conv2d(width, num_classes + 1, 1, 1, rng=rng, dtype=dtype)
        self.skip = Conv2d(half, num_classes + 1, 1, 1, rng=rng, dtype=dtype)
        self.lorm = LormParams(width, seed=seed + 7919, dtype=dtype)

    def named_parameters(self):
        out = []
        for name in ("enc1", "enc2", "enc3", "enc4", "head", "skip"):
            out.extend(getattr(self, name).named_parameters(name))
        out.extend(self.lorm.named_parameters("lorm"))
        return out

    def network_parameters(self):
        return [t for n, t in self.named_parameters() if not n.startswith("lorm.")]

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def forward(self, x: Tensor):
        e1 = ops.relu(self.enc1(standardize(x)))
        e2 = ops.relu(self.enc2(e1))
        e3 = ops.relu(self.enc3(e2))
        F = ops.relu(self.enc4(e3))
        logits = ops.add(ops.upsample_nearest(self.head(F), 4), self.skip(e1))
        return logits, F

    def predict(self, images: np.ndarray, batch: int = 16) -> np.ndarray:
        """Arg-max class map for (N, 3, H, W) images."""
        images = np.asarray(images)
        out = []
        with no_grad():
            for i in range(0, len(images), batch):
                logits, _ = self.forward(Tensor(images[i : i + batch].astype(self.enc1.weight.dtype)))
                out.append(np.argmax(logits.data, axis=1).astype(np.uint8))
        return np.concatenate(out)
