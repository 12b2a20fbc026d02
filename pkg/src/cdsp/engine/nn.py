"""Parameter containers for the toy networks."""

from __future__ import annotations

import json
import os

import numpy as np

from cdsp.engine import ops
from cdsp.engine.serialize import load_array, save_tensor
from cdsp.engine.tensor import Tensor


class Conv2d:
    def __init__(self, c_in, c_out, k=3, stride=1, pad=None, bias=True, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        std = np.sqrt(2.0 / (c_in * k * k))
        self.weight = Tensor((rng.standard_normal((c_out, c_in, k, k)) * std).astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True) if bias else None
        self.stride = stride
        self.pad = k // 2 if pad is None else pad

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)

    def parameters(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def named_parameters(self, prefix):
        out = [(f"{prefix}.weight", self.weight)]
        if self.bias is not None:
            out.append((f"{prefix}.bias", self.bias))
        return out


def standardize(x: Tensor, mean: float = 0.5, std: float = 0.25) -> Tensor:
    """Fixed affine input normalisation; [0, 1] images map to roughly [-2, 2]."""
    return ops.scale(ops.sub(x, mean), 1.0 / std)


def save_checkpoint(module, directory) -> None:
    """One tensor file per parameter plus ``manifest.json`` (names and shapes)."""
    os.makedirs(directory, exist_ok=True)
    manifest = []
    for name, t in module.named_parameters():
        fname = name + ".cdspt"
        save_tensor(os.path.join(directory, fname), t)
        manifest.append({"name": name, "shape": list(t.shape), "dtype": str(t.dtype), "file": fname})
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump({"parameters": manifest}, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(module, directory) -> None:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)["parameters"]
    params = dict(module.named_parameters())
    for entry in manifest:
        if entry["name"] not in params:
            raise KeyError(f"checkpoint parameter {entry['name']!r} not in model")
        arr = load_array(os.path.join(directory, entry["file"]))
        target = params[entry["name"]]
        if arr.shape != target.shape:
            raise ValueError(f"{entry['name']}: shape {arr.shape} != model {target.shape}")
        target.data = arr.astype(target.dtype)
