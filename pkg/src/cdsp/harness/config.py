"""Experiment configuration and its flat ``key=value`` text form."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields

ALL_LOSSES = ("segs", "segc", "ds", "dc", "lorm")


@dataclass
class ExperimentConfig:
    # data
    n_train: int = 96
    n_val: int = 48
    size: int = 64
    num_classes: int = 3
    data_seed: int = 0
    thickness: int = 3
    # models
    seg_width: int = 32
    cls_width: int = 32
    cls_epochs: int = 30
    cls_lr: float = 0.1
    # schedule
    epochs: int = 30
    warmup_epochs: int = 6
    base_lr: float = 0.05
    batch: int = 8
    # optimizer
    momentum: float = 0.9
    weight_decay: float = 5e-4
    # losses
    losses: str = "segs,segc,ds,dc,lorm"
    lambda_s: float = 1.0
    lambda_c: float = 6.0
    tau: float = 0.3
    epsilon: float = 0.1
    paper_literal_entropy: bool = False
    lorm_foreground_only: bool = False
    lorm_detach: bool = False
    unclaimed_ignore: bool = False
    # perturbation of the training scribbles
    perturb_mode: str = "none"
    perturb_ratio: float = 0.0
    # run
    seed: int = 0
    augment: bool = True
    dtype: str = "f32"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.warmup_epochs > self.epochs:
            raise ValueError(f"warmup_epochs ({self.warmup_epochs}) exceeds epochs ({self.epochs})")
        if not 0.0 <= self.perturb_ratio <= 1.0:
            raise ValueError(f"perturb_ratio must be in [0, 1], got {self.perturb_ratio}")
        if self.perturb_mode not in ("none", "shrink", "drop"):
            raise ValueError(f"unknown perturb_mode {self.perturb_mode!r}")
        if not 1 <= self.num_classes <= 6:
            raise ValueError("num_classes must be in [1, 6]")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must lie in [0, 1)")
        if self.dtype not in ("f32", "f64"):
            raise ValueError(f"dtype must be f32 or f64, got {self.dtype!r}")
        bad = set(self.loss_set()) - set(ALL_LOSSES)
        if bad:
            raise ValueError(f"unknown losses {sorted(bad)}; choose from {ALL_LOSSES}")

    def loss_set(self) -> tuple:
        parts = [p.strip() for p in self.losses.split(",") if p.strip()]
        return tuple(p for p in ALL_LOSSES if p in parts) + tuple(p for p in parts if p not in ALL_LOSSES)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name}={_fmt(getattr(self, f.name))}\n" for f in fields(self))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]

    @classmethod
    def from_text(cls, text: str, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key] = val
        return (base or cls()).with_strings(values)

    def with_strings(self, values: dict) -> "ExperimentConfig":
        types = {f.name: f.type for f in fields(self)}
        changes = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            changes[key] = _parse(raw, getattr(self, key))
        return self.replace(**changes)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse(raw, current):
    if isinstance(current, bool):
        if isinstance(raw, bool):
            return raw
        low = str(raw).lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return str(raw)


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_text(fh.read(), base)


def save_config(path, cfg: ExperimentConfig) -> None:
    with open(path, "w") as fh:
        fh.write(cfg.to_text())
