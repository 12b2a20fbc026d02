"""End-to-end pipeline, the loss-component ablation and the shrink/drop robustness sweep."""

from __future__ import annotations

import csv
import hashlib
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from cdsp.annotations import IGNORE, extract_image_classes, perturb, rasterize
from cdsp.campseudo import ClassifierConfig, cams_to_pseudo, compute_cams, train_classifier
from cdsp.distmap import pseudo_boundary_distance_map, scribble_distance_map
from cdsp.engine.tensor import DTYPES
from cdsp.harness.config import ExperimentConfig
from cdsp.harness.data import SynthSample, gen_synthetic_dataset
from cdsp.harness.metrics import MetricsReport, evaluate_miou, evaluate_predictions
from cdsp.harness.train import train_segmentation

log = logging.getLogger(__name__)

ABLATION_GRID = (
    ("segs",),
    ("segc",),
    ("segs", "segc"),
    ("segs", "segc", "dc"),
    ("segs", "segc", "ds"),
    ("segs", "segc", "ds", "dc"),
    ("segs", "segc", "lorm"),
    ("segs", "segc", "ds", "dc", "lorm"),
)
BASELINE = ("segs",)
FULL = ("segs", "segc", "ds", "dc", "lorm")
ROBUSTNESS_LAMBDAS = (2.0, 7.0)  # (lambda_s, lambda_c) for perturbation sweeps
RESULT_HEADER = ["run_id", "config_hash", "seed", "ratio", "split", "class", "iou", "miou"]


@dataclass
class Prepared:
    """Everything the segmentation stage consumes, computed once per data setting."""

    train: list
    val: list
    scribble_rasters: list
    pseudo_labels: list
    ds_maps: list
    dc_maps: list
    pseudo_miou: float


def make_datasets(cfg: ExperimentConfig):
    train = gen_synthetic_dataset(cfg.n_train, cfg.num_classes, cfg.data_seed, cfg.size, cfg.thickness, prefix="train")
    val = gen_synthetic_dataset(cfg.n_val, cfg.num_classes, cfg.data_seed + 100003, cfg.size, cfg.thickness, prefix="val")
    return train, val


def perturb_samples(samples, mode: str, ratio: float, seed: int, num_classes: int):
    if mode == "none" or ratio == 0:
        return samples
    out = []
    for i, s in enumerate(samples):
        scr = perturb(s.scribbles, mode, ratio, seed=seed * 1_000_003 + i)
        out.append(SynthSample(s.image_id, s.image, s.gt, scr, extract_image_classes(scr, num_classes)))
    return out


# classifier + CAM output keyed by everything that influences it; shrink never
# changes image-level classes, so robustness sweeps reuse one classifier
_PSEUDO_CACHE: dict = {}


def make_pseudo_labels(cfg: ExperimentConfig, samples):
    """Train the classifier on scribble-derived image classes and threshold its CAMs."""
    images = np.stack([s.image for s in samples])
    vectors = np.stack([s.class_vector for s in samples])
    h = hashlib.sha256(images.tobytes())
    h.update(vectors.tobytes())
    key = (cfg.dtype, cfg.cls_width, cfg.cls_epochs, cfg.cls_lr, cfg.data_seed, cfg.tau, cfg.unclaimed_ignore, h.hexdigest())
    if key not in _PSEUDO_CACHE:
        ccfg = ClassifierConfig(epochs=cfg.cls_epochs, lr=cfg.cls_lr, width=cfg.cls_width, seed=cfg.data_seed, dtype=DTYPES[cfg.dtype])
        params, _ = train_classifier(images, vectors, ccfg)
        unclaimed = IGNORE if cfg.unclaimed_ignore else 0
        _PSEUDO_CACHE.clear()
        _PSEUDO_CACHE[key] = [cams_to_pseudo(compute_cams(s.image, params), s.class_vector, cfg.tau, unclaimed) for s in samples]
    return _PSEUDO_CACHE[key]


def prepare(cfg: ExperimentConfig, datasets=None) -> Prepared:
    train, val = datasets or make_datasets(cfg)
    train = perturb_samples(train, cfg.perturb_mode, cfg.perturb_ratio, cfg.data_seed, cfg.num_classes)
    rasters = [rasterize(s.scribbles, cfg.thickness) for s in train]
    pseudo = make_pseudo_labels(cfg, train)
    ds = [scribble_distance_map(r, cfg.lambda_s) for r in rasters]
    dc = [pseudo_boundary_distance_map(p, cfg.lambda_c) for p in pseudo]
    pm = evaluate_predictions([p.values for p in pseudo], [s.gt.values for s in train], cfg.num_classes + 1).miou
    return Prepared(train, val, rasters, pseudo, ds, dc, pm)


def run_one(cfg: ExperimentConfig, prep: Prepared):
    model, reports = train_segmentation(
        cfg, prep.train, prep.pseudo_labels, {"ds": prep.ds_maps, "dc": prep.dc_maps}, prep.scribble_rasters
    )
    metrics = evaluate_miou(model, prep.val)
    metrics.loss_curve = [r.total for r in reports]
    return model, metrics


def _run_job(args):
    cfg, prep = args
    _, metrics = run_one(cfg, prep)
    return metrics


def _map(jobs, n_jobs: int):
    if n_jobs <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_run_job, jobs))


def run_ablation(base_cfg: ExperimentConfig, seeds=(0, 1, 2), grid=ABLATION_GRID, n_jobs: int = 1, prep: Prepared | None = None):
    """Train every loss combination in ``grid`` for every seed.

    Returns ``(summary_rows, per_run)`` where ``summary_rows`` has one row per
    combination: ``(losses, mean_miou, sd_miou, n_seeds)``.
    """
    prep = prep or prepare(base_cfg)
    jobs, keys = [], []
    for combo in grid:
        for seed in seeds:
            cfg = base_cfg.replace(losses=",".join(combo), seed=seed)
            jobs.append((cfg, prep))
            keys.append((combo, seed, cfg))
    results = _map(jobs, n_jobs)
    per_run = [(combo, seed, cfg, m) for (combo, seed, cfg), m in zip(keys, results)]
    summary = []
    for combo in grid:
        vals = np.array([m.miou for c, _, _, m in per_run if c == combo])
        summary.append(("+".join(combo), float(vals.mean()), float(vals.std(ddof=1)) if len(vals) > 1 else 0.0, len(vals)))
    return summary, per_run


def run_robustness(
    base_cfg: ExperimentConfig,
    ratios=(0.0, 0.25, 0.5, 0.75, 1.0),
    mode: str = "shrink",
    seeds=(0, 1, 2),
    n_jobs: int = 1,
    datasets=None,
    lambdas=ROBUSTNESS_LAMBDAS,
):
    """Full method vs scribble-only baseline under increasingly perturbed scribbles.

    ``lambdas`` overrides ``(lambda_s, lambda_c)`` of ``base_cfg``; pass None to
    keep the config's values. Under ``drop`` the classifier is retrained on the
    surviving image-level classes. Returns ``(method, ratio, seed, miou, cfg, metrics)`` rows.
    """
    if mode not in ("shrink", "drop"):
        raise ValueError(f"mode must be shrink or drop, got {mode!r}")
    if lambdas is not None:
        base_cfg = base_cfg.replace(lambda_s=float(lambdas[0]), lambda_c=float(lambdas[1]))
    datasets = datasets or make_datasets(base_cfg)
    rows = []
    for ratio in ratios:
        cfg_r = base_cfg.replace(perturb_mode=mode if ratio > 0 else "none", perturb_ratio=float(ratio))
        prep = prepare(cfg_r, datasets)
        jobs, keys = [], []
        for method, combo in (("cdsp", FULL), ("baseline", BASELINE)):
            for seed in seeds:
                cfg = cfg_r.replace(losses=",".join(combo), seed=seed)
                jobs.append((cfg, prep))
                keys.append((method, seed, cfg))
        for (method, seed, cfg), m in zip(keys, _map(jobs, n_jobs)):
            rows.append((method, float(ratio), seed, m.miou, cfg, m))
    return rows


# -- CSV output ---------------------------------------------------------------


def metrics_rows(run_id: str, cfg: ExperimentConfig, metrics: MetricsReport, split: str = "val") -> list[list]:
    rows = []
    for cls, iou in enumerate(metrics.iou):
        rows.append([run_id, cfg.digest(), cfg.seed, repr(cfg.perturb_ratio), split, cls, "" if np.isnan(iou) else repr(float(iou)), repr(metrics.miou)])
    return rows


def write_results(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_HEADER)
        w.writerows(rows)


def write_ablation_table(path, summary) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["losses", "mean_miou", "sd_miou", "n_seeds"])
        for combo, mean, sd, n in summary:
            w.writerow([combo, f"{mean:.6f}", f"{sd:.6f}", n])


def write_robustness_curve(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "ratio", "seed", "miou"])
        for method, ratio, seed, miou, *_ in rows:
            w.writerow([method, ratio, seed, f"{miou:.6f}"])


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path
