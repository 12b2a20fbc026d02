"""Synthetic shape images with exact masks and emulated scribbles."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from cdsp.annotations import (
    BACKGROUND,
    LabelMask,
    ScribblePolyline,
    ScribbleSet,
    extract_image_classes,
    load_label_mask,
    load_scribbles,
    rasterize,
    save_label_mask,
    save_scribbles,
)
from cdsp.distmap import squared_edt
from cdsp.engine.serialize import load_array, save_tensor

# one hue per foreground class; neighbours are deliberately close so colour alone is not decisive
PALETTE = np.array(
    [
        [0.85, 0.30, 0.25],
        [0.80, 0.55, 0.20],
        [0.30, 0.45, 0.85],
        [0.35, 0.70, 0.35],
        [0.65, 0.35, 0.75],
        [0.25, 0.70, 0.75],
    ]
)
SHAPES = ("disc", "rect", "triangle")


@dataclass
class SynthSample:
    image_id: str
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    gt: LabelMask
    scribbles: ScribbleSet
    class_vector: np.ndarray  # (K,) multi-hot


def _shape_mask(kind, rng, size):
    rr, cc = np.mgrid[0:size, 0:size].astype(np.float64)
    r0, c0 = rng.uniform(10, size - 10, size=2)
    if kind == "disc":
        rad = rng.uniform(8, 15)
        return (rr - r0) ** 2 + (cc - c0) ** 2 <= rad * rad
    if kind == "rect":
        h, w = rng.uniform(12, 28, size=2)
        return (np.abs(rr - r0) <= h / 2) & (np.abs(cc - c0) <= w / 2)
    # triangle from three points around the centre
    rad = rng.uniform(11, 18)
    ang = rng.uniform(0, 2 * np.pi) + np.array([0, 2 * np.pi / 3, 4 * np.pi / 3]) + rng.uniform(-0.3, 0.3, 3)
    pts = np.stack([r0 + rad * np.sin(ang), c0 + rad * np.cos(ang)], axis=1)
    inside = np.ones((size, size), dtype=bool)
    sign = None
    for i in range(3):
        a, b = pts[i], pts[(i + 1) % 3]
        cross = (b[0] - a[0]) * (cc - a[1]) - (b[1] - a[1]) * (rr - a[0])
        s = cross >= 0
        if sign is None:
            ref = (b[0] - a[0]) * (pts[(i + 2) % 3][1] - a[1]) - (b[1] - a[1]) * (pts[(i + 2) % 3][0] - a[0])
            sign = ref >= 0
        inside &= s == sign
    return inside


def _smooth_field(rng, size, amplitude):
    rr, cc = np.mgrid[0:size, 0:size] / size
    field = np.zeros((size, size))
    for _ in range(3):
        fr, fc = rng.uniform(0.5, 3.0, size=2)
        ph = rng.uniform(0, 2 * np.pi)
        field += np.sin(2 * np.pi * (fr * rr + fc * cc) + ph)
    return amplitude * field / 3.0


def _regions(gt: np.ndarray):
    """Connected regions as (class_id, mask); background contributes only its largest piece."""
    out = []
    for cls in np.unique(gt):
        lab, n = ndimage.label(gt == cls)
        pieces = [lab == i for i in range(1, n + 1)]
        if cls == BACKGROUND:
            if pieces:
                out.append((int(cls), max(pieces, key=lambda m: int(m.sum()))))
        else:
            out.extend((int(cls), p) for p in pieces)
    return out


def _interior_depth(region: np.ndarray) -> np.ndarray:
    """Squared distance from each region pixel to the nearest pixel outside it."""
    outside = ~region
    if not outside.any():
        return np.full(region.shape, 10**6, dtype=np.int64)
    return squared_edt(outside, *region.shape)


def _walk(rng, interior: np.ndarray, target: float):
    """Random walk with smoothly varying heading, restricted to ``interior`` pixels."""
    cand = np.argwhere(interior)
    start = cand[rng.integers(len(cand))]
    pts = [(int(start[0]), int(start[1]))]
    heading = rng.uniform(0, 2 * np.pi)
    length = 0.0
    h, w = interior.shape
    visited = {pts[0]}
    fails = 0
    while length < target and fails < 12:
        heading += rng.normal(0, 0.35)
        r = int(round(pts[-1][0] + np.sin(heading)))
        c = int(round(pts[-1][1] + np.cos(heading)))
        if 0 <= r < h and 0 <= c < w and interior[r, c] and (r, c) not in visited:
            length += float(np.hypot(r - pts[-1][0], c - pts[-1][1]))
            pts.append((r, c))
            visited.add((r, c))
            fails = 0
        else:
            heading += rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 2.0)
            fails += 1
    return pts


def synth_scribbles(gt, seed: int, thickness: float = 3, image_id: str = "img") -> ScribbleSet:
    """One random-walk polyline inside each connected region (plus the main background piece).

    Walks stay far enough from region borders that the rasterised stroke never
    leaves its region; regions too thin for a stroke get a single interior point,
    and fragments too thin even for that get nothing.
    """
    v = gt.values if isinstance(gt, LabelMask) else np.asarray(gt)
    if not (v >= 1).any():
        raise ValueError("synth_scribbles needs at least one foreground region")
    rng = np.random.default_rng(seed)
    radius = thickness / 2.0
    safe = (radius + np.sqrt(2) / 2) ** 2  # stroke pixels stay within radius + half a diagonal step
    polys = []
    for cls, region in _regions(v):
        depth = _interior_depth(region)
        rows, cols = np.nonzero(region)
        diameter = float(np.hypot(rows.max() - rows.min() + 1, cols.max() - cols.min() + 1))
        frac = rng.uniform(0.2, 0.35) if cls != BACKGROUND else rng.uniform(0.15, 0.25)
        target = max(0.1 * diameter, frac * diameter)
        for margin_sq in (9, safe):
            interior = region & (depth > margin_sq)
            if interior.any():
                pts = _walk(rng, interior, target)
                break
        else:
            if depth[region].max() > radius * radius:
                idx = np.argmax(np.where(region, depth, -1))
                pts = [(int(idx // v.shape[1]), int(idx % v.shape[1]))]
            else:
                continue
        polys.append(ScribblePolyline(cls, pts))
    return ScribbleSet(image_id, v.shape[0], v.shape[1], polys)


def _make_scene(rng, num_classes: int, size: int):
    n_shapes = int(rng.integers(1, min(3, num_classes) + 1))
    classes = rng.choice(num_classes, size=n_shapes, replace=False) + 1
    gt = np.zeros((size, size), dtype=np.uint8)
    bg = rng.uniform(0.35, 0.65, size=3)
    image = bg[:, None, None] + np.stack([_smooth_field(rng, size, 0.12) for _ in range(3)])
    for cls in classes:
        kind = SHAPES[int(rng.integers(len(SHAPES)))]
        mask = _shape_mask(kind, rng, size)
        color = PALETTE[cls - 1] + rng.normal(0, 0.07, size=3)
        texture = np.stack([_smooth_field(rng, size, 0.08) for _ in range(3)])
        image = np.where(mask[None], color[:, None, None] + texture, image)
        gt[mask] = cls
    image = image + rng.normal(0, 0.08, size=image.shape)
    return np.clip(image, 0, 1).astype(np.float32), gt


def gen_synthetic_dataset(n: int, num_classes: int, seed: int, size: int = 64, thickness: float = 3, prefix: str = "img"):
    """Deterministic list of :class:`SynthSample`.

    Scenes hold 1-3 shapes of distinct classes; a scene is redrawn until every
    foreground class in its mask also received a scribble.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 1 <= num_classes <= len(PALETTE):
        raise ValueError(f"num_classes must be in [1, {len(PALETTE)}]")
    samples = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n)):
        rng = np.random.default_rng(child)
        image_id = f"{prefix}{i:05d}"
        while True:
            image, gt = _make_scene(rng, num_classes, size)
            if not (gt >= 1).any():
                continue
            scribbles = synth_scribbles(gt, int(rng.integers(2**31)), thickness, image_id)
            vec = extract_image_classes(scribbles, num_classes)
            gt_classes = set(int(c) for c in np.unique(gt) if c != BACKGROUND)
            if gt_classes == {i + 1 for i in np.flatnonzero(vec)} and (gt == BACKGROUND).any():
                break
        samples.append(SynthSample(image_id, image, LabelMask(gt), scribbles, vec))
    return samples


# -- on-disk layout -------------------------------------------------------------
#   <dir>/dataset.json           ids, num_classes, size
#   <dir>/images/<id>.cdspt      (3, H, W) f32
#   <dir>/gt/<id>.pgm
#   <dir>/scribbles/<id>.json


def save_dataset(directory, samples, num_classes: int) -> None:
    for sub in ("images", "gt", "scribbles"):
        os.makedirs(os.path.join(directory, sub), exist_ok=True)
    for s in samples:
        save_tensor(os.path.join(directory, "images", f"{s.image_id}.cdspt"), s.image)
        save_label_mask(os.path.join(directory, "gt", f"{s.image_id}.pgm"), s.gt)
        save_scribbles(os.path.join(directory, "scribbles", f"{s.image_id}.json"), s.scribbles)
    meta = {"ids": [s.image_id for s in samples], "num_classes": num_classes, "size": int(samples[0].image.shape[-1])}
    with open(os.path.join(directory, "dataset.json"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_dataset(directory, scribble_dir=None):
    """Inverse of :func:`save_dataset`; returns (samples, num_classes)."""
    with open(os.path.join(directory, "dataset.json")) as fh:
        meta = json.load(fh)
    k = int(meta["num_classes"])
    scribble_dir = scribble_dir or os.path.join(directory, "scribbles")
    samples = []
    for image_id in meta["ids"]:
        image = load_array(os.path.join(directory, "images", f"{image_id}.cdspt"))
        gt = load_label_mask(os.path.join(directory, "gt", f"{image_id}.pgm"), num_classes=k)
        scr = load_scribbles(os.path.join(scribble_dir, f"{image_id}.json"))
        samples.append(SynthSample(image_id, image, gt, scr, extract_image_classes(scr, k)))
    return samples, k


def scribble_raster(sample: SynthSample, thickness: float = 3) -> LabelMask:
    return rasterize(sample.scribbles, thickness)
