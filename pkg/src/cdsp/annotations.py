"""Scribble data model: rasterisation, image-level classes, shrink/drop perturbations.

Class ids follow the usual scribble-dataset encoding: 0 is background,
1..K are foreground classes and 255 marks unlabeled pixels.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from cdsp import pnm

IGNORE = 255
BACKGROUND = 0


class AnnotationError(ValueError):
    pass


@dataclass
class ScribblePolyline:
    class_id: int
    points: list  # [(row, col), ...]

    def __post_init__(self):
        if len(self.points) < 1:
            raise AnnotationError("a polyline needs at least one point")
        self.class_id = int(self.class_id)
        self.points = [(float(r), float(c)) if not _is_int(r, c) else (int(r), int(c)) for r, c in self.points]

    def arc_lengths(self) -> np.ndarray:
        pts = np.asarray(self.points, dtype=np.float64)
        seg = np.sqrt((np.diff(pts, axis=0) ** 2).sum(axis=1))
        return np.concatenate([[0.0], np.cumsum(seg)])

    def length(self) -> float:
        return float(self.arc_lengths()[-1])


def _is_int(r, c) -> bool:
    return float(r).is_integer() and float(c).is_integer()


@dataclass
class ScribbleSet:
    image_id: str
    height: int
    width: int
    polylines: list = field(default_factory=list)

    def foreground(self):
        return [p for p in self.polylines if p.class_id != BACKGROUND]

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "height": self.height,
            "width": self.width,
            "polylines": [{"class_id": p.class_id, "points": [list(pt) for pt in p.points]} for p in self.polylines],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScribbleSet":
        try:
            polys = [ScribblePolyline(p["class_id"], [tuple(pt) for pt in p["points"]]) for p in d["polylines"]]
            return cls(str(d["image_id"]), int(d["height"]), int(d["width"]), polys)
        except (KeyError, TypeError) as exc:
            raise AnnotationError(f"malformed scribble JSON: {exc}") from None

    def validate(self, num_classes: int | None = None) -> None:
        for p in self.polylines:
            if p.class_id < 0 or (num_classes is not None and p.class_id > num_classes):
                raise AnnotationError(f"class id {p.class_id} outside [0, {num_classes}]")
            for r, c in p.points:
                if not (0 <= r <= self.height - 1 and 0 <= c <= self.width - 1):
                    raise AnnotationError(
                        f"point ({r}, {c}) outside {self.height}x{self.width} image {self.image_id!r}"
                    )


@dataclass
class LabelMask:
    """Per-pixel class ids; ``IGNORE`` (255) marks unlabeled pixels."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.uint8)
        if self.values.ndim != 2:
            raise AnnotationError(f"label mask must be 2-D, got {self.values.shape}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def labeled(self) -> np.ndarray:
        return self.values != IGNORE

    def validate(self, num_classes: int) -> None:
        bad = (self.values != IGNORE) & (self.values > num_classes)
        if bad.any():
            v = int(self.values[bad][0])
            raise AnnotationError(f"class id {v} outside [0, {num_classes}] or {IGNORE}")

    def __eq__(self, other):
        return isinstance(other, LabelMask) and np.array_equal(self.values, other.values)


# -- file formats -------------------------------------------------------------


def save_scribbles(path, s: ScribbleSet) -> None:
    with open(os.fspath(path), "w") as fh:
        json.dump(s.to_dict(), fh, sort_keys=True)
        fh.write("\n")


def load_scribbles(path) -> ScribbleSet:
    with open(os.fspath(path)) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise AnnotationError(f"{path}: invalid JSON ({exc})") from None
    return ScribbleSet.from_dict(d)


def save_label_mask(path, mask: LabelMask) -> None:
    pnm.write_pgm(path, mask.values)


def load_label_mask(path, num_classes: int | None = None) -> LabelMask:
    values, _ = pnm.read_pgm(path)
    mask = LabelMask(values)
    if num_classes is not None:
        mask.validate(num_classes)
    return mask


# -- operations ---------------------------------------------------------------


def _segment_sqdist(rr, cc, a, b) -> np.ndarray:
    """Squared distance from grid points to the closed segment ``a``-``b``."""
    ar, ac = a
    dr, dc = b[0] - ar, b[1] - ac
    denom = dr * dr + dc * dc
    if denom == 0:
        return (rr - ar) ** 2 + (cc - ac) ** 2
    t = np.clip(((rr - ar) * dr + (cc - ac) * dc) / denom, 0.0, 1.0)
    pr = ar + t * dr
    pc = ac + t * dc
    return (rr - pr) ** 2 + (cc - pc) ** 2


def polyline_pixels(poly: ScribblePolyline, height: int, width: int, thickness: float) -> np.ndarray:
    """Boolean mask of pixel centres within ``thickness / 2`` of the polyline."""
    radius = thickness / 2.0
    r2 = radius * radius
    out = np.zeros((height, width), dtype=bool)
    pts = [np.asarray(p, dtype=np.float64) for p in poly.points]
    segs = list(zip(pts[:-1], pts[1:])) if len(pts) > 1 else [(pts[0], pts[0])]
    pad = int(np.ceil(radius))
    for a, b in segs:
        r0 = max(int(np.floor(min(a[0], b[0]))) - pad, 0)
        r1 = min(int(np.ceil(max(a[0], b[0]))) + pad, height - 1)
        c0 = max(int(np.floor(min(a[1], b[1]))) - pad, 0)
        c1 = min(int(np.ceil(max(a[1], b[1]))) + pad, width - 1)
        if r0 > r1 or c0 > c1:
            continue
        rr, cc = np.meshgrid(np.arange(r0, r1 + 1, dtype=np.float64), np.arange(c0, c1 + 1, dtype=np.float64), indexing="ij")
        out[r0 : r1 + 1, c0 : c1 + 1] |= _segment_sqdist(rr, cc, a, b) <= r2
    return out


def rasterize(s: ScribbleSet, thickness: float = 3) -> LabelMask:
    """Burn polylines into a mask; later polylines overwrite earlier ones where they overlap."""
    if thickness < 1:
        raise AnnotationError(f"thickness must be >= 1, got {thickness}")
    s.validate()
    values = np.full((s.height, s.width), IGNORE, dtype=np.uint8)
    for poly in s.polylines:
        values[polyline_pixels(poly, s.height, s.width, thickness)] = poly.class_id
    return LabelMask(values)


def extract_image_classes(s: ScribbleSet, num_classes: int) -> np.ndarray:
    """Multi-hot over foreground classes: position ``k - 1`` is set when class ``k`` is scribbled."""
    vec = np.zeros(num_classes, dtype=np.uint8)
    for p in s.foreground():
        if not 1 <= p.class_id <= num_classes:
            raise AnnotationError(f"class id {p.class_id} outside [1, {num_classes}]")
        vec[p.class_id - 1] = 1
    return vec


def class_ids(vec) -> list[int]:
    """Inverse of the multi-hot layout: the foreground class ids that are present."""
    return [int(i) + 1 for i in np.flatnonzero(np.asarray(vec))]


def _shrink_polyline(poly: ScribblePolyline, ratio: float) -> ScribblePolyline:
    if ratio == 0 or len(poly.points) == 1:
        return ScribblePolyline(poly.class_id, list(poly.points))
    cum = poly.arc_lengths()
    total = cum[-1]
    lo = total * ratio / 2.0
    hi = total * (1.0 - ratio / 2.0)
    # snap both cut positions to the nearest vertex so the result stays on the original path
    i0 = int(np.argmin(np.abs(cum - lo)))
    i1 = int(np.argmin(np.abs(cum - hi)))
    if i1 < i0:
        i0 = i1 = int(np.argmin(np.abs(cum - total / 2.0)))
    return ScribblePolyline(poly.class_id, list(poly.points[i0 : i1 + 1]))


def shrink(s: ScribbleSet, ratio: float, seed: int = 0) -> ScribbleSet:
    """Keep the central part of every polyline, a fraction ``1 - ratio`` of its arc length.

    The cut is deterministic; ``seed`` is accepted so shrink and drop share a signature.
    """
    if not 0.0 <= ratio <= 1.0:
        raise AnnotationError(f"shrink ratio must be in [0, 1], got {ratio}")
    return ScribbleSet(s.image_id, s.height, s.width, [_shrink_polyline(p, ratio) for p in s.polylines])


def drop(s: ScribbleSet, ratio: float, seed: int = 0) -> ScribbleSet:
    """Remove each foreground polyline with probability ``ratio``; background polylines stay."""
    if not 0.0 <= ratio <= 1.0:
        raise AnnotationError(f"drop ratio must be in [0, 1], got {ratio}")
    rng = np.random.default_rng(seed)
    kept = []
    for p in s.polylines:
        if p.class_id == BACKGROUND:
            kept.append(ScribblePolyline(p.class_id, list(p.points)))
            continue
        if rng.random() >= ratio:
            kept.append(ScribblePolyline(p.class_id, list(p.points)))
    return ScribbleSet(s.image_id, s.height, s.width, kept)


def perturb(s: ScribbleSet, mode: str, ratio: float, seed: int = 0) -> ScribbleSet:
    if mode == "shrink":
        return shrink(s, ratio, seed)
    if mode == "drop":
        return drop(s, ratio, seed)
    raise AnnotationError(f"unknown perturbation mode {mode!r}")
