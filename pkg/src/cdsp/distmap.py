"""Exact Euclidean distance transforms and the scribble / pseudo-boundary confidence maps."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from cdsp import kernels, pnm
from cdsp.annotations import IGNORE, LabelMask

KINDS = ("scribble_ds", "pseudo_dc")
TRUNC = 255


class EmptySourceError(ValueError):
    """Distance to an empty source set is undefined."""


def _as_source_mask(sources, height: int, width: int) -> np.ndarray:
    if isinstance(sources, np.ndarray) and sources.dtype == bool:
        if sources.shape != (height, width):
            raise ValueError(f"source mask shape {sources.shape} != {(height, width)}")
        return sources
    mask = np.zeros((height, width), dtype=bool)
    pts = np.asarray(list(sources), dtype=np.int64).reshape(-1, 2)
    if pts.size:
        mask[pts[:, 0], pts[:, 1]] = True
    return mask


def squared_edt(sources, height: int, width: int, dt1d=None) -> np.ndarray:
    """Exact squared Euclidean distance from every pixel to the nearest source pixel.

    ``sources`` is a boolean (H, W) mask or an iterable of (row, col). Two
    separable passes of the 1-D lower-envelope transform; the result is an
    int64 grid.
    """
    mask = _as_source_mask(sources, height, width)
    if not mask.any():
        raise EmptySourceError("squared_edt needs at least one source pixel")
    dt1d = dt1d or kernels.dt1d_lines
    f = np.where(mask, 0.0, np.inf)
    cols = dt1d(np.ascontiguousarray(f.T)).T
    full = dt1d(np.ascontiguousarray(cols))
    return full.astype(np.int64)


def brute_force_squared_edt(sources, height: int, width: int) -> np.ndarray:
    """All-pairs reference for :func:`squared_edt`."""
    mask = _as_source_mask(sources, height, width)
    if not mask.any():
        raise EmptySourceError("no source pixels")
    src = np.argwhere(mask)
    rr, cc = np.mgrid[0:height, 0:width]
    best = np.full((height, width), np.iinfo(np.int64).max, dtype=np.int64)
    for r, c in src:
        np.minimum(best, (rr - r) ** 2 + (cc - c) ** 2, out=best)
    return best


def boundary_extract(pseudo: LabelMask | np.ndarray) -> np.ndarray:
    """Foreground pixels whose 4-neighbourhood leaves the image or holds a different class."""
    v = pseudo.values if isinstance(pseudo, LabelMask) else np.asarray(pseudo)
    fg = (v >= 1) & (v != IGNORE)
    padded = np.pad(v.astype(np.int32), 1, constant_values=-1)
    centre = padded[1:-1, 1:-1]
    differs = (
        (padded[:-2, 1:-1] != centre)
        | (padded[2:, 1:-1] != centre)
        | (padded[1:-1, :-2] != centre)
        | (padded[1:-1, 2:] != centre)
    )
    return fg & differs


def truncated_distance(sqdist: np.ndarray, lam: float) -> np.ndarray:
    """``min(floor(sqrt(e**lam * sqdist)), 255)`` as uint8."""
    scaled = np.sqrt(math.exp(lam) * sqdist.astype(np.float64))
    return np.minimum(np.floor(scaled), TRUNC).astype(np.uint8)


@dataclass
class DistanceMap:
    """Per-pixel confidence in [0, 1] plus the raw truncated distances behind it."""

    values: np.ndarray
    raw: np.ndarray
    kind: str
    lam: float
    degenerate: bool = False

    @property
    def nonzero(self) -> int:
        return int(np.count_nonzero(self.values))

    @classmethod
    def from_raw(cls, raw: np.ndarray, kind: str, lam: float, degenerate: bool = False) -> "DistanceMap":
        if kind not in KINDS:
            raise ValueError(f"unknown distance map kind {kind!r}")
        raw = np.asarray(raw, dtype=np.uint8)
        if degenerate:
            values = np.zeros(raw.shape, dtype=np.float64)
        elif kind == "scribble_ds":
            values = 1.0 - raw.astype(np.float64) / TRUNC
        else:
            values = raw.astype(np.float64) / TRUNC
        return cls(values, raw, kind, float(lam), degenerate)


def scribble_distance_map(scribble: LabelMask | np.ndarray, lam: float) -> DistanceMap:
    """Confidence that decays with distance from foreground scribble pixels (1 on the scribble)."""
    v = scribble.values if isinstance(scribble, LabelMask) else np.asarray(scribble)
    fg = (v >= 1) & (v != IGNORE)
    if not fg.any():
        return DistanceMap.from_raw(np.full(v.shape, TRUNC, np.uint8), "scribble_ds", lam, degenerate=True)
    raw = truncated_distance(squared_edt(fg, *v.shape), lam)
    return DistanceMap.from_raw(raw, "scribble_ds", lam)


def pseudo_boundary_distance_map(pseudo: LabelMask | np.ndarray, lam: float) -> DistanceMap:
    """Confidence that grows with distance from the pseudo-label's foreground boundary (0 on it)."""
    v = pseudo.values if isinstance(pseudo, LabelMask) else np.asarray(pseudo)
    boundary = boundary_extract(v)
    if not boundary.any():
        return DistanceMap.from_raw(np.zeros(v.shape, np.uint8), "pseudo_dc", lam, degenerate=True)
    raw = truncated_distance(squared_edt(boundary, *v.shape), lam)
    return DistanceMap.from_raw(raw, "pseudo_dc", lam)


# -- persistence --------------------------------------------------------------

_HEADER = re.compile(r"cdsp-distmap kind=(\w+) lambda=(\S+) degenerate=(\d)")


def save_distance_map(path, dmap: DistanceMap) -> None:
    """Write as PGM of raw truncated distances (``.pgm``) or as an f32 tensor file."""
    path = str(path)
    if path.endswith(".pgm"):
        comment = f"cdsp-distmap kind={dmap.kind} lambda={dmap.lam!r} degenerate={int(dmap.degenerate)}"
        pnm.write_pgm(path, dmap.raw, comment=comment)
    else:
        from cdsp.engine.serialize import save_tensor

        save_tensor(path, dmap.values.astype(np.float32))


def load_distance_map(path, kind: str | None = None, lam: float | None = None) -> DistanceMap:
    path = str(path)
    if path.endswith(".pgm"):
        raw, comments = pnm.read_pgm(path)
        degenerate = False
        for c in comments:
            m = _HEADER.search(c)
            if m:
                kind = kind or m.group(1)
                lam = float(m.group(2)) if lam is None else lam
                degenerate = m.group(3) == "1"
        if kind is None:
            raise ValueError(f"{path}: distance map kind unknown; pass kind=")
        return DistanceMap.from_raw(raw, kind, 0.0 if lam is None else lam, degenerate)
    from cdsp.engine.serialize import load_array

    values = load_array(path).astype(np.float64)
    if kind is None:
        raise ValueError("tensor-format distance maps need kind=")
    # f32 rounding is far below 1/255, so the raw grid is recovered exactly
    raw = np.rint((1.0 - values) * TRUNC) if kind == "scribble_ds" else np.rint(values * TRUNC)
    raw = np.clip(raw, 0, TRUNC).astype(np.uint8)
    return DistanceMap.from_raw(raw, kind, 0.0 if lam is None else lam, degenerate=not values.any())
