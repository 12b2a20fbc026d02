"""Minimal binary PGM (P5) / PPM (P6) reader and writer, 8-bit only."""

from __future__ import annotations

import os

import numpy as np


class PnmFormatError(ValueError):
    pass


def _tokens(buf: bytes, count: int):
    """Read ``count`` header tokens, skipping ``#`` comments; return tokens, comments, payload offset."""
    toks, comments = [], []
    i, n = 0, len(buf)
    while len(toks) < count:
        while i < n and buf[i : i + 1].isspace():
            i += 1
        if i >= n:
            raise PnmFormatError("truncated header")
        if buf[i : i + 1] == b"#":
            j = buf.find(b"\n", i)
            if j < 0:
                raise PnmFormatError("unterminated comment")
            comments.append(buf[i + 1 : j].decode("ascii", "replace").strip())
            i = j + 1
            continue
        j = i
        while j < n and not buf[j : j + 1].isspace():
            j += 1
        toks.append(buf[i:j])
        i = j
    if i >= n or not buf[i : i + 1].isspace():
        raise PnmFormatError("missing whitespace after header")
    return toks, comments, i + 1


def encode_pgm(values: np.ndarray, comment: str | None = None) -> bytes:
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise PnmFormatError(f"PGM needs a 2-D array, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise PnmFormatError("PGM values must lie in [0, 255]")
    h, w = arr.shape
    head = b"P5\n"
    if comment:
        head += b"# " + comment.encode("ascii") + b"\n"
    head += f"{w} {h}\n255\n".encode("ascii")
    return head + arr.astype(np.uint8).tobytes()


def decode_pgm(buf: bytes) -> tuple[np.ndarray, list[str]]:
    if buf[:2] != b"P5":
        raise PnmFormatError("not a binary PGM (missing P5 magic)")
    (magic, w, h, maxval), comments, off = _tokens(buf, 4)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise PnmFormatError("non-integer PGM header field") from None
    if maxval != 255:
        raise PnmFormatError(f"only 8-bit PGM supported (maxval {maxval})")
    if len(buf) - off != w * h:
        raise PnmFormatError(f"PGM payload has {len(buf) - off} bytes, expected {w * h}")
    return np.frombuffer(buf, dtype=np.uint8, offset=off).reshape(h, w).copy(), comments


def encode_ppm(rgb: np.ndarray) -> bytes:
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise PnmFormatError(f"PPM needs an H x W x 3 array, got {arr.shape}")
    h, w, _ = arr.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + arr.astype(np.uint8).tobytes()


def decode_ppm(buf: bytes) -> np.ndarray:
    if buf[:2] != b"P6":
        raise PnmFormatError("not a binary PPM (missing P6 magic)")
    (magic, w, h, maxval), _, off = _tokens(buf, 4)
    w, h = int(w), int(h)
    if int(maxval) != 255:
        raise PnmFormatError("only 8-bit PPM supported")
    if len(buf) - off != w * h * 3:
        raise PnmFormatError("PPM payload size mismatch")
    return np.frombuffer(buf, dtype=np.uint8, offset=off).reshape(h, w, 3).copy()


def write_pgm(path, values, comment=None) -> None:
    with open(os.fspath(path), "wb") as fh:
        fh.write(encode_pgm(values, comment))


def read_pgm(path) -> tuple[np.ndarray, list[str]]:
    with open(os.fspath(path), "rb") as fh:
        return decode_pgm(fh.read())


def write_ppm(path, rgb) -> None:
    with open(os.fspath(path), "wb") as fh:
        fh.write(encode_ppm(rgb))


def read_ppm(path) -> np.ndarray:
    with open(os.fspath(path), "rb") as fh:
        return decode_ppm(fh.read())
