"""Minimal netpbm image input for the inference CLI.

Supports binary PGM (P5) and PPM (P6) with maxval <= 255. Grayscale is
replicated to three channels, pixels are shifted by -128 onto the int8
lattice, and mismatched sizes are nearest-neighbor resampled. That is
all an 8-bit detector front end needs; anything fancier belongs to the
user's tooling.
"""
from __future__ import annotations

import numpy as np

from .errors import FormatError


def _tokens(blob: bytes, count: int) -> tuple[list[int], int]:
    """Read `count` whitespace-separated header ints, skipping # comments.

    Returns the values and the offset one byte past the final separator.
    """
    vals: list[int] = []
    i = 0
    n = len(blob)
    while len(vals) < count:
        while i < n and blob[i : i + 1].isspace():
            i += 1
        if i < n and blob[i : i + 1] == b"#":
            while i < n and blob[i] != 0x0A:
                i += 1
            continue
        start = i
        while i < n and not blob[i : i + 1].isspace():
            i += 1
        if start == i:
            raise FormatError("truncated netpbm header")
        tok = blob[start:i]
        try:
            vals.append(int(tok))
        except ValueError:
            raise FormatError(f"bad header token {tok!r}") from None
    if i >= n or not blob[i : i + 1].isspace():
        raise FormatError("missing separator after netpbm header")
    return vals, i + 1


def read_netpbm(path: str) -> np.ndarray:
    """Load a P5/P6 file as uint8 (channels, height, width)."""
    with open(path, "rb") as f:
        blob = f.read()
    magic = blob[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported image magic {magic!r} (want P5 or P6)")
    channels = 1 if magic == b"P5" else 3
    (width, height, maxval), off = _tokens(blob[2:], 3)
    off += 2
    if width <= 0 or height <= 0:
        raise FormatError(f"bad image dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        raise FormatError(f"maxval {maxval} unsupported (need 1..255)")
    need = width * height * channels
    data = blob[off : off + need]
    if len(data) != need:
        raise FormatError(f"truncated pixel data: have {len(data)}, need {need}")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width, channels)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def resize_nearest(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbor resample of a (C,H,W) array (index = floor scale)."""
    c, h, w = img.shape
    rows = (np.arange(height) * h) // height
    cols = (np.arange(width) * w) // width
    return img[:, rows[:, None], cols[None, :]]


def to_model_input(img: np.ndarray, resolution: int, in_channels: int = 3) -> np.ndarray:
    """uint8 (C,H,W) -> int8 (in_channels, resolution, resolution).

    Grayscale replicates across channels; the -128 shift recenters the
    0..255 range onto int8 without changing relative magnitudes.
    """
    if img.shape[0] == 1 and in_channels > 1:
        img = np.repeat(img, in_channels, axis=0)
    if img.shape[0] != in_channels:
        raise FormatError(f"image has {img.shape[0]} channels, model wants {in_channels}")
    if img.shape[1:] != (resolution, resolution):
        img = resize_nearest(img, resolution, resolution)
    return (img.astype(np.int16) - 128).astype(np.int8)


def load_model_input(path: str, resolution: int, in_channels: int = 3) -> np.ndarray:
    return to_model_input(read_netpbm(path), resolution, in_channels)


def write_pgm(path: str, img: np.ndarray) -> None:
    """Write a single-channel uint8 (H,W) array as binary PGM (test helper)."""
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def write_ppm(path: str, img: np.ndarray) -> None:
    """Write a (3,H,W) uint8 array as binary PPM."""
    _, h, w = img.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img.transpose(1, 2, 0), dtype=np.uint8).tobytes())
