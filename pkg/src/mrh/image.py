"""Grayscale images, PGM I/O and bilinear resampling."""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, InvariantError

DEFAULT_RESOLUTIONS = (64, 32, 16, 8)


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable grayscale image with intensities in [0, 1].

    ``pixels`` is a (height, width) float64 array, stored read-only.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64, copy=True)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise InvariantError(f"image must be a non-empty 2D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise InvariantError("image intensities must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def affine(self, a: float, c: float) -> GrayImage:
        """Return ``a * img + c``; raises if the result leaves [0, 1]."""
        return GrayImage(a * self.pixels + c)


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _header_tokens(data: bytes, count: int):
    pos = 0
    tokens = []
    for _ in range(count):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise FormatError("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens, pos


def load_pgm(data: bytes) -> GrayImage:
    """Decode a binary (P5) PGM with maxval 255."""
    if data[:2] != b"P5":
        raise FormatError(f"unsupported format: magic {data[:2]!r}, expected b'P5'")
    tokens, pos = _header_tokens(data[2:], 3)
    pos += 2
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError(f"malformed PGM header: {tokens!r}") from None
    if width <= 0 or height <= 0:
        raise FormatError(f"zero dimension in PGM header: {width}x{height}")
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}, expected 255")
    # exactly one whitespace byte separates header from payload
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("truncated PGM: missing payload")
    pos += 1
    n = width * height
    payload = data[pos:pos + n]
    if len(payload) < n:
        raise FormatError(f"truncated PGM payload: expected {n} bytes, got {len(payload)}")
    px = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return GrayImage(px.astype(np.float64) / 255.0)


def save_pgm(img: GrayImage) -> bytes:
    """Encode as P5 PGM, quantizing with round-half-up."""
    q = np.floor(img.pixels * 255.0 + 0.5).clip(0, 255).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + q.tobytes()


def read_pgm(path) -> GrayImage:
    with open(path, "rb") as fh:
        return load_pgm(fh.read())


def _axis_weights(n_in: int, n_out: int):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    return i0, i1, t


def resize_bilinear(img: GrayImage, out_w: int, out_h: int) -> GrayImage:
    """Bilinear resize with half-pixel-center alignment and edge clamping.

    No antialiasing prefilter is applied when downscaling.
    """
    if out_w < 1 or out_h < 1:
        raise ConfigError(f"output dimensions must be >= 1, got {out_w}x{out_h}")
    if (out_w, out_h) == (img.width, img.height):
        return img
    px = img.pixels
    y0, y1, ty = _axis_weights(img.height, out_h)
    x0, x1, tx = _axis_weights(img.width, out_w)
    rows = px[y0] * (1.0 - ty)[:, None] + px[y1] * ty[:, None]
    out = rows[:, x0] * (1.0 - tx)[None, :] + rows[:, x1] * tx[None, :]
    return GrayImage(np.clip(out, 0.0, 1.0))


def degrade(img: GrayImage, r: int, canonical: int = 64) -> GrayImage:
    """Reduce the underlying resolution to ``r`` while returning a canonical-size image."""
    if r < 1:
        raise ConfigError(f"underlying resolution must be >= 1, got {r}")
    if r > canonical:
        raise ConfigError(f"underlying resolution {r} exceeds canonical size {canonical}")
    small = resize_bilinear(img, r, r)
    return resize_bilinear(small, canonical, canonical)
