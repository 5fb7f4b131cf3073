"""Block DCT features: 8x8 blocks, contrast normalization, 15 low-frequency coefficients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .image import GrayImage

BLOCK = 8
N_COEFFS = 15
VARIANCE_FLOOR = 1e-8

# (row, col) positions of the kept coefficients: top-left 4x4 minus DC, row-major
COEFF_INDEX = tuple((u, v) for u in range(4) for v in range(4) if (u, v) != (0, 0))
_COEFF_ROWS = np.array([u for u, _ in COEFF_INDEX])
_COEFF_COLS = np.array([v for _, v in COEFF_INDEX])


def _dct_matrix(n: int = BLOCK) -> np.ndarray:
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * x + 1) * k / (2 * n))
    m[0] *= np.sqrt(1.0 / n)
    m[1:] *= np.sqrt(2.0 / n)
    return m


DCT_MATRIX = _dct_matrix()
DCT_MATRIX.setflags(write=False)


@dataclass(frozen=True)
class PositionedFeature:
    x: int
    y: int
    feature: np.ndarray

    @property
    def center(self):
        return (self.x + BLOCK // 2, self.y + BLOCK // 2)


def normalize_block(b, variance_floor: float = VARIANCE_FLOOR) -> np.ndarray:
    """Zero-mean, unit-variance block (population variance, floored)."""
    b = np.asarray(b, dtype=np.float64)
    centered = b - b.mean(axis=(-2, -1), keepdims=True)
    var = np.mean(centered * centered, axis=(-2, -1), keepdims=True)
    return centered / np.sqrt(np.maximum(var, variance_floor))


def dct2(b) -> np.ndarray:
    """Orthonormal type-II 2D DCT; works on a single block or a stack of blocks."""
    b = np.asarray(b, dtype=np.float64)
    return DCT_MATRIX @ b @ DCT_MATRIX.T


def idct2(c) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    return DCT_MATRIX.T @ c @ DCT_MATRIX


def select_coeffs(c) -> np.ndarray:
    """Pick the 15 kept coefficients (last two axes are the coefficient matrix)."""
    c = np.asarray(c)
    return c[..., _COEFF_ROWS, _COEFF_COLS]


def block_positions(width: int, height: int, step: int):
    """Top-left corners of all blocks, row-major (y outer, x inner)."""
    if width < BLOCK or height < BLOCK:
        raise ConfigError(f"image {width}x{height} is smaller than one {BLOCK}x{BLOCK} block")
    if step < 1:
        raise ConfigError(f"block step must be >= 1, got {step}")
    xs = np.arange(0, width - BLOCK + 1, step)
    ys = np.arange(0, height - BLOCK + 1, step)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return xx.ravel(), yy.ravel()


def feature_matrix(img: GrayImage, step: int = 4, variance_floor: float = VARIANCE_FLOOR):
    """Vectorized extraction.

    Returns ``(xs, ys, features)`` where ``features`` has shape (n_blocks, 15).
    """
    xs, ys = block_positions(img.width, img.height, step)
    windows = np.lib.stride_tricks.sliding_window_view(img.pixels, (BLOCK, BLOCK))
    blocks = windows[ys, xs]
    coeffs = dct2(normalize_block(blocks, variance_floor))
    return xs, ys, select_coeffs(coeffs)


def extract_features(img: GrayImage, step: int = 4, variance_floor: float = VARIANCE_FLOOR):
    xs, ys, feats = feature_matrix(img, step, variance_floor)
    return [PositionedFeature(int(x), int(y), f) for x, y, f in zip(xs, ys, feats)]
