"""Multi-region histogram signatures and the raw L1 signature distance."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .dct import BLOCK, feature_matrix
from .dictionary import VisualDictionary, posterior_histograms
from .errors import ConfigError, FormatError, InvariantError
from .image import GrayImage, resize_bilinear

SIG_MAGIC = b"MRHSIG01"
_SIG_HEADER = struct.Struct("<8sIIQ")
SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class SignatureConfig:
    if_size: int = 64
    region_rows: int = 3
    region_cols: int = 3
    step: int = 4
    dict_id: str = ""

    def __post_init__(self):
        if self.if_size < BLOCK:
            raise ConfigError(f"if_size must be >= {BLOCK}, got {self.if_size}")
        if self.region_rows < 1 or self.region_cols < 1:
            raise ConfigError("region grid must be at least 1x1")
        if self.step < 1:
            raise ConfigError(f"step must be >= 1, got {self.step}")
        counts = region_block_counts(self)
        if counts.min() == 0:
            empty = [int(r) for r in np.flatnonzero(counts == 0)]
            raise ConfigError(
                f"regions {empty} receive no block centers with if_size={self.if_size}, "
                f"grid {self.region_rows}x{self.region_cols}, step={self.step}"
            )

    @property
    def R(self) -> int:
        return self.region_rows * self.region_cols

    def bind(self, d: VisualDictionary) -> SignatureConfig:
        """Copy of this config tied to a specific dictionary."""
        return SignatureConfig(self.if_size, self.region_rows, self.region_cols, self.step, d.digest())

    @property
    def config_id(self) -> int:
        key = f"{self.if_size}|{self.region_rows}x{self.region_cols}|{self.step}|{self.dict_id}"
        return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")


def _region_index(cx, cy, cfg: SignatureConfig):
    row = (np.asarray(cy) * cfg.region_rows) // cfg.if_size
    col = (np.asarray(cx) * cfg.region_cols) // cfg.if_size
    return row * cfg.region_cols + col


def assign_region(center, cfg: SignatureConfig) -> int:
    """Row-major region index for a block center ``(x, y)``."""
    cx, cy = center
    if not (0 <= cx < cfg.if_size and 0 <= cy < cfg.if_size):
        raise ConfigError(f"block center {center} outside {cfg.if_size}x{cfg.if_size} image")
    return int(_region_index(cx, cy, cfg))


def region_block_counts(cfg: SignatureConfig) -> np.ndarray:
    xs = np.arange(0, cfg.if_size - BLOCK + 1, cfg.step) + BLOCK // 2
    cy, cx = np.meshgrid(xs, xs, indexing="ij")
    regions = _region_index(cx.ravel(), cy.ravel(), cfg)
    return np.bincount(regions, minlength=cfg.R)


@dataclass(frozen=True, eq=False)
class FaceSignature:
    """R region-averaged posterior histograms, shape (R, G)."""

    regions: np.ndarray
    config_id: int

    def __post_init__(self):
        h = np.array(self.regions, dtype=np.float64)
        if h.ndim != 2 or h.shape[0] < 1 or h.shape[1] < 1:
            raise InvariantError(f"signature must be an (R, G) array, got shape {h.shape}")
        if not np.all(np.isfinite(h)) or h.min() < 0:
            raise InvariantError("signature histograms must be finite and non-negative")
        sums = h.sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > SIMPLEX_TOL:
            raise InvariantError(f"signature histograms must sum to 1 (got sums in [{sums.min()}, {sums.max()}])")
        h.setflags(write=False)
        object.__setattr__(self, "regions", h)

    @property
    def R(self) -> int:
        return self.regions.shape[0]

    @property
    def G(self) -> int:
        return self.regions.shape[1]

    def __eq__(self, other):
        if not isinstance(other, FaceSignature):
            return NotImplemented
        return self.config_id == other.config_id and np.array_equal(self.regions, other.regions)

    def __hash__(self):
        return hash((self.config_id, self.regions.tobytes()))


def build_signature(img: GrayImage, d: VisualDictionary, cfg: SignatureConfig) -> FaceSignature:
    if not cfg.dict_id:
        cfg = cfg.bind(d)
    elif cfg.dict_id != d.digest():
        raise ConfigError("signature config is bound to a different dictionary")
    resized = resize_bilinear(img, cfg.if_size, cfg.if_size)
    xs, ys, feats = feature_matrix(resized, cfg.step)
    if feats.shape[1] != d.dim:
        raise ConfigError(f"feature dimension {feats.shape[1]} != dictionary dimension {d.dim}")
    post = posterior_histograms(d, feats)
    regions = _region_index(xs + BLOCK // 2, ys + BLOCK // 2, cfg)
    counts = np.bincount(regions, minlength=cfg.R)
    if counts.min() == 0:
        raise ConfigError("a region received no blocks")
    sums = np.zeros((cfg.R, d.G))
    np.add.at(sums, regions, post)
    return FaceSignature(sums / counts[:, None], cfg.config_id)


def _check_compatible(x: FaceSignature, y: FaceSignature):
    if x.config_id != y.config_id or x.regions.shape != y.regions.shape:
        raise ConfigError(
            f"signatures come from different configurations ({x.config_id:#x} {x.regions.shape} "
            f"vs {y.config_id:#x} {y.regions.shape})"
        )


def d_raw(x: FaceSignature, y: FaceSignature) -> float:
    """Mean over regions of the L1 distance between region histograms."""
    _check_compatible(x, y)
    return float(np.mean(np.sum(np.abs(x.regions - y.regions), axis=1)))


def d_raw_many(q: FaceSignature, others) -> np.ndarray:
    """``d_raw(q, s)`` for every signature in ``others``."""
    for s in others:
        _check_compatible(q, s)
    if not others:
        return np.zeros(0)
    stack = np.stack([s.regions for s in others])
    return np.mean(np.sum(np.abs(stack - q.regions), axis=2), axis=1)


def save_signature(sig: FaceSignature) -> bytes:
    head = _SIG_HEADER.pack(SIG_MAGIC, sig.R, sig.G, sig.config_id)
    return head + np.ascontiguousarray(sig.regions, dtype="<f8").tobytes()


def load_signature(data: bytes) -> FaceSignature:
    if len(data) < _SIG_HEADER.size:
        raise FormatError("truncated signature header")
    magic, R, G, config_id = _SIG_HEADER.unpack_from(data)
    if magic != SIG_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {SIG_MAGIC!r}")
    if R < 1 or G < 1:
        raise FormatError(f"dimension mismatch: R={R}, G={G}")
    expected = _SIG_HEADER.size + 8 * R * G
    if len(data) < expected:
        raise FormatError(f"truncated signature: header declares {R}x{G}, expected {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise FormatError(f"trailing bytes in signature file ({len(data) - expected})")
    h = np.frombuffer(data, dtype="<f8", offset=_SIG_HEADER.size).astype(np.float64).reshape(R, G)
    return FaceSignature(h, config_id)


def read_signature(path) -> FaceSignature:
    with open(path, "rb") as fh:
        return load_signature(fh.read())
