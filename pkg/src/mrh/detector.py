"""Resolution detector: is a face closer to sharp or to deliberately blurred references?"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dictionary import VisualDictionary
from .errors import ConfigError, FormatError
from .image import GrayImage, degrade, resize_bilinear
from .matcher import Label
from .signature import FaceSignature, SignatureConfig, build_signature, d_raw_many, read_signature

CANONICAL = 64
REFERENCE_LOW_RES = 16


@dataclass(frozen=True)
class ReferenceSets:
    set_a: tuple
    set_b: tuple
    cfg: SignatureConfig

    def __post_init__(self):
        a, b = tuple(self.set_a), tuple(self.set_b)
        if not a or not b:
            raise ConfigError("both reference sets must be non-empty")
        ids = {s.config_id for s in a + b}
        if len(ids) != 1:
            raise ConfigError("reference signatures mix configurations")
        if self.cfg.dict_id and self.cfg.config_id not in ids:
            raise ConfigError("reference signatures do not match the detector configuration")
        object.__setattr__(self, "set_a", a)
        object.__setattr__(self, "set_b", b)


@dataclass(frozen=True)
class Detection:
    label: Label
    d_avg_a: float
    d_avg_b: float


def build_reference_sets(
    high_res_images, d: VisualDictionary, cfg: SignatureConfig,
    canonical: int = CANONICAL, low_res: int = REFERENCE_LOW_RES,
) -> ReferenceSets:
    images = list(high_res_images)
    if not images:
        raise ConfigError("no images supplied for the reference sets")
    cfg = cfg if cfg.dict_id else cfg.bind(d)
    set_a, set_b = [], []
    for img in images:
        sharp = resize_bilinear(img, canonical, canonical)
        set_a.append(build_signature(sharp, d, cfg))
        set_b.append(build_signature(degrade(sharp, low_res, canonical), d, cfg))
    return ReferenceSets(tuple(set_a), tuple(set_b), cfg)


def d_avg(q: FaceSignature, s) -> float:
    s = list(s)
    if not s:
        raise ConfigError("average distance to an empty set is undefined")
    return float(np.mean(d_raw_many(q, s)))


def detect(refs: ReferenceSets, img: GrayImage, d: VisualDictionary, canonical: int = CANONICAL) -> Detection:
    q = build_signature(resize_bilinear(img, canonical, canonical), d, refs.cfg)
    da = d_avg(q, refs.set_a)
    db = d_avg(q, refs.set_b)
    return Detection("A" if da <= db else "B", da, db)


def classify(refs: ReferenceSets, img: GrayImage, d: VisualDictionary) -> Label:
    return detect(refs, img, d).label


@dataclass(frozen=True)
class ResolutionDetector:
    refs: ReferenceSets
    dictionary: VisualDictionary

    def detect(self, img: GrayImage) -> Detection:
        return detect(self.refs, img, self.dictionary)

    def classify(self, img: GrayImage) -> Label:
        return self.detect(img).label


def parse_reference_manifest(text: str, base: Path | None = None):
    """Parse ``[A]`` / ``[B]`` sections of signature paths into two path lists."""
    sections = {"A": [], "B": []}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in sections:
                raise FormatError(f"line {lineno}: unknown section {line!r}")
            current = name
            continue
        if current is None:
            raise FormatError(f"line {lineno}: path {line!r} appears before any [A]/[B] section")
        p = Path(line)
        sections[current].append(p if p.is_absolute() or base is None else base / p)
    for name, paths in sections.items():
        if not paths:
            raise FormatError(f"reference manifest has an empty or missing [{name}] section")
    return sections["A"], sections["B"]


def format_reference_manifest(paths_a, paths_b) -> str:
    lines = ["[A]", *map(str, paths_a), "[B]", *map(str, paths_b)]
    return "\n".join(lines) + "\n"


def load_reference_sets(manifest_path, cfg: SignatureConfig) -> ReferenceSets:
    manifest_path = Path(manifest_path)
    paths_a, paths_b = parse_reference_manifest(manifest_path.read_text(), manifest_path.parent)
    return ReferenceSets(
        tuple(read_signature(p) for p in paths_a), tuple(read_signature(p) for p in paths_b), cfg
    )
