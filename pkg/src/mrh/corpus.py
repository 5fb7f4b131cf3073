"""Synthetic face-like corpus for desk-scale experiments.

Each identity is a fixed set of facial-layout parameters plus a fixed skin
texture; each image of an identity re-renders it under a small random pose,
lighting and expression change with fresh sensor noise. The result has
stable identity information at both coarse and fine scales, which is what
the resolution experiments need.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .image import GrayImage, save_pgm

SUPERSAMPLE = 2
FINE_LO, FINE_HI = 2.0, 5.0
NOISE = 0.003
POSE_SHIFT, POSE_ROT = 0.5, 2.0
LIGHT = 0.15
OPTICS = 0.0
GEOM = 0.7
TEX = 1.5
BG_INSTANCE = True
COARSE = 2.0
COARSE_SIGMA = 12.0
TEXTURE_GRID = 160


@dataclass(frozen=True)
class Identity:
    name: str
    params: dict
    texture_fine: np.ndarray
    texture_coarse: np.ndarray


def _smooth_field(rng, sigma, n=TEXTURE_GRID):
    f = ndimage.gaussian_filter(rng.standard_normal((n, n)), sigma, mode="wrap")
    return f / (f.std() + 1e-12)


def _band_field(rng, lo, hi, stretch, angle, n=TEXTURE_GRID):
    """Oriented band-pass noise; sigmas in texture-grid units (half image pixels)."""
    w = rng.standard_normal((n, n))
    f = ndimage.gaussian_filter(w, (lo * stretch, lo), mode="wrap") - ndimage.gaussian_filter(w, (hi * stretch, hi), mode="wrap")
    f = ndimage.rotate(f, angle, reshape=False, mode="wrap", order=1)
    return f / (f.std() + 1e-12)


def make_identity(seed: int, index: int) -> Identity:
    rng = np.random.default_rng([seed, index, 0])

    def u(lo, hi):
        mid, half = (lo + hi) / 2, (hi - lo) / 2
        return rng.uniform(mid - GEOM * half, mid + GEOM * half)

    p = {
        "cx": u(-2, 2), "cy": u(-1.5, 1.5), "rx": u(20, 26), "ry": u(26, 31),
        "skin": u(0.45, 0.7), "bg": u(0.1, 0.9), "hair": u(0.05, 0.35), "hairline": u(-30, -20),
        "eye_dx": u(8.5, 13), "eye_y": u(-8, -3), "eye_rx": u(3.5, 5.5), "eye_ry": u(1.6, 3.0),
        "eye_dark": u(0.15, 0.35), "iris": u(1.0, 1.8),
        "brow_dy": u(4, 7), "brow_th": u(0.8, 2.0), "brow_tilt": u(-0.15, 0.15), "brow_dark": u(0.1, 0.35),
        "nose_len": u(8, 14), "nose_w": u(2.5, 5.0), "nose_shade": u(0.05, 0.15),
        "mouth_y": u(12, 17), "mouth_w": u(6, 11), "mouth_th": u(1.2, 2.8), "mouth_dark": u(0.1, 0.3),
        "cheek": u(-0.08, 0.08), "tex_fine": u(0.06, 0.12), "tex_coarse": u(0.04, 0.1),
    }
    fine = _band_field(rng, FINE_LO, FINE_HI, u(1.0, 2.5), u(0, 180))
    fine = fine * np.exp(0.6 * _smooth_field(rng, 14.0))
    return Identity(f"id{index:03d}", p, fine, _smooth_field(rng, COARSE_SIGMA))


def _soft(d, width=0.6):
    # d > 0 inside; smooth edge over ~width pixels
    return 1.0 / (1.0 + np.exp(-d / width))


def _ellipse(x, y, cx, cy, rx, ry):
    r = np.sqrt(((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2)
    return (1.0 - r) * min(rx, ry)


def render(identity: Identity, instance_seed, size: int = 64) -> GrayImage:
    """Render one image of ``identity`` under a random nuisance draw."""
    rng = np.random.default_rng(instance_seed)
    p = identity.params
    n = size * SUPERSAMPLE
    scale = size / 64.0
    grid = (np.arange(n) + 0.5) / SUPERSAMPLE - size / 2.0
    gy, gx = np.meshgrid(grid, grid, indexing="ij")

    ang = np.deg2rad(rng.uniform(-POSE_ROT, POSE_ROT))
    zoom = rng.uniform(0.96, 1.04) * scale
    tx, ty = rng.uniform(-POSE_SHIFT, POSE_SHIFT, size=2) * scale
    ca, sa = np.cos(ang), np.sin(ang)
    x = (ca * (gx - tx) + sa * (gy - ty)) / zoom
    y = (-sa * (gx - tx) + ca * (gy - ty)) / zoom

    fx, fy = x - p["cx"], y - p["cy"]
    face = _soft(_ellipse(fx, fy, 0, 0, p["rx"], p["ry"]), 0.8)
    bg = rng.uniform(0.1, 0.9) if BG_INSTANCE else p["bg"]
    img = bg * (1 - face) + p["skin"] * face

    # shading across the face, then identity texture
    img += face * p["cheek"] * np.cos(np.pi * fx / p["rx"])
    tc = ndimage.map_coordinates(identity.texture_coarse, [fy * 2 + 80, fx * 2 + 80], order=1, mode="wrap")
    tf = ndimage.map_coordinates(identity.texture_fine, [fy * 2 + 80, fx * 2 + 80], order=1, mode="wrap")
    img += face * (COARSE * p["tex_coarse"] * tc + TEX * p["tex_fine"] * tf)

    hair = _soft(p["hairline"] - fy + 3 * np.cos(fx / 8), 1.0) * _soft(_ellipse(fx, fy, 0, -4, p["rx"] + 3, p["ry"] + 5), 1.0)
    img = img * (1 - hair) + p["hair"] * hair

    openness = rng.uniform(0.8, 1.15)
    for side in (-1, 1):
        ex = side * p["eye_dx"]
        eye = _soft(_ellipse(fx, fy, ex, p["eye_y"], p["eye_rx"], p["eye_ry"] * openness), 0.5)
        img = img * (1 - eye) + (p["skin"] * 0.9 + 0.25) * eye
        iris = _soft(_ellipse(fx, fy, ex + rng.uniform(-0.4, 0.4), p["eye_y"], p["iris"], p["iris"]), 0.4) * eye
        img = img * (1 - iris) + p["eye_dark"] * iris
        by = p["eye_y"] - p["brow_dy"] + side * p["brow_tilt"] * (fx - ex)
        brow = _soft(p["brow_th"] - np.abs(fy - by), 0.5) * _soft(p["eye_rx"] + 1.5 - np.abs(fx - ex), 0.5)
        img = img * (1 - brow) + p["brow_dark"] * brow

    nose_mask = _soft(p["nose_len"] / 2 - np.abs(fy - p["nose_len"] / 2 + 1), 0.8)
    img -= p["nose_shade"] * nose_mask * np.exp(-((fx - 0.8) ** 2) / (2 * (p["nose_w"] / 2) ** 2)) * np.sign(fx + 0.01)
    nostril = _soft(_ellipse(np.abs(fx), fy, p["nose_w"] * 0.6, p["nose_len"] + 0.5, 1.3, 0.9), 0.4)
    img -= 0.15 * nostril

    mw = p["mouth_w"] * rng.uniform(0.9, 1.1)
    smile = rng.uniform(-0.04, 0.06)
    my = p["mouth_y"] - smile * fx ** 2 / 2
    mouth = _soft(p["mouth_th"] / 2 - np.abs(fy - my), 0.5) * _soft(mw - np.abs(fx), 0.7)
    img = img * (1 - mouth) + p["mouth_dark"] * mouth

    gain = rng.uniform(0.85, 1.15)
    grad = rng.uniform(-LIGHT, LIGHT)
    shade = LIGHT * ndimage.gaussian_filter(rng.standard_normal((n, n)), 12 * SUPERSAMPLE, mode="reflect")
    shade /= shade.std() + 1e-12
    img = img * gain * (1 + grad * gx / size + LIGHT * shade) + rng.uniform(-0.05, 0.05)
    if OPTICS > 0:
        img = ndimage.gaussian_filter(img, OPTICS * SUPERSAMPLE * scale, mode="nearest")
    img = img.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE).mean(axis=(1, 3))
    img += rng.normal(0.0, NOISE, size=img.shape)
    return GrayImage(np.clip(img, 0.0, 1.0))


def generate_corpus(root, n_identities: int = 48, images_per_identity: int = 6, seed: int = 0, size: int = 64):
    """Write ``<root>/<name>/<name>_<i>.pgm`` files; returns ``{name: [relative paths]}``."""
    root = Path(root)
    layout = {}
    for k in range(n_identities):
        ident = make_identity(seed, k)
        d = root / ident.name
        d.mkdir(parents=True, exist_ok=True)
        paths = []
        for i in range(images_per_identity):
            rel = f"{ident.name}/{ident.name}_{i + 1:04d}.pgm"
            (root / rel).write_bytes(save_pgm(render(ident, [seed, k, 1, i], size)))
            paths.append(rel)
        layout[ident.name] = paths
    return layout


def make_pairs(layout: dict, folds: int, pairs_per_fold: int, seed: int = 0):
    """Person-disjoint folds, half same-person and half different-person pairs.

    Returns ``(fold, path_1, path_2, label)`` tuples.
    """
    rng = np.random.default_rng([seed, 7])
    names = sorted(layout)
    order = rng.permutation(len(names))
    groups = [[names[j] for j in order[f::folds]] for f in range(folds)]
    records = []
    for f, group in enumerate(groups):
        same_pool = [
            (a, b) for name in group for i, a in enumerate(layout[name]) for b in layout[name][i + 1:]
        ]
        n_same = pairs_per_fold // 2
        n_diff = pairs_per_fold - n_same
        if len(same_pool) < n_same:
            raise ValueError(f"fold {f}: only {len(same_pool)} same-person pairs available, need {n_same}")
        pick = rng.choice(len(same_pool), size=n_same, replace=False)
        records += [(f, *same_pool[i], "same") for i in sorted(pick)]
        seen = set()
        while len(seen) < n_diff:
            a, b = rng.choice(len(group), size=2, replace=False)
            pa = layout[group[a]][rng.integers(len(layout[group[a]]))]
            pb = layout[group[b]][rng.integers(len(layout[group[b]]))]
            seen.add((pa, pb))
        records += [(f, pa, pb, "different") for pa, pb in sorted(seen)]
    return records


def format_pairs(records) -> str:
    return "".join(f"{f},{a},{b},{lab}\n" for f, a, b, lab in records)
