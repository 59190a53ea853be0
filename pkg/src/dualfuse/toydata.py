"""Synthetic desk-scale dataset: disjoint bright shapes per modality.

Each pair shares a dark textured background; modality a carries one bright
shape, modality b a different bright shape at a disjoint position. The
pixelwise max therefore contains both shapes, which neither input has alone:
exactly the structure the fusion objective rewards.
"""

from __future__ import annotations

import os

import numpy as np

from .data import ImagePair, write_pgm
from .metrics import quantize_u8


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    # smooth: all edge structure comes from the shapes, none is shared
    level = float(rng.uniform(0.06, 0.10))
    ramp = np.linspace(0.0, 0.08, size)[None, :]
    return np.full((size, size), level) + ramp


def _add_rect(img, top, left, height, width, value):
    img[top:top + height, left:left + width] = value


def _add_ellipse(img, cy, cx, ry, rx, value):
    yy, xx = np.mgrid[0:img.shape[0], 0:img.shape[1]]
    mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    img[mask] = value


def make_toy_pairs(n_pairs: int = 8, size: int = 32,
                   seed: int = 7) -> list[ImagePair]:
    if size < 16:
        raise ValueError("toy pairs need size >= 16")
    rng = np.random.default_rng(seed)
    eighth = size // 8
    pairs = []
    for i in range(n_pairs):
        bg = _background(rng, size)
        img_a = bg.copy()
        img_b = bg.copy()
        # a large rectangle fills much of the left half of modality a, a
        # tall ellipse much of the right half of modality b; the halves never
        # touch, so max(a, b) carries structure neither input has alone
        top = int(rng.integers(2, size // 4))
        left = int(rng.integers(1, eighth + 1))
        height = min(size // 2 + int(rng.integers(0, size // 4)),
                     size - 2 - top)
        width = size // 2 - 2 - left
        _add_rect(img_a, top, left, height, width,
                  float(rng.uniform(0.75, 0.95)))
        ry = size // 3
        cy = int(rng.integers(ry + 1, size - ry))
        cx = int(rng.integers(3 * size // 4 - eighth // 2,
                              3 * size // 4 + eighth // 2 + 1))
        rx = max(min(size // 4 - 1, cx - size // 2 - 1, size - 2 - cx), 2)
        _add_ellipse(img_b, cy, cx, ry, rx,
                     float(rng.uniform(0.75, 0.95)))
        pairs.append(ImagePair("toy%02d" % i, np.clip(img_a, 0, 1),
                               np.clip(img_b, 0, 1)))
    return pairs


def write_toy_dataset(directory: str, n_pairs: int = 8, size: int = 32,
                      seed: int = 7) -> list[str]:
    os.makedirs(directory, exist_ok=True)
    written = []
    for pair in make_toy_pairs(n_pairs, size, seed):
        for side, img in (("a", pair.a), ("b", pair.b)):
            path = os.path.join(directory, "%s_%s.pgm" % (pair.pair_id, side))
            write_pgm(path, quantize_u8(img))
            written.append(path)
    return written
