"""Seed-pinned synthetic shape corpus with exact one-pixel boundaries.

Images are flat-colored geometric shapes on contrasting backgrounds; the
label marks the inner boundary of each shape. Used by the overfit tests and
as a ready-made dataset for exercising the CLI end to end.
"""

from __future__ import annotations

import os

import numpy as np

from . import netpbm
from .pipeline import DatasetSample

_PALETTE = np.array(
    [
        [0.95, 0.25, 0.20],
        [0.20, 0.60, 0.95],
        [0.25, 0.85, 0.35],
        [0.95, 0.80, 0.20],
        [0.70, 0.30, 0.85],
        [0.20, 0.85, 0.80],
        [0.90, 0.45, 0.10],
        [0.35, 0.35, 0.95],
    ]
)


def _inner_boundary(mask):
    er = mask.copy()
    er[1:, :] &= mask[:-1, :]
    er[:-1, :] &= mask[1:, :]
    er[:, 1:] &= mask[:, :-1]
    er[:, :-1] &= mask[:, 1:]
    return mask & ~er


def _shape_mask(kind, size, rng):
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    if kind == "rect":
        h = int(rng.integers(size // 4, size // 2))
        w = int(rng.integers(size // 4, size // 2))
        top = int(rng.integers(4, size - h - 4))
        left = int(rng.integers(4, size - w - 4))
        return (ii >= top) & (ii < top + h) & (jj >= left) & (jj < left + w)
    if kind == "disk":
        r = int(rng.integers(size // 6, size // 3))
        cy = int(rng.integers(r + 4, size - r - 4))
        cx = int(rng.integers(r + 4, size - r - 4))
        return (ii - cy) ** 2 + (jj - cx) ** 2 <= r * r
    if kind == "tri":
        base = int(rng.integers(size // 3, size // 2 + 8))
        top = int(rng.integers(4, size - base - 4))
        left = int(rng.integers(4, size - base - 4))
        return (ii >= top) & (ii < top + base) & (jj >= left) & (jj - left <= ii - top)
    raise ValueError(kind)


def make_shape_corpus(count=10, size=64, seed=7):
    """Deterministic corpus of ``count`` images with exact edge labels."""
    rng = np.random.default_rng(seed)
    kinds = ["rect", "disk", "tri"]
    samples = []
    for i in range(count):
        bg = _PALETTE[rng.integers(len(_PALETTE))] * 0.35
        img = np.tile(bg.reshape(3, 1, 1), (1, size, size)).astype(np.float64)
        label = np.zeros((size, size), bool)
        occupied = np.zeros((size, size), bool)
        for s in range(int(rng.integers(1, 3))):
            mask = _shape_mask(kinds[int(rng.integers(len(kinds)))], size, rng)
            mask &= ~occupied
            if mask.sum() < 30:
                continue
            color = _PALETTE[rng.integers(len(_PALETTE))]
            img[:, mask] = color.reshape(3, 1)
            label |= _inner_boundary(mask)
            occupied |= mask
        if not label.any():
            mask = _shape_mask("rect", size, rng)
            img[:, mask] = _PALETTE[i % len(_PALETTE)].reshape(3, 1)
            label = _inner_boundary(mask)
        samples.append(
            DatasetSample(
                image=img.astype(np.float32),
                labels=[label.astype(np.float64)],
                valid=np.ones((size, size), bool),
                id=f"shape{i:02d}",
            )
        )
    return samples


def write_corpus(samples, root):
    """Materialize samples in the on-disk dataset layout plus a list file."""
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "labels"), exist_ok=True)
    ids = []
    for s in samples:
        netpbm.write_ppm(os.path.join(root, "images", s.id + ".ppm"), s.image.transpose(1, 2, 0))
        netpbm.write_pgm(os.path.join(root, "labels", s.id + ".pgm"), s.labels[0])
        ids.append(s.id)
    list_path = os.path.join(root, "list.txt")
    with open(list_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(ids) + "\n")
    return list_path
