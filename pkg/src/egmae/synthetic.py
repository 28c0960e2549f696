"""Seeded procedural image sets for desk-scale experiments.

Everything here is deterministic in (seed, counts, size): the files on
disk, the manifest contents, and therefore any training run driven by
them. Images are written as 8-bit PGM next to a manifest CSV.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .data import encode_pnm
from .errors import ParameterError
from .rng import substream

TEXTURE_FAMILIES = ("noise", "stripes", "checkerboard")


def noise_image(rng, size: int) -> np.ndarray:
    """Uniform white noise, the highest-entropy texture."""
    return rng.random((size, size, 1))


def _shades(rng):
    # disjoint ranges keep the two levels visibly apart in every image
    return rng.uniform(0.05, 0.40), rng.uniform(0.60, 0.95)


def stripe_image(rng, size: int, period: int = 4) -> np.ndarray:
    """Parallel bands with random phase, orientation, and shades.

    The default period of 4 pixels matches the encoder stem cell, which
    keeps the pattern inside what the lightweight decoder can repaint;
    longer periods make reconstruction structurally impossible at 32 px.
    """
    phase = int(rng.integers(0, period))
    horizontal = bool(rng.integers(0, 2))
    lo, hi = _shades(rng)
    bands = ((np.arange(size) + phase) // (period // 2)) % 2
    plane = np.where(bands == 0, lo, hi)
    if horizontal:
        img = np.repeat(plane[:, None], size, axis=1)
    else:
        img = np.repeat(plane[None, :], size, axis=0)
    return img[..., None]


def checkerboard_image(rng, size: int, cell: int = 2) -> np.ndarray:
    """Alternating square cells with random offset and shades.

    Cell size 2 keeps the board 4-periodic for the same reason stripes
    default to period 4.
    """
    dx, dy = rng.integers(0, cell, size=2)
    lo, hi = _shades(rng)
    ys = (np.arange(size) + int(dy)) // cell
    xs = (np.arange(size) + int(dx)) // cell
    board = (ys[:, None] + xs[None, :]) % 2
    return np.where(board == 0, lo, hi)[..., None]


_MAKERS = {
    "noise": noise_image,
    "stripes": stripe_image,
    "checkerboard": checkerboard_image,
}


def _write(root: Path, rel: str, pixels: np.ndarray) -> None:
    path = root / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    encode_pnm(path, pixels)


def _write_manifest(root: Path, rows) -> Path:
    path = root / "manifest.csv"
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["path", "label", "split"])
        writer.writerows(rows)
    return path


def write_texture_corpus(root, count: int = 200, size: int = 32, seed: int = 0) -> Path:
    """Unlabeled-style pre-training corpus cycling through the texture
    families; returns the manifest path. All images land in the train split
    (labels are present but reconstruction training ignores them)."""
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    root = Path(root)
    rows = []
    for i in range(count):
        family = TEXTURE_FAMILIES[i % len(TEXTURE_FAMILIES)]
        rng = substream(seed, "texture", i)
        rel = f"images/{family}_{i:04d}.pgm"
        _write(root, rel, _MAKERS[family](rng, size))
        rows.append([rel, family, "train"])
    return _write_manifest(root, rows)


def write_two_class_set(
    root,
    train_count: int = 200,
    test_count: int = 100,
    size: int = 32,
    seed: int = 0,
    noise_amplitude: float = 0.15,
) -> Path:
    """Stripes-vs-checkerboard classification set with per-image noise.

    Each image is a clean texture plus seeded uniform noise, clipped back
    to [0, 1]. Classes alternate within each split so both are balanced.
    Returns the manifest path.
    """
    if train_count < 2 or test_count < 2:
        raise ParameterError("need at least 2 train and 2 test images")
    root = Path(root)
    rows = []
    for split, count in (("train", train_count), ("test", test_count)):
        for i in range(count):
            label = ("stripes", "checkerboard")[i % 2]
            rng = substream(seed, split, i)
            clean = _MAKERS[label](rng, size)
            noise = noise_amplitude * (rng.random(clean.shape) - 0.5)
            pixels = np.clip(clean + noise, 0.0, 1.0)
            rel = f"images/{split}_{i:04d}.pgm"
            _write(root, rel, pixels)
            rows.append([rel, label, split])
    return _write_manifest(root, rows)
