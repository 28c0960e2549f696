"""Patch grids, per-patch Shannon entropy, and entropy-scaled corruption.

Instead of hiding a subset of patches outright, every patch receives
additive Gaussian noise whose variance tracks the patch's information
content: busy patches are corrupted hard, flat patches barely at all.
Entropy is measured in nats over a histogram of quantized intensities in
the raw [0, 1] pixel range, before any mean/std normalization, and the
noise is added in that same range without clamping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GridError, ParameterError, RangeError, TilingError
from .rng import substream


@dataclass
class PatchGrid:
    """Non-overlapping tiles of one image, in row-major patch order."""

    patches: np.ndarray  # (N, P_H, P_W, C)
    grid_dims: tuple[int, int]  # (rows, cols)
    source_dims: tuple[int, int, int]  # (H, W, C)
    patch_size: tuple[int, int]  # (P_H, P_W)


@dataclass
class EntropyMap:
    """Per-patch entropies in nats, aligned with a PatchGrid."""

    values: np.ndarray  # (N,)
    bins: int
    grid_dims: tuple[int, int]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.bins < 1:
            raise ParameterError(f"bins must be >= 1, got {self.bins}")
        limit = math.log(self.bins) + 1e-9
        if self.values.size and (self.values.min() < 0 or self.values.max() > limit):
            raise ParameterError(
                f"entropy values must lie in [0, ln({self.bins})], got range "
                f"[{self.values.min()}, {self.values.max()}]"
            )


@dataclass
class NoiseConfig:
    """How entropy turns into noise variance.

    Patch k gets variance ``sigma_scale * H_k`` in nats, or
    ``sigma_scale * H_k / ln(bins)`` when ``normalize_entropy`` maps the
    entropy range onto [0, 1] first. Raw entropy reaches ln(256) = 5.55,
    huge against a [0, 1] pixel range, so normalized mode is what actual
    training runs use; the raw default keeps the formula literal.
    """

    sigma_scale: float = 1.0
    normalize_entropy: bool = False
    bins: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.sigma_scale < 0:
            raise ParameterError(f"sigma_scale must be >= 0, got {self.sigma_scale}")
        if self.bins < 1:
            raise ParameterError(f"bins must be >= 1, got {self.bins}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ParameterError(f"seed must be a 64-bit unsigned int, got {self.seed}")

    def variances(self, entropy: EntropyMap) -> np.ndarray:
        """Per-patch noise variance for the given entropy map."""
        scale = self.sigma_scale
        if self.normalize_entropy:
            scale /= math.log(self.bins)
        return scale * entropy.values


def patchify(image: np.ndarray, patch_size: tuple[int, int]) -> PatchGrid:
    """Cut an H×W×C image into non-overlapping patches, row-major.

    Patch pixels are copies; mutating the grid never touches the source.
    """
    image = np.asarray(image)
    if image.ndim != 3:
        raise TilingError(f"expected an H×W×C image, got shape {image.shape}")
    p_h, p_w = patch_size
    if p_h < 1 or p_w < 1:
        raise ParameterError(f"patch size must be positive, got {patch_size}")
    h, w, c = image.shape
    if h % p_h != 0 or w % p_w != 0:
        raise TilingError(
            f"image {h}×{w} is not divisible into {p_h}×{p_w} patches; "
            f"height must be a multiple of {p_h} and width of {p_w}"
        )
    rows, cols = h // p_h, w // p_w
    patches = (
        image.reshape(rows, p_h, cols, p_w, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(rows * cols, p_h, p_w, c)
        .copy()
    )
    return PatchGrid(patches, (rows, cols), (h, w, c), (p_h, p_w))


def unpatchify(grid: PatchGrid) -> np.ndarray:
    """Reassemble the source image; exact inverse of patchify."""
    rows, cols = grid.grid_dims
    p_h, p_w = grid.patch_size
    h, w, c = grid.source_dims
    if grid.patches.shape != (rows * cols, p_h, p_w, c):
        raise GridError(
            f"patch array shape {grid.patches.shape} does not match grid "
            f"metadata {(rows * cols, p_h, p_w, c)}"
        )
    return (
        grid.patches.reshape(rows, cols, p_h, p_w, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(h, w, c)
        .copy()
    )


def patch_entropy(patch: np.ndarray, bins: int = 256) -> float:
    """Shannon entropy in nats of one patch's quantized intensities.

    All channels pool into a single histogram; bin = min(floor(v*bins),
    bins-1); empty bins contribute nothing (0·ln 0 := 0).
    """
    patch = np.asarray(patch, dtype=np.float64)
    if bins < 1:
        raise ParameterError(f"bins must be >= 1, got {bins}")
    if patch.size == 0:
        raise RangeError("patch has no pixels")
    if patch.min() < 0.0 or patch.max() > 1.0:
        raise RangeError(
            f"pixel values must lie in [0, 1], got range "
            f"[{patch.min()}, {patch.max()}]"
        )
    idx = np.minimum((patch.ravel() * bins).astype(np.int64), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    p = counts[counts > 0] / patch.size
    # + 0.0 turns the -0.0 of single-bin patches into a plain zero
    return float(-(p * np.log(p)).sum() + 0.0)


def entropy_map(image: np.ndarray, patch_size: tuple[int, int], bins: int = 256) -> EntropyMap:
    """Per-patch entropy of an image, row-major, as an EntropyMap."""
    grid = patchify(image, patch_size)
    values = np.array([patch_entropy(p, bins) for p in grid.patches])
    return EntropyMap(values, bins, grid.grid_dims)


def corrupt(grid: PatchGrid, entropy: EntropyMap, cfg: NoiseConfig) -> PatchGrid:
    """Add per-pixel Gaussian noise to each patch, variance per entropy.

    Each patch draws from its own (seed, patch index) substream, so the
    result is independent of patch processing order and reproducible.
    Zero-variance patches are returned untouched, bit for bit. The input
    grid is never modified; output values are not clamped.
    """
    n = grid.patches.shape[0]
    if entropy.grid_dims != grid.grid_dims or entropy.values.shape != (n,):
        raise GridError(
            f"entropy grid {entropy.grid_dims} with {entropy.values.shape[0]} "
            f"values does not match patch grid {grid.grid_dims} with {n} patches"
        )
    variances = cfg.variances(entropy)
    out = grid.patches.copy()
    for k in range(n):
        var = variances[k]
        if var == 0.0:
            continue
        rng = substream(cfg.seed, k)
        out[k] = out[k] + rng.normal(0.0, math.sqrt(var), size=out[k].shape)
    return PatchGrid(out, grid.grid_dims, grid.source_dims, grid.patch_size)


def heatmap_pgm(entropy: EntropyMap) -> str:
    """Render an entropy map as a plain-text PGM (P2), one pixel per patch.

    Gray level = round(255 · H / ln(bins)); a 1-bin map is all zeros.
    """
    rows, cols = entropy.grid_dims
    denom = math.log(entropy.bins)
    if denom > 0.0:
        levels = np.rint(255.0 * entropy.values / denom).astype(int)
    else:
        levels = np.zeros(entropy.values.shape, dtype=int)
    lines = ["P2", f"{cols} {rows}", "255"]
    grid = levels.reshape(rows, cols)
    for r in range(rows):
        lines.append(" ".join(str(v) for v in grid[r]))
    return "\n".join(lines) + "\n"


def to_json_dict(entropy: EntropyMap) -> dict:
    """JSON-ready sidecar with the raw per-patch values."""
    rows, cols = entropy.grid_dims
    return {
        "bins": entropy.bins,
        "grid_dims": [rows, cols],
        "values": [float(v) for v in entropy.values],
    }
