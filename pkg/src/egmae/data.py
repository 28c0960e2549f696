"""Dataset plumbing: manifests, PNM images, augmentation, batching.

Images travel as H×W×C float arrays in [0, 1] until ``normalize`` turns
them into model-ready C×H×W tensors. Every random choice is made by a
generator passed in from outside, so pipelines stay reproducible.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DecodeError, ManifestError, ParameterError
from .rng import substream

SPLITS = ("train", "val", "test")

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
# single-channel constants: the 3-channel values averaged
GRAY_MEAN = (0.449,)
GRAY_STD = (0.226,)

FINETUNE_RESIZE_NUMERATOR = 236
FINETUNE_RESIZE_DENOMINATOR = 224


@dataclass
class ManifestRecord:
    path: str
    label: int
    split: str


@dataclass
class Manifest:
    records: list[ManifestRecord]
    class_names: list[str]
    root: Path

    def split(self, name: str) -> list[ManifestRecord]:
        if name not in SPLITS:
            raise ParameterError(f"unknown split {name!r}, expected one of {SPLITS}")
        return [r for r in self.records if r.split == name]


@dataclass
class ImageSample:
    pixels: np.ndarray  # H×W×C in [0, 1]
    label: int
    id: int  # stable 64-bit hash of the manifest-relative path


def path_id(path: str) -> int:
    """Stable 64-bit sample id derived from the relative path string."""
    digest = hashlib.blake2b(path.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


# ---------------------------------------------------------------------------
# manifest loading


def load_manifest(path, classes_path=None) -> Manifest:
    """Parse a "path,label,split" CSV into a validated Manifest.

    Labels may be class names (mapped to indices by sorted order) or
    plain integer indices. A sidecar file at ``<manifest>.classes`` (or
    ``classes_path``), one name per line, fixes the name ordering
    instead. Record paths are resolved relative to the manifest's
    directory.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8-sig")
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [f.strip() for f in rows[0]] != ["path", "label", "split"]:
        raise ManifestError(
            f"{path}, line 1: expected header 'path,label,split', got "
            f"{','.join(rows[0]) if rows else '<empty file>'!r}"
        )

    raw: list[tuple[int, str, str, str]] = []  # (line number, path, label, split)
    seen_paths: dict[str, int] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 3:
            raise ManifestError(
                f"{path}, line {lineno}: expected 3 fields, got {len(row)}"
            )
        rec_path, label, split = (f.strip() for f in row)
        if not rec_path:
            raise ManifestError(f"{path}, line {lineno}: empty path")
        if split not in SPLITS:
            raise ManifestError(
                f"{path}, line {lineno}: unknown split {split!r}, expected "
                f"one of {SPLITS}"
            )
        if rec_path in seen_paths:
            raise ManifestError(
                f"{path}, line {lineno}: duplicate path {rec_path!r} "
                f"(first seen on line {seen_paths[rec_path]})"
            )
        seen_paths[rec_path] = lineno
        raw.append((lineno, rec_path, label, split))
    if not raw:
        raise ManifestError(f"{path}: manifest contains no records")

    if classes_path is None:
        candidate = path.with_name(path.name + ".classes")
        classes_path = candidate if candidate.exists() else None
    if classes_path is not None:
        lines = Path(classes_path).read_text(encoding="utf-8").splitlines()
        class_names = [ln.strip() for ln in lines if ln.strip()]
        if not class_names:
            raise ManifestError(f"classes file {classes_path} is empty")
        index = {name: i for i, name in enumerate(class_names)}
        records = []
        for lineno, rec_path, label, split in raw:
            if label not in index:
                raise ManifestError(
                    f"{path}, line {lineno}: label {label!r} not in classes "
                    f"file {classes_path}"
                )
            records.append(ManifestRecord(rec_path, index[label], split))
        return Manifest(records, class_names, path.parent)

    labels = [label for _, _, label, _ in raw]
    if all(_is_int(l) for l in labels):
        values = [int(l) for l in labels]
        if min(values) < 0:
            bad = next(ln for (ln, _, l, _) in raw if int(l) < 0)
            raise ManifestError(f"{path}, line {bad}: negative label index")
        class_names = [str(i) for i in range(max(values) + 1)]
        records = [
            ManifestRecord(rec_path, int(label), split)
            for _, rec_path, label, split in raw
        ]
    else:
        class_names = sorted(set(labels))
        index = {name: i for i, name in enumerate(class_names)}
        records = [
            ManifestRecord(rec_path, index[label], split)
            for _, rec_path, label, split in raw
        ]
    return Manifest(records, class_names, path.parent)


def _is_int(token: str) -> bool:
    try:
        int(token)
    except ValueError:
        return False
    return True


# ---------------------------------------------------------------------------
# PNM codec (P5 binary graymap, P6 binary pixmap, maxval 255)

_WHITESPACE = b" \t\n\r\x0b\x0c"


def _header_tokens(buf: bytes, count: int):
    """First ``count`` whitespace/comment-delimited header tokens."""
    tokens = []
    i = 0
    n = len(buf)
    while len(tokens) < count:
        while i < n:
            if buf[i] in _WHITESPACE:
                i += 1
            elif buf[i] == ord("#"):
                while i < n and buf[i] not in (10, 13):
                    i += 1
            else:
                break
        start = i
        while i < n and buf[i] not in _WHITESPACE and buf[i] != ord("#"):
            i += 1
        if i == start:
            raise DecodeError("truncated PNM header")
        tokens.append(buf[start:i])
    if i >= n or buf[i] not in _WHITESPACE:
        raise DecodeError("PNM header not terminated by whitespace")
    return tokens, i + 1


def decode_pnm_bytes(buf: bytes) -> np.ndarray:
    """Decode a binary PNM buffer to H×W×C floats in [0, 1]."""
    if len(buf) < 2 or buf[0] != ord("P") or buf[1] not in (ord("5"), ord("6")):
        raise DecodeError("not a binary PNM file (expected P5 or P6 magic)")
    tokens, offset = _header_tokens(buf, 4)
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise DecodeError(f"malformed PNM header fields {tokens[1:]}") from e
    if width < 1 or height < 1:
        raise DecodeError(f"bad PNM dimensions {width}x{height}")
    if maxval != 255:
        raise DecodeError(f"unsupported PNM maxval {maxval}, only 255 is handled")
    channels = 1 if magic == b"P5" else 3
    expected = width * height * channels
    raster = buf[offset : offset + expected]
    if len(raster) != expected:
        raise DecodeError(
            f"truncated PNM raster: expected {expected} bytes, got {len(raster)}"
        )
    values = np.frombuffer(raster, dtype=np.uint8).astype(np.float64) / 255.0
    return values.reshape(height, width, channels)


def decode_image(path) -> np.ndarray:
    """Read a P5/P6 file into H×W×C floats in [0, 1]."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        raise DecodeError(f"cannot read image {path}: {e}") from e
    try:
        return decode_pnm_bytes(buf)
    except DecodeError as e:
        raise DecodeError(f"{path}: {e}") from e


def encode_pnm_bytes(pixels: np.ndarray) -> bytes:
    """Encode H×W×C pixels ([0, 1] floats or uint8) as binary PNM."""
    pixels = np.asarray(pixels)
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    if pixels.ndim != 3 or pixels.shape[2] not in (1, 3):
        raise ParameterError(
            f"expected H×W×1 or H×W×3 pixels, got shape {pixels.shape}"
        )
    if pixels.dtype == np.uint8:
        raster = pixels
    else:
        if pixels.size and (pixels.min() < 0.0 or pixels.max() > 1.0):
            raise ParameterError("float pixels must lie in [0, 1] to encode")
        raster = np.rint(pixels * 255.0).astype(np.uint8)
    h, w, c = raster.shape
    magic = b"P5" if c == 1 else b"P6"
    header = magic + f"\n{w} {h}\n255\n".encode("ascii")
    return header + raster.tobytes()


def encode_pnm(path, pixels: np.ndarray) -> None:
    Path(path).write_bytes(encode_pnm_bytes(pixels))


def load_sample(manifest: Manifest, record: ManifestRecord) -> ImageSample:
    pixels = decode_image(manifest.root / record.path)
    return ImageSample(pixels, record.label, path_id(record.path))


# ---------------------------------------------------------------------------
# geometric transforms


def resize_bilinear(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers; identity when sizes match."""
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"resize target must be positive, got {out_h}x{out_w}")
    pixels = np.asarray(pixels, dtype=np.float64)
    h, w, _ = pixels.shape
    if (h, w) == (out_h, out_w):
        return pixels.copy()

    def axis_coords(src, dst):
        coords = (np.arange(dst) + 0.5) * (src / dst) - 0.5
        coords = np.clip(coords, 0.0, src - 1.0)
        lo = np.floor(coords).astype(np.int64)
        hi = np.minimum(lo + 1, src - 1)
        return lo, hi, coords - lo

    y0, y1, ty = axis_coords(h, out_h)
    x0, x1, tx = axis_coords(w, out_w)
    ty = ty[:, None, None]
    tx = tx[None, :, None]
    top = pixels[y0][:, x0] * (1.0 - tx) + pixels[y0][:, x1] * tx
    bottom = pixels[y1][:, x0] * (1.0 - tx) + pixels[y1][:, x1] * tx
    return top * (1.0 - ty) + bottom * ty


def resize_shorter_side(pixels: np.ndarray, target: int) -> np.ndarray:
    """Scale so the shorter side equals ``target``, keeping aspect ratio."""
    h, w, _ = pixels.shape
    if h <= w:
        out_h = target
        out_w = max(target, round(w * target / h))
    else:
        out_w = target
        out_h = max(target, round(h * target / w))
    return resize_bilinear(pixels, out_h, out_w)


def flip_horizontal(pixels: np.ndarray) -> np.ndarray:
    return np.asarray(pixels)[:, ::-1, :].copy()


def center_crop(pixels: np.ndarray, size: int) -> np.ndarray:
    h, w, _ = pixels.shape
    if h < size or w < size:
        raise DataError(f"cannot crop {size}x{size} out of {h}x{w} image")
    top = (h - size) // 2
    left = (w - size) // 2
    return pixels[top : top + size, left : left + size].copy()


def finetune_resize_target(out_size: int) -> int:
    """Pre-crop shorter-side target for fine-tuning, scaled from 236/224."""
    return math.ceil(out_size * FINETUNE_RESIZE_NUMERATOR / FINETUNE_RESIZE_DENOMINATOR)


# ---------------------------------------------------------------------------
# augmentation pipelines


def augment_pretrain(pixels: np.ndarray, rng, out_size: int) -> np.ndarray:
    """Random resized crop to ``out_size`` plus horizontal flip.

    Draws, in order: area scale ~ U[0.2, 1.0], aspect ratio ~ U[3/4, 4/3],
    crop top, crop left, flip coin (p = 0.5). Crop dimensions are clamped
    to the source, so extreme scale/aspect pairs land slightly below the
    drawn area fraction.
    """
    pixels = np.asarray(pixels)
    h, w, _ = pixels.shape
    if h < 2 or w < 2:
        raise DataError(f"source image {h}x{w} too small to crop (need 2x2)")
    scale = rng.uniform(0.2, 1.0)
    aspect = rng.uniform(3.0 / 4.0, 4.0 / 3.0)
    area = scale * h * w
    crop_w = int(np.clip(round(math.sqrt(area * aspect)), 1, w))
    crop_h = int(np.clip(round(math.sqrt(area / aspect)), 1, h))
    top = int(rng.integers(0, h - crop_h + 1))
    left = int(rng.integers(0, w - crop_w + 1))
    out = resize_bilinear(
        pixels[top : top + crop_h, left : left + crop_w], out_size, out_size
    )
    if rng.random() < 0.5:
        out = flip_horizontal(out)
    return out


def augment_finetune_train(pixels: np.ndarray, rng, out_size: int) -> np.ndarray:
    """Shorter-side resize to the scaled 236-target, random crop, flip.

    Draws, in order: crop top, crop left, flip coin (p = 0.5).
    """
    resized = resize_shorter_side(pixels, finetune_resize_target(out_size))
    h, w, _ = resized.shape
    top = int(rng.integers(0, h - out_size + 1))
    left = int(rng.integers(0, w - out_size + 1))
    out = resized[top : top + out_size, left : left + out_size].copy()
    if rng.random() < 0.5:
        out = flip_horizontal(out)
    return out


def eval_transform(pixels: np.ndarray, out_size: int) -> np.ndarray:
    """Deterministic eval path: shorter-side resize then center crop."""
    return center_crop(resize_shorter_side(pixels, out_size), out_size)


# ---------------------------------------------------------------------------
# normalization and batching


def default_stats(channels: int):
    if channels == 3:
        return IMAGENET_MEAN, IMAGENET_STD
    if channels == 1:
        return GRAY_MEAN, GRAY_STD
    raise ParameterError(f"no default normalization for {channels} channels")


def normalize(pixels: np.ndarray, mean=None, std=None) -> np.ndarray:
    """Per-channel standardization, returned model-ready as C×H×W float32."""
    pixels = np.asarray(pixels)
    c = pixels.shape[2]
    if mean is None or std is None:
        d_mean, d_std = default_stats(c)
        mean = d_mean if mean is None else mean
        std = d_std if std is None else std
    mean = np.asarray(mean, dtype=np.float64).reshape(1, 1, c)
    std = np.asarray(std, dtype=np.float64).reshape(1, 1, c)
    if np.any(std <= 0.0):
        raise ParameterError(f"std must be positive, got {std.ravel()}")
    out = (pixels - mean) / std
    return out.transpose(2, 0, 1).astype(np.float32)


def denormalize(tensor: np.ndarray, mean=None, std=None) -> np.ndarray:
    """Inverse of normalize: C×H×W tensor back to H×W×C pixels."""
    c = tensor.shape[0]
    if mean is None or std is None:
        d_mean, d_std = default_stats(c)
        mean = d_mean if mean is None else mean
        std = d_std if std is None else std
    mean = np.asarray(mean, dtype=np.float64).reshape(c, 1, 1)
    std = np.asarray(std, dtype=np.float64).reshape(c, 1, 1)
    return (np.asarray(tensor, dtype=np.float64) * std + mean).transpose(1, 2, 0)


def collate(tensors) -> np.ndarray:
    """Stack C×H×W tensors into one N×C×H×W float32 batch."""
    return np.stack([np.asarray(t, dtype=np.float32) for t in tensors], axis=0)


def batches(records, batch_size: int, seed: int, epoch: int):
    """Split records into shuffled batches, keeping the partial tail.

    The permutation depends only on (seed, epoch), so epochs reshuffle
    but reruns reproduce the exact order.
    """
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    records = list(records)
    if not records:
        raise DataError("cannot batch an empty split")
    order = substream(seed, "batch-order", epoch).permutation(len(records))
    return [
        [records[i] for i in order[start : start + batch_size]]
        for start in range(0, len(records), batch_size)
    ]
