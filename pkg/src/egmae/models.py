"""Encoder, decoder, and classifier assembly plus checkpoint files.

The encoder is a small ConvNeXt-style backbone: a patchifying stem
convolution, stages of residual blocks (depthwise large-kernel conv,
layer norm, pointwise expand, GELU, pointwise contract), and 2x2
stride-2 convolutions between stages. The reconstruction decoder and
the classification head both hang off the encoder's final feature map.

Parameters live in a flat dict of dotted names so optimizers and
checkpoints can treat the model as a plain list of named tensors.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError, ConfigError
from .rng import substream

CHECKPOINT_MAGIC = b"EGMAE1"
PROVENANCES = ("mae-pretrained", "random-init", "external")


@dataclass
class EncoderConfig:
    in_channels: int = 1
    stem_patch: int = 4
    stage_dims: tuple = (24, 48, 96)
    stage_depths: tuple = (1, 1, 2)
    dw_kernel: int = 7
    expansion: int = 4
    ln_eps: float = 1e-6

    def __post_init__(self):
        self.stage_dims = tuple(int(d) for d in self.stage_dims)
        self.stage_depths = tuple(int(d) for d in self.stage_depths)
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.stem_patch < 1:
            raise ConfigError(f"stem_patch must be >= 1, got {self.stem_patch}")
        if len(self.stage_dims) != len(self.stage_depths) or not self.stage_dims:
            raise ConfigError(
                f"stage_dims {self.stage_dims} and stage_depths "
                f"{self.stage_depths} must be equal-length and non-empty"
            )
        if any(d < 1 for d in self.stage_dims + self.stage_depths):
            raise ConfigError("stage dims and depths must be positive")
        if self.dw_kernel < 1 or self.dw_kernel % 2 == 0:
            raise ConfigError(
                f"dw_kernel must be odd so padding preserves size, got "
                f"{self.dw_kernel}"
            )
        if self.expansion < 1:
            raise ConfigError(f"expansion must be >= 1, got {self.expansion}")
        if self.ln_eps <= 0:
            raise ConfigError(f"ln_eps must be positive, got {self.ln_eps}")

    @property
    def num_stages(self) -> int:
        return len(self.stage_dims)

    @property
    def total_downsample(self) -> int:
        """Input size must be divisible by this; also the output scale."""
        return self.stem_patch * 2 ** (self.num_stages - 1)


@dataclass
class DecoderConfig:
    dim: int = 64
    depth: int = 2

    def __post_init__(self):
        if self.dim < 1 or self.depth < 0:
            raise ConfigError(
                f"decoder needs dim >= 1 and depth >= 0, got {self.dim}/{self.depth}"
            )


@dataclass
class HeadConfig:
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")


@dataclass
class ModelConfig:
    encoder: EncoderConfig
    decoder: DecoderConfig | None = None
    head: HeadConfig | None = None

    def to_dict(self) -> dict:
        return {
            "encoder": asdict(self.encoder),
            "decoder": asdict(self.decoder) if self.decoder else None,
            "head": asdict(self.head) if self.head else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            encoder=EncoderConfig(**d["encoder"]),
            decoder=DecoderConfig(**d["decoder"]) if d.get("decoder") else None,
            head=HeadConfig(**d["head"]) if d.get("head") else None,
        )


def encoder_configs_match(a: EncoderConfig, b: EncoderConfig) -> bool:
    return asdict(a) == asdict(b)


# ---------------------------------------------------------------------------
# parameter initialization


def truncated_normal(rng, shape, std=0.02) -> np.ndarray:
    """Normal(0, std) with draws beyond 2 std redrawn, as float32."""
    out = rng.normal(0.0, std, size=shape)
    while True:
        mask = np.abs(out) > 2.0 * std
        if not mask.any():
            break
        out[mask] = rng.normal(0.0, std, size=int(mask.sum()))
    return out.astype(np.float32)


def _block_param_arrays(prefix: str, dim: int, kernel: int, expansion: int, rng):
    hidden = dim * expansion
    yield f"{prefix}.dw.weight", truncated_normal(rng, (dim, 1, kernel, kernel))
    yield f"{prefix}.dw.bias", np.zeros(dim, dtype=np.float32)
    yield f"{prefix}.norm.gamma", np.ones(dim, dtype=np.float32)
    yield f"{prefix}.norm.beta", np.zeros(dim, dtype=np.float32)
    yield f"{prefix}.pw1.weight", truncated_normal(rng, (hidden, dim, 1, 1))
    yield f"{prefix}.pw1.bias", np.zeros(hidden, dtype=np.float32)
    yield f"{prefix}.pw2.weight", truncated_normal(rng, (dim, hidden, 1, 1))
    yield f"{prefix}.pw2.bias", np.zeros(dim, dtype=np.float32)


def _encoder_param_arrays(cfg: EncoderConfig, rng):
    d0 = cfg.stage_dims[0]
    yield "stem.weight", truncated_normal(
        rng, (d0, cfg.in_channels, cfg.stem_patch, cfg.stem_patch)
    )
    yield "stem.bias", np.zeros(d0, dtype=np.float32)
    for s, (dim, depth) in enumerate(zip(cfg.stage_dims, cfg.stage_depths)):
        for b in range(depth):
            yield from _block_param_arrays(
                f"stages.{s}.blocks.{b}", dim, cfg.dw_kernel, cfg.expansion, rng
            )
        if s + 1 < cfg.num_stages:
            nxt = cfg.stage_dims[s + 1]
            yield f"down.{s}.weight", truncated_normal(rng, (nxt, dim, 2, 2))
            yield f"down.{s}.bias", np.zeros(nxt, dtype=np.float32)


def _decoder_param_arrays(enc: EncoderConfig, dec: DecoderConfig, rng):
    yield "decoder.proj.weight", truncated_normal(
        rng, (dec.dim, enc.stage_dims[-1], 1, 1)
    )
    yield "decoder.proj.bias", np.zeros(dec.dim, dtype=np.float32)
    for b in range(dec.depth):
        yield from _block_param_arrays(
            f"decoder.blocks.{b}", dec.dim, enc.dw_kernel, enc.expansion, rng
        )
    out_ch = enc.stem_patch * enc.stem_patch * enc.in_channels
    yield "decoder.out.weight", truncated_normal(rng, (out_ch, dec.dim, 1, 1))
    yield "decoder.out.bias", np.zeros(out_ch, dtype=np.float32)


def _head_param_arrays(enc: EncoderConfig, head: HeadConfig, rng):
    yield "head.weight", truncated_normal(rng, (head.num_classes, enc.stage_dims[-1]))
    yield "head.bias", np.zeros(head.num_classes, dtype=np.float32)


@dataclass
class Model:
    """A config plus its flat parameter dict and where the weights came from."""

    config: ModelConfig
    params: dict  # name -> autodiff.Tensor, float32
    provenance: str
    checksum_failures: list = field(default_factory=list)

    def encode(self, x: ad.Tensor) -> ad.Tensor:
        return encoder_forward(x, self.config.encoder, self.params)

    def reconstruct(self, x: ad.Tensor) -> ad.Tensor:
        if self.config.decoder is None:
            raise ConfigError("model has no decoder")
        return decoder_forward(
            self.encode(x), self.config.encoder, self.config.decoder, self.params
        )

    def logits(self, x: ad.Tensor) -> ad.Tensor:
        if self.config.head is None:
            raise ConfigError("model has no classification head")
        pooled = ad.global_avg_pool(self.encode(x))
        return ad.linear(pooled, self.params["head.weight"], self.params["head.bias"])

    def classify(self, x: ad.Tensor) -> ad.Tensor:
        return ad.softmax(self.logits(x))


def init_model(config: ModelConfig, seed: int, provenance: str = "random-init") -> Model:
    """Fresh parameters: truncated-normal weights, zero biases, unit gains."""
    if provenance not in PROVENANCES:
        raise ConfigError(f"unknown provenance {provenance!r}")
    rng = substream(seed, "init")
    params = {}
    for name, arr in _encoder_param_arrays(config.encoder, rng):
        params[name] = ad.Tensor(arr, requires_grad=True)
    if config.decoder is not None:
        for name, arr in _decoder_param_arrays(config.encoder, config.decoder, rng):
            params[name] = ad.Tensor(arr, requires_grad=True)
    if config.head is not None:
        for name, arr in _head_param_arrays(config.encoder, config.head, rng):
            params[name] = ad.Tensor(arr, requires_grad=True)
    return Model(config, params, provenance)


def classifier_from_checkpoint(source: Model, head: HeadConfig, seed: int) -> Model:
    """Build a classifier whose encoder starts from ``source``'s weights.

    The head is always freshly initialized; provenance carries over so
    reports can tell pretrained and random pathways apart.
    """
    config = ModelConfig(encoder=source.config.encoder, head=head)
    rng = substream(seed, "init-head")
    params = {}
    for name, tensor in source.params.items():
        if name.startswith(("stem.", "stages.", "down.")):
            params[name] = ad.Tensor(tensor.data.copy(), requires_grad=True)
    expected = {n for n, _ in _encoder_param_arrays(config.encoder, substream(0, "shape-probe"))}
    if set(params) != expected:
        raise ConfigError(
            "checkpoint does not contain the full encoder parameter set for "
            "its declared config"
        )
    for name, arr in _head_param_arrays(config.encoder, head, rng):
        params[name] = ad.Tensor(arr, requires_grad=True)
    return Model(config, params, source.provenance)


# ---------------------------------------------------------------------------
# forward passes


def convnext_block_forward(
    x: ad.Tensor, params: dict, prefix: str, kernel: int, eps: float
) -> ad.Tensor:
    """Residual block: x + pw2(GELU(pw1(LN(dwconv(x)))))."""
    channels = x.data.shape[1]
    dw_weight = params[f"{prefix}.dw.weight"]
    if dw_weight.data.shape[0] != channels:
        raise ConfigError(
            f"block {prefix} expects {dw_weight.data.shape[0]} channels, "
            f"input has {channels}"
        )
    h = ad.conv2d(
        x,
        dw_weight,
        params[f"{prefix}.dw.bias"],
        padding=(kernel - 1) // 2,
        groups=channels,
    )
    h = ad.layer_norm(
        h, params[f"{prefix}.norm.gamma"], params[f"{prefix}.norm.beta"], eps=eps
    )
    h = ad.conv2d(h, params[f"{prefix}.pw1.weight"], params[f"{prefix}.pw1.bias"])
    h = ad.gelu(h)
    h = ad.conv2d(h, params[f"{prefix}.pw2.weight"], params[f"{prefix}.pw2.bias"])
    return ad.add(x, h)


def encoder_forward(x: ad.Tensor, cfg: EncoderConfig, params: dict) -> ad.Tensor:
    """Stem, then stages of blocks with 2x2 stride-2 downsamples between."""
    if x.data.ndim != 4:
        raise ConfigError(f"expected NCHW input, got shape {x.data.shape}")
    n, c, h, w = x.data.shape
    if c != cfg.in_channels:
        raise ConfigError(f"model expects {cfg.in_channels} channels, input has {c}")
    multiple = cfg.total_downsample
    if h % multiple != 0 or w % multiple != 0:
        raise ConfigError(
            f"input {h}x{w} must be a multiple of {multiple} "
            f"(stem {cfg.stem_patch} x 2^{cfg.num_stages - 1} downsamples)"
        )
    f = ad.conv2d(x, params["stem.weight"], params["stem.bias"], stride=cfg.stem_patch)
    for s, depth in enumerate(cfg.stage_depths):
        for b in range(depth):
            f = convnext_block_forward(
                f, params, f"stages.{s}.blocks.{b}", cfg.dw_kernel, cfg.ln_eps
            )
        if s + 1 < cfg.num_stages:
            f = ad.conv2d(f, params[f"down.{s}.weight"], params[f"down.{s}.bias"], stride=2)
    return f


def decoder_forward(
    z: ad.Tensor, enc: EncoderConfig, dec: DecoderConfig, params: dict
) -> ad.Tensor:
    """Project, refine, upsample back past the stage downsamples, un-patch."""
    if z.data.ndim != 4 or z.data.shape[1] != enc.stage_dims[-1]:
        raise ConfigError(
            f"decoder expects (N, {enc.stage_dims[-1]}, H', W') features, "
            f"got shape {z.data.shape}"
        )
    h = ad.conv2d(z, params["decoder.proj.weight"], params["decoder.proj.bias"])
    for b in range(dec.depth):
        h = convnext_block_forward(
            h, params, f"decoder.blocks.{b}", enc.dw_kernel, enc.ln_eps
        )
    for _ in range(enc.num_stages - 1):
        h = ad.nearest_upsample(h, 2)
    h = ad.conv2d(h, params["decoder.out.weight"], params["decoder.out.bias"])
    return ad.pixel_shuffle(h, enc.stem_patch)


# ---------------------------------------------------------------------------
# checkpoint files


def save_checkpoint(model: Model, path) -> None:
    """Write config, provenance, and all parameters to one binary file.

    Layout: magic, little-endian uint64 header length, JSON header
    (config, provenance, tensor index with per-tensor CRC32), then all
    tensors as little-endian float32 in index order.
    """
    names = sorted(model.params)
    chunks = []
    index = []
    offset = 0
    for name in names:
        data = np.ascontiguousarray(model.params[name].data, dtype="<f4")
        raw = data.tobytes()
        index.append(
            {
                "name": name,
                "shape": list(data.shape),
                "offset": offset,
                "crc32": zlib.crc32(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format_version": 1,
        "config": model.config.to_dict(),
        "provenance": model.provenance,
        "tensors": index,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        for raw in chunks:
            f.write(raw)


def load_checkpoint(path) -> Model:
    """Read a checkpoint back into a Model.

    Structural problems (bad magic, truncation, index out of bounds)
    raise CheckpointError. A payload whose bytes no longer match their
    stored CRC32 still loads, with the offending tensor names listed in
    ``model.checksum_failures``.
    """
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(buf) < len(CHECKPOINT_MAGIC) + 8:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    if buf[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    header_len = int.from_bytes(buf[6:14], "little")
    header_end = 14 + header_len
    if header_end > len(buf):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(buf[14:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header: {e}") from e
    try:
        config = ModelConfig.from_dict(header["config"])
        provenance = header["provenance"]
        index = header["tensors"]
    except (KeyError, TypeError, ConfigError) as e:
        raise CheckpointError(f"{path}: malformed header: {e}") from e
    if provenance not in PROVENANCES:
        raise CheckpointError(f"{path}: unknown provenance {provenance!r}")

    payload = buf[header_end:]
    params = {}
    failures = []
    for entry in index:
        name = entry["name"]
        shape = tuple(entry["shape"])
        size = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        start = entry["offset"]
        end = start + size
        if start < 0 or end > len(payload):
            raise CheckpointError(
                f"{path}: tensor {name!r} spans bytes [{start}, {end}) outside "
                f"the {len(payload)}-byte payload"
            )
        raw = payload[start:end]
        if zlib.crc32(raw) != entry["crc32"]:
            failures.append(name)
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        params[name] = ad.Tensor(arr, requires_grad=True)
    return Model(config, params, provenance, checksum_failures=failures)
