"""AdamW, the cosine schedule, and the two training loops.

Pre-training corrupts each image with entropy-scaled noise and learns to
reconstruct the clean pixels; fine-tuning trains the encoder plus a fresh
classification head with cross-entropy. Both loops draw every random
decision (batch order, augmentation, corruption, init) from labeled
substreams of the run seed, so a (seed, config, data) triple reproduces
checkpoints and traces byte for byte.
"""

from __future__ import annotations

import json
import math
import re
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import (
    Manifest,
    batches,
    collate,
    default_stats,
    eval_transform,
    augment_finetune_train,
    augment_pretrain,
    load_sample,
    normalize,
)
from .entropy import NoiseConfig, corrupt, entropy_map, patchify, unpatchify
from .errors import CheckpointError, ConfigError, ParameterError, TrainingError
from .models import (
    HeadConfig,
    Model,
    ModelConfig,
    classifier_from_checkpoint,
    encoder_configs_match,
    init_model,
)
from .rng import derive_seed, substream

PHASES = ("pretrain", "finetune")

# phase defaults; fields left as None in RunConfig resolve to these
_PHASE_DEFAULTS = {
    "pretrain": {"lr_max": 1.5e-4, "betas": (0.9, 0.95), "warmup_frac": 0.05},
    "finetune": {"lr_max": 5e-4, "betas": (0.9, 0.999), "warmup_frac": 0.0},
}


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    """AdamW moments and step count; ``lr`` is reset every step by the
    schedule, everything else is fixed for the run."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: dict, grads: dict, state: OptimizerState) -> None:
    """One decoupled-weight-decay Adam update, in place.

    ``params`` maps names to autodiff Tensors, ``grads`` names to arrays;
    parameters without a gradient entry are left untouched. Moments are
    kept in float64 and the updated parameter is cast back to its own
    dtype, so float32 models stay float32.
    """
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name in sorted(params):
        if name not in grads:
            continue
        p = params[name]
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.data.shape:
            raise ParameterError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name!r} shape {p.data.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        m = state.m.get(name, 0.0)
        v = state.v.get(name, 0.0)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        step = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p64 = p.data.astype(np.float64)
        p.data = (p64 - state.lr * (step + state.weight_decay * p64)).astype(
            p.data.dtype
        )


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the pre-clip norm.
    """
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for name in grads:
            grads[name] = grads[name] * scale
    return total


# ---------------------------------------------------------------------------
# learning-rate schedule


def cosine_lr(step: int, total_steps: int, lr_max: float, lr_min: float) -> float:
    """Half-cosine decay from lr_max at step 0 to lr_min at total_steps."""
    if total_steps < 1:
        raise ParameterError(f"total_steps must be >= 1, got {total_steps}")
    if step < 0 or step > total_steps:
        raise ParameterError(f"step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


def schedule_lr(
    step: int, total_steps: int, lr_max: float, lr_min: float, warmup_frac: float = 0.0
) -> float:
    """Cosine schedule with an optional linear warmup ramp in front.

    The first ``round(warmup_frac * total_steps)`` steps climb linearly to
    lr_max, then the cosine runs over the remainder. Warmup is this
    implementation's addition, not part of the published recipe; pass 0
    to disable it.
    """
    if not 0.0 <= warmup_frac < 1.0:
        raise ParameterError(f"warmup_frac must be in [0, 1), got {warmup_frac}")
    warmup_steps = int(round(warmup_frac * total_steps))
    if step < warmup_steps:
        return lr_max * (step + 1) / warmup_steps
    return cosine_lr(step - warmup_steps, max(total_steps - warmup_steps, 1), lr_max, lr_min)


# ---------------------------------------------------------------------------
# run configuration


_QUANTILE_RE = re.compile(r"^top-quantile\((.+)\)$")


def parse_loss_policy(policy: str):
    """Split a loss_patch_policy string into ("all", None) or ("top-quantile", q)."""
    if policy == "all":
        return "all", None
    m = _QUANTILE_RE.match(policy)
    if m is None:
        raise ConfigError(
            f"unknown loss_patch_policy {policy!r}; expected 'all' or 'top-quantile(q)'"
        )
    try:
        q = float(m.group(1))
    except ValueError:
        raise ConfigError(f"loss_patch_policy quantile {m.group(1)!r} is not a number")
    # q = 1.0 is rejected: the pixel mask would keep only ties with the
    # maximum, which reads as "train on nothing" and is surely a typo
    if not 0.0 <= q < 1.0:
        raise ConfigError(f"top-quantile fraction must be in [0, 1), got {q}")
    return "top-quantile", q


@dataclass
class RunConfig:
    """Everything one training run needs besides the dataset itself.

    ``lr_max``, ``betas``, and ``warmup_frac`` default per phase when left
    as None (pretrain: 1.5e-4, (0.9, 0.95), 5% warmup; finetune: 5e-4,
    (0.9, 0.999), no warmup).
    """

    phase: str
    model: ModelConfig
    epochs: int
    batch_size: int = 16
    lr_max: float | None = None
    lr_min: float = 0.0
    betas: tuple | None = None
    weight_decay: float = 0.05
    eps: float = 1e-8
    warmup_frac: float | None = None
    grad_clip: float | None = None
    seed: int = 0
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    loss_patch_policy: str = "all"
    patch_size: int = 8
    image_size: int = 32
    augment: bool = False
    val_split: str | None = "val"

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ConfigError(f"phase must be one of {PHASES}, got {self.phase!r}")
        defaults = _PHASE_DEFAULTS[self.phase]
        if self.lr_max is None:
            self.lr_max = defaults["lr_max"]
        if self.betas is None:
            self.betas = defaults["betas"]
        self.betas = tuple(float(b) for b in self.betas)
        if self.warmup_frac is None:
            self.warmup_frac = defaults["warmup_frac"]
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr_max > 0.0:
            raise ConfigError(f"lr_max must be positive, got {self.lr_max}")
        if self.lr_min < 0.0 or self.lr_min > self.lr_max:
            raise ConfigError(
                f"need lr_max >= lr_min >= 0, got {self.lr_max} < {self.lr_min}"
            )
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError(f"betas must be two values in [0, 1), got {self.betas}")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ConfigError(f"warmup_frac must be in [0, 1), got {self.warmup_frac}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive, got {self.grad_clip}")
        if self.image_size < 1 or self.patch_size < 1:
            raise ConfigError("image_size and patch_size must be >= 1")
        parse_loss_policy(self.loss_patch_policy)
        multiple = self.model.encoder.total_downsample
        if self.image_size % multiple != 0:
            raise ConfigError(
                f"image_size {self.image_size} is not a multiple of the "
                f"encoder's downsample factor {multiple}"
            )
        if self.phase == "pretrain" and self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image_size {self.image_size} does not tile into "
                f"{self.patch_size}x{self.patch_size} patches"
            )
        if self.val_split is not None and self.val_split not in ("train", "val", "test"):
            raise ConfigError(f"unknown val_split {self.val_split!r}")


# ---------------------------------------------------------------------------
# traces


@dataclass
class LossTrace:
    """Per-epoch scalars for one run, serializable as JSON lines.

    ``seconds`` holds the measured wall time but stays out of the
    serialized form so that identical runs produce identical files.
    """

    entries: list = field(default_factory=list)
    seconds: float = 0.0

    def append(self, **fields) -> None:
        self.entries.append(dict(fields))

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.entries)

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


@dataclass
class TrainResult:
    model: Model
    trace: LossTrace
    best: Model | None = None  # highest val accuracy, when a val split ran


def _snapshot(model: Model) -> Model:
    params = {
        name: ad.Tensor(t.data.copy(), requires_grad=True)
        for name, t in model.params.items()
    }
    return Model(model.config, params, model.provenance)


def _zero_grads(params: dict) -> None:
    for p in params.values():
        p.grad = None


def _collect_grads(params: dict) -> dict:
    return {name: p.grad for name, p in params.items() if p.grad is not None}


def _finite_or_raise(value: float, epoch: int, batch_index: int) -> float:
    if not math.isfinite(value):
        raise TrainingError(
            f"loss became non-finite at epoch {epoch}, batch {batch_index}"
        )
    return value


# ---------------------------------------------------------------------------
# pre-training loop


def _entropy_pixel_weight(emap, patch_size: int, channels: int, q: float) -> np.ndarray:
    """Per-pixel 0/1 mask keeping patches at or above the entropy q-quantile."""
    keep = emap.values >= np.quantile(emap.values, q)
    rows, cols = emap.grid_dims
    plane = np.kron(
        keep.reshape(rows, cols).astype(np.float32),
        np.ones((patch_size, patch_size), dtype=np.float32),
    )
    return np.broadcast_to(plane, (channels,) + plane.shape)


def _load_pixels(manifest: Manifest, records, cache: dict):
    for record in records:
        if record.path not in cache:
            cache[record.path] = load_sample(manifest, record)
        yield cache[record.path]


def pretrain_mae(run: RunConfig, manifest: Manifest) -> TrainResult:
    """Self-supervised reconstruction training on the manifest's train split.

    Per image: tile into patches, score each patch's entropy, add Gaussian
    noise with entropy-scaled variance, then train the encoder+decoder to
    reproduce the clean image under MSE. ``loss_patch_policy`` restricts the
    loss to the most-corrupted patches when set to top-quantile(q). Labels
    in the manifest are ignored. The returned checkpoint is tagged
    "mae-pretrained".
    """
    if run.phase != "pretrain":
        raise ConfigError(f"pretrain_mae needs a pretrain config, got {run.phase!r}")
    if run.model.decoder is None:
        raise ConfigError("pre-training needs a model config with a decoder")
    policy, quantile = parse_loss_policy(run.loss_patch_policy)
    records = manifest.split("train")
    model = init_model(run.model, run.seed)
    state = OptimizerState(
        lr=run.lr_max,
        beta1=run.betas[0],
        beta2=run.betas[1],
        eps=run.eps,
        weight_decay=run.weight_decay,
    )
    mean, std = default_stats(run.model.encoder.in_channels)
    trace = LossTrace()
    cache: dict = {}
    started = time.perf_counter()

    n_batches = math.ceil(len(records) / run.batch_size) if records else 0
    total_steps = run.epochs * max(n_batches, 1)
    global_step = 0
    for epoch in range(1, run.epochs + 1):
        epoch_losses = []
        for batch_index, batch in enumerate(
            batches(records, run.batch_size, run.seed, epoch)
        ):
            inputs, targets, weights = [], [], []
            for sample in _load_pixels(manifest, batch, cache):
                if run.augment:
                    rng = substream(run.seed, "augment", epoch, sample.id)
                    pixels = augment_pretrain(sample.pixels, rng, run.image_size)
                else:
                    pixels = eval_transform(sample.pixels, run.image_size)
                size = (run.patch_size, run.patch_size)
                grid = patchify(pixels, size)
                emap = entropy_map(pixels, size, run.noise.bins)
                noise = replace(
                    run.noise,
                    seed=derive_seed(run.seed, "corrupt", epoch, sample.id),
                )
                corrupted = unpatchify(corrupt(grid, emap, noise))
                inputs.append(normalize(corrupted, mean, std))
                targets.append(normalize(pixels, mean, std))
                if policy == "top-quantile":
                    weights.append(
                        _entropy_pixel_weight(
                            emap, run.patch_size, pixels.shape[2], quantile
                        )
                    )
            x = ad.Tensor(collate(inputs))
            y = ad.Tensor(collate(targets))
            pred = model.reconstruct(x)
            if policy == "top-quantile":
                loss = ad.mse_loss(pred, y, weight=collate(weights))
            else:
                loss = ad.mse_loss(pred, y)
            value = _finite_or_raise(loss.item(), epoch, batch_index)
            _zero_grads(model.params)
            loss.backward()
            grads = _collect_grads(model.params)
            if run.grad_clip is not None:
                clip_grad_norm(grads, run.grad_clip)
            state.lr = schedule_lr(
                global_step, total_steps, run.lr_max, run.lr_min, run.warmup_frac
            )
            adamw_step(model.params, grads, state)
            global_step += 1
            epoch_losses.append(value)
        trace.append(
            epoch=epoch,
            mean_loss=float(np.mean(epoch_losses)),
            lr=state.lr,
        )
    trace.seconds = time.perf_counter() - started
    model.provenance = "mae-pretrained"
    return TrainResult(model, trace)


# ---------------------------------------------------------------------------
# fine-tuning loop


def _split_accuracy(model: Model, manifest: Manifest, records, run: RunConfig) -> float:
    """Accuracy of the current model over records, eval transform, no grad."""
    correct = 0
    cache: dict = {}
    with ad.no_grad():
        for start in range(0, len(records), run.batch_size):
            chunk = records[start : start + run.batch_size]
            samples = list(_load_pixels(manifest, chunk, cache))
            x = ad.Tensor(
                collate(
                    [
                        normalize(eval_transform(s.pixels, run.image_size))
                        for s in samples
                    ]
                )
            )
            predicted = np.argmax(model.logits(x).data, axis=1)
            labels = np.array([r.label for r in chunk])
            correct += int((predicted == labels).sum())
    return correct / len(records)


def finetune(run: RunConfig, init: Model | None, manifest: Manifest) -> TrainResult:
    """Supervised training of encoder + classification head.

    ``init`` is either a loaded checkpoint whose encoder weights seed the
    classifier (its encoder config must match the run's) or None for a
    fresh random model. The class count comes from the manifest. Every
    parameter trains; nothing is frozen. When the configured val split is
    non-empty, each epoch records validation accuracy and the best-val
    parameters are returned alongside the final ones.
    """
    if run.phase != "finetune":
        raise ConfigError(f"finetune needs a finetune config, got {run.phase!r}")
    num_classes = len(manifest.class_names)
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes to fine-tune, got {num_classes}")
    if run.model.head is not None and run.model.head.num_classes != num_classes:
        raise ConfigError(
            f"model config declares {run.model.head.num_classes} classes but "
            f"the manifest has {num_classes}"
        )
    head = HeadConfig(num_classes)
    if init is None:
        model = init_model(ModelConfig(encoder=run.model.encoder, head=head), run.seed)
    else:
        if not encoder_configs_match(init.config.encoder, run.model.encoder):
            raise CheckpointError(
                "encoder config in the init checkpoint does not match the run's"
            )
        model = classifier_from_checkpoint(init, head, run.seed)

    records = manifest.split("train")
    val_records = manifest.split(run.val_split) if run.val_split else []
    state = OptimizerState(
        lr=run.lr_max,
        beta1=run.betas[0],
        beta2=run.betas[1],
        eps=run.eps,
        weight_decay=run.weight_decay,
    )
    trace = LossTrace()
    cache: dict = {}
    best: Model | None = None
    best_accuracy = -1.0
    started = time.perf_counter()

    n_batches = math.ceil(len(records) / run.batch_size) if records else 0
    total_steps = run.epochs * max(n_batches, 1)
    global_step = 0
    for epoch in range(1, run.epochs + 1):
        epoch_losses = []
        correct = 0
        for batch_index, batch in enumerate(
            batches(records, run.batch_size, run.seed, epoch)
        ):
            labels = np.array([r.label for r in batch])
            tensors = []
            for sample in _load_pixels(manifest, batch, cache):
                if run.augment:
                    rng = substream(run.seed, "augment", epoch, sample.id)
                    pixels = augment_finetune_train(sample.pixels, rng, run.image_size)
                else:
                    pixels = eval_transform(sample.pixels, run.image_size)
                tensors.append(normalize(pixels))
            x = ad.Tensor(collate(tensors))
            logits = model.logits(x)
            loss = ad.cross_entropy_with_logits(logits, labels)
            value = _finite_or_raise(loss.item(), epoch, batch_index)
            correct += int((np.argmax(logits.data, axis=1) == labels).sum())
            _zero_grads(model.params)
            loss.backward()
            grads = _collect_grads(model.params)
            if run.grad_clip is not None:
                clip_grad_norm(grads, run.grad_clip)
            state.lr = schedule_lr(
                global_step, total_steps, run.lr_max, run.lr_min, run.warmup_frac
            )
            adamw_step(model.params, grads, state)
            global_step += 1
            epoch_losses.append(value)
        entry = {
            "epoch": epoch,
            "mean_loss": float(np.mean(epoch_losses)),
            "lr": state.lr,
            "train_accuracy": correct / len(records),
        }
        if val_records:
            val_accuracy = _split_accuracy(model, manifest, val_records, run)
            entry["val_accuracy"] = val_accuracy
            if val_accuracy > best_accuracy:
                best_accuracy = val_accuracy
                best = _snapshot(model)
        trace.append(**entry)
    trace.seconds = time.perf_counter() - started
    return TrainResult(model, trace, best)
