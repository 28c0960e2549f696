"""Command-line interface: the full pipeline as one executable.

Subcommands: pretrain, finetune, predict, evaluate, entropy-map. Runs are
driven by an optional TOML or JSON config file (picked by extension) with
sections {model, noise, data, pretrain, finetune, eval}; dedicated flags
and repeatable ``--set section.key=value`` overrides beat file values.
Every run directory receives the fully resolved configuration as
``config.resolved.json``, and re-running from that file reproduces the
run's outputs byte for byte.

Exit codes: 0 success; 2 usage or configuration problems; 3 data problems
(manifest, image decoding, tiling); 4 training aborts (non-finite loss);
5 checkpoint mismatches; 1 anything unexpected, including failed writes.

Note on seeds: ``noise.seed`` is accepted for completeness but training
derives per-image corruption seeds from the run seed, so setting it has
no effect on the loops.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import evaluation as ev
from .data import decode_image, load_manifest
from .entropy import NoiseConfig, entropy_map, heatmap_pgm, to_json_dict
from .errors import (
    AlignmentError,
    CheckpointError,
    ConfigError,
    DataError,
    DecodeError,
    EgmaeError,
    GridError,
    ManifestError,
    MetricError,
    ParameterError,
    RangeError,
    TapeError,
    TilingError,
    TrainingError,
    UsageError,
)
from .models import (
    DecoderConfig,
    EncoderConfig,
    ModelConfig,
    load_checkpoint,
    save_checkpoint,
)
from .training import RunConfig, finetune, pretrain_mae

SECTIONS = ("model", "noise", "data", "pretrain", "finetune", "eval")

_ENCODER_KEYS = tuple(f.name for f in fields(EncoderConfig))
_MODEL_KEYS = _ENCODER_KEYS + ("decoder_dim", "decoder_depth")
_NOISE_KEYS = tuple(f.name for f in fields(NoiseConfig))
_RUN_KEYS = tuple(
    f.name for f in fields(RunConfig) if f.name not in ("phase", "model", "noise")
)
_PRETRAIN_KEYS = _RUN_KEYS
_FINETUNE_KEYS = _RUN_KEYS + ("init",)
_EVAL_KEYS = ("models", "split", "ensemble", "batch_size", "image_size")
_DATA_KEYS = ("manifest", "classes")
_SECTION_KEYS = {
    "model": _MODEL_KEYS,
    "noise": _NOISE_KEYS,
    "data": _DATA_KEYS,
    "pretrain": _PRETRAIN_KEYS,
    "finetune": _FINETUNE_KEYS,
    "eval": _EVAL_KEYS,
}

USAGE_EXIT = 2
DATA_EXIT = 3
TRAINING_EXIT = 4
CHECKPOINT_EXIT = 5

_EXIT_CODES = (
    (TrainingError, TRAINING_EXIT),
    ((CheckpointError, AlignmentError), CHECKPOINT_EXIT),
    (
        (
            ManifestError,
            DecodeError,
            DataError,
            TilingError,
            GridError,
            RangeError,
            MetricError,
        ),
        DATA_EXIT,
    ),
    ((UsageError, ConfigError, ParameterError, TapeError), USAGE_EXIT),
)


# ---------------------------------------------------------------------------
# config loading and merging


def load_config_file(path) -> dict:
    path = Path(path)
    if path.suffix == ".toml":
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    elif path.suffix == ".json":
        raw = json.loads(path.read_text(encoding="utf-8"))
    else:
        raise UsageError(
            f"config file must end in .toml or .json, got {path.name!r}"
        )
    if not isinstance(raw, dict):
        raise UsageError(f"config file {path} must hold a table of sections")
    _check_sections(raw)
    return raw


def _check_sections(config: dict) -> None:
    for section, content in config.items():
        if section not in SECTIONS:
            raise UsageError(
                f"unknown config section {section!r}; expected one of {SECTIONS}"
            )
        if not isinstance(content, dict):
            raise UsageError(f"config section {section!r} must be a table")
        for key in content:
            if key not in _SECTION_KEYS[section]:
                raise UsageError(
                    f"unknown config key {section}.{key}; known keys: "
                    f"{', '.join(_SECTION_KEYS[section])}"
                )


def _coerce(text: str):
    """Parse an override value as JSON when possible, else keep the string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(pairs) -> dict:
    """Turn repeated ``section.key=value`` strings into a config dict."""
    out: dict = {}
    for pair in pairs or ():
        head, sep, value = pair.partition("=")
        if not sep:
            raise UsageError(f"override {pair!r} is not of the form section.key=value")
        section, dot, key = head.partition(".")
        if not dot or not key:
            raise UsageError(f"override {pair!r} is not of the form section.key=value")
        out.setdefault(section, {})[key] = _coerce(value)
    _check_sections(out)
    return out


def merge_config(*layers) -> dict:
    """Later layers win, section by section and key by key."""
    merged: dict = {}
    for layer in layers:
        for section, content in layer.items():
            merged.setdefault(section, {}).update(content)
    return merged


def _resolve_config(args, flag_layer: dict) -> dict:
    file_layer = load_config_file(args.config) if args.config else {}
    overrides = parse_overrides(getattr(args, "set", None))
    _check_sections(flag_layer)
    return merge_config(file_layer, overrides, flag_layer)


def _require(config: dict, section: str, key: str, flag: str):
    value = config.get(section, {}).get(key)
    if value is None:
        raise UsageError(f"missing {flag} (or config {section}.{key})")
    return value


# ---------------------------------------------------------------------------
# building runtime objects from the merged config


def _encoder_config(model_section: dict) -> EncoderConfig:
    kwargs = {k: v for k, v in model_section.items() if k in _ENCODER_KEYS}
    for key in ("stage_dims", "stage_depths"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return EncoderConfig(**kwargs)


def _noise_config(noise_section: dict) -> NoiseConfig:
    return NoiseConfig(**noise_section)


def _run_config(phase: str, config: dict, model: ModelConfig) -> RunConfig:
    section = dict(config.get(phase, {}))
    section.pop("init", None)
    if "betas" in section and section["betas"] is not None:
        section["betas"] = tuple(section["betas"])
    return RunConfig(
        phase=phase,
        model=model,
        noise=_noise_config(config.get("noise", {})),
        **section,
    )


def _dump_run(run: RunConfig) -> dict:
    out = {}
    for f in fields(RunConfig):
        if f.name in ("phase", "model", "noise"):
            continue
        value = getattr(run, f.name)
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out


def _resolved_document(command: str, run: RunConfig | None, config: dict) -> dict:
    """The effective configuration, sections fully populated."""
    doc: dict = {}
    if run is not None:
        model_section = dict(asdict(run.model.encoder))
        model_section["stage_dims"] = list(run.model.encoder.stage_dims)
        model_section["stage_depths"] = list(run.model.encoder.stage_depths)
        if run.model.decoder is not None:
            model_section["decoder_dim"] = run.model.decoder.dim
            model_section["decoder_depth"] = run.model.decoder.depth
        doc["model"] = model_section
        doc["noise"] = asdict(run.noise)
        doc[command] = _dump_run(run)
    if "data" in config:
        doc["data"] = dict(config["data"])
    return doc


def _write_json(path: Path, document: dict) -> None:
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_data(config: dict, flag: str = "--data"):
    manifest_path = _require(config, "data", "manifest", flag)
    classes = config.get("data", {}).get("classes")
    return load_manifest(manifest_path, classes)


def _warn_checksums(model, path) -> None:
    if model.checksum_failures:
        print(
            f"warning: {path}: checksum mismatch in tensors "
            f"{', '.join(model.checksum_failures)}",
            file=sys.stderr,
        )


# ---------------------------------------------------------------------------
# subcommands


def cmd_pretrain(args) -> int:
    flag_layer: dict = {"pretrain": {}, "data": {}}
    if args.data:
        flag_layer["data"]["manifest"] = args.data
    if args.epochs is not None:
        flag_layer["pretrain"]["epochs"] = args.epochs
    if args.seed is not None:
        flag_layer["pretrain"]["seed"] = args.seed
    config = _resolve_config(args, flag_layer)

    model_section = config.get("model", {})
    model = ModelConfig(
        encoder=_encoder_config(model_section),
        decoder=DecoderConfig(
            dim=model_section.get("decoder_dim", 64),
            depth=model_section.get("decoder_depth", 2),
        ),
    )
    if "epochs" not in config.get("pretrain", {}):
        raise UsageError("missing --epochs (or config pretrain.epochs)")
    run = _run_config("pretrain", config, model)
    manifest = _load_data(config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.resolved.json", _resolved_document("pretrain", run, config))
    result = pretrain_mae(run, manifest)
    save_checkpoint(result.model, out / "checkpoint.egmae")
    result.trace.write(out / "trace.jsonl")
    print(f"pretrain: {run.epochs} epochs in {result.trace.seconds:.1f}s", file=sys.stderr)
    return 0


def cmd_finetune(args) -> int:
    flag_layer: dict = {"finetune": {}, "data": {}}
    if args.data:
        flag_layer["data"]["manifest"] = args.data
    if args.epochs is not None:
        flag_layer["finetune"]["epochs"] = args.epochs
    if args.seed is not None:
        flag_layer["finetune"]["seed"] = args.seed
    if args.init is not None:
        flag_layer["finetune"]["init"] = args.init
    config = _resolve_config(args, flag_layer)

    model = ModelConfig(encoder=_encoder_config(config.get("model", {})))
    if "epochs" not in config.get("finetune", {}):
        raise UsageError("missing --epochs (or config finetune.epochs)")
    run = _run_config("finetune", config, model)
    manifest = _load_data(config)

    init_spec = config.get("finetune", {}).get("init", "random")
    if init_spec == "random":
        init = None
    else:
        init = load_checkpoint(init_spec)
        _warn_checksums(init, init_spec)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = _resolved_document("finetune", run, config)
    resolved["finetune"]["init"] = init_spec
    _write_json(out / "config.resolved.json", resolved)
    result = finetune(run, init, manifest)
    save_checkpoint(result.model, out / "checkpoint.egmae")
    if result.best is not None:
        save_checkpoint(result.best, out / "checkpoint.best.egmae")
    result.trace.write(out / "trace.jsonl")
    print(f"finetune: {run.epochs} epochs in {result.trace.seconds:.1f}s", file=sys.stderr)
    return 0


def cmd_evaluate(args) -> int:
    flag_layer: dict = {"eval": {}, "data": {}}
    if args.data:
        flag_layer["data"]["manifest"] = args.data
    if args.models:
        flag_layer["eval"]["models"] = [p for p in args.models.split(",") if p]
    if args.split:
        flag_layer["eval"]["split"] = args.split
    if args.ensemble:
        flag_layer["eval"]["ensemble"] = True
    config = _resolve_config(args, flag_layer)

    eval_section = config.get("eval", {})
    model_paths = eval_section.get("models") or []
    if not model_paths:
        raise UsageError("missing --models (or config eval.models)")
    models = []
    for path in model_paths:
        model = load_checkpoint(path)
        _warn_checksums(model, path)
        models.append(model)
    manifest = _load_data(config)

    report = ev.evaluate(
        models,
        manifest,
        split=eval_section.get("split", "test"),
        ensemble=bool(eval_section.get("ensemble", False)),
        image_size=eval_section.get("image_size", 32),
        batch_size=eval_section.get("batch_size", 16),
    )
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        resolved = {
            "data": dict(config.get("data", {})),
            "eval": {
                "models": list(model_paths),
                "split": eval_section.get("split", "test"),
                "ensemble": bool(eval_section.get("ensemble", False)),
                "image_size": eval_section.get("image_size", 32),
                "batch_size": eval_section.get("batch_size", 16),
            },
        }
        _write_json(out / "config.resolved.json", resolved)
        (out / "report.json").write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_predict(args) -> int:
    model = load_checkpoint(args.model)
    _warn_checksums(model, args.model)
    manifest = load_manifest(args.data)
    records = manifest.split(args.split)
    preds = ev.predict(
        model,
        manifest,
        records,
        image_size=args.image_size,
        batch_size=args.batch_size,
    )
    document = {
        "class_names": [str(n) for n in preds.class_names],
        # ids are 64-bit; strings keep them exact in every JSON parser
        "ids": [str(int(i)) for i in preds.ids],
        "labels": [int(l) for l in preds.labels],
        "predicted": [int(p) for p in preds.predicted],
        "probabilities": [[float(p) for p in row] for row in preds.probabilities],
    }
    text = json.dumps(document, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "predictions.json").write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_entropy_map(args) -> int:
    pixels = decode_image(args.image)
    emap = entropy_map(pixels, (args.patch, args.patch), bins=args.bins)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(str(prefix) + ".pgm").write_text(heatmap_pgm(emap), encoding="utf-8")
    Path(str(prefix) + ".json").write_text(
        json.dumps(to_json_dict(emap), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return 0


# ---------------------------------------------------------------------------
# parser and dispatch


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="egmae",
        description="Entropy-guided masked autoencoder pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML or JSON config file")
        p.add_argument(
            "--set",
            action="append",
            metavar="SECTION.KEY=VALUE",
            help="override one config value (repeatable)",
        )

    p = sub.add_parser("pretrain", help="self-supervised reconstruction training")
    common(p)
    p.add_argument("--data", help="manifest CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="supervised classifier training")
    common(p)
    p.add_argument("--data", help="manifest CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--init", help="'random' or a checkpoint path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="score one or two checkpoints on a split")
    common(p)
    p.add_argument("--models", help="checkpoint path, or two comma-separated")
    p.add_argument("--data", help="manifest CSV")
    p.add_argument("--split", help="train, val, or test (default test)")
    p.add_argument("--ensemble", action="store_true", help="also score the averaged probabilities")
    p.add_argument("--out", help="directory for report.json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="emit per-sample probabilities as JSON")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="manifest CSV")
    p.add_argument("--split", default="test")
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--out", help="directory for predictions.json")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("entropy-map", help="per-patch entropy heatmap for one image")
    p.add_argument("--image", required=True, help="PGM/PPM image")
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--bins", type=int, default=256)
    p.add_argument("--out", required=True, help="output prefix for .pgm and .json")
    p.set_defaults(func=cmd_entropy_map)

    return parser


def _exit_code(e: EgmaeError) -> int:
    for classes, code in _EXIT_CODES:
        if isinstance(e, classes):
            return code
    return USAGE_EXIT


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except EgmaeError as e:
        print(f"error: {e}", file=sys.stderr)
        return _exit_code(e)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
