"""Self-supervised pre-training on a procedural texture corpus.

Generates a seeded corpus of noise/stripe/checkerboard images, runs the
entropy-guided reconstruction loop, and leaves a checkpoint, a loss
trace, and the corpus itself under --out. Defaults are sized to finish
in under a minute; raise --count/--epochs for a longer run (the
acceptance experiment uses 200 images and 30 epochs).
"""

import argparse
from pathlib import Path

from egmae.data import load_manifest
from egmae.entropy import NoiseConfig
from egmae.models import DecoderConfig, EncoderConfig, ModelConfig, save_checkpoint
from egmae.synthetic import write_texture_corpus
from egmae.training import RunConfig, pretrain_mae


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("demo_out/pretrain"))
    parser.add_argument("--count", type=int, default=96)
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    manifest = load_manifest(
        write_texture_corpus(args.out / "corpus", count=args.count, size=32, seed=args.seed)
    )
    run = RunConfig(
        phase="pretrain",
        model=ModelConfig(encoder=EncoderConfig(), decoder=DecoderConfig()),
        epochs=args.epochs,
        batch_size=16,
        seed=args.seed,
        lr_max=1e-2,
        grad_clip=1.0,
        noise=NoiseConfig(normalize_entropy=True),
        patch_size=8,
        image_size=32,
    )
    print(f"pre-training on {args.count} textures for {args.epochs} epochs...")
    result = pretrain_mae(run, manifest)

    for entry in result.trace.entries:
        print(f"  epoch {entry['epoch']:>3}: loss {entry['mean_loss']:.4f}  lr {entry['lr']:.2e}")
    first = result.trace.entries[0]["mean_loss"]
    last = result.trace.entries[-1]["mean_loss"]
    print(f"loss {first:.4f} -> {last:.4f} ({last / first:.0%} of the first epoch)")

    save_checkpoint(result.model, args.out / "checkpoint.egmae")
    result.trace.write(args.out / "trace.jsonl")
    print(f"checkpoint and trace in {args.out}/")


if __name__ == "__main__":
    main()
