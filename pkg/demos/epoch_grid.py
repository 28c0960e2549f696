"""Epoch-proportion ablation grid, driven through the CLI.

Sweeps (pre-training epochs, fine-tuning epochs) over the grid

    (100, 30) (100, 45) (500, 30) (500, 45) (1000, 15)

and emits one directory per cell containing the pre-training run, both
fine-tuned pathways, and the ensemble report. At full scale each cell is
an overnight-class job, so --scale shrinks every epoch count
proportionally (default 0.1) while keeping the cell labels; --scale 1
runs the real thing. Ends with an accuracy-per-cell summary table.

Every step shells out to the installed console entry point, so this
doubles as an end-to-end exercise of the CLI surface: config files,
--set overrides, checkpoint handoff between phases, and report JSON.
"""

import argparse
import json
import subprocess
import sys
from pathlib import Path

from egmae.synthetic import write_texture_corpus, write_two_class_set

GRID = ((100, 30), (100, 45), (500, 30), (500, 45), (1000, 15))

BASE_CONFIG = {
    "pretrain": {"lr_max": 1e-2, "grad_clip": 1.0, "patch_size": 8, "image_size": 32},
    "finetune": {"image_size": 32, "val_split": "test"},
    "noise": {"normalize_entropy": True},
}


def run(argv):
    cmd = [sys.executable, "-m", "egmae", *argv]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        sys.stderr.write(proc.stdout + proc.stderr)
        raise SystemExit(f"command failed ({proc.returncode}): {' '.join(cmd)}")
    return proc.stdout


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--root", type=Path, default=Path("demo_out/epoch_grid"))
    parser.add_argument("--scale", type=float, default=0.1,
                        help="epoch multiplier; 1.0 reproduces the full grid")
    parser.add_argument("--train-count", type=int, default=64)
    parser.add_argument("--test-count", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    args.root.mkdir(parents=True, exist_ok=True)

    textures = write_texture_corpus(args.root / "textures", count=args.train_count,
                                    size=32, seed=args.seed)
    task = write_two_class_set(args.root / "task", train_count=args.train_count,
                               test_count=args.test_count, size=32, seed=args.seed + 1)
    config = args.root / "base.json"
    config.write_text(json.dumps(BASE_CONFIG, indent=2))

    results = []
    for pre_epochs, ft_epochs in GRID:
        cell = args.root / f"pre{pre_epochs}_ft{ft_epochs}"
        scaled_pre = max(1, round(pre_epochs * args.scale))
        scaled_ft = max(1, round(ft_epochs * args.scale))
        print(f"cell {cell.name}: {scaled_pre} pre-training + {scaled_ft} fine-tuning epochs")

        run(["pretrain", "--config", str(config), "--data", str(textures),
             "--out", str(cell / "pretrain"), "--epochs", str(scaled_pre),
             "--seed", str(args.seed)])
        checkpoint = cell / "pretrain" / "checkpoint.egmae"

        for name, init in (("ft_mae", str(checkpoint)), ("ft_random", "random")):
            run(["finetune", "--config", str(config), "--data", str(task),
                 "--init", init, "--out", str(cell / name),
                 "--epochs", str(scaled_ft), "--seed", str(args.seed + 1)])

        run(["evaluate",
             "--models", f"{cell / 'ft_mae' / 'checkpoint.egmae'},{cell / 'ft_random' / 'checkpoint.egmae'}",
             "--data", str(task), "--split", "test", "--ensemble",
             "--out", str(cell / "report")])
        report = json.loads((cell / "report" / "report.json").read_text())
        results.append((cell.name,
                        report["models"][0]["accuracy"],
                        report["models"][1]["accuracy"],
                        report["ensemble"]["accuracy"]))

    print("\ncell           mae-init  random-init  ensemble")
    for name, mae_acc, rand_acc, ens_acc in results:
        print(f"{name:14} {mae_acc:8.3f} {rand_acc:12.3f} {ens_acc:9.3f}")


if __name__ == "__main__":
    main()
