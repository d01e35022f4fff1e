#!/usr/bin/env python3
"""End-to-end pipeline driver: synth -> featurize -> train -> predict ->
evaluate -> report, all through the CLI, into one working directory.

Example:
    python scripts/run_pipeline.py --out /tmp/gml-run --excerpts 40 --seed 0
"""

import argparse
import json
import sys
from pathlib import Path

from gml import cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="working directory")
    ap.add_argument("--excerpts", type=int, default=40)
    ap.add_argument("--listeners", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--augmentation", default="none", choices=("none", "cutmix", "mixup"))
    ap.add_argument("--family", default="logistic", choices=("gaussian", "logistic"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {
        "synthetic": {
            "n_excerpts": args.excerpts,
            "listeners_per_condition": args.listeners,
            "seed": args.seed,
        },
        "train": {
            "epochs_per_fold": args.epochs,
            "folds": args.folds,
            "augmentation": args.augmentation,
            "loss_family": args.family,
            "seed": args.seed,
        },
    }
    cfg_path = out / "config.json"
    cfg_path.write_text(json.dumps(config, indent=2, sort_keys=True))

    ds = out / "dataset"
    cache = out / "cache"
    run = out / "run"
    steps = [
        ["synth", "--config", str(cfg_path), "--out", str(ds)],
        ["featurize", "--config", str(cfg_path), "--manifest", str(ds / "manifest.csv"), "--out", str(cache)],
        [
            "train",
            "--config", str(cfg_path),
            "--manifest", str(ds / "manifest.csv"),
            "--cache", str(cache),
            "--out", str(run),
        ],
        [
            "predict",
            "--config", str(cfg_path),
            "--checkpoint-dir", str(run),
            "--manifest", str(ds / "manifest.csv"),
            "--cache", str(cache),
            "--out", str(out / "predictions.csv"),
            "--mode", "oof",
        ],
        [
            "evaluate",
            "--predictions", str(out / "predictions.csv"),
            "--truth", str(ds / "truth.csv"),
            "--out", str(out / "report.json"),
            "--name", f"synthetic-{args.excerpts}x{args.listeners}",
        ],
        ["report", "--report", str(out / "report.json"), "--out", str(out / "report")],
    ]
    for step in steps:
        print(f"+ gml {' '.join(step)}", flush=True)
        rc = cli.main(step)
        if rc != 0:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())
