#!/usr/bin/env python3
"""Train the gaussian and logistic heads on the same synthetic dataset and
tabulate per-fold final NLL, reproducing the loss-family comparison at desk
scale. Writes family_comparison.csv next to the training outputs.

Example:
    python scripts/compare_loss_families.py --out /tmp/gml-fam --excerpts 60
"""

import argparse
import sys
from pathlib import Path

from gml import data
from gml import train as tr
from gml.frontend import GammatoneConfig


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--excerpts", type=int, default=60)
    ap.add_argument("--listeners", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    spec = data.SyntheticSpec(
        n_excerpts=args.excerpts, listeners_per_condition=args.listeners, seed=args.seed
    )
    ds_dir = out / "dataset"
    if not (ds_dir / "manifest.csv").exists():
        data.generate_synthetic(spec, ds_dir)
    gcfg = GammatoneConfig()
    manifest = data.load_manifest(ds_dir / "manifest.csv")
    data.featurize(manifest, gcfg, out / "cache", ds_dir)
    dataset = data.build_training_set(manifest, out / "cache", gcfg)

    finals = {}
    for family in ("gaussian", "logistic"):
        cfg = tr.TrainConfig(loss_family=family, epochs_per_fold=args.epochs, seed=args.seed)
        result = tr.train(dataset, cfg, out_dir=out / family)
        finals[family] = {
            f: v for (f, e, s, v) in result.loss_rows if s == "train" and e == args.epochs
        }
        print(f"{family}: final train NLL per fold "
              f"{[round(finals[family][f], 4) for f in sorted(finals[family])]}")

    lines = ["fold,gaussian_nll,logistic_nll,logistic_wins"]
    wins = 0
    for f in sorted(finals["gaussian"]):
        g, l = finals["gaussian"][f], finals["logistic"][f]
        wins += l <= g
        lines.append(f"{f},{g!r},{l!r},{int(l <= g)}")
    (out / "family_comparison.csv").write_text("\n".join(lines) + "\n")
    print(f"logistic wins {wins}/{len(finals['gaussian'])} folds")
    return 0


if __name__ == "__main__":
    sys.exit(main())
