"""Command-line interface: synth, featurize, train, predict, simulate,
evaluate, report.

Exit codes: 0 success, 1 validation/user error, 2 unexpected runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import data, evaluate as ev, report as rpt, train as tr
from .errors import ConfigError, ToolkitError
from .frontend import GammatoneConfig
from .nn import BackboneConfig
from .prob import sample_scores
from .util import atomic_write_text, child_rng, fmt_float

CONFIG_SECTIONS = ("gammatone", "train", "backbone", "synthetic")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = sorted(set(cfg) - set(CONFIG_SECTIONS))
    if unknown:
        raise ConfigError(f"{path}: unknown config section {unknown[0]!r}")
    return cfg


def _section(cfg: dict, name: str, cls):
    d = cfg.get(name, {})
    if not isinstance(d, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    try:
        return cls.from_dict(d) if d else cls()
    except TypeError as exc:
        raise ConfigError(f"config section {name!r}: {exc}") from exc


def _cmd_synth(args):
    cfg = _load_config(args.config)
    spec = _section(cfg, "synthetic", data.SyntheticSpec)
    if args.seed is not None:
        spec = data.SyntheticSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    manifest = data.generate_synthetic(spec, args.out)
    print(
        f"wrote {len(manifest.entries)} conditions, {manifest.rating_count()} ratings "
        f"to {args.out}"
    )


def _cmd_featurize(args):
    cfg = _load_config(args.config)
    gcfg = _section(cfg, "gammatone", GammatoneConfig)
    manifest = data.load_manifest(args.manifest)
    index = data.featurize(manifest, gcfg, args.out, Path(args.manifest).parent)
    print(f"featurized {len(index['entries'])} pairs into {args.out}")


def _cmd_train(args):
    cfg = _load_config(args.config)
    gcfg = _section(cfg, "gammatone", GammatoneConfig)
    tcfg = _section(cfg, "train", tr.TrainConfig)
    backbone = _section(cfg, "backbone", BackboneConfig)
    if args.seed is not None:
        tcfg = tr.TrainConfig.from_dict({**tcfg.to_dict(), "seed": args.seed})
    manifest = data.load_manifest(args.manifest)
    dataset = data.build_training_set(manifest, args.cache, gcfg)
    result = tr.train(dataset, tcfg, backbone=backbone, out_dir=args.out)
    finals = [
        f"fold {f}: {v:.4f}"
        for (f, e, s, v) in result.loss_rows
        if s == "val" and e == tcfg.epochs_per_fold
    ]
    print(f"trained {len(result.checkpoints)} folds; final val NLL " + "; ".join(finals))


def _collect_checkpoints(args):
    paths = [Path(p) for p in args.checkpoint or []]
    if args.checkpoint_dir:
        paths.extend(sorted(Path(args.checkpoint_dir).glob("*.gmlckpt")))
    if not paths:
        raise ConfigError("no checkpoints given (use --checkpoint or --checkpoint-dir)")
    return [tr.load_checkpoint(p) for p in paths]


def _cmd_predict(args):
    cfg = _load_config(args.config)
    gcfg = _section(cfg, "gammatone", GammatoneConfig)
    ckpts = _collect_checkpoints(args)
    manifest = data.load_manifest(args.manifest)
    inputs = data.load_eval_inputs(manifest, args.cache, gcfg)
    mode = args.mode
    if mode == "single" and len(ckpts) != 1:
        raise ConfigError(f"--mode single needs exactly one checkpoint, got {len(ckpts)}")
    rows = []
    if mode == "oof":
        fold_of = {}
        for ci, ckpt in enumerate(ckpts):
            for eid in ckpt.meta.get("val_excerpt_ids", []):
                if eid in fold_of:
                    raise ConfigError(f"excerpt {eid} is validation in two checkpoints")
                fold_of[eid] = ci
        for key, excerpt_id, mi, _n in inputs:
            if excerpt_id not in fold_of:
                raise ConfigError(f"excerpt {excerpt_id} not held out by any checkpoint")
            rows.append((key, tr.predict(ckpts[fold_of[excerpt_id]], mi)))
    elif mode == "ensemble":
        for key, _eid, mi, _n in inputs:
            rows.append((key, tr.predict_ensemble(ckpts, mi)))
    else:
        for key, _eid, mi, _n in inputs:
            rows.append((key, tr.predict(ckpts[0], mi)))
    ev.write_predictions_csv(args.out, rows)
    print(f"wrote {len(rows)} predictions to {args.out}")


def _cmd_simulate(args):
    preds = ev.read_predictions_csv(args.predictions)
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    rng = child_rng(args.seed if args.seed is not None else 0, "simulate")
    lines = [",".join(ev.SUBJECTIVE_HEADER)]
    for key, dist in preds.items():
        draws = np.clip(sample_scores(dist, args.n, rng), 0.0, 100.0)
        for i, s in enumerate(draws):
            lines.append(f"{key},S{i + 1:03d},{fmt_float(s)}")
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"simulated {args.n} listeners for {len(preds)} conditions into {args.out}")


def _cmd_evaluate(args):
    if args.subjective and args.truth:
        raise ConfigError("--subjective and --truth conflict; give exactly one")
    if not args.subjective and not args.truth:
        raise ConfigError("need --subjective or --truth")
    preds = ev.read_predictions_csv(args.predictions)
    if args.subjective:
        subj = ev.read_subjective_csv(args.subjective)
        report = ev.evaluate(preds, subj, name=args.name)
    else:
        truth = ev.read_truth_csv(args.truth)
        report = ev.evaluate_against_truth(preds, truth, name=args.name)
    sys.stdout.write(rpt.format_table(report))
    if args.out:
        rpt.write_report_json(args.out, report)
        print(f"wrote report to {args.out}")


def _cmd_report(args):
    report = rpt.read_report_json(args.report)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = rpt.format_table(report)
    atomic_write_text(out / "table.txt", table)
    rpt.write_scatter_svg(out / "scatter.svg", report)
    sys.stdout.write(table)
    print(f"wrote table.txt and scatter.svg to {out}")


def build_parser() -> _Parser:
    parser = _Parser(prog="gml", description="Generative machine listener toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="seed override")

    p = sub.add_parser("synth", help="generate the synthetic oracle dataset")
    common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("featurize", help="build spectrogram caches from a manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="cache directory")
    p.set_defaults(func=_cmd_featurize)

    p = sub.add_parser("train", help="train cross-validated checkpoints")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--out", required=True, help="checkpoint/loss output directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="predict score distributions for manifest pairs")
    common(p)
    p.add_argument("--checkpoint", action="append", help="checkpoint file (repeatable)")
    p.add_argument("--checkpoint-dir", help="directory of .gmlckpt files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--out", required=True, help="predictions CSV path")
    p.add_argument("--mode", choices=("single", "ensemble", "oof"), default="ensemble")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("simulate", help="sample simulated listener panels from predictions")
    common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--n", type=int, required=True, help="listeners per condition")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("evaluate", help="score predictions against subjective data")
    common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--subjective", help="per-listener scores CSV")
    p.add_argument("--truth", help="true (mu, std, N) CSV for the synthetic loop")
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--name", default="evaluation")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="render a report JSON as table and SVG scatter")
    common(p)
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
        return 0
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit:
        raise
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
