"""Command-line entry point: generate | train | eval | ablate | plot.

Every subcommand accepts `--config FILE` (YAML) plus repeated
`--set key.path=value` overrides; outputs embed the run config hash.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ablation import run_ablation, write_report
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .dataset_io import read_dataset, read_manifest, write_dataset
from .metrics import evaluate
from .model import ABLATION_MODES, DetectionModel
from .plots import emit_bev_scatter, emit_pr_curves
from .scene import generate_sequence
from .train import TrainConfig, run_inference, train


def _add_common(p):
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="dotted config override")


def _build_parser():
    parser = argparse.ArgumentParser(prog="rcfuse", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic dataset")
    _add_common(g)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--frames", type=int, default=None)
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true",
                   help="overwrite a non-empty output directory")

    t = sub.add_parser("train", help="train a model on a dataset")
    _add_common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--warm-start", help="checkpoint to initialize from")
    t.add_argument("--ablation", choices=ABLATION_MODES, default="full_rc")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_common(e)
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--out", required=True)
    e.add_argument("--ablation", choices=ABLATION_MODES, default="full_rc")
    e.add_argument("--oracle", action="store_true",
                   help="evaluate ground truth as predictions (sanity check)")

    a = sub.add_parser("ablate", help="run the modality ablation matrix")
    _add_common(a)
    a.add_argument("--data", required=True)
    a.add_argument("--val-data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--modes", nargs="+", choices=ABLATION_MODES, default=None)
    a.add_argument("--seeds", nargs="+", type=int, default=None)

    pl = sub.add_parser("plot", help="emit BEV scatter plots for a dataset")
    _add_common(pl)
    pl.add_argument("--data", required=True)
    pl.add_argument("--out", required=True)
    return parser


def _class_names(manifest, cfg):
    return manifest.get("class_names") or list(cfg.scene.class_names)


def cmd_generate(args, parser):
    cfg = load_config(args.config, args.overrides)
    if args.frames is not None:
        if args.frames <= 0:
            parser.error("--frames must be positive")
        cfg.scene.n_frames = args.frames
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        print(f"error: {out} is not empty (use --force)", file=sys.stderr)
        return 1
    seq = generate_sequence(args.seed, cfg.scene)
    write_dataset(seq, out, class_names=cfg.scene.class_names,
                  bev_extent=cfg.scene.bev_extent)
    print(f"wrote {len(seq.frames)} frames to {out} "
          f"(config hash {seq.config_hash})")
    return 0


def cmd_train(args, parser):
    cfg = load_config(args.config, args.overrides)
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    if args.seed is not None:
        cfg.train.seed = args.seed
    seq = read_dataset(args.data)
    import torch

    torch.manual_seed(cfg.train.seed)
    model = DetectionModel(cfg.model, mode=args.ablation)
    if args.warm_start:
        meta = load_checkpoint(model, args.warm_start, expect_hash=cfg.hash())
        if "warning" in meta:
            print(f"warning: {meta['warning']}", file=sys.stderr)
    out = Path(args.out)
    records = train(seq, model, cfg.train, out_dir=out,
                    log_fn=lambda r: print(json.dumps(r)))
    save_checkpoint(model, out / "final.ckpt",
                    step=cfg.train.epochs, config_hash=cfg.hash())
    print(f"final loss {records[-1]['loss']:.4f}; wrote {out}/final.ckpt")
    return 0


def cmd_eval(args, parser):
    cfg = load_config(args.config, args.overrides)
    seq = read_dataset(args.data)
    manifest = read_manifest(args.data)
    names = _class_names(manifest, cfg)
    gts = [f.gt_boxes for f in seq.frames]
    if args.oracle:
        preds = gts
    else:
        if not args.checkpoint:
            parser.error("--checkpoint is required unless --oracle is given")
        import torch

        torch.manual_seed(cfg.train.seed)
        model = DetectionModel(cfg.model, mode=args.ablation)
        meta = load_checkpoint(model, args.checkpoint, expect_hash=cfg.hash())
        if "warning" in meta:
            print(f"warning: {meta['warning']}", file=sys.stderr)
        preds = run_inference(model, seq, cfg.train)
    report = evaluate(preds, gts, names)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    payload["config_hash"] = cfg.hash()
    (out / "metrics_report.json").write_text(
        json.dumps(payload, indent=1, sort_keys=True)
    )
    emit_pr_curves(preds, gts, names, out)
    emit_bev_scatter(seq, preds, cfg.scene.bev_extent, out)
    print(f"mAP {report.mean_ap:.4f}  NDS {report.nds_score:.4f}  -> {out}")
    return 0


def cmd_ablate(args, parser):
    cfg = load_config(args.config, args.overrides)
    train_seq = read_dataset(args.data)
    val_seq = read_dataset(args.val_data)
    manifest = read_manifest(args.data)
    names = _class_names(manifest, cfg)
    modes = args.modes or list(cfg.ablation.modes)
    seeds = args.seeds or list(cfg.ablation.seeds)
    rows = run_ablation(
        train_seq, val_seq, modes, cfg.model, cfg.train, seeds=seeds,
        class_names=names,
        progress=lambda m, s, nds: print(f"{m} seed={s} NDS={nds:.4f}"),
    )
    for row in rows:
        row["config_hash"] = cfg.hash()
    write_report(rows, args.out)
    print(f"wrote {args.out}/ablation_table.tsv")
    return 0


def cmd_plot(args, parser):
    cfg = load_config(args.config, args.overrides)
    seq = read_dataset(args.data)
    paths = emit_bev_scatter(seq, [[] for _ in seq.frames],
                             cfg.scene.bev_extent, args.out)
    print(f"wrote {len(paths)} plots to {args.out}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    np.seterr(all="warn")
    return COMMANDS[args.command](args, parser)


if __name__ == "__main__":
    sys.exit(main())
