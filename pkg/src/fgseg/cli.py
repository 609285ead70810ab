"""Command-line entry point.

Subcommands: gen-phantom, train, eval, ablate, inspect-forces. Every command
resolves one RunConfig (defaults < config file < --set overrides), writes it
next to its outputs, and derives all randomness from the configured seed.

Exit codes: 0 success, 1 usage error, 2 data error, 3 run failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import dataio, phantom
from .ablation import AblationSpec, run_ablation, summarize
from .config import ConfigError, RunConfig
from .forcekeys import dynamic_weights, select_key_frames
from .metrics import flops_estimate
from .network import init_params
from .svgplot import force_curve_svg
from .tensor import NonFiniteError, load_checkpoint, save_checkpoint
from .training import VARIANTS, evaluate, log_to_csv, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUN = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; usage errors are 1
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_config(args) -> RunConfig:
    overrides = getattr(args, "set", None)
    try:
        if getattr(args, "config", None):
            return RunConfig.from_file(args.config, overrides)
        cfg = RunConfig.default()
        cfg.apply_overrides(overrides)
        return cfg
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {exc.filename}") from None
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def _timestamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _split_videos(videos):
    return ([v for v in videos if v.split == "train"],
            [v for v in videos if v.split == "val"])


def _load_split_dataset(root, cfg):
    videos = dataio.load_dataset(root)
    if cfg.data.downsample_stride > 1:
        videos = [dataio.downsample(v, cfg.data.downsample_stride) for v in videos]
    return videos


def cmd_gen_phantom(args) -> int:
    cfg = _load_config(args)
    if args.sequences is not None and args.sequences < 1:
        raise UsageError("--sequences must be >= 1")
    n = args.sequences if args.sequences is not None else 10
    seed = args.seed if args.seed is not None else cfg.train.seed
    out = Path(args.out)
    phantom.generate_dataset(cfg.phantom, n, seed, out,
                             val_fraction=cfg.data.val_fraction)
    cfg.run = replace(cfg.run, command="gen-phantom", seed=seed, data=str(out))
    cfg.save(out / "config.ini")
    print(f"wrote {n} sequences to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.variant not in VARIANTS:
        raise UsageError(f"unknown variant {args.variant!r}; valid: {', '.join(VARIANTS)}")
    out = Path(args.out)
    ckpt_path = out / "checkpoint.fgc"
    if ckpt_path.exists() and not args.force:
        raise UsageError(f"{ckpt_path} exists; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    if args.seed is not None:
        cfg.train = replace(cfg.train, seed=args.seed)

    videos = _load_split_dataset(args.data, cfg)
    train_videos, val_videos = _split_videos(videos)
    if not train_videos or not val_videos:
        raise dataio.ParseError("dataset needs both train and val videos")

    neck_cfg = cfg.make_neck_config()
    result = train(train_videos, val_videos, cfg.model, neck_cfg, cfg.train,
                   args.variant, augment_cfg=cfg.augment)
    save_checkpoint(result.params, ckpt_path)
    log_to_csv(result.log, out / "log.csv",
               header_comment=f"train {args.variant} seed {cfg.train.seed} "
                              f"started {_timestamp()}")
    cfg.run = replace(cfg.run, command="train", variant=args.variant,
                      seed=cfg.train.seed, data=str(args.data))
    cfg.save(out / "config.ini")
    best = min(row.val_loss for row in result.log)
    print(f"trained {args.variant} for {len(result.log) - 1} epochs; "
          f"best val loss {best:.6f}; checkpoint at {ckpt_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise FileNotFoundError(ckpt_path)
    if args.config is None:
        sibling = ckpt_path.parent / "config.ini"
        if not sibling.exists():
            raise UsageError("no --config given and no config.ini next to the checkpoint")
        args.config = str(sibling)
    cfg = _load_config(args)
    variant = cfg.run.variant or "baseline"

    params = load_checkpoint(ckpt_path)
    neck_cfg = cfg.make_neck_config()
    expected = init_params(cfg.model, None if variant == "baseline" else neck_cfg,
                           seed=0)
    if set(expected) != set(params) or any(
            expected[k].data.shape != params[k].data.shape for k in expected):
        raise dataio.ParseError(
            f"checkpoint {ckpt_path} does not match the configured architecture")

    videos = _load_split_dataset(args.data, cfg)
    _, val_videos = _split_videos(videos)
    if not val_videos:
        raise dataio.ParseError("dataset has no validation videos")
    nc = None if variant == "baseline" else neck_cfg
    loss, report = evaluate(val_videos, params, cfg.model, nc, variant,
                            cfg.train.class_weights,
                            batch_size=cfg.eval.batch_size)
    report.flops = flops_estimate(cfg.model, neck_cfg, variant)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", encoding="ascii", newline="\n") as fh:
        fh.write("variant,val_loss,miou,dice,pixel_accuracy,artery_iou,vein_iou,flops,samples\n")
        fh.write(f"{variant},{loss:.6f},{report.miou:.6f},{report.dice:.6f},"
                 f"{report.pixel_accuracy:.6f},"
                 f"{report.per_class_iou.get('artery', float('nan')):.6f},"
                 f"{report.per_class_iou.get('vein', float('nan')):.6f},"
                 f"{report.flops},{report.sample_count}\n")
    cfg.run = replace(cfg.run, command="eval", variant=variant, data=str(args.data))
    cfg.save(out / "config.ini")
    print(f"{variant}: val_loss={loss:.6f} miou={report.miou:.4f} dice={report.dice:.4f}")
    return EXIT_OK


def _parse_seeds(text: str) -> tuple:
    parts = text.split(",")
    try:
        seeds = tuple(int(p) for p in parts)
    except ValueError:
        raise UsageError(f"bad --seeds value {text!r}; expected e.g. 1,2,3") from None
    if not seeds:
        raise UsageError("need at least one seed")
    return seeds


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    seeds = _parse_seeds(args.seeds)
    videos = _load_split_dataset(args.data, cfg)
    train_videos, val_videos = _split_videos(videos)
    if not train_videos or not val_videos:
        raise dataio.ParseError("dataset needs both train and val videos")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.run = replace(cfg.run, command="ablate", data=str(args.data))
    cfg.save(out / "config.ini")

    spec = AblationSpec(seeds=seeds, train=cfg.train)
    reports = run_ablation(spec, train_videos, val_videos, cfg.model,
                           cfg.make_neck_config(), out_dir=out,
                           augment_cfg=cfg.augment, progress=print)
    print("variant          mean_miou  std     mean_dice  std")
    for variant, mi, si, md, sd, _ in summarize(reports):
        print(f"{variant:<16s} {mi:.4f}    {si:.4f}  {md:.4f}    {sd:.4f}")
    return EXIT_OK


def cmd_inspect_forces(args) -> int:
    root = Path(args.data)
    force_path = root / args.video / "force.csv"
    if not force_path.exists():
        raise FileNotFoundError(force_path)
    trace = dataio.load_force_csv(force_path)
    sel = select_key_frames(trace)
    mags = trace.fz_magnitudes()
    print(f"video {args.video}: {len(trace)} frames, "
          f"f_min={sel.f_min:.4f}N @ frame {sel.idx_min}, "
          f"f_max={sel.f_max:.4f}N @ frame {sel.idx_max}")
    print("frame  |fz|      w_min   w_max")
    for i, m in enumerate(mags):
        w = dynamic_weights(float(m), sel.f_min, sel.f_max)
        marker = " <- K_min" if i == sel.idx_min else (" <- K_max" if i == sel.idx_max else "")
        print(f"{i:>5d}  {m:8.4f}  {w.w_min:.4f}  {w.w_max:.4f}{marker}")
    out = Path(args.out) if args.out else root / f"{args.video}_forces.svg"
    force_curve_svg(mags, sel.idx_min, sel.idx_max, out,
                    title=f"|fz| for {args.video}")
    print(f"plot written to {out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="fgseg",
                     description="Force-sensing guided artery-vein segmentation "
                                 "on synthetic vessel phantoms")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")

    p = sub.add_parser("gen-phantom", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--sequences", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_gen_phantom)

    p = sub.add_parser("train", help="train one variant")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", default="fg_full")
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true",
                   help="overwrite an existing checkpoint")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the validation split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run the four-variant ablation")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="1,2,3")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("inspect-forces", help="key frames and weights for one video")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_inspect_forces)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (dataio.ParseError, dataio.AlignmentError, phantom.GeometryError,
            FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, ValueError, OSError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
