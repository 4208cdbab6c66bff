"""Command-line driver: data generation, both training stages, evaluation and rendering.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or contract
error (bad flags, inconsistent configuration, incompatible inputs).
Set ``VIDBOOT_LOG_LEVEL`` (e.g. ``DEBUG``) to change log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from importlib import resources
from pathlib import Path

from .errors import ConfigError, ContractError, DatasetFormatError, DomainError

log = logging.getLogger("vidboot")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
PRESETS = ("sn2sn", "sun2sn", "cs2cs", "cs2k")
DATASET_ENTRIES = ("frames", "depth", "labels", "dynamic", "poses.txt", "manifest.json")


class UsageError(Exception):
    """Raised for flag combinations that parse but make no sense together."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vidboot", description="Bootstrapped self-supervised depth and segmentation at toy scale.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="render a synthetic video dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--frames", type=int, default=400)
    g.add_argument("--out", required=True)
    g.add_argument("--classes", type=int, default=6)
    g.add_argument("--dynamic", action="store_true", help="add independently moving objects")
    g.add_argument("--force", action="store_true", help="overwrite an existing dataset directory")
    g.add_argument("--label-stride", type=int, default=1, help="keep ground truth on every Nth frame only")
    g.add_argument("--scene-seed", type=int, default=None, help="scene seed (defaults to --seed)")
    g.add_argument("--size", type=int, nargs=2, default=(64, 64), metavar=("W", "H"))

    for name, helptext in (("train-sup", "supervised stage on labeled frames"),
                           ("train-selfsup", "bootstrapped self-supervised stage on unlabeled video")):
        t = sub.add_parser(name, help=helptext)
        t.add_argument("--config", help="JSON run config or preset name (" + ", ".join(PRESETS) + ")")
        t.add_argument("--data", required=True)
        t.add_argument("--ckpt-in")
        t.add_argument("--ckpt-out", required=True)
        t.add_argument("--log", help="training log path (default: train_log.jsonl next to --ckpt-out)")
        t.add_argument("--steps", type=int)
        t.add_argument("--seed", type=int)
        t.add_argument("--lr", type=float)
        t.add_argument("--batch-size", type=int)
        t.add_argument("--no-augment", action="store_true")
        t.add_argument("--weights", help="seven comma-separated loss weights: pho,ssim,sc,sm,om,D,S")
        # Stage-specific flags are accepted by both parsers so that misuse is
        # reported as a conflict rather than as an unknown flag.
        t.add_argument("--labels", type=int, metavar="STRIDE",
                       help="train-sup only: supervise on every STRIDE-th labeled frame")
        t.add_argument("--pose-lr", type=float, help="train-selfsup only")
        t.add_argument("--pose-warmup", type=int, help="train-selfsup only: pose-only steps first")
        t.add_argument("--snippet-stride", type=int, help="train-selfsup only")
        t.add_argument("--snippet-skip", type=int, help="train-selfsup only")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--task", required=True, choices=("depth", "seg", "odom"))
    e.add_argument("--scale-mode", default="median", choices=("median", "none"))
    e.add_argument("--out", default=".", help="directory for the report file")
    e.add_argument("--snippet-stride", type=int, default=1, help="odom only")
    e.add_argument("--snippet-skip", type=int, default=10, help="odom only")

    r = sub.add_parser("render", help="write input | gt | prediction panels for one frame")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--frame", type=int, required=True)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--zoom", type=int, default=4)

    rp = sub.add_parser("report", help="render matplotlib figures from training logs or benchmark results")
    rp.add_argument("--log", action="append", default=[], help="train_log.jsonl (repeatable)")
    rp.add_argument("--bench", help="benchmark results JSON written by 'bench'")
    rp.add_argument("--out", required=True, help="output directory")

    b = sub.add_parser("bench", help="run the seeded three-arm benchmark")
    b.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    b.add_argument("--dynamic", action="store_true")
    b.add_argument("--out", required=True, help="output directory")
    return p


# ---------------------------------------------------------------------------
# helpers


def _preset_path(name: str) -> Path | None:
    ref = resources.files("vidboot") / "presets" / f"{name}.json"
    return Path(str(ref)) if ref.is_file() else None


def resolve_config(arg: str | None) -> dict:
    """Load a JSON config from a path, falling back to the bundled presets by name."""
    if arg is None:
        return {}
    path = Path(arg)
    if not path.is_file():
        stem = path.stem if path.suffix == ".json" else path.name
        bundled = _preset_path(stem)
        if bundled is None:
            raise UsageError(f"config {arg!r} not found and not a bundled preset ({', '.join(PRESETS)})")
        path = bundled
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return cfg


def _parse_weights(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--weights expects seven numbers, got {text!r}") from None
    if len(vals) != 7:
        raise UsageError(f"--weights expects seven numbers, got {len(vals)}")
    return vals


def train_config_from_args(args) -> "TrainConfig":
    from .training import TrainConfig

    stage = "supervised" if args.command == "train-sup" else "selfsup"
    if stage == "selfsup":
        if args.labels is not None:
            raise UsageError("--labels conflicts with train-selfsup: the self-supervised stage reads no labels")
        if not args.ckpt_in:
            raise UsageError("self-supervised stage requires a supervised checkpoint (--ckpt-in)")
    else:
        extra = [f for f, v in (("--pose-lr", args.pose_lr), ("--pose-warmup", args.pose_warmup),
                                ("--snippet-stride", args.snippet_stride),
                                ("--snippet-skip", args.snippet_skip)) if v is not None]
        if extra:
            raise UsageError(f"{', '.join(extra)} only apply to train-selfsup")
    cfg = resolve_config(args.config)
    cfg.pop("stage", None)
    overrides = {
        "steps": args.steps, "seed": args.seed, "lr": args.lr, "batch_size": args.batch_size,
        "pose_lr": args.pose_lr, "pose_warmup_steps": args.pose_warmup,
        "snippet_stride": args.snippet_stride, "snippet_skip": args.snippet_skip,
    }
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    if args.no_augment:
        cfg["augment"] = False
    if args.weights:
        cfg["weights"] = _parse_weights(args.weights)
        cfg.pop("preset", None)
    ckpt_out = Path(args.ckpt_out)
    cfg.update(stage=stage, data=str(args.data), checkpoint_in=args.ckpt_in, checkpoint_out=str(ckpt_out),
               log_path=str(args.log) if args.log else str(ckpt_out.parent / "train_log.jsonl"))
    return TrainConfig.from_dict(cfg)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    from .synthdata import generate_sequence, sparse_label_view, write_dataset

    if args.frames < 3:
        raise UsageError("--frames must be >= 3 (a snippet needs three frames)")
    if args.classes < 3:
        raise UsageError("--classes must be >= 3")
    if args.label_stride < 1:
        raise UsageError("--label-stride must be >= 1")
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        if not args.force:
            raise UsageError(f"{out} exists and is not empty; pass --force to overwrite")
        for name in DATASET_ENTRIES:
            p = out / name
            if p.is_dir():
                shutil.rmtree(p)
            elif p.exists():
                p.unlink()
    seq = generate_sequence(args.seed, args.frames, num_classes=args.classes, dynamic=args.dynamic,
                            scene_seed=args.scene_seed, width=args.size[0], height=args.size[1])
    if args.label_stride > 1:
        seq = sparse_label_view(seq, args.label_stride)
    write_dataset(out, seq)
    print(f"dataset {out}: {len(seq)} frames, {seq.num_classes} classes, "
          f"{len(seq.labeled_indices)} labeled, dynamic={args.dynamic}, scene_seed={seq.meta['scene_seed']}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .networks import load_checkpoint
    from .synthdata import read_dataset, sparse_label_view
    from .training import train_selfsup, train_supervised

    config = train_config_from_args(args)
    if config.stage == "supervised":
        params = None
        if config.checkpoint_in:
            ck = load_checkpoint(config.checkpoint_in)
            if ck.stage != "supervised":
                raise UsageError("train-sup can only resume from a supervised checkpoint")
            params = ck.params
        seq = read_dataset(config.data)
        if args.labels is not None:
            if args.labels < 1:
                raise UsageError("--labels must be >= 1")
            seq = sparse_label_view(seq, args.labels)
        if params is not None and params.arch.num_classes != seq.num_classes:
            raise UsageError("checkpoint and dataset disagree on the class count")
        ckpt, tlog = train_supervised(config, seq, params)
    else:
        ck = load_checkpoint(config.checkpoint_in)
        ckpt, tlog = train_selfsup(config, ck)
    last = tlog.records[-1]["total"] if tlog.records else float("nan")
    print(f"{config.stage}: {config.steps} steps, final loss {last:.6g}, checkpoint {config.checkpoint_out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from . import evalmetrics as em
    from .networks import load_checkpoint
    from .synthdata import read_dataset

    ckpt = load_checkpoint(args.ckpt)
    seq = read_dataset(args.data)
    if ckpt.num_classes != seq.num_classes:
        raise UsageError(f"checkpoint has {ckpt.num_classes} classes, dataset {seq.num_classes}")
    out = Path(args.out)
    meta = {"checkpoint": str(args.ckpt), "data": str(args.data), "stage": ckpt.stage}
    if args.task == "depth":
        res = em.evaluate_depth(ckpt.params, seq, args.scale_mode)
        payload = dict(meta, scale_mode=args.scale_mode, summary=res["summary"].as_dict(),
                       frames=res["frames"], per_frame=[r.as_dict() for r in res["per_frame"]])
        path = em.write_report(out / "eval_depth.json", payload)
        print(em.format_depth_table(res["summary"]))
    elif args.task == "seg":
        rep = em.evaluate_seg(ckpt.params, seq)
        path = em.write_report(out / "eval_seg.json", dict(meta, **rep.as_dict()))
        print(em.format_seg_table(rep))
    else:
        if ckpt.stage != "selfsup" or ckpt.params.pose is None:
            raise UsageError("odometry evaluation needs a self-supervised checkpoint; "
                             "the supervised stage leaves the ego-motion network untrained")
        res = em.evaluate_odometry(ckpt.params, seq, args.snippet_stride, args.snippet_skip)
        path = em.write_report(out / "eval_odom.json",
                               dict(meta, snippet_stride=args.snippet_stride, snippet_skip=args.snippet_skip, **res))
        print(f"snippets {res['snippets']}  mean ATE {res['ate']:.6f}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_render(args) -> int:
    from .networks import load_checkpoint
    from .synthdata import read_dataset
    from .viz import render_frame_panels, save_png

    ckpt = load_checkpoint(args.ckpt)
    seq = read_dataset(args.data)
    if not 0 <= args.frame < len(seq):
        raise UsageError(f"--frame {args.frame} outside [0, {len(seq)})")
    if ckpt.num_classes != seq.num_classes:
        raise UsageError(f"checkpoint has {ckpt.num_classes} classes, dataset {seq.num_classes}")
    if args.zoom < 1:
        raise UsageError("--zoom must be >= 1")
    panels = render_frame_panels(ckpt.params, seq.frames[args.frame], seq.num_classes, args.zoom)
    for task, img in panels.items():
        path = save_png(Path(args.out) / f"{task}_{args.frame:06d}.png", img)
        print(f"wrote {path}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .viz import plot_benchmark, plot_training_log, read_log

    if not args.log and not args.bench:
        raise UsageError("report needs --log and/or --bench")
    out = Path(args.out)
    for i, lp in enumerate(args.log):
        recs = read_log(lp)
        name = Path(lp).parent.name or f"log{i}"
        path = plot_training_log(recs, out / f"train_{i}_{name}.png", title=str(lp))
        print(f"wrote {path}")
    if args.bench:
        results = json.loads(Path(args.bench).read_text())["seeds"]
        print(f"wrote {plot_benchmark(results, out / 'benchmark.png')}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .benchmark import BenchSpec, run_seed, summarize
    from .evalmetrics import write_report
    from .viz import plot_benchmark

    spec = BenchSpec(dynamic=args.dynamic)
    results = []
    for s in args.seeds:
        r = run_seed(s, spec)
        r.pop("checkpoints")
        results.append(r)
    out = Path(args.out)
    summary = summarize(results)
    write_report(out / "bench.json", {"seeds": results, "summary": summary})
    plot_benchmark(results, out / "benchmark.png")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-sup": cmd_train,
    "train-selfsup": cmd_train,
    "eval": cmd_eval,
    "render": cmd_render,
    "report": cmd_report,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    level = os.environ.get("VIDBOOT_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (UsageError, ConfigError, ContractError, DomainError) as exc:
        print(f"vidboot: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetFormatError, OSError, RuntimeError) as exc:
        print(f"vidboot: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
