"""Command-line workflow: prepare-data, train, colorize, evaluate.

Every command prints the fully resolved config it ran with and echoes it to
<out_dir>/config_resolved.yaml. All commands are deterministic given
(config, seed).

Environment:
  AUDIOCOLOR_BACKEND      kernel backend: auto (default) | numba | numpy
  AUDIOCOLOR_NUM_THREADS  worker-thread cap for data loading (default 1)
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .audio import ingest_wav
from .checkpoint import CheckpointBundle
from .colorspace import load_gray_png, load_png, rgb_array_to_lab, save_png, GrayImage
from .config import RunConfig, dump_config, load_config
from .data import generate_synthetic_dataset, load_manifest
from .errors import CheckpointError, TrainingDiverged, ValidationError
from . import pipeline

log = logging.getLogger("audiocolor")

STAGE_CHOICES = ("1", "2", "3", "rnet", "no-multistep")


def _echo_config(cfg: RunConfig):
    text = dump_config(cfg)
    print("# resolved config\n" + text)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_resolved.yaml").write_text(text)


def _write_history_log(bundle: CheckpointBundle, path: Path):
    with open(path, "w") as fh:
        for row in bundle.history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def cmd_prepare_data(args) -> int:
    cfg = load_config(args.config, args.set)
    _echo_config(cfg)
    spec = cfg.data.scene_spec()
    counts = {}
    hues = {"a": 0, "b": 0}
    for split, n in (("train", cfg.data.n_train), ("val", cfg.data.n_val),
                     ("test", cfg.data.n_test)):
        if n <= 0:
            continue
        manifest = generate_synthetic_dataset(
            spec, n, seed=cfg.seed + {"train": 0, "val": 1, "test": 2}[split],
            root=cfg.data.root, split=split)
        counts[split] = len(manifest)
        for p in manifest.pairs:
            hues[p.hue] += 1
    total = sum(hues.values())
    print(f"wrote {counts} under {cfg.data.root}")
    print(f"hue balance: a={hues['a']} b={hues['b']} "
          f"({hues['a'] / max(total, 1):.1%} / {hues['b'] / max(total, 1):.1%})")
    return 0


def _ckpt_path(cfg: RunConfig, stage: str) -> Path:
    return Path(cfg.out_dir) / f"{stage}.ckpt"


def _load_prereq(cfg: RunConfig, stage: str) -> CheckpointBundle:
    path = _ckpt_path(cfg, stage)
    if not path.exists():
        raise CheckpointError(
            f"missing prerequisite checkpoint for {stage}: {path} "
            f"(run `audiocolor train --stage {stage[-1] if stage.startswith('stage') else stage}` first)")
    return CheckpointBundle.load(path)


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    _echo_config(cfg)
    manifest = load_manifest(cfg.data.root, split="train")
    if not manifest.pairs:
        print(f"error: no training data under {cfg.data.root}/train "
              "(run prepare-data first)", file=sys.stderr)
        return 1
    stage = args.stage
    name = {"1": "stage1", "2": "stage2", "3": "stage3",
            "rnet": "rnet", "no-multistep": "no_multistep"}[stage]
    ckpt_path = _ckpt_path(cfg, name)
    resume = None
    if args.resume:
        resume = CheckpointBundle.load(ckpt_path)

    if name == "stage1":
        bundle = pipeline.train_stage1(manifest, cfg, resume=resume, ckpt_path=ckpt_path)
    elif name == "stage2":
        bundle = pipeline.train_stage2(manifest, cfg, _load_prereq(cfg, "stage1"),
                                       resume=resume, ckpt_path=ckpt_path)
    elif name == "stage3":
        rnet = None
        if cfg.stage3.use_rnet_r:
            rnet = _load_prereq(cfg, "rnet")
        elif _ckpt_path(cfg, "rnet").exists():
            rnet = CheckpointBundle.load(_ckpt_path(cfg, "rnet"))
        bundle = pipeline.train_stage3(manifest, cfg, _load_prereq(cfg, "stage2"),
                                       rnet=rnet, resume=resume, ckpt_path=ckpt_path)
    elif name == "rnet":
        base = _ckpt_path(cfg, "stage3")
        prereq = (CheckpointBundle.load(base) if base.exists()
                  else _load_prereq(cfg, "stage2"))
        bundle = pipeline.train_rnet(manifest, cfg, prereq, ckpt_path=ckpt_path)
    else:
        bundle = pipeline.train_no_multistep(manifest, cfg, ckpt_path=ckpt_path)

    _write_history_log(bundle, Path(cfg.out_dir) / f"{name}_log.jsonl")
    print(f"checkpoint written: {ckpt_path}")
    return 0


def cmd_colorize(args) -> int:
    bundle = CheckpointBundle.load(args.ckpt)
    session = pipeline.InferenceSession(bundle)
    img_path = Path(args.image)
    if not img_path.exists():
        print(f"error: image not found: {img_path}", file=sys.stderr)
        return 1
    if args.gray_input:
        gray = load_gray_png(img_path)
    else:
        lab = rgb_array_to_lab(load_png(img_path).pixels)
        gray = GrayImage(L=np.clip(lab[..., 0:1], 0.0, 100.0))
    wave = None
    if args.audio is not None:
        if not Path(args.audio).exists():
            print(f"error: audio not found: {args.audio}", file=sys.stderr)
            return 1
        wave = ingest_wav(args.audio)
    out_path = Path(args.output) if args.output else img_path.with_suffix(".colorized.png")
    rgb, r = session.infer(gray, wave, args.mode)
    save_png(rgb, out_path)
    print(f"mode={args.mode} r={r:.4f} wrote {out_path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, args.set)
    _echo_config(cfg)
    bundle = CheckpointBundle.load(args.ckpt or _ckpt_path(cfg, "stage3"))
    manifest = load_manifest(cfg.data.root, split=args.split)
    if not manifest.pairs:
        print(f"error: empty manifest for split {args.split!r}", file=sys.stderr)
        return 1
    scene_spec = cfg.data.scene_spec() if any(p.family for p in manifest.pairs) else None
    modes = args.mode or ["full"]
    base = Path(args.report) if args.report else Path(cfg.out_dir) / "report"
    for mode in modes:
        report = pipeline.evaluate(bundle, manifest, mode, scene_spec=scene_spec,
                                   perceptual=args.perceptual)
        path = base.with_name(base.name + f".{mode}.jsonl")
        path.parent.mkdir(parents=True, exist_ok=True)
        report.write_jsonl(path)
        print(report.format_table())
        for key in ("hue_accuracy", "ab_mse_mean"):
            if key in report.extra_summary:
                print(f"  {key:14s}: {report.extra_summary[key]:.4f}")
        print(f"  report        : {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="audiocolor",
        description="Audio-guided automatic image colorization workflow.",
        epilog=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--log-level", default="INFO")
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="YAML config path")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, e.g. stage1.epochs=2")

    p = sub.add_parser("prepare-data", parents=[common],
                       help="generate the synthetic dataset splits")
    p.set_defaults(fn=cmd_prepare_data)

    p = sub.add_parser("train", parents=[common], help="train one stage")
    p.add_argument("--stage", required=True, choices=STAGE_CHOICES)
    p.add_argument("--resume", action="store_true",
                   help="continue from the stage checkpoint in out_dir")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("colorize", parents=[common], help="colorize one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--audio", default=None)
    p.add_argument("--mode", default="full", choices=pipeline.ABLATION_MODES)
    p.add_argument("--output", default=None)
    p.add_argument("--gray-input", action="store_true",
                   help="treat --image as an 8-bit grayscale PNG")
    p.set_defaults(fn=cmd_colorize)

    p = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--ckpt", default=None, help="default: <out_dir>/stage3.ckpt")
    p.add_argument("--split", default="test")
    p.add_argument("--mode", action="append", choices=pipeline.ABLATION_MODES,
                   help="repeatable; default full")
    p.add_argument("--report", default=None, help="report path base")
    p.add_argument("--perceptual", default=None,
                   help="registered perceptual metric name (optional)")
    p.set_defaults(fn=cmd_evaluate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ValidationError, CheckpointError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
