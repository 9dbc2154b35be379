"""Single command-line entry point.

Subcommands: synth, gen-faces, train-teacher, train-student, eval,
apply-filter. Every subcommand takes --seed and is bit-reproducible for
equal invocations. Config values resolve flag > config file > default; the
config file is flat "section.key=value" lines, and bare file names are
looked up in $MATTELAB_CONFIG_DIR when set.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import apply as apply_mod
from . import core, distill, metrics, synth
from .losses import LossWeights
from .model import ModelConfig

CONFIG_DIR_ENV = "MATTELAB_CONFIG_DIR"


class RunConfig:
    """Merged config view with per-key provenance (default | file | flag)."""

    def __init__(self, file_path: str = None):
        self.values = {}
        self.provenance = {}
        self.file_values = {}
        if file_path:
            path = file_path
            if not os.path.exists(path) and CONFIG_DIR_ENV in os.environ:
                path = os.path.join(os.environ[CONFIG_DIR_ENV], file_path)
            if not os.path.exists(path):
                raise ValueError(f"config file not found: {file_path!r}")
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line or line.startswith("#"):
                        continue
                    key, _, val = line.partition("=")
                    self.file_values[key.strip()] = val.strip()

    def resolve(self, key: str, flag_value, default, cast=str):
        if flag_value is not None:
            self.values[key], self.provenance[key] = flag_value, "flag"
        elif key in self.file_values:
            self.values[key] = cast(self.file_values[key])
            self.provenance[key] = "file"
        else:
            self.values[key], self.provenance[key] = default, "default"
        return self.values[key]

    def echo(self) -> str:
        return "; ".join(f"{k}={v} ({self.provenance[k]})"
                         for k, v in sorted(self.values.items()))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mattelab",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed (default 0); equal seeds give byte-identical artifacts")
        p.add_argument("--config", default=None,
                       help="flat key=value config file; flags override file values, "
                            f"bare names resolve against ${CONFIG_DIR_ENV}")

    p = sub.add_parser("synth", help="synthesize an occluded-face clip dataset")
    common(p)
    p.add_argument("--out", required=True, help="output dataset directory (created)")
    p.add_argument("--n", type=int, default=None, help="train clips (default 64)")
    p.add_argument("--n-test", type=int, default=None, help="test clips (default 16)")
    p.add_argument("--ratio", type=float, default=None,
                   help="occlusion ratio in [0,1] (default 0.25)")
    p.add_argument("--size", type=int, default=None, help="frame side in px (default 256)")
    p.add_argument("--clip-len", type=int, default=None, help="frames per clip (default 8)")
    p.add_argument("--assets", default=None,
                   help="occluder asset directory (default: procedural occluders)")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel synthesis workers (default: available cores)")

    p = sub.add_parser("gen-faces", help="render procedural faces with skin masks")
    common(p)
    p.add_argument("--n", type=int, default=8, help="number of faces")
    p.add_argument("--size", type=int, default=256, help="face side in px")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-teacher", help="stage 1: teacher with trimap-guided losses")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None, help="optimizer steps (default 300)")
    p.add_argument("--batch-size", type=int, default=None, help="clips per step (default 2)")
    p.add_argument("--clip-len", type=int, default=None, help="frames per clip (default 4)")
    p.add_argument("--lr", type=float, default=None, help="learning rate (default 1e-4)")
    p.add_argument("--lr-final", type=float, default=None,
                   help="cosine-decay target; omit for a constant rate")
    p.add_argument("--beta", type=float, default=None, help="NLL beta exponent (default 0.5)")
    p.add_argument("--no-trimap", action="store_true",
                   help="trimap-free extended mode: regression masks are all-ones")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")

    p = sub.add_parser("train-student", help="stage 2: uncertainty-guided distillation")
    common(p)
    p.add_argument("--teacher", default=None,
                   help="stage-1 teacher checkpoint (required)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None, help="optimizer steps (default 300)")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--clip-len", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--lr-final", type=float, default=None,
                   help="cosine-decay target; omit for a constant rate")
    p.add_argument("--ugkd-weighting", choices=["linear", "exp", "uniform"], default=None,
                   help="uncertainty weighting (default linear: w1 + w2*sigma)")
    p.add_argument("--w1", type=float, default=None, help="weight offset (default 2)")
    p.add_argument("--w2", type=float, default=None, help="weight slope (default 2)")
    p.add_argument("--ema-decay", type=float, default=None, help="EMA decay (default 0.97)")
    p.add_argument("--no-ema", action="store_true", help="disable EMA teacher updates")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    common(p)
    p.add_argument("--checkpoint", default=None, help="model checkpoint (omit with --oracle)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--out", required=True, help="report file path")
    p.add_argument("--oracle", action="store_true",
                   help="score ground truth against itself (sanity mode)")
    p.add_argument("--workers", type=int, default=None,
                   help="accepted for interface parity; evaluation is sequential")

    p = sub.add_parser("apply-filter", help="occlusion-aware filter pipeline")
    common(p)
    p.add_argument("--frames", required=True, help="input frame directory (numbered PNGs)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--filter", default="hue:0",
                   help="hue:<degrees> | tint:<r>,<g>,<b>,<opacity> | external:<dir>")
    return parser


def _parse_filter(text: str) -> apply_mod.FilterSpec:
    kind, _, rest = text.partition(":")
    if kind == "hue":
        return apply_mod.FilterSpec(kind="HUE_SHIFT", hue_degrees=float(rest or 0))
    if kind == "tint":
        parts = [float(x) for x in rest.split(",")]
        if len(parts) != 4:
            raise ValueError("tint filter needs r,g,b,opacity")
        return apply_mod.FilterSpec(kind="TINT", tint_color=tuple(parts[:3]),
                                    tint_opacity=parts[3])
    if kind == "external":
        return apply_mod.FilterSpec(kind="EXTERNAL_FRAMES", frames_dir=rest)
    raise ValueError(f"unknown filter {text!r}")


def cmd_synth(args) -> int:
    rc = RunConfig(args.config)
    errors = []
    ratio = rc.resolve("synth.occlusion_ratio", args.ratio, 0.25, float)
    n = rc.resolve("synth.num_clips", args.n, 64, int)
    n_test = rc.resolve("synth.num_test_clips", args.n_test, 16, int)
    size = rc.resolve("synth.size", args.size, 256, int)
    clip_len = rc.resolve("synth.clip_len", args.clip_len, 8, int)
    seed = rc.resolve("seed", args.seed, 0, int)
    workers = rc.resolve("workers", args.workers, os.cpu_count() or 1, int)
    if not 0.0 <= ratio <= 1.0:
        errors.append(f"--ratio must be in [0, 1], got {ratio}")
    if n < 1 or n_test < 0:
        errors.append("--n must be >= 1 and --n-test >= 0")
    if size < 64:
        errors.append(f"--size must be >= 64, got {size}")
    if clip_len < 1:
        errors.append(f"--clip-len must be >= 1, got {clip_len}")
    if errors:
        print("config errors:\n  " + "\n  ".join(errors), file=sys.stderr)
        return 1
    cfg = synth.SynthConfig(occlusion_ratio=ratio, num_clips=n, num_test_clips=n_test,
                            size=size, clip_len=clip_len, seed=seed)
    assets = synth.load_asset_dir(args.assets) if args.assets else None
    os.makedirs(args.out, exist_ok=True)
    records = synth.synth_dataset(cfg, args.out, assets=assets, workers=workers)
    occluded = sum(1 for r in records if r.split == "train" and r.source != "NONE")
    print(f"manifest: {os.path.join(args.out, 'manifest.jsonl')}")
    print(f"train clips: {n} ({occluded} occluded), test clips: {n_test}")
    return 0


def cmd_gen_faces(args) -> int:
    rc = RunConfig(args.config)
    seed = rc.resolve("seed", args.seed, 0, int)
    if args.size < 64:
        print(f"config errors:\n  --size must be >= 64, got {args.size}", file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.n):
        rng = core.substream(seed, "face", "standalone", i)
        img, mask = synth.gen_procedural_face(rng, args.size)
        core.save_image(os.path.join(args.out, f"face_{i:04d}.png"), img)
        core.save_alpha(os.path.join(args.out, f"skin_{i:04d}.png"), mask)
    print(f"wrote {args.n} faces to {args.out}")
    return 0


def _train_cfg(rc: RunConfig, args, default_steps=300) -> distill.TrainConfig:
    return distill.TrainConfig(
        steps=rc.resolve("train.steps", args.steps, default_steps, int),
        batch_size=rc.resolve("train.batch_size", args.batch_size, 2, int),
        clip_len=rc.resolve("train.clip_len", args.clip_len, 4, int),
        lr=rc.resolve("train.lr", args.lr, 1e-4, float),
        lr_final=rc.resolve("train.lr_final", args.lr_final, None,
                            lambda v: None if v in (None, "none") else float(v)),
        seed=rc.resolve("seed", args.seed, 0, int),
        use_trimap=not getattr(args, "no_trimap", False),
    )


def cmd_train_teacher(args) -> int:
    rc = RunConfig(args.config)
    cfg = _train_cfg(rc, args)
    beta = rc.resolve("loss.beta", args.beta, 0.5, float)
    print(f"config: {rc.echo()}")
    path = distill.train_stage1(args.manifest, args.out, cfg,
                                weights=LossWeights(beta=beta),
                                resume_from=args.resume)
    print(f"teacher checkpoint: {path}")
    return 0


def cmd_train_student(args) -> int:
    if not args.teacher:
        print("error: --teacher <ckpt> is required for train-student", file=sys.stderr)
        return 1
    rc = RunConfig(args.config)
    cfg = _train_cfg(rc, args)
    weighting = rc.resolve("ugkd.weighting", args.ugkd_weighting, "linear", str)
    ugkd = distill.UGKDConfig(
        w1=rc.resolve("ugkd.w1", args.w1, 2.0, float),
        w2=rc.resolve("ugkd.w2", args.w2, 2.0, float),
        weighting={"linear": "LINEAR", "exp": "EXPONENTIAL",
                   "uniform": "UNIFORM"}[weighting],
        ema_decay=rc.resolve("ugkd.ema_decay", args.ema_decay, 0.97, float),
        ema_enabled=not args.no_ema,
    )
    print(f"config: {rc.echo()}; ugkd-weighting={ugkd.weighting}")
    path = distill.train_stage2(args.teacher, args.manifest, args.out, cfg, ugkd)
    print(f"student checkpoint: {path}")
    return 0


def cmd_eval(args) -> int:
    if not args.oracle and not args.checkpoint:
        print("error: --checkpoint is required unless --oracle is given", file=sys.stderr)
        return 1
    report = metrics.evaluate(args.checkpoint, args.manifest, split=args.split,
                              out_path=args.out, oracle=args.oracle)
    agg = report.aggregate
    cells = []
    for key in ("mse", "sad", "grad", "conn", "iou", "accuracy"):
        val = agg.get(key)
        cells.append("n/a" if val is None else f"{val:.5f}")
    print("MSE SAD Grad Conn IoU Accuracy")
    print(" ".join(cells))
    print(f"report: {args.out}")
    if report.failures and agg["count"] == 0:
        return 2
    if report.failures:
        print(f"{len(report.failures)} sample(s) failed; see report", file=sys.stderr)
    return 0


def cmd_apply_filter(args) -> int:
    rc = RunConfig(args.config)
    rc.resolve("seed", args.seed, 0, int)  # pipeline is deterministic; seed echoed only
    spec = _parse_filter(args.filter)
    meta = apply_mod.run_pipeline(args.frames, args.checkpoint, spec, args.out)
    print(f"wrote {meta['frames']} frames + mattes to {args.out}")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "gen-faces": cmd_gen_faces,
    "train-teacher": cmd_train_teacher,
    "train-student": cmd_train_student,
    "eval": cmd_eval,
    "apply-filter": cmd_apply_filter,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; remap
        return 0 if exc.code == 0 else 1
    np.seterr(all="raise", under="ignore")
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, distill.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
