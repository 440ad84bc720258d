"""Command line front end: gen-data, train, eval, traverse.

Configuration comes from flat key=value files plus flags; nothing is read
from the environment. Exit codes: 0 on success, 2 for bad arguments (with
usage on stderr), 1 for runtime failures (with a diagnostic on stderr).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation, sprites
from .model import ModelConfig
from .trainer import (Checkpoint, Schedule, TrainConfig, fit, load_checkpoint,
                      split_validation)


@dataclass(frozen=True)
class RunConfig:
    """Everything a training run needs besides the dataset and output paths."""

    seed: int = 0
    epochs: int = 60
    image_side: int | None = None  # usually taken from the dataset manifest
    latent_dim: int = 32
    num_heads: int = 1
    enc_hidden: tuple[int, ...] = (128, 64)
    dec_hidden: tuple[int, ...] = (64, 128)
    gate_hidden: int = 64
    gamma0: float = 1.0
    gamma_slope: float = 0.25
    sigma: float = 0.05
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    checkpoint_every: int = 20

    def train_config(self, image_side: int) -> TrainConfig:
        if self.image_side is not None and self.image_side != image_side:
            raise ValueError(
                f"config image_side={self.image_side} does not match dataset n={image_side}")
        model = ModelConfig(image_side=image_side, latent_dim=self.latent_dim,
                            num_heads=self.num_heads, enc_hidden=self.enc_hidden,
                            dec_hidden=self.dec_hidden, gate_hidden=self.gate_hidden)
        schedule = Schedule(gamma0=self.gamma0, gamma_slope=self.gamma_slope, sigma=self.sigma)
        return TrainConfig(model=model, schedule=schedule, lr=self.lr, beta1=self.beta1,
                           beta2=self.beta2, eps=self.eps, batch_size=self.batch_size,
                           seed=self.seed, checkpoint_every=self.checkpoint_every)


_INT_KEYS = {"seed", "epochs", "image_side", "latent_dim", "num_heads", "gate_hidden",
             "batch_size", "checkpoint_every"}
_FLOAT_KEYS = {"gamma0", "gamma_slope", "sigma", "lr", "beta1", "beta2", "eps"}
_LIST_KEYS = {"enc_hidden", "dec_hidden"}


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    """Flat key=value lines; blank lines and # comments are skipped."""
    values: dict[str, object] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{line_no}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ValueError(f"{source}:{line_no}: duplicate key {key!r}")
        try:
            if key in _INT_KEYS:
                values[key] = int(value)
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            elif key in _LIST_KEYS:
                values[key] = tuple(int(v.strip()) for v in value.split(",") if v.strip())
            else:
                raise ValueError(f"{source}:{line_no}: unknown key {key!r}")
        except ValueError as err:
            if "unknown key" in str(err):
                raise
            raise ValueError(f"{source}:{line_no}: bad value for {key!r}: {value!r}") from err
    return RunConfig(**values)


def load_run_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text(), source=str(path))


def _cmd_gen_data(args) -> int:
    sprites.generate_dataset(args.out, count=args.count, seed=args.seed,
                             n=args.side, s=args.sprite, levels=args.levels)
    print(f"wrote {args.count} pairs to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = load_run_config(args.config) if args.config else RunConfig()
    pairs = sprites.load_dataset(args.data)
    info, _ = sprites.read_manifest(Path(args.data) / sprites.MANIFEST_NAME)
    fit(config.train_config(info.n), pairs, config.epochs, args.out)
    return 0


def _evaluate(ckpt: Checkpoint, pairs):
    val = split_validation(pairs)[1]
    if not val:
        raise ValueError("dataset too small to hold out a validation split")
    sharp = evaluation.sharpness(ckpt.params, val, ckpt.gamma)
    report = evaluation.consistency(ckpt.params, val)
    val_mse = evaluation.hard_mode_mse(ckpt.params, val)
    baseline = evaluation.copy_baseline_mse(val)
    return evaluation.format_report(ckpt.gamma, sharp, val_mse, baseline, report), report


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    pairs = sprites.load_dataset(args.data)
    text, _ = _evaluate(ckpt, pairs)
    out_path = Path(args.out) if args.out else Path(args.checkpoint).parent / "eval_report.txt"
    out_path.write_text(text)
    sys.stdout.write(text)
    return 0


def _cmd_traverse(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    pairs = sprites.load_dataset(args.data)
    if not 0 <= args.pair_index < len(pairs):
        raise ValueError(f"pair index {args.pair_index} out of range for {len(pairs)} pairs")
    if args.steps < 2:
        raise ValueError(f"need at least 2 steps, got {args.steps}")
    val = split_validation(pairs)[1] or pairs
    lo, hi = evaluation.observed_range(ckpt.params, val, args.component)
    if not lo < hi:
        raise ValueError(f"component {args.component} is constant over the dataset")
    frame = pairs[args.pair_index].x_curr
    grid = evaluation.traverse(ckpt.params, frame, args.component,
                               np.linspace(lo, hi, args.steps))
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"traverse_c{args.component}"
    evaluation.write_pgm(evaluation.montage(grid), out_dir / f"{stem}.pgm")
    for i, decoded in enumerate(grid.frames):
        evaluation.write_pgm(decoded, out_dir / f"{stem}_step{i}.pgm")
    print(f"wrote {stem}.pgm and {len(grid.frames)} step frames to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="framegate",
                                     description="Gated two-frame autoencoder tools")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a sprite-pair dataset")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--count", type=int, required=True, help="number of frame pairs")
    gen.add_argument("--side", type=int, default=16, help="frame side length")
    gen.add_argument("--sprite", type=int, default=4, help="sprite side length")
    gen.add_argument("--levels", type=int, default=5, help="brightness levels")
    gen.set_defaults(func=_cmd_gen_data)

    train = sub.add_parser("train", help="train on a generated dataset")
    train.add_argument("--config", help="key=value config file (defaults apply if omitted)")
    train.add_argument("--data", required=True, help="dataset directory")
    train.add_argument("--out", required=True, help="output directory for logs and checkpoints")
    train.set_defaults(func=_cmd_train)

    ev = sub.add_parser("eval", help="sharpness/consistency report for a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", help="report path (default: eval_report.txt beside the checkpoint)")
    ev.set_defaults(func=_cmd_eval)

    tr = sub.add_parser("traverse", help="decode a sweep over one latent component")
    tr.add_argument("--checkpoint", required=True)
    tr.add_argument("--data", required=True)
    tr.add_argument("--pair-index", type=int, required=True)
    tr.add_argument("--component", type=int, required=True)
    tr.add_argument("--steps", type=int, default=8)
    tr.add_argument("--out", help="output directory (default: beside the checkpoint)")
    tr.set_defaults(func=_cmd_traverse)
    return parser


def run(argv) -> int:
    """Parse argv (without the program name) and execute one subcommand."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:  # argparse prints usage itself
        code = exit_.code
        return code if isinstance(code, int) else 2
    try:
        return args.func(args)
    except KeyboardInterrupt:
        raise
    except Exception as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
