"""Training loop: sharpening schedule, Adam updates, checkpoints, epoch logs.

The sharpening exponent grows linearly with the epoch index while the noise
level stays constant; evaluation always runs with the noise off. One master
seed drives parameter init and the per-epoch shuffle/noise streams, so a rerun
with the same seed, config and dataset is byte-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tape, backward
from .gating import SharpenParams, sharpen
from .model import (ModelConfig, ModelParams, extract_grads, forward_batch,
                    prepare_batch_params)
from .sprites import FramePair
from .streams import stream

CHECKPOINT_MAGIC = "framegate-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Schedule:
    """Linear sharpening ramp: gamma(epoch) = gamma0 + gamma_slope * epoch."""

    gamma0: float = 1.0
    gamma_slope: float = 0.25
    sigma: float = 0.05

    def __post_init__(self):
        if self.gamma0 < 1.0:
            raise ValueError(f"gamma0 must be >= 1, got {self.gamma0}")
        if self.gamma_slope < 0.0:
            raise ValueError(f"gamma_slope must be >= 0, got {self.gamma_slope}")
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


def schedule_at(schedule: Schedule, epoch: int) -> tuple[float, float]:
    """(gamma, sigma) in effect for a given epoch index."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return schedule.gamma0 + schedule.gamma_slope * epoch, schedule.sigma


class Adam:
    """Adaptive-moment gradient descent over a named set of arrays."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        if lr < 0:
            raise ValueError(f"lr must be >= 0, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """One in-place update; params maps names to the live arrays."""
        self.t += 1
        correct1 = 1.0 - self.beta1 ** self.t
        correct2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)


class TrainingDiverged(RuntimeError):
    """Raised when a batch produces a non-finite loss."""

    def __init__(self, batch_index: int, value: float, epoch: int | None = None):
        self.batch_index = batch_index
        self.value = value
        self.epoch = epoch
        super().__init__(f"non-finite loss {value} at batch {batch_index}")

    def __str__(self) -> str:
        where = f"epoch {self.epoch}, batch {self.batch_index}" if self.epoch is not None \
            else f"batch {self.batch_index}"
        return f"non-finite loss {self.value} at {where}"


def _stack_pairs(pairs: list[FramePair], ids) -> tuple[np.ndarray, np.ndarray]:
    prev = np.stack([pairs[i].x_prev for i in ids])
    curr = np.stack([pairs[i].x_curr for i in ids])
    return prev, curr


def train_epoch(params: ModelParams, opt: Adam, pairs: list[FramePair], gamma: float,
                sigma: float, batch_size: int, rng: np.random.Generator) -> float:
    """One pass over the training pairs in a fresh shuffled order.

    The rng drives both the shuffle and the sharpening noise. Returns the
    mean training loss weighted by batch size. Raises TrainingDiverged as
    soon as a batch loss stops being finite, leaving later batches untouched.
    """
    if not pairs:
        raise ValueError("train_epoch needs a non-empty dataset")
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    order = rng.permutation(len(pairs))
    sp = SharpenParams(gamma=gamma, sigma=sigma)
    named = params.named()
    total = 0.0
    for batch_index, start in enumerate(range(0, len(pairs), batch_size)):
        ids = order[start:start + batch_size]
        x_prev, x_curr = _stack_pairs(pairs, ids)
        tape = Tape()
        batch_params, leaves = prepare_batch_params(params, tape)
        result = forward_batch(x_prev, x_curr, batch_params, sp, mode="soft", rng=rng)
        loss = result.loss.item()
        if not math.isfinite(loss):
            raise TrainingDiverged(batch_index, loss)
        grads = extract_grads(leaves, backward(result.loss))
        opt.step(named, grads)
        total += loss * len(ids)
    return total / len(pairs)


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: Schedule = field(default_factory=Schedule)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    seed: int = 0
    checkpoint_every: int = 20


@dataclass
class Checkpoint:
    """Everything needed to restart or evaluate a run. The master seed doubles
    as the rng state: every stream is re-derived from (seed, purpose, epoch)."""

    config: TrainConfig
    epoch: int
    gamma: float
    sigma: float
    params: ModelParams


def _format_floats(arr: np.ndarray) -> list[str]:
    flat = [repr(float(v)) for v in arr.reshape(-1)]
    if arr.ndim <= 1:
        return [" ".join(flat)] if flat else [""]
    cols = arr.shape[-1]
    return [" ".join(flat[r * cols:(r + 1) * cols]) for r in range(arr.size // cols)]


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Plain-text, lossless serialization (floats via repr round-tripping)."""
    cfg = ckpt.config
    lines = [
        f"{CHECKPOINT_MAGIC} version={CHECKPOINT_VERSION}",
        f"image_side={cfg.model.image_side}",
        f"latent_dim={cfg.model.latent_dim}",
        f"num_heads={cfg.model.num_heads}",
        f"enc_hidden={','.join(str(w) for w in cfg.model.enc_hidden)}",
        f"dec_hidden={','.join(str(w) for w in cfg.model.dec_hidden)}",
        f"gate_hidden={cfg.model.gate_hidden}",
        f"gamma0={cfg.schedule.gamma0!r}",
        f"gamma_slope={cfg.schedule.gamma_slope!r}",
        f"sigma={cfg.schedule.sigma!r}",
        f"lr={cfg.lr!r}",
        f"beta1={cfg.beta1!r}",
        f"beta2={cfg.beta2!r}",
        f"eps={cfg.eps!r}",
        f"batch_size={cfg.batch_size}",
        f"checkpoint_every={cfg.checkpoint_every}",
        f"seed={cfg.seed}",
        f"epoch={ckpt.epoch}",
        f"gamma={ckpt.gamma!r}",
        f"sigma_at_epoch={ckpt.sigma!r}",
    ]
    for name, arr in ckpt.params.named().items():
        shape = " ".join(str(d) for d in arr.shape)
        lines.append(f"param {name} {shape}")
        lines.extend(_format_floats(arr))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v)


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> Checkpoint:
    """Inverse of save_checkpoint; errors name the offending key."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(CHECKPOINT_MAGIC):
        raise CheckpointError("not a checkpoint file")
    version = lines[0].removeprefix(CHECKPOINT_MAGIC).strip()
    if version != f"version={CHECKPOINT_VERSION}":
        raise CheckpointError(f"unsupported checkpoint {version or 'header'}")

    header: dict[str, str] = {}
    cursor = 1
    while cursor < len(lines) and not lines[cursor].startswith("param "):
        line = lines[cursor].strip()
        cursor += 1
        if not line:
            continue
        if "=" not in line:
            raise CheckpointError(f"malformed header line: {line!r}")
        key, value = line.split("=", 1)
        header[key] = value

    def need(key: str) -> str:
        if key not in header:
            raise CheckpointError(f"missing header key {key!r}")
        return header[key]

    model = ModelConfig(
        image_side=int(need("image_side")),
        latent_dim=int(need("latent_dim")),
        num_heads=int(need("num_heads")),
        enc_hidden=_parse_ints(need("enc_hidden")),
        dec_hidden=_parse_ints(need("dec_hidden")),
        gate_hidden=int(need("gate_hidden")),
    )
    config = TrainConfig(
        model=model,
        schedule=Schedule(gamma0=float(need("gamma0")), gamma_slope=float(need("gamma_slope")),
                          sigma=float(need("sigma"))),
        lr=float(need("lr")),
        beta1=float(need("beta1")),
        beta2=float(need("beta2")),
        eps=float(need("eps")),
        batch_size=int(need("batch_size")),
        seed=int(need("seed")),
        checkpoint_every=int(need("checkpoint_every")),
    )
    expected = ModelParams.zeros(model).named()
    arrays: dict[str, np.ndarray] = {}
    names = list(expected)
    slot = 0
    while cursor < len(lines):
        line = lines[cursor].strip()
        cursor += 1
        if not line:
            continue
        if not line.startswith("param "):
            raise CheckpointError(f"expected a param record, got {line!r}")
        parts = line.split()
        name = parts[1]
        shape = tuple(int(v) for v in parts[2:])
        if slot >= len(names):
            raise CheckpointError(f"unexpected parameter {name!r}")
        if name != names[slot]:
            raise CheckpointError(f"unexpected parameter {name!r} (expected {names[slot]!r})")
        want = expected[name].shape
        if shape != want:
            raise CheckpointError(f"parameter {name!r} has shape {shape}, expected {want}")
        rows = shape[0] if len(shape) == 2 else 1
        values: list[float] = []
        for _ in range(rows):
            if cursor >= len(lines):
                raise CheckpointError(f"parameter {name!r} is truncated")
            row = lines[cursor]
            cursor += 1
            if row.strip():
                values.extend(float(v) for v in row.split())
        count = int(np.prod(shape)) if shape else 1
        if len(values) != count:
            raise CheckpointError(f"parameter {name!r} has {len(values)} values, expected {count}")
        arrays[name] = np.array(values).reshape(shape)
        slot += 1
    if slot != len(names):
        raise CheckpointError(f"missing parameter {names[slot]!r}")
    params = ModelParams.from_named(model, arrays)
    return Checkpoint(config=config, epoch=int(need("epoch")), gamma=float(need("gamma")),
                      sigma=float(need("sigma_at_epoch")), params=params)


def _checkpoint_at(config: TrainConfig, params: ModelParams, epoch: int) -> Checkpoint:
    gamma, sigma = schedule_at(config.schedule, epoch)
    return Checkpoint(config=config, epoch=epoch, gamma=gamma, sigma=sigma,
                      params=params)


def split_validation(pairs: list[FramePair]) -> tuple[list[FramePair], list[FramePair]]:
    """Last tenth of the pairs, by index, is held out for validation."""
    held = len(pairs) // 10
    cut = len(pairs) - held
    return pairs[:cut], pairs[cut:]


def _batched_eval(params: ModelParams, pairs: list[FramePair], gamma: float,
                  chunk: int = 256) -> tuple[float, float]:
    """(hard-mode mean loss, mean max sharpened weight) over a pair list."""
    batch_params, _ = prepare_batch_params(params)
    sp = SharpenParams(gamma=gamma, sigma=0.0)
    loss_total = 0.0
    sharp_total = 0.0
    heads = len(batch_params.heads)
    for start in range(0, len(pairs), chunk):
        ids = range(start, min(start + chunk, len(pairs)))
        x_prev, x_curr = _stack_pairs(pairs, ids)
        result = forward_batch(x_prev, x_curr, batch_params, sp, mode="hard")
        loss_total += result.loss.item() * len(ids)
        for w in result.w_per_head:
            sharp_total += float(np.max(sharpen(w, sp).data, axis=-1).sum())
    n = len(pairs)
    return loss_total / n, sharp_total / (n * heads)


def fit(config: TrainConfig, pairs: list[FramePair], epochs: int, out_dir,
        quiet: bool = False) -> Checkpoint:
    """Train for `epochs` epochs, logging and checkpointing under out_dir.

    Writes log.tsv with one tab-separated line per epoch (epoch, gamma,
    sigma, train loss, validation loss, validation sharpness), mirrored to
    stdout. Checkpoints land at epoch 0, every checkpoint_every epochs, and
    at the end; on divergence the files already written stay behind.
    Returns the final checkpoint.
    """
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    if len(pairs) < 10:
        raise ValueError(f"need at least 10 pairs for a validation split, got {len(pairs)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_pairs, val_pairs = split_validation(pairs)

    params = ModelParams.initialize(config.model, stream(config.seed, "init"))
    opt = Adam(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    save_checkpoint(_checkpoint_at(config, params, 0), out_dir / "checkpoint_epoch_0000.txt")

    with open(out_dir / "log.tsv", "w") as log:
        for epoch in range(epochs):
            gamma, sigma = schedule_at(config.schedule, epoch)
            try:
                train_loss = train_epoch(params, opt, train_pairs, gamma, sigma,
                                         config.batch_size, stream(config.seed, "epoch", epoch))
            except TrainingDiverged as err:
                err.epoch = epoch
                raise
            val_loss, val_sharp = _batched_eval(params, val_pairs, gamma)
            line = f"{epoch}\t{gamma!r}\t{sigma!r}\t{train_loss!r}\t{val_loss!r}\t{val_sharp!r}"
            log.write(line + "\n")
            log.flush()
            if not quiet:
                print(line)
            done = epoch + 1
            if config.checkpoint_every > 0 and done % config.checkpoint_every == 0:
                save_checkpoint(_checkpoint_at(config, params, done),
                                out_dir / f"checkpoint_epoch_{done:04d}.txt")

    final = _checkpoint_at(config, params, epochs)
    save_checkpoint(final, out_dir / "checkpoint_final.txt")
    return final
