"""Shared encoder, decoder, and the gated two-frame forward pass.

Both frames go through one encoder. The gating heads decide which latent
components changed; the mixed latent keeps the previous frame's components
except for the gated ones, which come from the current frame. The decoder
then has to reconstruct the current frame from that mixture.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, apply, constant
from .gating import GatingHead, SharpenParams, combine_heads, gate_weights, hard_select, mix, one_hot, sharpen


@dataclass(frozen=True)
class ModelConfig:
    image_side: int = 16
    latent_dim: int = 32
    num_heads: int = 1
    enc_hidden: tuple[int, ...] = (128, 64)
    dec_hidden: tuple[int, ...] = (64, 128)
    gate_hidden: int = 64

    def __post_init__(self):
        object.__setattr__(self, "enc_hidden", tuple(int(w) for w in self.enc_hidden))
        object.__setattr__(self, "dec_hidden", tuple(int(w) for w in self.dec_hidden))
        if self.image_side < 2:
            raise ValueError(f"image_side must be >= 2, got {self.image_side}")
        if self.num_heads < 1:
            raise ValueError(f"num_heads must be >= 1, got {self.num_heads}")
        if self.latent_dim < self.num_heads:
            raise ValueError(
                f"latent_dim ({self.latent_dim}) must be >= num_heads ({self.num_heads})")
        widths = (*self.enc_hidden, *self.dec_hidden, self.gate_hidden)
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")

    @property
    def pixels(self) -> int:
        return self.image_side * self.image_side


def _uniform_init(rng: np.random.Generator, fan_in: int, fan_out: int,
                  shape: tuple[int, ...]) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class ModelParams:
    """All trainable arrays. Weight matrices are stored (fan_in, fan_out) for
    the encoder/decoder stacks; gating heads keep their own documented layout."""

    config: ModelConfig
    enc_w: list = field(default_factory=list)
    enc_b: list = field(default_factory=list)
    dec_w: list = field(default_factory=list)
    dec_b: list = field(default_factory=list)
    heads: list = field(default_factory=list)

    @staticmethod
    def _layer_dims(config: ModelConfig) -> tuple[list[int], list[int]]:
        enc = [config.pixels, *config.enc_hidden, config.latent_dim]
        dec = [config.latent_dim, *config.dec_hidden, config.pixels]
        return enc, dec

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator) -> "ModelParams":
        """Uniform init scaled by fan-in + fan-out; biases start at zero.

        Draw order is fixed (encoder layers, decoder layers, then heads) so a
        given rng always produces the same parameters.
        """
        enc_dims, dec_dims = cls._layer_dims(config)
        params = cls(config=config)
        for fan_in, fan_out in zip(enc_dims[:-1], enc_dims[1:]):
            params.enc_w.append(_uniform_init(rng, fan_in, fan_out, (fan_in, fan_out)))
            params.enc_b.append(np.zeros(fan_out))
        for fan_in, fan_out in zip(dec_dims[:-1], dec_dims[1:]):
            params.dec_w.append(_uniform_init(rng, fan_in, fan_out, (fan_in, fan_out)))
            params.dec_b.append(np.zeros(fan_out))
        d, hidden = config.latent_dim, config.gate_hidden
        for _ in range(config.num_heads):
            params.heads.append(GatingHead(
                w1=_uniform_init(rng, 2 * d, hidden, (hidden, 2 * d)),
                b1=np.zeros(hidden),
                w2=_uniform_init(rng, hidden, d, (d, hidden)),
                b2=np.zeros(d),
            ))
        return params

    @classmethod
    def zeros(cls, config: ModelConfig) -> "ModelParams":
        """All-zero parameters; handy as a fixed point in tests."""
        enc_dims, dec_dims = cls._layer_dims(config)
        params = cls(config=config)
        for fan_in, fan_out in zip(enc_dims[:-1], enc_dims[1:]):
            params.enc_w.append(np.zeros((fan_in, fan_out)))
            params.enc_b.append(np.zeros(fan_out))
        for fan_in, fan_out in zip(dec_dims[:-1], dec_dims[1:]):
            params.dec_w.append(np.zeros((fan_in, fan_out)))
            params.dec_b.append(np.zeros(fan_out))
        d, hidden = config.latent_dim, config.gate_hidden
        for _ in range(config.num_heads):
            params.heads.append(GatingHead(
                w1=np.zeros((hidden, 2 * d)), b1=np.zeros(hidden),
                w2=np.zeros((d, hidden)), b2=np.zeros(d),
            ))
        return params

    def named(self) -> dict[str, np.ndarray]:
        """Stable name -> live array mapping; mutating the arrays updates the model."""
        out: dict[str, np.ndarray] = {}
        for i, (w, b) in enumerate(zip(self.enc_w, self.enc_b)):
            out[f"enc{i}.w"] = w
            out[f"enc{i}.b"] = b
        for i, (w, b) in enumerate(zip(self.dec_w, self.dec_b)):
            out[f"dec{i}.w"] = w
            out[f"dec{i}.b"] = b
        for i, head in enumerate(self.heads):
            out[f"head{i}.w1"] = head.w1
            out[f"head{i}.b1"] = head.b1
            out[f"head{i}.w2"] = head.w2
            out[f"head{i}.b2"] = head.b2
        return out

    @classmethod
    def from_named(cls, config: ModelConfig, arrays: dict[str, np.ndarray]) -> "ModelParams":
        """Rebuild from a name -> array mapping, validating names and shapes."""
        reference = cls.zeros(config)
        expected = reference.named()
        for name, ref in expected.items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r}")
            if arrays[name].shape != ref.shape:
                raise ValueError(
                    f"parameter {name!r} has shape {arrays[name].shape}, expected {ref.shape}")
        extras = set(arrays) - set(expected)
        if extras:
            raise KeyError(f"unexpected parameter {sorted(extras)[0]!r}")
        for name, ref in expected.items():
            ref[...] = arrays[name]
        return reference

    def copy(self) -> "ModelParams":
        return ModelParams.from_named(
            self.config, {k: v.copy() for k, v in self.named().items()})


def encode(frame, params) -> Tensor:
    """Latent representation of a frame or a row-batch of frames.

    Hidden layers are affine + relu; the final affine has no activation.
    """
    x = frame if isinstance(frame, Tensor) else Tensor(frame)
    expected = params.enc_w[0].shape[0]
    if x.shape[-1] != expected:
        raise ValueError(f"frame has {x.shape[-1]} pixels, encoder expects {expected}")
    out = x
    last = len(params.enc_w) - 1
    for i, (w, b) in enumerate(zip(params.enc_w, params.enc_b)):
        out = apply("add", [apply("matmul", [out, w]), b])
        if i != last:
            out = apply("relu", [out])
    return out


def decode(latent, params) -> Tensor:
    """Frame reconstruction from a latent; final activation is a sigmoid,
    so outputs live in (0, 1)."""
    z = latent if isinstance(latent, Tensor) else Tensor(latent)
    out = z
    last = len(params.dec_w) - 1
    for i, (w, b) in enumerate(zip(params.dec_w, params.dec_b)):
        out = apply("add", [apply("matmul", [out, w]), b])
        if i != last:
            out = apply("relu", [out])
    return apply("sigmoid", [out])


@dataclass
class ForwardResult:
    x_hat: Tensor
    loss: Tensor
    w_per_head: list
    mask: Tensor
    latent_prev: Tensor
    latent_curr: Tensor
    mixed: Tensor


def forward_pair(x_prev, x_curr, params, sharpen_params: SharpenParams,
                 mode: str = "soft", rng: np.random.Generator | None = None) -> ForwardResult:
    """Gated reconstruction of the current frame from a frame pair.

    "soft" sharpens each head's weighting (drawing noise from rng when
    sigma > 0); "hard" swaps exactly the argmax component per head and is
    rng-independent. w_per_head holds the raw simplex weightings before
    sharpening. The loss is the mean squared pixel error against x_curr.
    """
    if mode not in ("soft", "hard"):
        raise ValueError(f"mode must be 'soft' or 'hard', got {mode!r}")
    if mode == "soft" and rng is None:
        raise ValueError("soft mode requires an rng")
    prev_t = x_prev if isinstance(x_prev, Tensor) else Tensor(x_prev)
    curr_t = x_curr if isinstance(x_curr, Tensor) else Tensor(x_curr)
    if prev_t.shape != curr_t.shape:
        raise ValueError(f"frame shapes differ: {prev_t.shape} vs {curr_t.shape}")

    latent_prev = encode(prev_t, params)
    latent_curr = encode(curr_t, params)
    d = latent_prev.shape[-1]
    weightings = [gate_weights(latent_prev, latent_curr, head) for head in params.heads]
    if mode == "soft":
        chosen = [sharpen(w, sharpen_params, rng) for w in weightings]
    else:
        chosen = [constant(one_hot(hard_select(w), d)) for w in weightings]
    mask = combine_heads(chosen)
    mixed = mix(latent_prev, latent_curr, mask)
    x_hat = decode(mixed, params)
    loss = apply("mean-squared-error", [x_hat, curr_t])
    return ForwardResult(x_hat=x_hat, loss=loss, w_per_head=weightings, mask=mask,
                         latent_prev=latent_prev, latent_curr=latent_curr, mixed=mixed)


# ---- Batched path used by the trainer ----
#
# Row-major batches (batch, pixels) reuse encode/decode/sharpen/combine/mix
# unchanged; only the head scoring needs its matrices transposed so the
# batch can stay on the left of every matmul.

@dataclass
class _BatchHead:
    w1t: object  # (2d, hidden)
    b1: object
    w2t: object  # (hidden, d)
    b2: object


@dataclass
class BatchParams:
    config: ModelConfig
    enc_w: list
    enc_b: list
    dec_w: list
    dec_b: list
    heads: list


_TRANSPOSED_SUFFIXES = (".w1", ".w2")


def prepare_batch_params(params: ModelParams, tape: Tape | None = None):
    """View of the parameters for batched passes.

    With a tape, every array is registered as a leaf and the returned mapping
    names them for gradient extraction; head matrices are stored transposed
    (their gradients transpose back in `extract_grads`). Without a tape the
    arrays pass through as constants for pure evaluation.
    """
    leaves: dict[str, Tensor] = {}

    def track(name: str, arr: np.ndarray):
        if tape is None:
            return arr
        leaf = tape.leaf(arr)
        leaves[name] = leaf
        return leaf

    enc_w = [track(f"enc{i}.w", w) for i, w in enumerate(params.enc_w)]
    enc_b = [track(f"enc{i}.b", b) for i, b in enumerate(params.enc_b)]
    dec_w = [track(f"dec{i}.w", w) for i, w in enumerate(params.dec_w)]
    dec_b = [track(f"dec{i}.b", b) for i, b in enumerate(params.dec_b)]
    heads = []
    for i, head in enumerate(params.heads):
        heads.append(_BatchHead(
            w1t=track(f"head{i}.w1", np.ascontiguousarray(head.w1.T)),
            b1=track(f"head{i}.b1", head.b1),
            w2t=track(f"head{i}.w2", np.ascontiguousarray(head.w2.T)),
            b2=track(f"head{i}.b2", head.b2),
        ))
    return BatchParams(params.config, enc_w, enc_b, dec_w, dec_b, heads), leaves


def extract_grads(leaves: dict[str, Tensor], grad_map: dict[int, np.ndarray]) -> dict[str, np.ndarray]:
    """Named gradients from a backward() result, undoing the head transposes."""
    out: dict[str, np.ndarray] = {}
    for name, leaf in leaves.items():
        g = grad_map[leaf.node]
        if name.endswith(_TRANSPOSED_SUFFIXES):
            g = np.ascontiguousarray(g.T)
        out[name] = g
    return out


def _batch_head_weights(latent_prev: Tensor, latent_curr: Tensor, head: _BatchHead) -> Tensor:
    both = apply("concat", [latent_prev, latent_curr], {"axis": 1})
    hidden = apply("tanh", [apply("add", [apply("matmul", [both, head.w1t]), head.b1])])
    scores = apply("add", [apply("matmul", [hidden, head.w2t]), head.b2])
    return apply("softmax", [scores], {"axis": -1})


def forward_batch(x_prev: np.ndarray, x_curr: np.ndarray, batch_params: BatchParams,
                  sharpen_params: SharpenParams, mode: str = "soft",
                  rng: np.random.Generator | None = None) -> ForwardResult:
    """forward_pair over a whole (batch, pixels) block.

    Both frame blocks run through the encoder as one stacked batch. The loss
    is the mean squared error over every pixel of every pair, which equals
    the mean of the per-pair losses.
    """
    if mode not in ("soft", "hard"):
        raise ValueError(f"mode must be 'soft' or 'hard', got {mode!r}")
    if mode == "soft" and rng is None:
        raise ValueError("soft mode requires an rng")
    if x_prev.shape != x_curr.shape or x_prev.ndim != 2:
        raise ValueError(f"expected matching (batch, pixels) blocks, got {x_prev.shape} and {x_curr.shape}")
    b = x_prev.shape[0]

    stacked = encode(constant(np.concatenate([x_prev, x_curr], axis=0)), batch_params)
    latent_prev = apply("slice", [stacked], {"axis": 0, "range": (0, b)})
    latent_curr = apply("slice", [stacked], {"axis": 0, "range": (b, 2 * b)})
    d = latent_prev.shape[-1]

    weightings = [_batch_head_weights(latent_prev, latent_curr, head) for head in batch_params.heads]
    if mode == "soft":
        chosen = [sharpen(w, sharpen_params, rng) for w in weightings]
    else:
        chosen = []
        for w in weightings:
            rows = np.zeros((b, d))
            rows[np.arange(b), np.argmax(w.data, axis=1)] = 1.0
            chosen.append(constant(rows))
    mask = combine_heads(chosen)
    mixed = mix(latent_prev, latent_curr, mask)
    x_hat = decode(mixed, batch_params)
    loss = apply("mean-squared-error", [x_hat, constant(x_curr)])
    return ForwardResult(x_hat=x_hat, loss=loss, w_per_head=weightings, mask=mask,
                         latent_prev=latent_prev, latent_curr=latent_curr, mixed=mixed)
