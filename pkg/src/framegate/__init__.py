"""Two-frame autoencoder with annealed discrete gating.

The package is organised bottom-up: a small reverse-mode tensor engine
(`autodiff`), the gating operations built on it (`gating`), the encoder /
decoder pair (`model`), a synthetic sprite-world dataset (`sprites`), the
training loop (`trainer`), evaluation and image output (`evaluation`), and
a command line front end (`cli`).
"""

from .autodiff import Tensor, Tape, apply, backward, constant, grad_check
from .gating import GatingHead, SharpenParams, combine_heads, gate_weights, hard_select, mix, sharpen
from .model import ForwardResult, ModelConfig, ModelParams, decode, encode, forward_pair
from .sprites import FactorVector, FramePair, generate_dataset, load_dataset, render, sample_pair
from .trainer import Adam, Checkpoint, Schedule, TrainConfig, fit, load_checkpoint, save_checkpoint, schedule_at, train_epoch

__version__ = "0.1.0"
