"""Evaluation: gate sharpness, factor consistency, latent traversals, PGM output.

Everything here runs with the noise off and, where a discrete choice is
needed, uses the hard argmax selection. Frames go to disk as binary PGM
(P5) images so the traversal grids can be eyeballed anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gating import SharpenParams, gate_weights, hard_select, sharpen
from .model import ModelParams, decode, encode, forward_pair
from .sprites import FACTORS, FramePair


def sharpness(params: ModelParams, pairs: list[FramePair], gamma: float,
              num_heads: int | None = None) -> float:
    """Mean over pairs and heads of the largest sharpened gate weight.

    Noise-free: 1/latent_dim for untrained uniform gates, approaching 1.0
    once the gating commits to single components.
    """
    if not pairs:
        raise ValueError("sharpness needs a non-empty dataset")
    heads = params.heads if num_heads is None else params.heads[:num_heads]
    if not heads:
        raise ValueError("sharpness needs at least one head")
    sp = SharpenParams(gamma=gamma, sigma=0.0)
    total = 0.0
    for pair in pairs:
        latent_prev = encode(pair.x_prev, params)
        latent_curr = encode(pair.x_curr, params)
        for head in heads:
            w = sharpen(gate_weights(latent_prev, latent_curr, head), sp)
            total += float(np.max(w.data))
    return total / (len(pairs) * len(heads))


@dataclass(frozen=True)
class FactorStats:
    factor: str
    modal_index: int
    agreement: float
    count: int


@dataclass
class ConsistencyReport:
    """Per-factor modal gated component and how often the heads picked it."""

    factors: list[FactorStats]
    distinct_modal_indices: bool
    omitted: list[str]

    def stats_for(self, factor: str) -> FactorStats:
        for stats in self.factors:
            if stats.factor == factor:
                return stats
        raise KeyError(f"no pairs with factor {factor!r}")


def consistency(params: ModelParams, pairs: list[FramePair]) -> ConsistencyReport:
    """Hard-selection agreement per factor.

    For every pair each head picks one component. A factor's modal index is
    the most frequent pick over its pairs (ties to the lowest index), and
    agreement is the fraction of pairs where some head picked that index.
    Factors with no pairs are omitted and listed as such.
    """
    if not pairs:
        raise ValueError("consistency needs a non-empty dataset")
    picks: dict[str, list[list[int]]] = {f: [] for f in FACTORS}
    for pair in pairs:
        latent_prev = encode(pair.x_prev, params)
        latent_curr = encode(pair.x_curr, params)
        selected = [hard_select(gate_weights(latent_prev, latent_curr, head))
                    for head in params.heads]
        picks[pair.changed_factor].append(selected)

    d = params.config.latent_dim
    stats: list[FactorStats] = []
    omitted: list[str] = []
    for factor in FACTORS:
        rows = picks[factor]
        if not rows:
            omitted.append(factor)
            continue
        counts = np.zeros(d, dtype=np.int64)
        for row in rows:
            for index in row:
                counts[index] += 1
        modal = int(np.argmax(counts))
        hits = sum(1 for row in rows if modal in row)
        stats.append(FactorStats(factor=factor, modal_index=modal,
                                 agreement=hits / len(rows), count=len(rows)))
    modes = [s.modal_index for s in stats]
    return ConsistencyReport(factors=stats, distinct_modal_indices=len(set(modes)) == len(modes),
                             omitted=omitted)


@dataclass
class TraversalGrid:
    """One decoded frame per traversal value, in ascending value order."""

    frames: list[np.ndarray]  # each (n, n)
    component: int
    values: list[float]


def traverse(params: ModelParams, frame: np.ndarray, component: int,
             values) -> TraversalGrid:
    """Decode the frame's latent with one component swept over given values.

    Values must be strictly increasing (a single value is fine). Editing the
    component to its own current value reproduces the plain reconstruction
    exactly.
    """
    values = [float(v) for v in values]
    if not values:
        raise ValueError("traverse needs at least one value")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError(f"traversal values must be strictly increasing, got {values}")
    d = params.config.latent_dim
    if not 0 <= component < d:
        raise ValueError(f"component {component} out of range for latent_dim {d}")
    side = params.config.image_side
    latent = encode(np.asarray(frame).reshape(-1), params).data
    frames = []
    for v in values:
        edited = latent.copy()
        edited[component] = v
        frames.append(decode(edited, params).data.reshape(side, side))
    return TraversalGrid(frames=frames, component=component, values=values)


def observed_range(params: ModelParams, pairs: list[FramePair], component: int) -> tuple[float, float]:
    """Min and max of one latent component over the current frames of a pair list."""
    if not pairs:
        raise ValueError("observed_range needs a non-empty dataset")
    lo = float("inf")
    hi = float("-inf")
    for pair in pairs:
        value = float(encode(pair.x_curr, params).data[component])
        lo = min(lo, value)
        hi = max(hi, value)
    return lo, hi


def centroid(frame: np.ndarray) -> tuple[float, float]:
    """Intensity-weighted mean (column, row) of a square frame."""
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim == 1:
        side = int(round(np.sqrt(arr.size)))
        if side * side != arr.size:
            raise ValueError(f"flat frame of {arr.size} pixels is not square")
        arr = arr.reshape(side, side)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"centroid expects a square frame, got {arr.shape}")
    total = float(arr.sum())
    if total <= 0.0:
        raise ValueError("centroid needs positive total intensity")
    n = arr.shape[0]
    cols = np.arange(n)
    cx = float((arr.sum(axis=0) * cols).sum() / total)
    cy = float((arr.sum(axis=1) * cols).sum() / total)
    return cx, cy


def write_pgm(frame: np.ndarray, path) -> None:
    """Binary PGM (P5, maxval 255). Intensities in [0, 1] are scaled by 255
    and rounded half away from zero."""
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"write_pgm expects a 2-d frame, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("write_pgm needs a non-empty frame")
    if float(arr.min()) < 0.0 or float(arr.max()) > 1.0:
        raise ValueError("intensities must lie in [0, 1]")
    height, width = arr.shape
    payload = np.floor(arr * 255.0 + 0.5).astype(np.uint8).tobytes()
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + payload)


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM back to intensities in [0, 1]."""
    blob = Path(path).read_bytes()
    fields: list[int] = []
    pos = 2
    if blob[:2] != b"P5":
        raise ValueError("not a binary PGM (missing P5)")
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    payload = blob[pos:]
    if len(payload) != width * height:
        raise ValueError(f"PGM payload has {len(payload)} bytes, expected {width * height}")
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return pixels.reshape(height, width)


def montage(grid: TraversalGrid) -> np.ndarray:
    """Stack the traversal frames vertically: one row of the montage per value."""
    return np.concatenate(grid.frames, axis=0)


def format_report(gamma: float, sharp: float, val_mse: float, baseline_mse: float,
                  report: ConsistencyReport) -> str:
    """Tab-separated evaluation summary; floats use repr so nothing is lost."""
    lines = [
        f"gamma\t{gamma!r}",
        f"sharpness\t{sharp!r}",
        f"val_mse\t{val_mse!r}",
        f"baseline_mse\t{baseline_mse!r}",
        "factor\tmodal_index\tagreement\tcount",
    ]
    for stats in report.factors:
        lines.append(f"{stats.factor}\t{stats.modal_index}\t{stats.agreement!r}\t{stats.count}")
    for factor in report.omitted:
        lines.append(f"{factor}\tomitted\t-\t0")
    lines.append(f"distinct_modal_indices\t{str(report.distinct_modal_indices).lower()}")
    return "\n".join(lines) + "\n"


def hard_mode_mse(params: ModelParams, pairs: list[FramePair]) -> float:
    """Mean reconstruction error with hard selection, one pair at a time."""
    if not pairs:
        raise ValueError("hard_mode_mse needs a non-empty dataset")
    sp = SharpenParams(gamma=1.0, sigma=0.0)
    total = 0.0
    for pair in pairs:
        result = forward_pair(pair.x_prev, pair.x_curr, params, sp, mode="hard")
        total += result.loss.item()
    return total / len(pairs)


def copy_baseline_mse(pairs: list[FramePair]) -> float:
    """Error of predicting the current frame as a copy of the previous one."""
    if not pairs:
        raise ValueError("copy_baseline_mse needs a non-empty dataset")
    total = 0.0
    for pair in pairs:
        diff = pair.x_prev - pair.x_curr
        total += float(np.mean(diff * diff))
    return total / len(pairs)
