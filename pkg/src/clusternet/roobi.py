"""Receptive-field arithmetic and region proposal (ROOBI) gating.

A ROOBI ("region of objects of interest") is the input rectangle seen by one
4x4 block of ClusterNet's output grid. Blocks whose best score clears the
gating threshold are passed on to FoveaNet as fixed-size chips.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from clusternet.models.specs import NetworkSpec
from clusternet.targets import Heatmap

BLOCK = 4


@dataclass(frozen=True)
class Rect:
    """Half-open pixel rectangle ``[y0, y1) x [x0, x1)``."""

    y0: int
    x0: int
    y1: int
    x1: int

    @property
    def height(self):
        return self.y1 - self.y0

    @property
    def width(self):
        return self.x1 - self.x0

    def clip(self, h, w) -> "Rect":
        return Rect(max(self.y0, 0), max(self.x0, 0), min(self.y1, h), min(self.x1, w))

    def contains(self, x, y) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1


@dataclass(frozen=True)
class RfDescriptor:
    """Receptive field of one output neuron, in input pixels.

    ``size``: RF side length; ``jump``: input distance between adjacent output
    neurons; ``start``: input coordinate of the first output neuron's RF
    centre (may be half-integral after a 2x2 pool).
    """

    size: int
    jump: int
    start: float


def layer_descriptors(spec: NetworkSpec) -> list[RfDescriptor]:
    """Descriptor after every geometry-changing layer (conv or pool)."""
    size, jump, start = 1, 1, 0.0
    out = []
    for l in spec.layers:
        if l.kind == "conv":
            # symmetric (k-1)/2 padding keeps the RF centred on the output pixel
            size += (l.kernel - 1) * jump
            jump *= l.stride
        elif l.kind == "pool":
            size += jump
            start += 0.5 * jump
            jump *= 2
        else:
            continue
        out.append(RfDescriptor(size, jump, start))
    return out


def rf_descriptor(spec: NetworkSpec) -> RfDescriptor:
    descs = layer_descriptors(spec)
    return descs[-1] if descs else RfDescriptor(1, 1, 0.0)


def receptive_field(spec: NetworkSpec, out_region, frame_dims=None) -> Rect:
    """Tightest input rectangle feeding output cells ``out_region``.

    ``out_region`` is ``(r0, c0, r1, c1)`` half-open in output-grid cells.
    With ``frame_dims=(H, W)`` the rectangle is clipped to the frame. The
    rectangle is the span of the receptive field; it has no holes as long as
    no conv has a stride larger than its kernel.
    """
    r0, c0, r1, c1 = out_region
    if r1 <= r0 or c1 <= c0:
        raise ValueError(f"empty output region {out_region}")
    rf = rf_descriptor(spec)
    half = (rf.size - 1) / 2
    y0 = int(round(rf.start + r0 * rf.jump - half))
    x0 = int(round(rf.start + c0 * rf.jump - half))
    y1 = int(round(rf.start + (r1 - 1) * rf.jump + half)) + 1
    x1 = int(round(rf.start + (c1 - 1) * rf.jump + half)) + 1
    rect = Rect(y0, x0, y1, x1)
    return rect.clip(*frame_dims) if frame_dims is not None else rect


@dataclass(frozen=True)
class Roobi:
    rect: Rect  # receptive field of the block, clipped to the frame
    block: tuple  # (block_row, block_col)
    score: float
    chip: Rect  # FoveaNet input window (may extend past the frame; zero-padded)


def block_grid(grid_shape, block=BLOCK):
    gh, gw = grid_shape
    return -(-gh // block), -(-gw // block)


def block_scores(scores: np.ndarray, block=BLOCK) -> np.ndarray:
    """Max over non-overlapping ``block x block`` tiles; edge tiles may be smaller."""
    gh, gw = scores.shape
    bh, bw = block_grid(scores.shape, block)
    padded = np.full((bh * block, bw * block), -np.inf)
    padded[:gh, :gw] = scores
    return padded.reshape(bh, block, bw, block).max(axis=(1, 3))


def chip_window(rect_unclipped: Rect, chip: int) -> Rect:
    """``chip x chip`` window centred on a rectangle, origin rounded to even pixels."""
    cy = (rect_unclipped.y0 + rect_unclipped.y1) / 2
    cx = (rect_unclipped.x0 + rect_unclipped.x1) / 2
    y0 = 2 * int(np.floor((cy - chip / 2) / 2 + 0.5))
    x0 = 2 * int(np.floor((cx - chip / 2) / 2 + 0.5))
    return Rect(y0, x0, y0 + chip, x0 + chip)


def propose(cluster_out, spec: NetworkSpec, tau_gate: float, frame_dims, chip=128,
            block=BLOCK) -> list[Roobi]:
    """Emit a ROOBI for every output block whose max score is at least ``tau_gate``.

    ``cluster_out`` is a :class:`Heatmap` (scored in units of a single-object
    peak, clipped to [0, 1]) or a plain 2-D score array.
    """
    if not 0 <= tau_gate <= 1:
        raise ValueError(f"tau_gate must be in [0, 1], got {tau_gate}")
    scores = cluster_out.unit() if isinstance(cluster_out, Heatmap) else np.asarray(cluster_out)
    gh, gw = scores.shape
    bs = block_scores(scores, block)
    out = []
    for by, bx in zip(*np.nonzero(bs >= tau_gate)):
        region = (by * block, bx * block, min((by + 1) * block, gh), min((bx + 1) * block, gw))
        full = receptive_field(spec, region)
        out.append(Roobi(full.clip(*frame_dims), (int(by), int(bx)), float(bs[by, bx]),
                         chip_window(full, chip)))
    return out


def all_blocks(spec: NetworkSpec, frame_dims, chip=128, block=BLOCK) -> list[Roobi]:
    """Every block of the output grid, as an exhaustive scan would visit them."""
    grid = spec.output_dims(*frame_dims)
    return propose(np.zeros(grid), spec, 0.0, frame_dims, chip, block)


@dataclass
class SpeedupReport:
    proposed: int
    total_blocks: int
    fraction_skipped: float
    est_time_saved_s: float | None = None
    wall_time_s: float | None = None


def speedup_report(proposals, total_blocks, chip_cost_s=None) -> SpeedupReport:
    """Fraction of blocks FoveaNet never visits, and the time that saves."""
    if total_blocks < 1:
        raise ValueError("total_blocks must be >= 1")
    n = len(proposals) if not isinstance(proposals, int) else proposals
    skipped = 1.0 - n / total_blocks
    saved = None if chip_cost_s is None else (total_blocks - n) * chip_cost_s
    return SpeedupReport(n, total_blocks, skipped, saved)
