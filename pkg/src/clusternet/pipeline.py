"""Two-stage inference: ClusterNet gating, FoveaNet on proposed regions, stitching.

Every ClusterNet output block owns a *core*: the input square its 4x4 cells
stride over (64 px for a total downsample of 16). FoveaNet runs on a chip
centred on the block's receptive field and contributes its output only over
the core. Cores are disjoint, so the stitched map does not depend on which
other blocks were proposed, and a scan over all blocks is the exhaustive
reference that gating at ``tau_gate=0`` reproduces exactly.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from clusternet import roobi as R
from clusternet.models import Model
from clusternet.postprocess import MAX_AREA, MIN_AREA, DetectionSet, detect
from clusternet.synthdata import FrameStack
from clusternet.targets import Heatmap


class SpecMismatchError(ValueError):
    """Checkpoints do not fit together or do not fit the input."""


@dataclass
class RunConfig:
    frames_dir: str | None = None
    annotations: str | None = None
    cluster_ckpt: str | None = None
    fovea_ckpt: str | None = None
    out_dir: str | None = None
    n_frames: int = 5
    tau_gate: float = 0.1
    threshold: float | None = None  # None: Otsu per frame
    min_area: float = MIN_AREA
    max_area: float = MAX_AREA
    radius: float = 20.0
    chip: int = 128
    tile: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.n_frames not in (1, 3, 5):
            raise ValueError(f"n_frames must be 1, 3 or 5, got {self.n_frames}")
        if not 0 <= self.tau_gate <= 1:
            raise ValueError(f"tau_gate must be in [0, 1], got {self.tau_gate}")
        if self.threshold is not None and not 0 <= self.threshold <= 1:
            raise ValueError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    def check_paths(self, *names):
        """Raise FileNotFoundError for any named path that is set but missing."""
        for n in names or ("frames_dir", "annotations", "cluster_ckpt", "fovea_ckpt"):
            p = getattr(self, n)
            if p is not None and not Path(p).exists():
                raise FileNotFoundError(f"{n}: {p} does not exist")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        bad = set(d) - names
        if bad:
            raise ValueError(f"unknown run option(s): {', '.join(sorted(bad))}")
        return cls(**d)


@dataclass
class FrameResult:
    detections: DetectionSet
    report: R.SpeedupReport
    heatmap: Heatmap  # stitched FoveaNet output at its own resolution
    proposals: list = field(default_factory=list)
    threshold: float = 0.0


def central(stack: FrameStack, n: int) -> FrameStack:
    """The central ``n`` frames of a stack."""
    if n > stack.n:
        raise SpecMismatchError(f"model needs {n} frames, stack has {stack.n}")
    lo = stack.center - n // 2
    return FrameStack(stack.frames[lo : lo + n], n // 2, stack.frame_id, stack.origin)


def _check_models(cluster: Model | None, fovea: Model):
    if fovea.spec.name != "foveanet":
        raise SpecMismatchError(f"expected a foveanet checkpoint, got {fovea.spec.name}")
    if cluster is not None and cluster.spec.name != "clusternet":
        raise SpecMismatchError(f"expected a clusternet checkpoint, got {cluster.spec.name}")


# --- stage 1 -----------------------------------------------------------------

def cluster_heatmap(model: Model, stack: FrameStack, tile=512) -> Heatmap:
    """ClusterNet output over a whole frame, run as overlapping tiles.

    Tiles start on multiples of the total stride and carry a margin wider
    than half the receptive field, so each kept output cell sees exactly the
    inputs it would see in a single whole-frame pass.
    """
    stack = central(stack, model.spec.n_frames)
    x = stack.as_input(model.dtype)
    _, h, w = x.shape
    step = 2**model.d
    if tile % step:
        raise ValueError(f"tile {tile} must be a multiple of {step}")
    if h <= tile and w <= tile:
        raw = model.forward_raw(x[None])[0]
        return _as_heatmap(model, raw)
    rf = R.rf_descriptor(model.spec)
    margin = step * -(-(rf.size // 2 + step) // step)
    gh, gw = -(-h // step), -(-w // step)
    out = np.zeros((model.spec.out_channels, gh, gw), dtype=model.dtype)
    for ty in range(0, h, tile):
        for tx in range(0, w, tile):
            y0, x0 = max(ty - margin, 0), max(tx - margin, 0)
            y1, x1 = min(ty + tile + margin, h), min(tx + tile + margin, w)
            part = model.forward_raw(x[None, :, y0:y1, x0:x1])[0]
            cy0, cx0 = ty // step, tx // step
            cy1, cx1 = min((ty + tile) // step, gh), min((tx + tile) // step, gw)
            oy, ox = y0 // step, x0 // step
            out[:, cy0:cy1, cx0:cx1] = part[:, cy0 - oy : cy1 - oy, cx0 - ox : cx1 - ox]
    return _as_heatmap(model, out)


def _as_heatmap(model, raw):
    if model.loss == "softmax_xent":
        e = np.exp(raw - raw.max(axis=0, keepdims=True))
        return Heatmap(e[1] / e.sum(axis=0), model.d, model.sigma, normalized=True)
    return Heatmap(raw[0], model.d, model.sigma)


# --- stage 2 -----------------------------------------------------------------

def block_core(block, cluster_d, frame_dims, block_cells=R.BLOCK) -> R.Rect:
    """Input pixels owned by a ClusterNet output block."""
    side = block_cells * 2**cluster_d
    by, bx = block
    return R.Rect(by * side, bx * side, (by + 1) * side, (bx + 1) * side).clip(*frame_dims)


def _check_chip_context(fovea: Model, core: R.Rect, chip: R.Rect):
    """Every kept output cell must see its whole receptive field inside the chip."""
    s = 2**fovea.d
    rf = R.rf_descriptor(fovea.spec)
    half = (rf.size - 1) / 2
    for lo, hi, c0 in ((core.y0, core.y1, chip.y0), (core.x0, core.x1, chip.x0)):
        first, last = lo // s, -(-hi // s) - 1
        need0 = rf.start + first * rf.jump - half
        need1 = rf.start + last * rf.jump + half
        if (c0 % s) or need0 < c0 or need1 > c0 + (chip.y1 - chip.y0) - 1:
            raise SpecMismatchError(f"chip {chip} does not cover the receptive field of core {core}")


def fovea_scan(fovea: Model, stack: FrameStack, proposals, cluster_d, chip=128, batch=8) -> Heatmap:
    """Stitch FoveaNet outputs over the cores of ``proposals``; zero elsewhere."""
    stack = central(stack, fovea.spec.n_frames)
    x = stack.as_input(fovea.dtype)
    n, h, w = x.shape
    # pad in normalized space so chips past the border see the same zeros as a whole-frame pass
    pad = chip
    xp = np.zeros((n, h + 2 * pad, w + 2 * pad), dtype=fovea.dtype)
    xp[:, pad : pad + h, pad : pad + w] = x
    s = 2**fovea.d
    gh, gw = -(-h // s), -(-w // s)
    out = np.zeros((fovea.spec.out_channels, gh, gw), dtype=fovea.dtype)
    covered = np.zeros((gh, gw), dtype=bool)
    for i in range(0, len(proposals), batch):
        group = proposals[i : i + batch]
        xs = np.stack([xp[:, r.chip.y0 + pad : r.chip.y1 + pad, r.chip.x0 + pad : r.chip.x1 + pad]
                       for r in group])
        ys = fovea.forward_raw(xs, batch)
        for r, y in zip(group, ys):
            core = block_core(r.block, cluster_d, (h, w))
            _check_chip_context(fovea, core, r.chip)
            cy0, cx0 = core.y0 // s, core.x0 // s
            cy1, cx1 = -(-core.y1 // s), -(-core.x1 // s)
            oy, ox = r.chip.y0 // s, r.chip.x0 // s
            out[:, cy0:cy1, cx0:cx1] = y[:, cy0 - oy : cy1 - oy, cx0 - ox : cx1 - ox]
            covered[cy0:cy1, cx0:cx1] = True
    hm = _as_heatmap(fovea, out)
    hm.values[~covered] = 0.0
    return hm


def exhaustive_scan(fovea: Model, stack: FrameStack, cluster_spec, chip=128, batch=8) -> Heatmap:
    """FoveaNet over every block of the frame (no gating)."""
    dims = stack.frames.shape[1:]
    return fovea_scan(fovea, stack, R.all_blocks(cluster_spec, dims, chip), cluster_spec.d, chip, batch)


# --- end to end --------------------------------------------------------------

def detect_frame(stack: FrameStack, cluster: Model, fovea: Model, tau_gate=0.1, threshold=None,
                 min_area=MIN_AREA, max_area=MAX_AREA, chip=128, tile=512) -> FrameResult:
    """Detections for the stack's frame of interest, plus gating statistics."""
    _check_models(cluster, fovea)
    t0 = time.perf_counter()
    dims = stack.frames.shape[1:]
    coarse = cluster_heatmap(cluster, stack, tile)
    proposals = R.propose(coarse, cluster.spec, tau_gate, dims, chip)
    fine = fovea_scan(fovea, stack, proposals, cluster.d, chip)
    total = len(R.all_blocks(cluster.spec, dims, chip))
    return _finish(stack, fine, proposals, total, threshold, min_area, max_area, t0)


def detect_exhaustive(stack: FrameStack, cluster_spec, fovea: Model, threshold=None,
                      min_area=MIN_AREA, max_area=MAX_AREA, chip=128) -> FrameResult:
    """The ungated reference: FoveaNet on every block."""
    _check_models(None, fovea)
    t0 = time.perf_counter()
    dims = stack.frames.shape[1:]
    blocks = R.all_blocks(cluster_spec, dims, chip)
    fine = fovea_scan(fovea, stack, blocks, cluster_spec.d, chip)
    return _finish(stack, fine, blocks, len(blocks), threshold, min_area, max_area, t0)


def _finish(stack, fine, proposals, total, threshold, min_area, max_area, t0):
    dets, thr = detect(fine.unit(), fine.d, threshold, min_area, max_area, frame_id=stack.frame_id)
    dets.xy += np.array([stack.origin[1], stack.origin[0]], dtype=np.float64)
    report = R.speedup_report(proposals, total)
    report.wall_time_s = time.perf_counter() - t0
    return FrameResult(dets, report, fine, list(proposals), thr)


def heatmap_image(h: Heatmap) -> np.ndarray:
    """8-bit visualization of a heatmap's unit-scaled values."""
    return np.round(h.unit() * 255).astype(np.uint8)


__all__ = [
    "RunConfig", "FrameResult", "SpecMismatchError", "central", "cluster_heatmap", "block_core",
    "fovea_scan", "exhaustive_scan", "detect_frame", "detect_exhaustive", "heatmap_image",
]
