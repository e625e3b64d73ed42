"""Deterministic synthetic WAMI-like scenes with point annotations.

Scenes are registered grayscale frame sequences of straight roads carrying
vehicles (moving in lanes or stopped on the shoulder), with the nuisances
that make real wide-area imagery hard: textured background, buildings,
global gain jumps, residual registration jitter, mosaic seam steps, and
elongated parallax smears that move without being vehicles.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from clusternet.targets import Heatmap, make_heatmap

MOVING_MIN_DISPLACEMENT = 15.0  # px over a 5-frame window (4 intervals)


class InfeasibleSceneError(ValueError):
    """Too many vehicles for the available road length."""


@dataclass
class SceneConfig:
    height: int = 1024
    width: int = 1024
    n_frames: int = 5
    stack_frames: int = 5
    n_vehicles: int = 40
    vehicle_length: tuple = (18.0, 2.0)  # mean, std (px)
    vehicle_width: tuple = (9.0, 1.0)
    speed: tuple = (10.0, 20.0)  # px/frame, uniform range for moving lanes
    stopped_fraction: float = 0.25
    slow_fraction: float = 0.0
    slow_speed: tuple = (0.5, 6.0)
    camouflage_fraction: float = 0.0
    n_roads: int = 4
    road_width: tuple = (30.0, 40.0)
    n_buildings: int = 25
    gain_jump: float = 0.12
    gain_jump_prob: float = 0.3
    jitter_sigma: float = 0.3
    n_seams: int = 2
    seam_step: float = 0.04
    n_parallax: int = 6
    parallax_speed: tuple = (1.0, 3.0)
    noise_sigma: float = 0.01
    min_gap: float = 8.0  # bumper-to-bumper spacing along a lane (px)
    seed: int = 0

    def __post_init__(self):
        for f in ("height", "width", "n_frames", "stack_frames", "n_vehicles", "n_roads",
                  "n_buildings", "n_seams", "n_parallax"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be >= 0")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if self.stack_frames % 2 == 0:
            raise ValueError("stack_frames must be odd")
        if self.height < 128 or self.width < 128:
            raise ValueError("frame dims must be at least one 128-px chip")
        if self.n_vehicles >= 2**16 - 1:
            raise ValueError("n_vehicles must be below 65535")
        if self.n_vehicles and self.n_roads == 0:
            raise InfeasibleSceneError("vehicles requested but the scene has no roads")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            if k not in names:
                raise ValueError(f"unknown scene option {k!r}")
            kw[k] = tuple(v) if isinstance(v, list) else v
        return cls(**kw)


@dataclass
class Annotations:
    """Per-frame point annotations as parallel columns."""

    frame_id: np.ndarray
    x: np.ndarray
    y: np.ndarray
    object_id: np.ndarray
    is_moving: np.ndarray

    def __len__(self):
        return len(self.frame_id)

    def points(self, frame_id, moving_only=True) -> np.ndarray:
        """(n, 2) array of (x, y) for one frame."""
        sel = self.frame_id == frame_id
        if moving_only:
            sel &= self.is_moving
        return np.stack([self.x[sel], self.y[sel]], axis=1)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame_id", "x", "y", "object_id", "is_moving"])
            for row in zip(self.frame_id, self.x, self.y, self.object_id, self.is_moving):
                w.writerow([int(row[0]), f"{row[1]:.3f}", f"{row[2]:.3f}", int(row[3]), int(row[4])])

    @classmethod
    def from_csv(cls, path):
        cols = {"frame_id": [], "x": [], "y": [], "object_id": [], "is_moving": []}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                for k in cols:
                    cols[k].append(row.get(k, 1 if k == "is_moving" else 0))
        return cls(
            np.asarray(cols["frame_id"], dtype=np.int64),
            np.asarray(cols["x"], dtype=np.float64),
            np.asarray(cols["y"], dtype=np.float64),
            np.asarray(cols["object_id"], dtype=np.int64),
            np.asarray(cols["is_moving"], dtype=np.int64).astype(bool),
        )


@dataclass
class SyntheticScene:
    frames: np.ndarray  # (F, H, W) uint8
    annotations: Annotations
    road_mask: np.ndarray
    vehicle_masks: list = field(default_factory=list)  # per frame: uint16 map of object_id+1
    config: SceneConfig | None = None

    def write(self, out_dir):
        """Write ``frame_%05d.png`` files and ``annotations.csv``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, f in enumerate(self.frames):
            write_png(out / f"frame_{i:05d}.png", f)
        self.annotations.to_csv(out / "annotations.csv")


@dataclass
class FrameStack:
    """N consecutive registered frames and the index of the frame of interest."""

    frames: np.ndarray  # (N, h, w) uint8
    center: int
    frame_id: int = 0
    origin: tuple = (0, 0)  # (y, x) of frames[:, 0, 0] in the full frame

    def __post_init__(self):
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be (N, h, w), got shape {self.frames.shape}")
        if len(self.frames) % 2 == 0:
            raise ValueError("a frame stack needs an odd frame count")

    @property
    def n(self):
        return len(self.frames)

    def as_input(self, dtype=np.float32) -> np.ndarray:
        return normalize(self.frames, dtype)


@dataclass
class Sample:
    stack: FrameStack
    target: Heatmap
    points: np.ndarray  # (n, 2) chip-local (x, y) of centres inside the chip
    target_points: np.ndarray | None = None  # chip-local centres that reach the target grid


def normalize(frames, dtype=np.float32):
    """Map uint8 intensities to roughly zero-mean, unit-scale network input."""
    return ((np.asarray(frames, dtype=dtype) / 255.0) - 0.5) / 0.25


def write_png(path, img):
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="L").save(path, optimize=False)


def read_png(path):
    return np.asarray(Image.open(path).convert("L"), dtype=np.uint8)


def load_frames(frames_dir):
    paths = sorted(Path(frames_dir).glob("frame_*.png"))
    if not paths:
        raise FileNotFoundError(f"no frame_*.png files in {frames_dir}")
    return np.stack([read_png(p) for p in paths])


def is_moving_speed(speed) -> np.ndarray:
    """The 15-px-over-5-frames rule for constant-velocity vehicles."""
    return 4.0 * np.abs(np.asarray(speed, dtype=np.float64)) >= MOVING_MIN_DISPLACEMENT


# --- rendering helpers -----------------------------------------------------

def _value_noise(rng, h, w, cell):
    gh, gw = h // cell + 2, w // cell + 2
    coarse = rng.standard_normal((gh, gw))
    up = ndimage.zoom(coarse, cell, order=3, mode="nearest")
    return up[:h, :w]


def _stamp_rect(img, alpha_img, cx, cy, length, width, angle, value, ss=4):
    """Alpha-blend an anti-aliased rotated rectangle; returns coverage and box."""
    h, w = img.shape
    c, s = math.cos(angle), math.sin(angle)
    ext = 0.5 * (abs(length * c) + abs(width * s)), 0.5 * (abs(length * s) + abs(width * c))
    x0, x1 = max(int(math.floor(cx - ext[0])) - 1, 0), min(int(math.ceil(cx + ext[0])) + 2, w)
    y0, y1 = max(int(math.floor(cy - ext[1])) - 1, 0), min(int(math.ceil(cy + ext[1])) + 2, h)
    if x0 >= x1 or y0 >= y1:
        return None, None
    off = (np.arange(ss) + 0.5) / ss - 0.5
    xs = (np.arange(x0, x1)[:, None] + off[None, :]).ravel()
    ys = (np.arange(y0, y1)[:, None] + off[None, :]).ravel()
    dx = xs[None, :] - cx
    dy = ys[:, None] - cy
    u = dx * c + dy * s
    v = -dx * s + dy * c
    inside = (np.abs(u) <= length / 2) & (np.abs(v) <= width / 2)
    cov = inside.reshape(y1 - y0, ss, x1 - x0, ss).mean(axis=(1, 3))
    region = img[y0:y1, x0:x1]
    region *= 1 - cov
    region += cov * value
    if alpha_img is not None:
        np.maximum(alpha_img[y0:y1, x0:x1], cov, out=alpha_img[y0:y1, x0:x1])
    return cov, (y0, y1, x0, x1)


@dataclass
class _Road:
    px: float
    py: float
    angle: float
    width: float
    t_lo: float
    t_hi: float


def _make_roads(rng, cfg):
    h, w = cfg.height, cfg.width
    roads = []
    for i in range(cfg.n_roads):
        # alternate near-horizontal / near-vertical with some diagonal spread
        base = 0.0 if i % 2 == 0 else math.pi / 2
        angle = base + rng.uniform(-0.5, 0.5)
        px, py = rng.uniform(0.15 * w, 0.85 * w), rng.uniform(0.15 * h, 0.85 * h)
        width = rng.uniform(*cfg.road_width)
        # parameter range where the centreline lies inside the frame
        c, s = math.cos(angle), math.sin(angle)
        lo, hi = -1e9, 1e9
        for p, d, size in ((px, c, w), (py, s, h)):
            if abs(d) > 1e-9:
                a, b = (0 - p) / d, (size - 1 - p) / d
                lo, hi = max(lo, min(a, b)), min(hi, max(a, b))
        roads.append(_Road(px, py, angle, width, lo, hi))
    return roads


def _road_mask(roads, h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    mask = np.zeros((h, w), dtype=bool)
    for r in roads:
        dist = np.abs(-(xx - r.px) * math.sin(r.angle) + (yy - r.py) * math.cos(r.angle))
        mask |= dist <= r.width / 2
    return mask


def _place_vehicles(rng, cfg, roads):
    """Assign each vehicle a road slot, position at the central frame and velocity."""
    n = cfg.n_vehicles
    n_stop = int(round(cfg.stopped_fraction * n))
    n_slow = int(round(cfg.slow_fraction * n))
    order = rng.permutation(n)
    kind = np.full(n, "moving", dtype=object)
    kind[order[:n_stop]] = "stopped"
    kind[order[n_stop : n_stop + n_slow]] = "slow"

    # slots: (road, lateral offset, direction sign, lane speed)
    lane_speed = {}
    for ri, r in enumerate(roads):
        for sign in (1, -1):
            lane_speed[(ri, sign)] = rng.uniform(*cfg.speed)

    lengths = np.clip(rng.normal(*cfg.vehicle_length, size=n), 10, 30)
    widths = np.clip(rng.normal(*cfg.vehicle_width, size=n), 5, 14)
    occupied: dict = {}
    margin = 12.0
    out = []
    for i in range(n):
        placed = False
        for _ in range(200):
            ri = int(rng.integers(len(roads)))
            r = roads[ri]
            sign = 1 if rng.random() < 0.5 else -1
            if kind[i] == "stopped":
                lateral = sign * (r.width / 2 - widths[i] / 2 - 1.5)
                speed = 0.0
                slot = (ri, sign, "shoulder")
            elif kind[i] == "slow":
                lateral = sign * r.width / 4
                speed = rng.uniform(*cfg.slow_speed)
                slot = (ri, sign, "slow")
            else:
                lateral = sign * r.width / 4
                speed = lane_speed[(ri, sign)]
                slot = (ri, sign, "lane")
            lo, hi = r.t_lo + margin, r.t_hi - margin
            if hi <= lo:
                continue
            t = rng.uniform(lo, hi)
            need = lengths[i] + cfg.min_gap
            taken = occupied.setdefault(slot, [])
            if any(abs(t - t2) < (need + l2) / 2 for t2, l2 in taken):
                continue
            taken.append((t, lengths[i]))
            c, s = math.cos(r.angle), math.sin(r.angle)
            # lateral offset perpendicular to the road; direction follows the lane sign
            cx = r.px + t * c - lateral * s
            cy = r.py + t * s + lateral * c
            vx, vy = sign * speed * c, sign * speed * s
            out.append((cx, cy, vx, vy, speed, lengths[i], widths[i], r.angle))
            placed = True
            break
        if not placed:
            raise InfeasibleSceneError(
                f"could not place vehicle {i + 1} of {n} on {len(roads)} road(s); "
                "reduce n_vehicles or add roads"
            )
    return out


def _vehicle_intensity(rng, cfg, bg_value):
    if rng.random() < cfg.camouflage_fraction:
        return float(np.clip(bg_value + rng.normal(0, 0.02), 0, 1))
    if rng.random() < 0.5:
        return rng.uniform(0.02, 0.30)
    return rng.uniform(0.68, 0.98)


def generate(cfg: SceneConfig) -> SyntheticScene:
    """Render a scene; identical output for identical ``cfg`` (seed included)."""
    ss = np.random.SeedSequence(cfg.seed)
    layout_seed, *frame_seeds = ss.spawn(1 + cfg.n_frames)
    rng = np.random.default_rng(layout_seed)
    h, w = cfg.height, cfg.width

    bg = 0.5 + 0.05 * _value_noise(rng, h, w, 64) + 0.025 * _value_noise(rng, h, w, 12)
    for _ in range(cfg.n_buildings):
        bh, bw = rng.uniform(20, 70, size=2)
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        _stamp_rect(bg, None, cx, cy, bw, bh, rng.uniform(0, math.pi), rng.uniform(0.15, 0.9))
    roads = _make_roads(rng, cfg)
    road_mask = _road_mask(roads, h, w)
    road_tone = rng.uniform(0.36, 0.44)
    bg = np.where(road_mask, road_tone + 0.01 * _value_noise(rng, h, w, 8), bg)

    vehicles = _place_vehicles(rng, cfg, roads)
    tones = []
    for cx, cy, *_ in vehicles:
        iy, ix = min(max(int(cy), 0), h - 1), min(max(int(cx), 0), w - 1)
        tones.append(_vehicle_intensity(rng, cfg, bg[iy, ix]))

    parallax = []
    for _ in range(cfg.n_parallax):
        ang = rng.uniform(0, 2 * math.pi)
        spd = rng.uniform(*cfg.parallax_speed)
        parallax.append((rng.uniform(0, w), rng.uniform(0, h), rng.uniform(28, 50), rng.uniform(5, 8),
                         rng.uniform(0, math.pi), spd * math.cos(ang), spd * math.sin(ang),
                         rng.uniform(0.05, 0.95)))

    seams = []
    for _ in range(cfg.n_seams):
        vertical = rng.random() < 0.5
        pos = int(rng.uniform(0.2, 0.8) * (w if vertical else h))
        seams.append((vertical, pos))

    fc = cfg.n_frames // 2
    frames = np.empty((cfg.n_frames, h, w), dtype=np.uint8)
    vmasks = []
    ann = {"frame_id": [], "x": [], "y": [], "object_id": [], "is_moving": []}
    for f in range(cfg.n_frames):
        frng = np.random.default_rng(frame_seeds[f])
        img = bg.copy()
        dt = f - fc
        for px, py, ln, wd, ang, vx, vy, tone in parallax:
            _stamp_rect(img, None, px + vx * dt, py + vy * dt, ln, wd, ang, tone)
        vmask = np.zeros((h, w), dtype=np.uint16)
        first = len(ann["x"])
        for oid, ((cx, cy, vx, vy, spd, ln, wd, ang), tone) in enumerate(zip(vehicles, tones)):
            x, y = cx + vx * dt, cy + vy * dt
            cov, box = _stamp_rect(img, None, x, y, ln, wd, ang, tone)
            if cov is not None:
                y0, y1, x0, x1 = box
                sub = vmask[y0:y1, x0:x1]
                sub[cov >= 0.5] = oid + 1
            if 0 <= x < w and 0 <= y < h:
                ann["frame_id"].append(f)
                ann["x"].append(x)
                ann["y"].append(y)
                ann["object_id"].append(oid)
                ann["is_moving"].append(bool(is_moving_speed(spd)))
        for vertical, pos in seams:
            step = cfg.seam_step * (1 + 0.5 * frng.standard_normal())
            if vertical:
                img[:, pos:] += step
            else:
                img[pos:, :] += step
        if cfg.gain_jump and frng.random() < cfg.gain_jump_prob:
            img *= 1 + frng.uniform(-cfg.gain_jump, cfg.gain_jump)
        if cfg.jitter_sigma > 0:
            jx, jy = frng.normal(0, cfg.jitter_sigma, size=2)
            img = ndimage.shift(img, (jy, jx), order=1, mode="nearest")
            vmask = ndimage.shift(vmask, (jy, jx), order=0, mode="constant")
            for k in range(first, len(ann["x"])):
                ann["x"][k] += jx
                ann["y"][k] += jy
        img += frng.normal(0, cfg.noise_sigma, size=img.shape)
        frames[f] = np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)
        vmasks.append(vmask)

    annotations = Annotations(
        np.asarray(ann["frame_id"], dtype=np.int64),
        np.asarray(ann["x"], dtype=np.float64),
        np.asarray(ann["y"], dtype=np.float64),
        np.asarray(ann["object_id"], dtype=np.int64),
        np.asarray(ann["is_moving"], dtype=bool),
    )
    # drop annotations that jitter pushed out of frame
    keep = (annotations.x >= 0) & (annotations.x < w) & (annotations.y >= 0) & (annotations.y < h)
    annotations = Annotations(*(getattr(annotations, k.name)[keep] for k in fields(Annotations)))
    return SyntheticScene(frames, annotations, road_mask, vmasks, cfg)


def stack_at(frames, center_frame, n_frames, origin=(0, 0), size=None) -> FrameStack:
    """Cut an ``n_frames`` stack centred on ``center_frame`` (optionally a window)."""
    half = n_frames // 2
    lo, hi = center_frame - half, center_frame + half + 1
    if lo < 0 or hi > len(frames):
        raise ValueError(f"frame {center_frame} has no full {n_frames}-frame window")
    sub = frames[lo:hi]
    if size is not None:
        y0, x0 = origin
        sh, sw = size
        sub = sub[:, y0 : y0 + sh, x0 : x0 + sw]
    return FrameStack(np.ascontiguousarray(sub), half, center_frame, tuple(origin))


def chips(scene, chip=128, stride=None, n_frames=5, d=1, sigma=2.0, centers=None,
          include_empty=False, moving_only=True):
    """Tile a scene into training samples with heatmap targets at downsample ``d``.

    Chips whose window holds no (moving, unless ``moving_only=False``) vehicle
    centre are skipped unless ``include_empty``.
    """
    if n_frames % 2 == 0:
        raise ValueError("n_frames must be odd")
    stride = chip if stride is None else stride
    frames = scene.frames if isinstance(scene, SyntheticScene) else scene[0]
    ann = scene.annotations if isinstance(scene, SyntheticScene) else scene[1]
    F, H, W = frames.shape
    if centers is None:
        half = n_frames // 2
        centers = range(half, F - half)
    out = []
    for f in centers:
        pts = ann.points(f, moving_only=moving_only)
        for y0 in range(0, H - chip + 1, stride):
            for x0 in range(0, W - chip + 1, stride):
                inside = ((pts[:, 0] >= x0) & (pts[:, 0] < x0 + chip)
                          & (pts[:, 1] >= y0) & (pts[:, 1] < y0 + chip))
                local = pts[inside] - np.array([x0, y0], dtype=np.float64)
                if not include_empty and len(local) == 0:
                    continue
                st = stack_at(frames, f, n_frames, (y0, x0), (chip, chip))
                # targets see every centre within reach, not only those inside the chip
                reach = 6 * sigma * 2**d
                near = pts - np.array([x0, y0], dtype=np.float64)
                near = near[(near[:, 0] > -reach) & (near[:, 0] < chip + reach)
                            & (near[:, 1] > -reach) & (near[:, 1] < chip + reach)]
                out.append(Sample(st, make_heatmap(near, (chip, chip), d, sigma), local, near))
    return out


def config_to_dict(cfg: SceneConfig) -> dict:
    return asdict(cfg)
