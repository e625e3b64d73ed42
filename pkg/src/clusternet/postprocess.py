"""Heatmap -> point detections: threshold, 8-connected components, area filter, split."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from clusternet import kernels

MIN_AREA = 100  # input pixels
MAX_AREA = 900


def otsu(values, bins=256, value_range=(0.0, 1.0)) -> float:
    """Otsu threshold over a ``bins``-bin histogram of ``values``.

    Returns the lower edge of the first foreground bin, so foreground is
    ``values >= threshold``. A single-valued input returns that value.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        return float(value_range[1])
    lo, hi = v.min(), v.max()
    if lo == hi:
        return float(lo)
    hist, edges = np.histogram(v, bins=bins, range=value_range)
    p = hist.astype(np.float64) / hist.sum()
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(p)[:-1]
    w1 = 1.0 - w0
    mu_cum = np.cumsum(p * centers)[:-1]
    mu_t = (p * centers).sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mu_t * w0 - mu_cum) ** 2 / (w0 * w1)
    between[~np.isfinite(between)] = -1.0
    k = int(np.argmax(between))
    return float(edges[k + 1])


@dataclass
class Component:
    ys: np.ndarray
    xs: np.ndarray
    area: int  # grid cells
    bbox: tuple  # (y0, x0, y1, x1) half-open
    centroid: tuple  # (x, y) in grid cells


def components(binary) -> list[Component]:
    """8-connected components of a binary map, in raster order of first pixel."""
    labels, n = kernels.label8(np.asarray(binary) != 0)
    if n == 0:
        return []
    order = np.argsort(labels, axis=None, kind="stable")
    flat = labels.ravel()[order]
    starts = np.searchsorted(flat, np.arange(1, n + 1))
    ends = np.append(starts[1:], flat.size)
    w = labels.shape[1]
    out = []
    for s, e in zip(starts, ends):
        idx = order[s:e]
        ys, xs = idx // w, idx % w
        out.append(Component(ys, xs, len(idx),
                             (int(ys.min()), int(xs.min()), int(ys.max()) + 1, int(xs.max()) + 1),
                             (float(xs.mean()), float(ys.mean()))))
    return out


@dataclass
class DetectionSet:
    """Point detections for one frame, in input pixels."""

    xy: np.ndarray  # (n, 2)
    scores: np.ndarray  # (n,)
    frame_id: int = 0

    def __len__(self):
        return len(self.scores)

    @classmethod
    def empty(cls, frame_id=0):
        return cls(np.zeros((0, 2)), np.zeros(0), frame_id)


def _split(comp: Component, values, radius, min_cells):
    """Greedy discs at successive maxima until the leftover is below ``min_cells``."""
    vals = values[comp.ys, comp.xs].astype(np.float64)
    alive = np.ones(comp.area, dtype=bool)
    centres = []
    while alive.sum() >= min_cells and len(centres) < comp.area:
        k = np.flatnonzero(alive)[np.argmax(vals[alive])]
        d2 = (comp.ys - comp.ys[k]) ** 2 + (comp.xs - comp.xs[k]) ** 2
        disc = alive & (d2 <= radius * radius)
        wts = vals[disc] + 1e-12
        centres.append((float(np.average(comp.xs[disc], weights=wts)),
                        float(np.average(comp.ys[disc], weights=wts)),
                        float(vals[disc].max())))
        alive &= ~disc
    return centres


def extract_detections(comps, values, d, min_area=MIN_AREA, max_area=MAX_AREA, split=True,
                       origin=(0, 0), frame_id=0) -> DetectionSet:
    """Centroid detections from components of a heatmap at downsample ``d``.

    Areas are compared in input pixels (cell counts times ``4**d``); small
    components are dropped and oversized ones split into several discs whose
    area matches the median component that is not oversized. Returned coordinates are input
    pixels: ``cell * 2**d + origin``.
    """
    px_per_cell = 4**d
    kept = [c for c in comps if c.area * px_per_cell >= min_area]
    if not kept:
        return DetectionSet.empty(frame_id)
    # typical single-object blob: the median of components that need no splitting
    single = [c.area for c in kept if c.area * px_per_cell <= max_area]
    median_cells = float(np.median(single)) if single else max_area / px_per_cell
    radius = math.sqrt(median_cells / math.pi)
    # a further object needs at least half a typical blob; smaller leftovers are
    # the flanks of the one just taken
    leftover = max(min_area / px_per_cell, 0.5 * median_cells)
    pts, scores = [], []
    for c in kept:
        if split and c.area * px_per_cell > max_area:
            for x, y, s in _split(c, values, radius, leftover):
                pts.append((x, y))
                scores.append(s)
        else:
            pts.append(c.centroid)
            scores.append(float(values[c.ys, c.xs].max()))
    scale = 2**d
    xy = np.asarray(pts, dtype=np.float64) * scale + np.array([origin[1], origin[0]], dtype=np.float64)
    return DetectionSet(xy, np.asarray(scores, dtype=np.float64), frame_id)


def detect(values, d, threshold=None, min_area=MIN_AREA, max_area=MAX_AREA, split=True,
           frame_id=0) -> tuple[DetectionSet, float]:
    """Threshold (Otsu when ``threshold`` is None) and extract detections.

    ``values`` is a unit-scaled heatmap in [0, 1]. Returns the detections and
    the threshold used.
    """
    values = np.asarray(values)
    if threshold is None:
        threshold = otsu(values)
        if values.min() == values.max():
            return DetectionSet.empty(frame_id), threshold
    comps = components(values >= threshold) if threshold > 0 else components(values > 0)
    return extract_detections(comps, values, d, min_area, max_area, split, frame_id=frame_id), threshold


def write_detections_csv(path, detsets):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_id", "x", "y", "score"])
        for ds in detsets:
            for (x, y), s in zip(ds.xy, ds.scores):
                w.writerow([ds.frame_id, f"{x:.3f}", f"{y:.3f}", f"{s:.6f}"])


def read_detections_csv(path) -> dict:
    """``{frame_id: DetectionSet}``."""
    rows: dict = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(int(r["frame_id"]), []).append((float(r["x"]), float(r["y"]), float(r["score"])))
    out = {}
    for fid, rs in rows.items():
        a = np.asarray(rs, dtype=np.float64).reshape(-1, 3)
        out[fid] = DetectionSet(a[:, :2], a[:, 2], fid)
    return out
