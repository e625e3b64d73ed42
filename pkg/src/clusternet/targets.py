"""Ground-truth heatmaps and segmentation maps built from point annotations."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class Heatmap:
    """Single-channel grid at ``1/2**d`` of input resolution.

    ``sigma`` is the Gaussian width in grid cells that the grid was built (or
    trained) with; ``peak`` is the height of one isolated object. A
    ``normalized`` map (e.g. a segmentation head's foreground probability) is
    already on the unit scale.
    """

    values: np.ndarray
    d: int
    sigma: float
    normalized: bool = False

    @property
    def peak(self) -> float:
        return 1.0 / (2.0 * math.pi * self.sigma**2)

    @property
    def scale(self) -> int:
        return 2**self.d

    def unit(self) -> np.ndarray:
        """Values in units of a single-object peak, clipped to [0, 1]."""
        if self.normalized:
            return np.clip(self.values, 0.0, 1.0)
        return np.clip(self.values / self.peak, 0.0, 1.0)


def grid_dims(dims, d):
    h, w = dims
    s = 2**d
    return -(-h // s), -(-w // s)


def gaussian_sum(points, grid_shape, sigma, scale=1.0, radius=6.0):
    """Sum of normalized 2-D Gaussians (mass 1 each) centred at ``points/scale``.

    ``points`` is an (n, 2) array of (x, y) input-pixel coordinates. Each
    Gaussian is truncated at ``radius * sigma`` cells; the discarded tail is
    below 1e-7 of its mass.
    """
    gh, gw = grid_shape
    out = np.zeros((gh, gw), dtype=np.float64)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return out
    amp = 1.0 / (2.0 * math.pi * sigma**2)
    r = int(math.ceil(radius * sigma))
    inv = -0.5 / sigma**2
    for x, y in pts / scale:
        cx, cy = int(round(x)), int(round(y))
        x0, x1 = max(cx - r, 0), min(cx + r + 1, gw)
        y0, y1 = max(cy - r, 0), min(cy + r + 1, gh)
        if x0 >= x1 or y0 >= y1:
            continue
        gx = np.exp(inv * (np.arange(x0, x1) - x) ** 2)
        gy = np.exp(inv * (np.arange(y0, y1) - y) ** 2)
        out[y0:y1, x0:x1] += amp * np.outer(gy, gx)
    return out


def make_heatmap(points, dims, d, sigma) -> Heatmap:
    """Clipped Gaussian heatmap target at downsample exponent ``d``.

    ``dims`` is the input (height, width); the grid is ``ceil(dims / 2**d)``.
    Centres are kept fractional after division by ``2**d``.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if d < 0:
        raise ValueError(f"d must be >= 0, got {d}")
    raw = gaussian_sum(points, grid_dims(dims, d), sigma, scale=2**d)
    return Heatmap(np.minimum(raw, 1.0), d, sigma)


def default_seg_threshold(sigma) -> float:
    """Quarter of a single object's peak height."""
    return 0.25 / (2.0 * math.pi * sigma**2)


def make_segmentation(heatmap: Heatmap, tau=None) -> np.ndarray:
    """Binary {0, 1} label map: 1 where the heatmap is at least ``tau``."""
    if tau is None:
        tau = default_seg_threshold(heatmap.sigma)
    if not 0 < tau < 1:
        raise ValueError(f"segmentation threshold must be in (0, 1), got {tau}")
    return (heatmap.values >= tau).astype(np.uint8)
