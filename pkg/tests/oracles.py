"""Slow, obviously-correct reference implementations used by the tests."""
from __future__ import annotations

import itertools
from collections import deque

import numpy as np


def naive_conv2d(x, w, b, stride=1):
    """Direct six-loop cross-correlation with symmetric zero padding."""
    B, C, H, W = x.shape
    M, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    Ho, Wo = -(-H // stride), -(-W // stride)
    y = np.zeros((B, M, Ho, Wo))
    for n in range(B):
        for m in range(M):
            for i in range(Ho):
                for j in range(Wo):
                    acc = b[m]
                    for c in range(C):
                        for u in range(kh):
                            for v in range(kw):
                                r, s = i * stride + u - ph, j * stride + v - pw
                                if 0 <= r < H and 0 <= s < W:
                                    acc += w[m, c, u, v] * x[n, c, r, s]
                    y[n, m, i, j] = acc
    return y


def flood_fill_labels(mask):
    """8-connected components by BFS, numbered in raster order of first pixel."""
    mask = np.asarray(mask, dtype=bool)
    lab = np.zeros(mask.shape, dtype=np.int32)
    n = 0
    H, W = mask.shape
    for y in range(H):
        for x in range(W):
            if mask[y, x] and not lab[y, x]:
                n += 1
                lab[y, x] = n
                q = deque([(y, x)])
                while q:
                    cy, cx = q.popleft()
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            ny, nx = cy + dy, cx + dx
                            if 0 <= ny < H and 0 <= nx < W and mask[ny, nx] and not lab[ny, nx]:
                                lab[ny, nx] = n
                                q.append((ny, nx))
    return lab, n


def brute_force_match(dets, gts, radius):
    """Best one-to-one matching by enumeration: most pairs, then least total distance.

    Returns ``(n_pairs, total_distance)``.
    """
    dets = np.asarray(dets, dtype=np.float64).reshape(-1, 2)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 2)
    dist = np.sqrt(((dets[:, None] - gts[None]) ** 2).sum(-1)) if len(dets) and len(gts) else None
    best = (0, 0.0)
    nd, ng = len(dets), len(gts)
    if dist is None:
        return best
    # assign each detection a distinct gt or nothing (-1)
    for assign in itertools.product(range(-1, ng), repeat=nd):
        used = [a for a in assign if a >= 0]
        if len(used) != len(set(used)):
            continue
        if any(a >= 0 and dist[i, a] > radius for i, a in enumerate(assign)):
            continue
        k = len(used)
        tot = sum(dist[i, a] for i, a in enumerate(assign) if a >= 0)
        if k > best[0] or (k == best[0] and tot < best[1] - 1e-12):
            best = (k, tot)
    return best


def brute_force_otsu(values, bins=256, value_range=(0.0, 1.0)):
    """Threshold maximizing between-class variance, trying every bin edge directly."""
    v = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = value_range
    edges = np.linspace(lo, hi, bins + 1)
    hist, _ = np.histogram(v, bins=bins, range=value_range)
    centers = (edges[:-1] + edges[1:]) / 2
    best, best_t = -1.0, edges[1]
    total = hist.sum()
    for k in range(bins - 1):
        w0 = hist[: k + 1].sum() / total
        w1 = 1 - w0
        if w0 == 0 or w1 == 0:
            continue
        m0 = (hist[: k + 1] * centers[: k + 1]).sum() / hist[: k + 1].sum()
        m1 = (hist[k + 1 :] * centers[k + 1 :]).sum() / hist[k + 1 :].sum()
        var = w0 * w1 * (m0 - m1) ** 2
        if var > best + 1e-15:
            best, best_t = var, edges[k + 1]
    return best_t


def influence_box(net, in_shape, out_cell, channels_out=0):
    """Bounding box of input pixels that change one output cell when perturbed.

    ``net`` maps an (1, C, H, W) float64 array to (1, M, h, w). Returns
    ``(y0, x0, y1, x1)`` half-open, or None if nothing influences the cell.
    """
    C, H, W = in_shape
    base = np.zeros((1, C, H, W))
    r, c = out_cell
    ref = net(base)[0, channels_out, r, c]
    hit = np.zeros((H, W), dtype=bool)
    for y in range(H):
        for x in range(W):
            probe = base.copy()
            probe[0, :, y, x] = 1000.0
            if net(probe)[0, channels_out, r, c] != ref:
                hit[y, x] = True
    if not hit.any():
        return None
    ys, xs = np.nonzero(hit)
    return ys.min(), xs.min(), ys.max() + 1, xs.max() + 1


def numeric_grad(f, x, h=1e-6):
    """Central differences of scalar ``f`` w.r.t. every element of ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"], op_flags=["readwrite"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    """Relative error of two gradient tensors: ``|a-b| / max(|a|, |b|)`` in L2."""
    a, b = np.ravel(a), np.ravel(b)
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if den == 0 else float(np.linalg.norm(a - b) / den)
