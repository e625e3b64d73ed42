"""Point-based detection scoring: radius matching, precision/recall/F1, threshold sweeps."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from clusternet.postprocess import MAX_AREA, MIN_AREA, detect

RADIUS = 20.0  # px (5 m at WPAFB ground sampling)


@dataclass
class MatchResult:
    tp: list = field(default_factory=list)  # (det_idx, gt_idx, distance)
    fp: list = field(default_factory=list)  # det indices
    fn: list = field(default_factory=list)  # gt indices

    @property
    def distances(self):
        return np.array([t[2] for t in self.tp], dtype=np.float64)


def _pairwise(dets, gts):
    dets = np.asarray(dets, dtype=np.float64).reshape(-1, 2)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 2)
    diff = dets[:, None, :] - gts[None, :, :]
    return dets, gts, np.sqrt((diff**2).sum(-1))


def _result(pairs, n_det, n_gt):
    pairs = sorted(pairs, key=lambda t: (t[0], t[1]))
    used_d = {p[0] for p in pairs}
    used_g = {p[1] for p in pairs}
    return MatchResult(pairs, [i for i in range(n_det) if i not in used_d],
                       [j for j in range(n_gt) if j not in used_g])


def match_greedy(dets, gts, radius=RADIUS) -> MatchResult:
    """Closest-first matching in ascending distance over all (det, gt) pairs.

    Ties go to the lower detection index, then the lower ground-truth index.
    """
    dets, gts, dist = _pairwise(dets, gts)
    di, gi = np.nonzero(dist <= radius)
    order = np.lexsort((gi, di, dist[di, gi]))
    used_d, used_g, pairs = set(), set(), []
    for k in order:
        a, b = int(di[k]), int(gi[k])
        if a in used_d or b in used_g:
            continue
        used_d.add(a)
        used_g.add(b)
        pairs.append((a, b, float(dist[a, b])))
    return _result(pairs, len(dets), len(gts))


def match(dets, gts, radius=RADIUS) -> MatchResult:
    """One-to-one matching within ``radius`` (inclusive, Euclidean).

    Maximizes the number of true positives, then minimizes their total
    distance. When no two ground truths compete for a detection this is the
    same as taking the closest detection for each ground truth.
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    dets, gts, dist = _pairwise(dets, gts)
    if len(dets) == 0 or len(gts) == 0:
        return _result([], len(dets), len(gts))
    ok = dist <= radius
    if not ok.any():
        return _result([], len(dets), len(gts))
    # a reward larger than any feasible total distance puts cardinality first
    big = radius * (min(dist.shape) + 1) + 1.0
    cost = np.where(ok, dist - big, 0.0)
    rows, cols = linear_sum_assignment(cost)
    pairs = [(int(a), int(b), float(dist[a, b])) for a, b in zip(rows, cols) if ok[a, b]]
    return _result(pairs, len(dets), len(gts))


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    mean_tp_dist_px: float
    tp: int
    fp: int
    fn: int
    threshold: float | None = None

    def to_dict(self):
        return asdict(self)


def prf(tp, fp, fn):
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def score(matches, threshold=None) -> EvalReport:
    """Precision, recall, F1 and mean TP distance over one or more matches."""
    if isinstance(matches, MatchResult):
        matches = [matches]
    tp = sum(len(m.tp) for m in matches)
    fp = sum(len(m.fp) for m in matches)
    fn = sum(len(m.fn) for m in matches)
    dists = np.concatenate([m.distances for m in matches]) if matches else np.zeros(0)
    p, r, f = prf(tp, fp, fn)
    mean_d = float(dists.mean()) if len(dists) else 0.0
    return EvalReport(p, r, f, mean_d, tp, fp, fn, threshold)


def evaluate(detsets, gts_by_frame, radius=RADIUS, threshold=None) -> EvalReport:
    """Score aligned lists of per-frame detections (xy arrays) and ground truths."""
    ms = [match(d, g, radius) for d, g in zip(detsets, gts_by_frame)]
    return score(ms, threshold)


def sweep(heatmaps, gts_by_frame, thresholds, d=1, radius=RADIUS, min_area=MIN_AREA,
          max_area=MAX_AREA, split=True) -> list[EvalReport]:
    """One report per threshold, running threshold -> components -> match -> score.

    ``heatmaps`` are unit-scaled full-frame maps at downsample ``d``.
    """
    thresholds = list(thresholds)
    if thresholds != sorted(thresholds):
        raise ValueError("thresholds must be sorted ascending")
    out = []
    for t in thresholds:
        dets = [detect(h, d, t, min_area, max_area, split)[0].xy for h in heatmaps]
        out.append(evaluate(dets, gts_by_frame, radius, threshold=t))
    return out


def write_curve_csv(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall", "f1", "mean_tp_dist_px"])
        for r in reports:
            w.writerow([f"{r.threshold:.6f}", f"{r.precision:.6f}", f"{r.recall:.6f}",
                        f"{r.f1:.6f}", f"{r.mean_tp_dist_px:.6f}"])


def write_roc_csv(path, reports, n_frames):
    """Detection ROC: true-positive rate against false positives per frame."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "tpr", "fp_per_frame"])
        for r in reports:
            w.writerow([f"{r.threshold:.6f}", f"{r.recall:.6f}", f"{r.fp / max(n_frames, 1):.6f}"])


def write_report_json(path, report: EvalReport, extra=None):
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
