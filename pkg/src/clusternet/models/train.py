"""Mini-batch training with a plateau learning-rate schedule and best-checkpoint return."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from clusternet.engine import ops
from clusternet.engine.optim import OptimizerState, PlateauSchedule, step
from clusternet.models.model import Model
from clusternet.synthdata import normalize
from clusternet.targets import default_seg_threshold, make_heatmap

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    optimizer: str = "sgd_nesterov"
    lr: float = 0.01
    batch_size: int = 8
    momentum: float = 0.9
    weight_decay: float = 0.0
    lr_drop: float = 0.1
    plateau_patience: int = 5
    plateau_threshold: float = 1e-4
    max_epochs: int = 100
    max_steps: int | None = None
    eval_every: int = 50
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def clusternet_defaults(**kw) -> TrainConfig:
    """SGD + Nesterov momentum, lr 0.01, batch 8, x0.1 on plateau."""
    return replace(TrainConfig(optimizer="sgd_nesterov", lr=0.01, batch_size=8), **kw)


def foveanet_defaults(**kw) -> TrainConfig:
    """Adam, lr 1e-5, batch 32."""
    return replace(TrainConfig(optimizer="adam", lr=1e-5, batch_size=32), **kw)


@dataclass
class TrainResult:
    model: Model
    history: list
    best_val: float
    best_step: int
    seconds: float

    def write_log(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "train_loss", "val_loss", "lr"])
            for h in self.history:
                val = "" if h["val_loss"] is None else f"{h['val_loss']:.9g}"
                w.writerow([h["step"], f"{h['train_loss']:.9g}", val, f"{h['lr']:.9g}"])


def _transform_points(pts, k, flip, size):
    """Map chip-local (x, y) through ``np.rot90(k)`` after an optional left-right flip."""
    x, y = pts[:, 0].copy(), pts[:, 1].copy()
    if flip:
        x = size - 1 - x
    for _ in range(k % 4):
        x, y = y, size - 1 - x
    return np.stack([x, y], axis=1)


class _Batcher:
    """Holds a dataset as uint8 stacks plus target points and builds batches."""

    def __init__(self, samples, model: Model):
        if not samples:
            raise ValueError("empty dataset")
        self.model = model
        self.x = np.stack([s.stack.frames for s in samples])
        if self.x.shape[1] != model.spec.n_frames:
            raise ValueError(f"dataset stacks have {self.x.shape[1]} frame(s); "
                             f"{model.spec.name} expects {model.spec.n_frames}")
        self.size = self.x.shape[-1]
        self.square = self.x.shape[-1] == self.x.shape[-2]
        self.points = [s.target_points if s.target_points is not None else s.points for s in samples]
        self.dims = self.x.shape[-2:]

    def __len__(self):
        return len(self.x)

    def targets(self, pts_list):
        m = self.model
        maps = np.stack([make_heatmap(p, self.dims, m.d, m.sigma).values for p in pts_list])
        if m.loss == "softmax_xent":
            return (maps >= default_seg_threshold(m.sigma)).astype(np.intp)
        return maps[:, None].astype(m.dtype)

    def batch(self, idx, rng=None):
        xs, pts = [], []
        for i in idx:
            x, p = self.x[i], self.points[i]
            if rng is not None and self.square:
                k, flip = int(rng.integers(4)), bool(rng.integers(2))
                if flip:
                    x = x[:, :, ::-1]
                x = np.rot90(x, k, axes=(1, 2))
                p = _transform_points(p, k, flip, self.size)
            xs.append(x)
            pts.append(p)
        return normalize(np.stack(xs), self.model.dtype), self.targets(pts)


def _loss(model, pred, y):
    if model.loss == "softmax_xent":
        return ops.softmax_xent_loss(pred, y)
    return ops.euclidean_loss(pred, y)


def evaluate_loss(model: Model, batcher: _Batcher, batch=8) -> float:
    total, n = 0.0, 0
    for i in range(0, len(batcher), batch):
        idx = np.arange(i, min(i + batch, len(batcher)))
        x, y = batcher.batch(idx)
        loss, _ = _loss(model, model.forward(x, train=False), y)
        total += loss * len(idx)
        n += len(idx)
    return total / n


def train(model: Model, dataset, cfg: TrainConfig, val=None, progress=None) -> TrainResult:
    """Train ``model`` in place; on return it holds the best-validation parameters.

    Without ``val`` the running training loss drives the schedule and the final
    parameters are kept. Identical seed/config/data gives identical results.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    data = _Batcher(dataset, model)
    vdata = _Batcher(val, model) if val else None
    state = OptimizerState(kind=cfg.optimizer, lr=cfg.lr, momentum=cfg.momentum,
                           weight_decay=cfg.weight_decay)
    sched = PlateauSchedule(cfg.lr_drop, cfg.plateau_patience, cfg.plateau_threshold)
    params = dict(model.net.named_params())
    steps_per_epoch = -(-len(data) // cfg.batch_size)
    max_steps = cfg.max_steps if cfg.max_steps is not None else cfg.max_epochs * steps_per_epoch

    history = []
    best, best_step, best_state = np.inf, 0, None
    running = []
    it = 0
    while it < max_steps:
        perm = rng.permutation(len(data))
        for b in range(steps_per_epoch):
            if it >= max_steps:
                break
            idx = perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            x, y = data.batch(idx, rng if cfg.augment else None)
            try:
                pred = model.forward(x, train=True)
                loss, g = _loss(model, pred, y)
                if not np.isfinite(loss):
                    raise ops.NonFiniteError(f"loss is {loss}")
                model.backward(g)
            except ops.NonFiniteError as e:
                raise TrainingDiverged(f"{model.spec.name} diverged at step {it + 1} "
                                       f"(lr={state.lr:g}): {e}") from e
            step(params, dict(model.net.named_grads()), state)
            it += 1
            running.append(loss)
            if it % cfg.eval_every == 0 or it == max_steps:
                train_loss = float(np.mean(running))
                running = []
                val_loss = evaluate_loss(model, vdata) if vdata is not None else None
                monitor = val_loss if val_loss is not None else train_loss
                history.append({"step": it, "train_loss": train_loss, "val_loss": val_loss, "lr": state.lr})
                if monitor < best:
                    best, best_step = monitor, it
                    if vdata is not None:
                        best_state = {k: v.copy() for k, v in model.net.state_dict().items()}
                if sched.update(monitor, state):
                    log.info("%s: lr -> %g at step %d", model.spec.name, state.lr, it)
                if progress is not None:
                    progress(history[-1])
    if best_state is not None:
        model.net.load_state_dict(best_state)
    return TrainResult(model, history, float(best), best_step, time.perf_counter() - t0)


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
