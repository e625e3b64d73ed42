"""A network spec bundled with its parameters, target width and loss head."""
from __future__ import annotations

import numpy as np

from clusternet.engine import checkpoint, ops
from clusternet.models.specs import NetworkSpec, build
from clusternet.synthdata import FrameStack, normalize
from clusternet.targets import Heatmap

LOSSES = ("euclidean", "softmax_xent")

# Gaussian widths (grid cells) the heads are trained against
CLUSTERNET_SIGMA = 1.0
FOVEANET_SIGMA = 4.0


class Model:
    def __init__(self, spec: NetworkSpec, sigma: float, loss="euclidean", seed=0, dtype=np.float32):
        if loss not in LOSSES:
            raise ValueError(f"unknown loss {loss!r}")
        want = 2 if loss == "softmax_xent" else 1
        if spec.out_channels != want:
            raise ValueError(f"{loss} head needs {want} output channel(s), spec has {spec.out_channels}")
        self.spec = spec
        self.sigma = float(sigma)
        self.loss = loss
        self.dtype = np.dtype(dtype)
        self.net = build(spec, seed=seed, dtype=dtype)

    @property
    def d(self):
        return self.spec.d

    @property
    def head_gain(self) -> float:
        """Fixed output gain of the euclidean head: one single-object peak.

        The last conv then works on a unit scale while the head output is still
        compared against the raw Gaussian targets.
        """
        if self.loss == "softmax_xent":
            return 1.0
        return 1.0 / (2.0 * np.pi * self.sigma**2)

    def forward(self, x, train=False):
        out = self.net.forward(x, train)
        return out * self.head_gain if self.head_gain != 1.0 else out

    def backward(self, grad, need_input_grad=False):
        if self.head_gain != 1.0:
            grad = grad * self.head_gain
        return self.net.backward(grad, need_input_grad)

    def forward_raw(self, x, batch=8):
        """Infer-mode forward over a (B, N, h, w) float batch, chunked."""
        outs = [self.forward(x[i : i + batch], train=False) for i in range(0, len(x), batch)]
        return np.concatenate(outs) if outs else np.zeros((0, self.spec.out_channels, 0, 0))

    def score_maps(self, x, batch=8) -> np.ndarray:
        """(B, gh, gw) maps in units of a single-object peak (euclidean head) or
        foreground probability (segmentation head), clipped to [0, 1]."""
        raw = self.forward_raw(np.asarray(x, dtype=self.dtype), batch)
        if self.loss == "softmax_xent":
            return ops.softmax(raw, axis=1)[:, 1]
        peak = 1.0 / (2.0 * np.pi * self.sigma**2)
        return np.clip(raw[:, 0] / peak, 0.0, 1.0)

    def infer(self, stack: FrameStack) -> Heatmap:
        """Heatmap for the stack's frame of interest (raw head output, channel 0
        or foreground probability)."""
        if stack.n != self.spec.n_frames:
            raise ValueError(f"{self.spec.name} expects {self.spec.n_frames} frame(s), stack has {stack.n}")
        x = normalize(stack.frames, self.dtype)[None]
        raw = self.forward(x, train=False)
        if self.loss == "softmax_xent":
            return Heatmap(ops.softmax(raw, axis=1)[0, 1], self.d, self.sigma, normalized=True)
        return Heatmap(raw[0, 0], self.d, self.sigma)

    def save(self, path, extra=None):
        meta = {"spec": self.spec.to_dict(), "sigma": self.sigma, "loss": self.loss,
                "dtype": self.dtype.str}
        if extra:
            meta.update(extra)
        checkpoint.save(path, self.net.state_dict(), meta)

    @classmethod
    def load(cls, path, expect: str | None = None) -> "Model":
        tensors, meta = checkpoint.load(path)
        spec = NetworkSpec.from_dict(meta["spec"])
        if expect is not None and spec.name != expect:
            raise checkpoint.CheckpointError(f"{path}: holds a {spec.name} checkpoint, expected {expect}")
        m = cls(spec, meta["sigma"], meta["loss"], dtype=np.dtype(meta.get("dtype", "<f4")))
        m.net.load_state_dict(tensors)
        return m
