"""Declarative layer lists for ClusterNet and FoveaNet.

A :class:`NetworkSpec` is the single source for both the forward network
(:func:`build`) and receptive-field arithmetic (:mod:`clusternet.roobi`).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from clusternet.engine import layers as L

LAYER_KINDS = ("conv", "pool", "batchnorm", "dropout", "activation")
ACTIVATIONS = ("relu", "prelu", "identity")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int = 1
    stride: int = 1
    out_maps: int = 0
    activation: str = "identity"
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv" and (self.kernel % 2 == 0 or self.out_maps < 1 or self.stride < 1):
            raise ValueError(f"bad conv layer {self}")
        if self.kind == "activation" and self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def conv(k, out_maps, stride=1):
    return LayerSpec("conv", kernel=k, stride=stride, out_maps=out_maps)


def act(kind):
    return LayerSpec("activation", activation=kind)


POOL = LayerSpec("pool", kernel=2, stride=2)
BN = LayerSpec("batchnorm")


def dropout(rate):
    return LayerSpec("dropout", rate=rate)


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    n_frames: int
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        convs = [l for l in self.layers if l.kind == "conv"]
        if not convs or convs[-1].kernel != 1:
            raise ValueError(f"{self.name}: final conv layer must be 1x1")

    @property
    def d(self) -> int:
        """Total downsample exponent: the output grid is input / 2**d."""
        total = 1
        for l in self.layers:
            if l.kind in ("conv", "pool"):
                total *= l.stride
        d = int(round(np.log2(total)))
        if 2**d != total:
            raise ValueError(f"{self.name}: total stride {total} is not a power of two")
        return d

    @property
    def out_channels(self) -> int:
        return [l for l in self.layers if l.kind == "conv"][-1].out_maps

    def output_dims(self, h, w):
        """Output grid dims predicted from the layer list alone."""
        for l in self.layers:
            if l.kind == "conv":
                h, w = -(-h // l.stride), -(-w // l.stride)
            elif l.kind == "pool":
                h, w = -(-h // 2), -(-w // 2)
        return h, w

    def to_dict(self):
        return {"name": self.name, "n_frames": self.n_frames,
                "layers": [asdict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], int(d["n_frames"]), tuple(LayerSpec(**l) for l in d["layers"]))


def _check_frames(n):
    if n not in (1, 3, 5):
        raise ValueError(f"frame count must be 1, 3 or 5, got {n}")


def clusternet_spec(n_frames=5, width=32, out_channels=1) -> NetworkSpec:
    """Coarse proposal net: total downsample 16 (two stride-2 convs, two pools)."""
    _check_frames(n_frames)
    layers = (
        conv(3, width, 2), act("prelu"),
        conv(3, width, 2), act("prelu"),
        BN, POOL,
        conv(3, width), act("prelu"),
        BN, POOL,
        conv(3, width), act("prelu"),
        conv(1, out_channels),
    )
    return NetworkSpec("clusternet", n_frames, layers)


def foveanet_spec(n_frames=5, width=32, out_channels=1, dropout_rate=0.5) -> NetworkSpec:
    """Fine localization net: one 2x2 pool, kernels 11 -> 9 -> 7 -> 5 -> 3 -> 3 -> 3 -> 1,
    dropout after the 6th and 7th convolutions."""
    _check_frames(n_frames)
    layers = (
        conv(11, width), act("relu"),
        POOL,
        conv(9, width), act("relu"),
        conv(7, width), act("relu"),
        conv(5, width), act("relu"),
        conv(3, width), act("relu"),
        conv(3, width), act("relu"), dropout(dropout_rate),
        conv(3, width), act("relu"), dropout(dropout_rate),
        conv(1, out_channels),
    )
    return NetworkSpec("foveanet", n_frames, layers)


def build(spec: NetworkSpec, seed=0, dtype=np.float32) -> L.Sequential:
    """Instantiate a :class:`~clusternet.engine.layers.Sequential` from a spec."""
    rng = np.random.default_rng(seed)
    channels = spec.n_frames
    out = []
    for l in spec.layers:
        if l.kind == "conv":
            out.append(L.Conv2d(channels, l.out_maps, l.kernel, l.stride, rng=rng, dtype=dtype))
            channels = l.out_maps
        elif l.kind == "pool":
            out.append(L.MaxPool2x2())
        elif l.kind == "batchnorm":
            out.append(L.BatchNorm2d(channels, dtype=dtype))
        elif l.kind == "dropout":
            out.append(L.Dropout(l.rate, rng=np.random.default_rng(rng.integers(2**63))))
        elif l.activation == "relu":
            out.append(L.ReLU())
        elif l.activation == "prelu":
            out.append(L.PReLU(channels, dtype=dtype))
        else:
            out.append(L.Identity())
    # start the output head near zero
    out[-1].params["weight"] *= 0.1
    return L.Sequential(out)
