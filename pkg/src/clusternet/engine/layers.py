"""Stateful layers wrapping :mod:`clusternet.engine.ops` and a sequential container."""
from __future__ import annotations

import numpy as np

from clusternet.engine import ops


class Layer:
    """Base layer: ``params``/``grads`` dicts keyed by parameter name."""

    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class Conv2d(Layer):
    kind = "conv"

    def __init__(self, in_channels, out_maps, kernel, stride=1, rng=None, dtype=np.float32):
        super().__init__()
        if kernel % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {kernel}")
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel * kernel
        std = np.sqrt(2.0 / fan_in)
        self.stride = stride
        self.kernel = kernel
        self.params["weight"] = (rng.standard_normal((out_maps, in_channels, kernel, kernel)) * std).astype(dtype)
        self.params["bias"] = np.zeros(out_maps, dtype=dtype)

    def forward(self, x, train=False):
        y, self._cache = ops.conv2d_forward(x, self.params["weight"], self.params["bias"], self.stride)
        return y

    def backward(self, grad, need_input_grad=True):
        dx, dw, db = ops.conv2d_backward(grad, self._cache, need_input_grad)
        self.grads["weight"] = dw
        self.grads["bias"] = db
        self._cache = None
        return dx

    def __repr__(self):
        M, C, k, _ = self.params["weight"].shape
        return f"Conv2d({C}->{M}, {k}x{k}, stride={self.stride})"


class MaxPool2x2(Layer):
    kind = "pool"

    def forward(self, x, train=False):
        y, self._cache = ops.maxpool2x2_forward(x)
        return y

    def backward(self, grad):
        return ops.maxpool2x2_backward(grad, self._cache)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        y, self._cache = ops.relu_forward(x)
        return y

    def backward(self, grad):
        return ops.relu_backward(grad, self._cache)


class PReLU(Layer):
    kind = "prelu"

    def __init__(self, channels, init=0.25, dtype=np.float32):
        super().__init__()
        self.params["slope"] = np.full(channels, init, dtype=dtype)

    def forward(self, x, train=False):
        y, self._cache = ops.prelu_forward(x, self.params["slope"])
        return y

    def backward(self, grad):
        dx, self.grads["slope"] = ops.prelu_backward(grad, self._cache)
        return dx


class Identity(Layer):
    kind = "identity"

    def forward(self, x, train=False):
        return x

    def backward(self, grad):
        return grad


class BatchNorm2d(Layer):
    kind = "batchnorm"

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def forward(self, x, train=False):
        y, self._cache = ops.batchnorm_forward(
            x, self.params["gamma"], self.params["beta"],
            self.buffers["running_mean"], self.buffers["running_var"],
            train, self.momentum, self.eps,
        )
        return y

    def backward(self, grad):
        dx, self.grads["gamma"], self.grads["beta"] = ops.batchnorm_backward(grad, self._cache)
        return dx


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate, rng=None):
        super().__init__()
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x, train=False):
        y, self._cache = ops.dropout_forward(x, self.rate, self.rng, train)
        return y

    def backward(self, grad):
        return ops.dropout_backward(grad, self._cache)

    def __repr__(self):
        return f"Dropout({self.rate})"


class Sequential:
    """Ordered layer list with reverse-mode backward and finiteness checks."""

    def __init__(self, layers, check_finite=True):
        self.layers = list(layers)
        self.check_finite = check_finite

    def forward(self, x, train=False):
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, train)
            if self.check_finite:
                ops.check_finite(f"layer {i} ({layer!r}) forward", x)
        return x

    __call__ = forward

    def backward(self, grad, need_input_grad=True):
        """Backpropagate ``grad``; returns the input gradient (None when skipped)."""
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if i == 0 and not need_input_grad and isinstance(layer, Conv2d):
                return layer.backward(grad, need_input_grad=False)
            grad = layer.backward(grad)
            if self.check_finite:
                ops.check_finite(f"layer {i} ({self.layers[i]!r}) backward", grad)
        return grad

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                yield f"{i}.{layer.kind}.{name}", p

    def named_grads(self):
        for i, layer in enumerate(self.layers):
            for name in layer.params:
                yield f"{i}.{layer.kind}.{name}", layer.grads.get(name)

    def state_dict(self):
        """Parameters and buffers by name (arrays are live references)."""
        state = dict(self.named_params())
        for i, layer in enumerate(self.layers):
            for name, b in layer.buffers.items():
                state[f"{i}.{layer.kind}.{name}"] = b
        return state

    def load_state_dict(self, state):
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ValueError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, arr in own.items():
            src = np.asarray(state[name])
            if src.shape != arr.shape:
                raise ValueError(f"{name}: checkpoint shape {src.shape} != model shape {arr.shape}")
            arr[...] = src

    def num_params(self):
        return sum(p.size for _, p in self.named_params())

    def __repr__(self):
        inner = ",\n  ".join(repr(layer) for layer in self.layers)
        return f"Sequential(\n  {inner}\n)"
