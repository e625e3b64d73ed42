"""Functional forward/backward ops over NCHW numpy arrays.

Each ``*_forward`` returns ``(output, cache)`` and the matching ``*_backward``
takes ``(grad_output, cache)``. Convolution is cross-correlation (no kernel
flip) with zero same-padding, so a stride-``s`` layer maps ``n`` pixels to
``ceil(n / s)``.
"""
from __future__ import annotations

import numpy as np

from clusternet import kernels


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


def check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.isfinite(arr).all():
        bad = int(arr.size - np.count_nonzero(np.isfinite(arr)))
        raise NonFiniteError(f"{name}: {bad} non-finite value(s) in output of shape {arr.shape}")
    return arr


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected (C, H, W) or (B, C, H, W) input, got shape {x.shape}")


def conv_output_size(n: int, stride: int) -> int:
    return -(-n // stride)


def conv2d_forward(x, weight, bias, stride=1):
    """Multi-channel 2-D cross-correlation plus per-map bias.

    ``weight`` has shape (out_maps, in_channels, kh, kw) with odd kh, kw; each
    output map sums one kernel per input channel, so a stack of N frames fed
    as N channels gets its own kernel per frame.
    """
    xb, squeeze = _as_batch(x)
    if weight.ndim != 4:
        raise ValueError(f"weight must be (M, C, kh, kw), got shape {weight.shape}")
    M, C, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel dims must be odd, got {kh}x{kw}")
    if xb.shape[1] != C:
        raise ValueError(
            f"input has {xb.shape[1]} channel(s) but the layer expects {C} "
            f"(weight shape {weight.shape})"
        )
    if bias.shape != (M,):
        raise ValueError(f"bias must have shape ({M},), got {bias.shape}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    B, _, H, W = xb.shape
    ph, pw = kh // 2, kw // 2
    Ho, Wo = conv_output_size(H, stride), conv_output_size(W, stride)
    xp = np.pad(xb, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = kernels.im2col(xp, kh, kw, stride, Ho, Wo)
    wmat = weight.reshape(M, -1)
    y = cols @ wmat.T
    y += bias
    y = y.reshape(B, Ho, Wo, M).transpose(0, 3, 1, 2)
    y = np.ascontiguousarray(y)
    cache = {"cols": cols, "weight": weight, "xshape": xp.shape, "stride": stride,
             "out": (Ho, Wo), "pad": (ph, pw), "squeeze": squeeze}
    return (y[0] if squeeze else y), cache


def conv2d_backward(grad_out, cache, need_input_grad=True):
    """Gradients of :func:`conv2d_forward` w.r.t. input, kernels and bias.

    With ``need_input_grad=False`` the input gradient is skipped and returned
    as None (first layer of a network).
    """
    if cache is None:
        raise ValueError("conv2d_backward needs the cache from a forward pass")
    weight = cache["weight"]
    M, C, kh, kw = weight.shape
    g = grad_out[None] if cache["squeeze"] else grad_out
    B = g.shape[0]
    Ho, Wo = cache["out"]
    gmat = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, M)
    grad_b = gmat.sum(axis=0)
    grad_w = (gmat.T @ cache["cols"]).reshape(weight.shape)
    if not need_input_grad:
        return None, grad_w, grad_b
    dcols = np.ascontiguousarray(gmat @ weight.reshape(M, -1))
    _, _, Hp, Wp = cache["xshape"]
    dxp = kernels.col2im(dcols, B, C, Hp, Wp, kh, kw, cache["stride"], Ho, Wo)
    ph, pw = cache["pad"]
    dx = dxp[:, :, ph : Hp - ph, pw : Wp - pw]
    dx = np.ascontiguousarray(dx)
    return (dx[0] if cache["squeeze"] else dx), grad_w, grad_b


def maxpool2x2_forward(x):
    """2x2 stride-2 max pooling; odd dims are padded at the end with -inf."""
    xb, squeeze = _as_batch(x)
    B, C, H, W = xb.shape
    if H % 2 or W % 2:
        xb = np.pad(xb, ((0, 0), (0, 0), (0, H % 2), (0, W % 2)), constant_values=-np.inf)
    y, arg = kernels.maxpool2x2_forward(np.ascontiguousarray(xb))
    cache = {"arg": arg, "shape": (H, W), "squeeze": squeeze}
    return (y[0] if squeeze else y), cache


def maxpool2x2_backward(grad_out, cache):
    g = grad_out[None] if cache["squeeze"] else grad_out
    dx = kernels.maxpool2x2_backward(np.ascontiguousarray(g), cache["arg"])
    H, W = cache["shape"]
    dx = np.ascontiguousarray(dx[:, :, :H, :W])
    return dx[0] if cache["squeeze"] else dx


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(grad_out, mask):
    return grad_out * mask


def prelu_forward(x, slope):
    """PReLU with one learned slope per feature map (axis -3)."""
    a = slope.reshape(-1, 1, 1)
    pos = x > 0
    return np.where(pos, x, a * x), (x, pos, a)


def prelu_backward(grad_out, cache):
    """Returns ``(grad_input, grad_slope)``."""
    x, pos, a = cache
    n = x.shape[-3]
    neg = np.where(pos, 0, x) * grad_out
    grad_slope = neg.reshape(-1, n, x.shape[-2] * x.shape[-1]).sum(axis=(0, 2))
    return np.where(pos, grad_out, a * grad_out), grad_slope


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train, momentum=0.9, eps=1e-5):
    """Per-map batch normalization over (batch, height, width).

    In train mode the batch statistics are used and the running averages in
    ``running_mean``/``running_var`` are updated in place; in infer mode the
    running averages are used.
    """
    xb, squeeze = _as_batch(x)
    if train:
        mean = xb.mean(axis=(0, 2, 3))
        var = xb.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xb - mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
    y = gamma.reshape(1, -1, 1, 1) * xhat + beta.reshape(1, -1, 1, 1)
    cache = {"xhat": xhat, "inv_std": inv_std, "gamma": gamma, "train": train, "squeeze": squeeze}
    return (y[0] if squeeze else y), cache


def batchnorm_backward(grad_out, cache):
    g = grad_out[None] if cache["squeeze"] else grad_out
    xhat, inv_std, gamma = cache["xhat"], cache["inv_std"], cache["gamma"]
    grad_gamma = (g * xhat).sum(axis=(0, 2, 3))
    grad_beta = g.sum(axis=(0, 2, 3))
    gx = g * gamma.reshape(1, -1, 1, 1)
    if cache["train"]:
        m = g.shape[0] * g.shape[2] * g.shape[3]
        dx = (inv_std.reshape(1, -1, 1, 1) / m) * (
            m * gx
            - gx.sum(axis=(0, 2, 3), keepdims=True)
            - xhat * (gx * xhat).sum(axis=(0, 2, 3), keepdims=True)
        )
    else:
        dx = gx * inv_std.reshape(1, -1, 1, 1)
    return (dx[0] if cache["squeeze"] else dx), grad_gamma, grad_beta


def dropout_forward(x, rate, rng, train):
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0:
        return x, None
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(grad_out, mask):
    return grad_out if mask is None else grad_out * mask


def euclidean_loss(pred, target):
    """Half the mean squared error over all elements, and its gradient."""
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    loss = 0.5 * float(np.mean(diff * diff))
    return loss, diff / diff.size


def softmax_xent_loss(logits, target):
    """Mean per-pixel cross-entropy after a softmax over the class axis.

    ``logits`` is (B, K, H, W) and ``target`` is an integer (B, H, W) map of
    class indices.
    """
    if logits.ndim != 4:
        raise ValueError(f"logits must be (B, K, H, W), got shape {logits.shape}")
    B, K, H, W = logits.shape
    target = np.asarray(target)
    if target.shape != (B, H, W):
        raise ValueError(f"target shape {target.shape} does not match logits {logits.shape}")
    if target.size and (target.min() < 0 or target.max() >= K):
        raise ValueError(f"class index out of range [0, {K}) in target")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    idx = target[:, None].astype(np.intp)
    nll = -np.take_along_axis(logp, idx, axis=1)
    n = B * H * W
    grad = np.exp(logp)
    np.put_along_axis(grad, idx, np.take_along_axis(grad, idx, axis=1) - 1.0, axis=1)
    return float(nll.sum() / n), grad / n


def softmax(logits, axis=1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)
