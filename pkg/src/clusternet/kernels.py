"""Hot-loop kernels with a compiled core and a numpy/scipy fallback.

The compiled module ``clusternet._kernels`` is used when it imports; set
``CLUSTERNET_PURE=1`` to force the fallback. Both backends expose the same
five functions and agree bit-for-bit on integer outputs and to rounding on
float outputs.
"""
from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage


def _im2col(xp, kh, kw, stride, out_h, out_w):
    B, C = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (out_h - 1) * stride + 1 : stride, : (out_w - 1) * stride + 1 : stride]
    # (B, C, Ho, Wo, kh, kw) -> (B, Ho, Wo, C, kh, kw)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        B * out_h * out_w, C * kh * kw
    )


def _col2im(dcols, B, C, Hp, Wp, kh, kw, stride, out_h, out_w):
    d6 = dcols.reshape(B, out_h, out_w, C, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    dx = np.zeros((B, C, Hp, Wp), dtype=dcols.dtype)
    ys = (out_h - 1) * stride + 1
    xs = (out_w - 1) * stride + 1
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i : i + ys : stride, j : j + xs : stride] += d6[:, :, i, j]
    return dx


def _maxpool2x2_forward(x):
    B, C, H, W = x.shape
    win = x.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(B, C, H // 2, W // 2, 4)
    arg = np.argmax(win, axis=-1).astype(np.int8)  # first max wins
    out = np.take_along_axis(win, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def _maxpool2x2_backward(grad, arg):
    B, C, Ho, Wo = grad.shape
    dwin = np.zeros((B, C, Ho, Wo, 4), dtype=grad.dtype)
    np.put_along_axis(dwin, arg[..., None].astype(np.intp), grad[..., None], axis=-1)
    dx = dwin.reshape(B, C, Ho, Wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(dx.reshape(B, C, 2 * Ho, 2 * Wo))


def _label8(mask):
    lab, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    return lab.astype(np.int32), int(n)


fallback = SimpleNamespace(
    name="numpy",
    im2col=_im2col,
    col2im=_col2im,
    maxpool2x2_forward=_maxpool2x2_forward,
    maxpool2x2_backward=_maxpool2x2_backward,
    label8=_label8,
)

compiled = None
try:
    from clusternet import _kernels

    compiled = SimpleNamespace(
        name="compiled",
        im2col=_kernels.im2col,
        col2im=_kernels.col2im,
        maxpool2x2_forward=_kernels.maxpool2x2_forward,
        maxpool2x2_backward=_kernels.maxpool2x2_backward,
        label8=_kernels.label8,
    )
except ImportError:
    pass

backend = fallback if compiled is None or os.environ.get("CLUSTERNET_PURE") == "1" else compiled


def use(name: str) -> None:
    """Switch the active backend to ``"compiled"`` or ``"numpy"``."""
    global backend
    if name == "compiled":
        if compiled is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        backend = compiled
    elif name == "numpy":
        backend = fallback
    else:
        raise ValueError(f"unknown backend {name!r}")


def im2col(xp, kh, kw, stride, out_h, out_w):
    return backend.im2col(xp, kh, kw, stride, out_h, out_w)


def col2im(dcols, B, C, Hp, Wp, kh, kw, stride, out_h, out_w):
    return backend.col2im(dcols, B, C, Hp, Wp, kh, kw, stride, out_h, out_w)


def maxpool2x2_forward(x):
    return backend.maxpool2x2_forward(x)


def maxpool2x2_backward(grad, arg):
    return backend.maxpool2x2_backward(grad, arg)


def label8(mask):
    """8-connected labels of a binary map; returns ``(labels, count)``."""
    return backend.label8(np.ascontiguousarray(mask, dtype=np.uint8))
