# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: im2col/col2im, 2x2 max pooling, 8-connected labeling.

Every function here has a numpy/scipy twin in :mod:`clusternet.kernels` with
identical semantics; the dispatcher picks one at import.
"""
import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double

cnp.import_array()


def im2col(real[:, :, :, ::1] xp, int kh, int kw, int stride, int out_h, int out_w):
    """Unfold a padded (B, C, Hp, Wp) batch into a (B*out_h*out_w, C*kh*kw) matrix."""
    cdef Py_ssize_t B = xp.shape[0], C = xp.shape[1]
    cdef Py_ssize_t ncol = C * kh * kw
    dtype = np.float32 if real is float else np.float64
    cols_arr = np.empty((B * out_h * out_w, ncol), dtype=dtype)
    cdef real[:, ::1] cols = cols_arr
    cdef Py_ssize_t b, c, i, j, oy, ox, row, col, y0, x0
    with nogil:
        for b in range(B):
            for oy in range(out_h):
                y0 = oy * stride
                for ox in range(out_w):
                    x0 = ox * stride
                    row = (b * out_h + oy) * out_w + ox
                    col = 0
                    for c in range(C):
                        for i in range(kh):
                            for j in range(kw):
                                cols[row, col] = xp[b, c, y0 + i, x0 + j]
                                col = col + 1
    return cols_arr


def col2im(real[:, ::1] dcols, int B, int C, int Hp, int Wp, int kh, int kw,
           int stride, int out_h, int out_w):
    """Adjoint of :func:`im2col`: scatter-add columns back into a padded batch."""
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.zeros((B, C, Hp, Wp), dtype=dtype)
    cdef real[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, c, i, j, oy, ox, row, col, y0, x0
    with nogil:
        for b in range(B):
            for oy in range(out_h):
                y0 = oy * stride
                for ox in range(out_w):
                    x0 = ox * stride
                    row = (b * out_h + oy) * out_w + ox
                    col = 0
                    for c in range(C):
                        for i in range(kh):
                            for j in range(kw):
                                dx[b, c, y0 + i, x0 + j] += dcols[row, col]
                                col = col + 1
    return dx_arr


def maxpool2x2_forward(real[:, :, :, ::1] x):
    """2x2/stride-2 max pool over an even-sized batch.

    Returns the pooled batch and the in-window argmax (0..3, row-major);
    ties go to the first maximal element.
    """
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1]
    cdef Py_ssize_t Ho = x.shape[2] // 2, Wo = x.shape[3] // 2
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((B, C, Ho, Wo), dtype=dtype)
    arg_arr = np.empty((B, C, Ho, Wo), dtype=np.int8)
    cdef real[:, :, :, ::1] out = out_arr
    cdef cnp.int8_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, c, oy, ox
    cdef real best, v
    cdef cnp.int8_t k
    with nogil:
        for b in range(B):
            for c in range(C):
                for oy in range(Ho):
                    for ox in range(Wo):
                        best = x[b, c, 2 * oy, 2 * ox]
                        k = 0
                        v = x[b, c, 2 * oy, 2 * ox + 1]
                        if v > best:
                            best = v
                            k = 1
                        v = x[b, c, 2 * oy + 1, 2 * ox]
                        if v > best:
                            best = v
                            k = 2
                        v = x[b, c, 2 * oy + 1, 2 * ox + 1]
                        if v > best:
                            best = v
                            k = 3
                        out[b, c, oy, ox] = best
                        arg[b, c, oy, ox] = k
    return out_arr, arg_arr


def maxpool2x2_backward(real[:, :, :, ::1] grad, cnp.int8_t[:, :, :, ::1] arg):
    """Route each pooled gradient to its recorded argmax."""
    cdef Py_ssize_t B = grad.shape[0], C = grad.shape[1]
    cdef Py_ssize_t Ho = grad.shape[2], Wo = grad.shape[3]
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.zeros((B, C, 2 * Ho, 2 * Wo), dtype=dtype)
    cdef real[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, c, oy, ox
    cdef int k
    with nogil:
        for b in range(B):
            for c in range(C):
                for oy in range(Ho):
                    for ox in range(Wo):
                        k = arg[b, c, oy, ox]
                        dx[b, c, 2 * oy + (k >> 1), 2 * ox + (k & 1)] = grad[b, c, oy, ox]
    return dx_arr


cdef inline cnp.int32_t _find(cnp.int32_t[::1] parent, cnp.int32_t a) noexcept nogil:
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


cdef inline void _union(cnp.int32_t[::1] parent, cnp.int32_t a, cnp.int32_t b) noexcept nogil:
    a = _find(parent, a)
    b = _find(parent, b)
    if a < b:
        parent[b] = a
    elif b < a:
        parent[a] = b


def label8(cnp.uint8_t[:, ::1] mask):
    """Two-pass union-find 8-connected labeling.

    Labels are 1..n in raster order of each component's first pixel; 0 is
    background. Returns ``(labels, n)``.
    """
    cdef Py_ssize_t H = mask.shape[0], W = mask.shape[1]
    labels_arr = np.zeros((H, W), dtype=np.int32)
    cdef cnp.int32_t[:, ::1] lab = labels_arr
    # worst case: one provisional label per pixel
    parent_arr = np.zeros(H * W + 1, dtype=np.int32)
    cdef cnp.int32_t[::1] parent = parent_arr
    remap_arr = np.zeros(H * W + 1, dtype=np.int32)
    cdef cnp.int32_t[::1] remap = remap_arr
    cdef Py_ssize_t y, x
    cdef cnp.int32_t nxt = 1, cur, n, r, nb
    with nogil:
        for y in range(H):
            for x in range(W):
                if mask[y, x] == 0:
                    continue
                cur = 0
                # previously visited neighbours: W, NW, N, NE
                if x > 0 and lab[y, x - 1] != 0:
                    cur = lab[y, x - 1]
                if y > 0:
                    if x > 0:
                        nb = lab[y - 1, x - 1]
                        if nb != 0:
                            if cur == 0:
                                cur = nb
                            else:
                                _union(parent, cur, nb)
                    nb = lab[y - 1, x]
                    if nb != 0:
                        if cur == 0:
                            cur = nb
                        else:
                            _union(parent, cur, nb)
                    if x + 1 < W:
                        nb = lab[y - 1, x + 1]
                        if nb != 0:
                            if cur == 0:
                                cur = nb
                            else:
                                _union(parent, cur, nb)
                if cur == 0:
                    cur = nxt
                    parent[nxt] = nxt
                    nxt = nxt + 1
                lab[y, x] = cur
        n = 0
        for y in range(H):
            for x in range(W):
                if lab[y, x] == 0:
                    continue
                r = _find(parent, lab[y, x])
                if remap[r] == 0:
                    n = n + 1
                    remap[r] = n
                lab[y, x] = remap[r]
    return labels_arr, int(n)
