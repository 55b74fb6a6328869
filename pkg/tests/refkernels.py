"""Independent naive reference kernels used as the test-side oracle.

Deliberately written as plain quadruple loops with explicit padding
arithmetic, structured differently from the package kernels, so agreement
between the two is meaningful.
"""
from __future__ import annotations

import math

import numpy as np


def _pad_same(x, kh, kw, sh, sw, value=0.0):
    b, h, w, c = x.shape
    oh, ow = math.ceil(h / sh), math.ceil(w / sw)
    need_h = max(0, (oh - 1) * sh + kh - h)
    need_w = max(0, (ow - 1) * sw + kw - w)
    out = np.full((b, h + need_h, w + need_w, c), value, dtype=np.float64)
    out[:, need_h // 2:need_h // 2 + h, need_w // 2:need_w // 2 + w, :] = x
    return out, oh, ow


def conv2d_ref(x, w, bias, strides, padding):
    kh, kw, ci, co = w.shape
    sh, sw = strides
    if padding == "same":
        xp, oh, ow = _pad_same(x, kh, kw, sh, sw)
    else:
        xp = np.asarray(x, dtype=np.float64)
        oh = (x.shape[1] - kh) // sh + 1
        ow = (x.shape[2] - kw) // sw + 1
    y = np.zeros((x.shape[0], oh, ow, co))
    for b in range(x.shape[0]):
        for i in range(oh):
            for j in range(ow):
                for o in range(co):
                    acc = 0.0
                    for di in range(kh):
                        for dj in range(kw):
                            for c in range(ci):
                                acc += xp[b, i * sh + di, j * sw + dj, c] * w[di, dj, c, o]
                    y[b, i, j, o] = acc + (bias[o] if bias is not None else 0.0)
    return y


def depthwise_ref(x, w, bias, strides, padding):
    kh, kw, ci, m = w.shape
    sh, sw = strides
    if padding == "same":
        xp, oh, ow = _pad_same(x, kh, kw, sh, sw)
    else:
        xp = np.asarray(x, dtype=np.float64)
        oh = (x.shape[1] - kh) // sh + 1
        ow = (x.shape[2] - kw) // sw + 1
    y = np.zeros((x.shape[0], oh, ow, ci * m))
    for b in range(x.shape[0]):
        for i in range(oh):
            for j in range(ow):
                for c in range(ci):
                    for k in range(m):
                        acc = 0.0
                        for di in range(kh):
                            for dj in range(kw):
                                acc += xp[b, i * sh + di, j * sw + dj, c] * w[di, dj, c, k]
                        o = c * m + k
                        y[b, i, j, o] = acc + (bias[o] if bias is not None else 0.0)
    return y


def conv2d_transpose_ref(x, w, bias, strides, padding):
    kh, kw, ci, co = w.shape
    sh, sw = strides
    b, h, ww_, _ = x.shape
    full_h, full_w = (h - 1) * sh + kh, (ww_ - 1) * sw + kw
    full = np.zeros((b, full_h, full_w, co))
    for bi in range(b):
        for i in range(h):
            for j in range(ww_):
                for di in range(kh):
                    for dj in range(kw):
                        for o in range(co):
                            acc = 0.0
                            for c in range(ci):
                                acc += x[bi, i, j, c] * w[di, dj, c, o]
                            full[bi, i * sh + di, j * sw + dj, o] += acc
    if padding == "valid":
        y = full
    else:
        oh, ow = h * sh, ww_ * sw
        top = max(0, (full_h - oh) // 2)
        left = max(0, (full_w - ow) // 2)
        if full_h >= oh and full_w >= ow:
            y = full[:, top:top + oh, left:left + ow, :]
        else:
            y = np.zeros((b, oh, ow, co))
            t2 = (oh - full_h) // 2 if full_h < oh else 0
            l2 = (ow - full_w) // 2 if full_w < ow else 0
            y[:, t2:t2 + full_h, l2:l2 + full_w, :] = full
    if bias is not None:
        y = y + bias
    return y


def max_pool_ref(x, pool, padding):
    sh = sw = pool
    if padding == "same":
        xp, oh, ow = _pad_same(x, pool, pool, sh, sw, value=-np.inf)
    else:
        xp = np.asarray(x, dtype=np.float64)
        oh = (x.shape[1] - pool) // sh + 1
        ow = (x.shape[2] - pool) // sw + 1
    y = np.zeros((x.shape[0], oh, ow, x.shape[3]))
    for b in range(x.shape[0]):
        for i in range(oh):
            for j in range(ow):
                for c in range(x.shape[3]):
                    y[b, i, j, c] = np.max(
                        xp[b, i * sh:i * sh + pool, j * sw:j * sw + pool, c])
    return y


def avg_pool_ref(x, pool, padding):
    sh = sw = pool
    if padding == "same":
        xp, oh, ow = _pad_same(x, pool, pool, sh, sw, value=np.nan)
    else:
        xp = np.asarray(x, dtype=np.float64)
        oh = (x.shape[1] - pool) // sh + 1
        ow = (x.shape[2] - pool) // sw + 1
    y = np.zeros((x.shape[0], oh, ow, x.shape[3]))
    for b in range(x.shape[0]):
        for i in range(oh):
            for j in range(ow):
                for c in range(x.shape[3]):
                    win = xp[b, i * sh:i * sh + pool, j * sw:j * sw + pool, c]
                    y[b, i, j, c] = np.nanmean(win)
    return y
