"""Reference operator kernels with reverse-mode gradients.

All math runs in float64 regardless of the stored weight precision, which
leaves enough headroom for finite-difference checks at 1e-4 relative
error. Activation layout is [batch, height, width, channels]; conv kernels
are [kh, kw, in, out], depthwise kernels [kh, kw, ch, mult], dense weights
[in, out].

Convolutions ship two paths: a direct-loop reference and the default
gathered (im2col-style) path; both must agree to 1e-12.
"""
from __future__ import annotations

import numpy as np

__all__ = ["forward_op", "backward_op", "ShapeMismatch", "UnsupportedOp"]


class ShapeMismatch(ValueError):
    pass


class UnsupportedOp(ValueError):
    pass


def _same_pad_amounts(in_sp: int, k: int, s: int) -> tuple[int, int]:
    out = -(-in_sp // s)
    total = max(0, (out - 1) * s + k - in_sp)
    lo = total // 2
    return lo, total - lo


def _pad_input(x, kernel, strides, padding, fill=0.0):
    if padding == "valid":
        return x, (0, 0)
    (kh, kw), (sh, sw) = kernel, strides
    ph = _same_pad_amounts(x.shape[1], kh, sh)
    pw = _same_pad_amounts(x.shape[2], kw, sw)
    xp = np.pad(x, ((0, 0), ph, pw, (0, 0)), mode="constant", constant_values=fill)
    return xp, (ph[0], pw[0])


def _out_spatial(in_sp: int, k: int, s: int, padding: str) -> int:
    if padding == "valid":
        return (in_sp - k) // s + 1
    return -(-in_sp // s)


# ---- conv2d ----

def conv2d_forward(x, w, bias, strides, padding, method="gather"):
    kh, kw, ci, co = w.shape
    if x.shape[3] != ci:
        raise ShapeMismatch(f"conv2d input channels {x.shape[3]} != kernel {ci}")
    sh, sw = strides
    oh = _out_spatial(x.shape[1], kh, sh, padding)
    ow = _out_spatial(x.shape[2], kw, sw, padding)
    xp, _ = _pad_input(x, (kh, kw), strides, padding)
    y = np.zeros((x.shape[0], oh, ow, co), dtype=np.float64)
    if method == "naive":
        b = x.shape[0]
        for bi in range(b):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[bi, i * sh:i * sh + kh, j * sw:j * sw + kw, :]
                    for c in range(co):
                        y[bi, i, j, c] = np.sum(patch * w[:, :, :, c])
    else:
        for i in range(kh):
            for j in range(kw):
                xs = xp[:, i:i + sh * oh:sh, j:j + sw * ow:sw, :]
                y += np.einsum("bhwc,cd->bhwd", xs, w[i, j])
    if bias is not None:
        y = y + bias
    return y


def conv2d_backward(x, w, bias, strides, padding, dy):
    kh, kw, ci, co = w.shape
    sh, sw = strides
    oh, ow = dy.shape[1], dy.shape[2]
    xp, _ = _pad_input(x, (kh, kw), strides, padding)
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, i:i + sh * oh:sh, j:j + sw * ow:sw, :]
            dw[i, j] = np.einsum("bhwc,bhwd->cd", xs, dy)
            dxp[:, i:i + sh * oh:sh, j:j + sw * ow:sw, :] += np.einsum(
                "bhwd,cd->bhwc", dy, w[i, j])
    dx = _unpad(dxp, x.shape, (kh, kw), strides, padding)
    db = dy.sum(axis=(0, 1, 2)) if bias is not None else None
    return dx, dw, db


def _unpad(dxp, x_shape, kernel, strides, padding):
    if padding == "valid":
        return dxp[:, :x_shape[1], :x_shape[2], :]
    (kh, kw), (sh, sw) = kernel, strides
    top = _same_pad_amounts(x_shape[1], kh, sh)[0]
    left = _same_pad_amounts(x_shape[2], kw, sw)[0]
    return dxp[:, top:top + x_shape[1], left:left + x_shape[2], :]


# ---- depthwise conv2d ----

def depthwise_forward(x, w, bias, strides, padding, method="gather"):
    kh, kw, c, m = w.shape
    if x.shape[3] != c:
        raise ShapeMismatch(f"depthwise input channels {x.shape[3]} != kernel {c}")
    sh, sw = strides
    oh = _out_spatial(x.shape[1], kh, sh, padding)
    ow = _out_spatial(x.shape[2], kw, sw, padding)
    xp, _ = _pad_input(x, (kh, kw), strides, padding)
    b = x.shape[0]
    y = np.zeros((b, oh, ow, c, m), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, i:i + sh * oh:sh, j:j + sw * ow:sw, :]
            y += xs[..., :, None] * w[i, j]
    y = y.reshape(b, oh, ow, c * m)
    if bias is not None:
        y = y + bias
    return y


def depthwise_backward(x, w, bias, strides, padding, dy):
    kh, kw, c, m = w.shape
    sh, sw = strides
    b, oh, ow, _ = dy.shape
    dy5 = dy.reshape(b, oh, ow, c, m)
    xp, _ = _pad_input(x, (kh, kw), strides, padding)
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, i:i + sh * oh:sh, j:j + sw * ow:sw, :]
            dw[i, j] = np.einsum("bhwc,bhwcm->cm", xs, dy5)
            dxp[:, i:i + sh * oh:sh, j:j + sw * ow:sw, :] += np.einsum(
                "bhwcm,cm->bhwc", dy5, w[i, j])
    dx = _unpad(dxp, x.shape, (kh, kw), strides, padding)
    db = dy.sum(axis=(0, 1, 2)) if bias is not None else None
    return dx, dw, db


# ---- transposed conv2d ----

def _tconv_geometry(x_shape, w_shape, strides, padding):
    kh, kw, ci, co = w_shape
    sh, sw = strides
    h, w_ = x_shape[1], x_shape[2]
    full_h, full_w = (h - 1) * sh + kh, (w_ - 1) * sw + kw
    if padding == "valid":
        out_h, out_w = full_h, full_w
    else:
        out_h, out_w = h * sh, w_ * sw
    return (kh, kw, ci, co, sh, sw, h, w_, full_h, full_w, out_h, out_w)


def conv2d_transpose_forward(x, w, bias, strides, padding, method="gather"):
    kh, kw, ci, co, sh, sw, h, w_, full_h, full_w, out_h, out_w = _tconv_geometry(
        x.shape, w.shape, strides, padding)
    if x.shape[3] != ci:
        raise ShapeMismatch(f"transpose-conv input channels {x.shape[3]} != kernel {ci}")
    full = np.zeros((x.shape[0], full_h, full_w, co), dtype=np.float64)
    if method == "naive":
        for bi in range(x.shape[0]):
            for i in range(h):
                for j in range(w_):
                    for c in range(co):
                        full[bi, i * sh:i * sh + kh, j * sw:j * sw + kw, c] += np.einsum(
                            "hwk,k->hw", w[:, :, :, c], x[bi, i, j, :])
    else:
        for i in range(kh):
            for j in range(kw):
                full[:, i:i + sh * h:sh, j:j + sw * w_:sw, :] += np.einsum(
                    "bhwc,cd->bhwd", x, w[i, j])
    y = _fit_spatial(full, out_h, out_w)
    if bias is not None:
        y = y + bias
    return y


def _fit_spatial(full, out_h, out_w):
    """Center-crop or zero-extend to the target spatial extents."""
    b, fh, fw, c = full.shape
    if fh >= out_h:
        top = (fh - out_h) // 2
        full = full[:, top:top + out_h, :, :]
    else:
        lo = (out_h - fh) // 2
        full = np.pad(full, ((0, 0), (lo, out_h - fh - lo), (0, 0), (0, 0)))
    if fw >= out_w:
        left = (fw - out_w) // 2
        full = full[:, :, left:left + out_w, :]
    else:
        lo = (out_w - fw) // 2
        full = np.pad(full, ((0, 0), (0, 0), (lo, out_w - fw - lo), (0, 0)))
    return full


def conv2d_transpose_backward(x, w, bias, strides, padding, dy):
    kh, kw, ci, co, sh, sw, h, w_, full_h, full_w, out_h, out_w = _tconv_geometry(
        x.shape, w.shape, strides, padding)
    dfull = _unfit_spatial(dy, full_h, full_w)
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    for i in range(kh):
        for j in range(kw):
            sl = dfull[:, i:i + sh * h:sh, j:j + sw * w_:sw, :]
            dx += np.einsum("bhwd,cd->bhwc", sl, w[i, j])
            dw[i, j] = np.einsum("bhwc,bhwd->cd", x, sl)
    db = dy.sum(axis=(0, 1, 2)) if bias is not None else None
    return dx, dw, db


def _unfit_spatial(dy, full_h, full_w):
    """Adjoint of _fit_spatial: embed or crop the gradient back."""
    b, oh, ow, c = dy.shape
    if full_h >= oh:
        top = (full_h - oh) // 2
        out = np.zeros((b, full_h, ow, c), dtype=np.float64)
        out[:, top:top + oh, :, :] = dy
    else:
        lo = (oh - full_h) // 2
        out = dy[:, lo:lo + full_h, :, :]
    if full_w >= ow:
        left = (full_w - ow) // 2
        out2 = np.zeros((b, full_h, full_w, c), dtype=np.float64)
        out2[:, :, left:left + ow, :] = out
    else:
        lo = (ow - full_w) // 2
        out2 = out[:, :, lo:lo + full_w, :]
    return out2


# ---- pooling ----

def _pool_windows(x, pool, padding, fill):
    """Stack of window elements: [b, oh, ow, pool*pool, c]."""
    p = pool
    oh = _out_spatial(x.shape[1], p, p, padding)
    ow = _out_spatial(x.shape[2], p, p, padding)
    xp, _ = _pad_input(x, (p, p), (p, p), padding, fill=fill)
    parts = []
    for i in range(p):
        for j in range(p):
            parts.append(xp[:, i:i + p * oh:p, j:j + p * ow:p, :])
    return np.stack(parts, axis=3), oh, ow, xp.shape


def max_pool_forward(x, pool, padding):
    win, oh, ow, _ = _pool_windows(x, pool, padding, fill=-np.inf)
    return win.max(axis=3)


def max_pool_backward(x, pool, padding, dy):
    win, oh, ow, xp_shape = _pool_windows(x, pool, padding, fill=-np.inf)
    arg = win.argmax(axis=3)  # first-index tie-break
    p = pool
    dxp = np.zeros(xp_shape, dtype=np.float64)
    for i in range(p):
        for j in range(p):
            mask = (arg == i * p + j)
            dxp[:, i:i + p * oh:p, j:j + p * ow:p, :] += dy * mask
    return _unpad(dxp, x.shape, (p, p), (p, p), padding)


def avg_pool_forward(x, pool, padding):
    win, oh, ow, _ = _pool_windows(x, pool, padding, fill=0.0)
    counts = _pool_counts(x, pool, padding, oh, ow)
    return win.sum(axis=3) / counts


def _pool_counts(x, pool, padding, oh, ow):
    ones = np.ones((1, x.shape[1], x.shape[2], 1), dtype=np.float64)
    win, _, _, _ = _pool_windows(ones, pool, padding, fill=0.0)
    return win.sum(axis=3)


def avg_pool_backward(x, pool, padding, dy):
    p = pool
    oh, ow = dy.shape[1], dy.shape[2]
    counts = _pool_counts(x, pool, padding, oh, ow)
    scaled = dy / counts
    xp, _ = _pad_input(x, (p, p), (p, p), padding, fill=0.0)
    dxp = np.zeros_like(xp)
    for i in range(p):
        for j in range(p):
            dxp[:, i:i + p * oh:p, j:j + p * ow:p, :] += scaled
    return _unpad(dxp, x.shape, (p, p), (p, p), padding)


# ---- resize/pad/rearrange ----

def upsample_forward(x, size):
    return x.repeat(size, axis=1).repeat(size, axis=2)


def upsample_backward(x, size, dy):
    b, h, w, c = x.shape
    return dy.reshape(b, h, size, w, size, c).sum(axis=(2, 4))


def pad_forward(x, paddings):
    (t, bb), (l, r) = paddings
    return np.pad(x, ((0, 0), (t, bb), (l, r), (0, 0)))


def pad_backward(x, paddings, dy):
    (t, bb), (l, r) = paddings
    return dy[:, t:t + x.shape[1], l:l + x.shape[2], :]


def _reflect_indices(n: int, lo: int, hi: int) -> np.ndarray:
    """Source index per output position for reflect padding (edge excluded)."""
    idx = np.arange(-lo, n + hi)
    idx = np.abs(idx)
    idx = np.where(idx >= n, 2 * (n - 1) - idx, idx)
    return idx


def mirror_pad_forward(x, paddings):
    (t, bb), (l, r) = paddings
    if t >= x.shape[1] or bb >= x.shape[1] or l >= x.shape[2] or r >= x.shape[2]:
        raise ShapeMismatch("reflect padding must be smaller than the input extent")
    return np.pad(x, ((0, 0), (t, bb), (l, r), (0, 0)), mode="reflect")


def mirror_pad_backward(x, paddings, dy):
    (t, bb), (l, r) = paddings
    hi = _reflect_indices(x.shape[1], t, bb)
    wi = _reflect_indices(x.shape[2], l, r)
    dx = np.zeros_like(x)
    # scatter-add per output row/col back onto its mirrored source
    for oi, si in enumerate(hi):
        for oj, sj in enumerate(wi):
            dx[:, si, sj, :] += dy[:, oi, oj, :]
    return dx


def space_to_batch_forward(x, block, paddings):
    (t, bb), (l, r) = paddings
    xp = np.pad(x, ((0, 0), (t, bb), (l, r), (0, 0)))
    b, h, w, c = xp.shape
    if h % block or w % block:
        raise ShapeMismatch("padded extents must divide the block size")
    oh, ow = h // block, w // block
    y = xp.reshape(b, oh, block, ow, block, c)
    y = y.transpose(2, 4, 0, 1, 3, 5)
    return y.reshape(block * block * b, oh, ow, c)


def space_to_batch_backward(x, block, paddings, dy):
    (t, bb), (l, r) = paddings
    b = x.shape[0]
    oh, ow, c = dy.shape[1], dy.shape[2], dy.shape[3]
    g = dy.reshape(block, block, b, oh, ow, c).transpose(2, 3, 0, 4, 1, 5)
    g = g.reshape(b, oh * block, ow * block, c)
    return g[:, t:t + x.shape[1], l:l + x.shape[2], :]


# ---- dense / elementwise / shape ----

def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z):
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def forward_op(op_type: str, attrs: dict, inputs: list[np.ndarray],
               conv_method: str = "gather") -> np.ndarray:
    a = attrs or {}
    if op_type == "conv2d":
        x, w = inputs[0], inputs[1]
        bias = inputs[2] if len(inputs) > 2 else None
        return conv2d_forward(x, w, bias, a["strides"], a["padding"], conv_method)
    if op_type == "depthwise_conv2d":
        x, w = inputs[0], inputs[1]
        bias = inputs[2] if len(inputs) > 2 else None
        return depthwise_forward(x, w, bias, a["strides"], a["padding"], conv_method)
    if op_type == "conv2d_transpose":
        x, w = inputs[0], inputs[1]
        bias = inputs[2] if len(inputs) > 2 else None
        return conv2d_transpose_forward(x, w, bias, a["strides"], a["padding"], conv_method)
    if op_type == "max_pool2d":
        return max_pool_forward(inputs[0], a["pool_size"], a["padding"])
    if op_type == "avg_pool2d":
        return avg_pool_forward(inputs[0], a["pool_size"], a["padding"])
    if op_type == "upsampling2d":
        return upsample_forward(inputs[0], a["size"])
    if op_type == "pad":
        return pad_forward(inputs[0], a["paddings"])
    if op_type == "mirror_pad":
        return mirror_pad_forward(inputs[0], a["paddings"])
    if op_type == "space_to_batch":
        return space_to_batch_forward(inputs[0], a["block_size"], a["paddings"])
    if op_type == "dense":
        x, w = inputs[0], inputs[1]
        y = x @ w
        if len(inputs) > 2:
            y = y + inputs[2]
        return y
    if op_type == "add":
        _check_same(inputs)
        return inputs[0] + inputs[1]
    if op_type == "mul":
        _check_same(inputs)
        return inputs[0] * inputs[1]
    if op_type == "concat":
        return np.concatenate(inputs, axis=a["axis"])
    if op_type == "reshape":
        return inputs[0].reshape(a["target_shape"]).copy()
    if op_type == "relu":
        return np.maximum(inputs[0], 0.0)
    if op_type == "sigmoid":
        return _sigmoid(inputs[0])
    if op_type == "softmax":
        return _softmax(inputs[0])
    raise UnsupportedOp(op_type)


def _check_same(inputs):
    if inputs[0].shape != inputs[1].shape:
        raise ShapeMismatch(f"elementwise shapes differ: {inputs[0].shape} vs {inputs[1].shape}")


def backward_op(op_type: str, attrs: dict, inputs: list[np.ndarray],
                output: np.ndarray, dy: np.ndarray) -> list[np.ndarray | None]:
    a = attrs or {}
    if op_type == "conv2d":
        x, w = inputs[0], inputs[1]
        bias = inputs[2] if len(inputs) > 2 else None
        dx, dw, db = conv2d_backward(x, w, bias, a["strides"], a["padding"], dy)
        return [dx, dw] + ([db] if bias is not None else [])
    if op_type == "depthwise_conv2d":
        x, w = inputs[0], inputs[1]
        bias = inputs[2] if len(inputs) > 2 else None
        dx, dw, db = depthwise_backward(x, w, bias, a["strides"], a["padding"], dy)
        return [dx, dw] + ([db] if bias is not None else [])
    if op_type == "conv2d_transpose":
        x, w = inputs[0], inputs[1]
        bias = inputs[2] if len(inputs) > 2 else None
        dx, dw, db = conv2d_transpose_backward(x, w, bias, a["strides"], a["padding"], dy)
        return [dx, dw] + ([db] if bias is not None else [])
    if op_type == "max_pool2d":
        return [max_pool_backward(inputs[0], a["pool_size"], a["padding"], dy)]
    if op_type == "avg_pool2d":
        return [avg_pool_backward(inputs[0], a["pool_size"], a["padding"], dy)]
    if op_type == "upsampling2d":
        return [upsample_backward(inputs[0], a["size"], dy)]
    if op_type == "pad":
        return [pad_backward(inputs[0], a["paddings"], dy)]
    if op_type == "mirror_pad":
        return [mirror_pad_backward(inputs[0], a["paddings"], dy)]
    if op_type == "space_to_batch":
        return [space_to_batch_backward(inputs[0], a["block_size"], a["paddings"], dy)]
    if op_type == "dense":
        x, w = inputs[0], inputs[1]
        grads = [dy @ w.T, x.T @ dy]
        if len(inputs) > 2:
            grads.append(dy.sum(axis=0))
        return grads
    if op_type == "add":
        return [dy, dy.copy()]
    if op_type == "mul":
        return [dy * inputs[1], dy * inputs[0]]
    if op_type == "concat":
        axis = a["axis"]
        sizes = [i.shape[axis] for i in inputs]
        splits = np.cumsum(sizes)[:-1]
        return list(np.split(dy, splits, axis=axis))
    if op_type == "reshape":
        return [dy.reshape(inputs[0].shape)]
    if op_type == "relu":
        return [dy * (inputs[0] > 0)]
    if op_type == "sigmoid":
        return [dy * output * (1.0 - output)]
    if op_type == "softmax":
        s = (dy * output).sum(axis=-1, keepdims=True)
        return [(dy - s) * output]
    raise UnsupportedOp(op_type)
