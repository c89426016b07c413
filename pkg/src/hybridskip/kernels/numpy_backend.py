"""Pure-NumPy implementations of the hot array kernels.

All functions take and return C-contiguous float64 arrays.  Layout is
channels-first: images are (C, H, W), convolution weights are
(F, C, kH, kW).  The compiled backend mirrors this module exactly.
"""
import numpy as np

name = "python"


def _out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, ph, pw):
    """Unfold (C,H,W) into a (C*kh*kw, Ho*Wo) patch matrix with zero padding."""
    c, h, w = x.shape
    ho = _out_size(h, kh, stride, ph)
    wo = _out_size(w, kw, stride, pw)
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    s0, s1, s2 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, (c, kh, kw, ho, wo), (s0, s1, s2, s1 * stride, s2 * stride))
    return np.ascontiguousarray(windows.reshape(c * kh * kw, ho * wo)), ho, wo


def col2im(cols, c, h, w, kh, kw, stride, ph, pw, ho, wo):
    """Adjoint of im2col: scatter-add patch columns back onto a (C,H,W) grid."""
    gxp = np.zeros((c, h + 2 * ph, w + 2 * pw))
    g6 = cols.reshape(c, kh, kw, ho, wo)
    for u in range(kh):
        for v in range(kw):
            gxp[:, u:u + stride * ho:stride, v:v + stride * wo:stride] += g6[:, u, v]
    return np.ascontiguousarray(gxp[:, ph:ph + h, pw:pw + w])


def conv2d_forward(x, w, stride, ph, pw):
    """Cross-correlation of (C,H,W) with (F,C,kh,kw).

    Returns (out, saved) where ``saved`` is backend state consumed by
    conv2d_backward.
    """
    f, c, kh, kw = w.shape
    cols, ho, wo = im2col(x, kh, kw, stride, ph, pw)
    out = (w.reshape(f, c * kh * kw) @ cols).reshape(f, ho, wo)
    return out, cols


def conv2d_backward(gout, saved, w, x_shape, stride, ph, pw):
    """Gradients of conv2d_forward w.r.t. input and weight (bias is the caller's)."""
    cols = saved
    f, c, kh, kw = w.shape
    _, ho, wo = gout.shape
    g2 = gout.reshape(f, ho * wo)
    gw = (g2 @ cols.T).reshape(w.shape)
    gcols = w.reshape(f, c * kh * kw).T @ g2
    gx = col2im(gcols, x_shape[0], x_shape[1], x_shape[2],
                kh, kw, stride, ph, pw, ho, wo)
    return gx, gw


def depthwise_forward(x, k):
    """Per-channel cross-correlation with one (K,K) kernel, zero 'same' padding."""
    kk = k.shape[0]
    p = kk // 2
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    out = np.zeros((c, h, w))
    for u in range(kk):
        for v in range(kk):
            out += k[u, v] * xp[:, u:u + h, v:v + w]
    return out


def depthwise_backward(gout, k):
    # adjoint of 'same' zero-padded correlation: correlate with the flipped kernel
    return depthwise_forward(gout, k[::-1, ::-1])


_resample_cache = {}


def _resample_matrix(n_in, scale):
    """Row-interpolation matrix for bilinear upsampling along one axis.

    Source coordinates follow the half-pixel convention
    src = (dst + 0.5) / scale - 0.5, clamped to the valid range.
    """
    key = (n_in, scale)
    cached = _resample_cache.get(key)
    if cached is not None:
        return cached
    n_out = n_in * scale
    r = np.zeros((n_out, n_in))
    for dst in range(n_out):
        src = (dst + 0.5) / scale - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        i0 = int(np.floor(src))
        frac = src - i0
        i1 = min(i0 + 1, n_in - 1)
        r[dst, i0] += 1.0 - frac
        r[dst, i1] += frac
    _resample_cache[key] = r
    return r


def upsample_forward(x, scale):
    c, h, w = x.shape
    ry = _resample_matrix(h, scale)
    rx = _resample_matrix(w, scale)
    return np.ascontiguousarray(np.matmul(np.matmul(ry, x), rx.T))


def upsample_backward(gout, h, w, scale):
    ry = _resample_matrix(h, scale)
    rx = _resample_matrix(w, scale)
    return np.ascontiguousarray(np.matmul(np.matmul(ry.T, gout), rx))


def maxpool2_forward(x):
    """2x2 max pooling, stride 2.  Ties pick the first cell in row-major window order.

    Returns (out, argmax) with argmax in {0,1,2,3} indexing (0,0),(0,1),(1,0),(1,1).
    """
    c, h, w = x.shape
    win = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4)
    win = win.reshape(c, h // 2, w // 2, 4)
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.int8)


def maxpool2_backward(gout, arg, h, w):
    c, ho, wo = gout.shape
    gwin = np.zeros((c, ho, wo, 4))
    np.put_along_axis(gwin, arg[..., None].astype(np.intp), gout[..., None], axis=-1)
    gx = gwin.reshape(c, ho, wo, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w)
    return np.ascontiguousarray(gx)


def avgpool2_forward(x):
    c, h, w = x.shape
    return 0.25 * (x.reshape(c, h // 2, 2, w // 2, 2).sum(axis=(2, 4)))


def avgpool2_backward(gout, h, w):
    c = gout.shape[0]
    gx = np.broadcast_to(0.25 * gout[:, :, None, :, None],
                         (c, h // 2, 2, w // 2, 2))
    return np.ascontiguousarray(gx.reshape(c, h, w))
