# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementations of the hot array kernels.

Same contract as numpy_backend: C-contiguous float64, channels-first.
Convolution runs as an explicit patch unfold plus a BLAS dgemm; pooling,
resampling and the fixed-kernel correlations are plain C loops.
"""
import numpy as np

cimport numpy as cnp
from libc.string cimport memcpy, memset
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

name = "compiled"


cdef void _gemm_nn(double* a, double* b, double* c, int m, int k, int n) noexcept nogil:
    # row-major C(m,n) = A(m,k) @ B(k,n)
    cdef double one = 1.0, zero = 0.0
    dgemm("N", "N", &n, &m, &k, &one, b, &n, a, &k, &zero, c, &n)


cdef void _gemm_nt(double* a, double* b, double* c, int m, int k, int n) noexcept nogil:
    # row-major C(m,n) = A(m,k) @ B(n,k)^T
    cdef double one = 1.0, zero = 0.0
    dgemm("T", "N", &n, &m, &k, &one, b, &k, a, &k, &zero, c, &n)


cdef void _gemm_tn(double* a, double* b, double* c, int m, int k, int n) noexcept nogil:
    # row-major C(m,n) = A(k,m)^T @ B(k,n)
    cdef double one = 1.0, zero = 0.0
    dgemm("N", "T", &n, &m, &k, &one, b, &n, a, &m, &zero, c, &n)


cdef void _im2col(const double* x, double* cols, int c, int h, int w,
                  int kh, int kw, int stride, int ph, int pw,
                  int ho, int wo) noexcept nogil:
    cdef int ci, u, v, i, j, j0, j1, yy, xx
    cdef const double* src
    cdef double* dst = cols
    for ci in range(c):
        for u in range(kh):
            for v in range(kw):
                if stride == 1:
                    # contiguous row runs: bulk copy, zero the padding fringe
                    j0 = pw - v
                    if j0 < 0:
                        j0 = 0
                    j1 = w + pw - v
                    if j1 > wo:
                        j1 = wo
                    for i in range(ho):
                        yy = i + u - ph
                        if yy < 0 or yy >= h or j0 >= j1:
                            memset(dst, 0, wo * sizeof(double))
                        else:
                            if j0 > 0:
                                memset(dst, 0, j0 * sizeof(double))
                            src = x + (<long> ci * h + yy) * w + (j0 + v - pw)
                            memcpy(dst + j0, src, (j1 - j0) * sizeof(double))
                            if j1 < wo:
                                memset(dst + j1, 0, (wo - j1) * sizeof(double))
                        dst += wo
                else:
                    for i in range(ho):
                        yy = i * stride + u - ph
                        if yy < 0 or yy >= h:
                            memset(dst, 0, wo * sizeof(double))
                        else:
                            for j in range(wo):
                                xx = j * stride + v - pw
                                dst[j] = x[(<long> ci * h + yy) * w + xx] \
                                    if 0 <= xx < w else 0.0
                        dst += wo


cdef void _col2im(const double* cols, double* gx, int c, int h, int w,
                  int kh, int kw, int stride, int ph, int pw,
                  int ho, int wo) noexcept nogil:
    cdef int ci, u, v, i, j, j0, j1, yy, xx
    cdef double* dst
    cdef const double* src = cols
    for ci in range(c):
        for u in range(kh):
            for v in range(kw):
                if stride == 1:
                    j0 = pw - v
                    if j0 < 0:
                        j0 = 0
                    j1 = w + pw - v
                    if j1 > wo:
                        j1 = wo
                    for i in range(ho):
                        yy = i + u - ph
                        if 0 <= yy < h and j0 < j1:
                            dst = gx + (<long> ci * h + yy) * w + (v - pw)
                            for j in range(j0, j1):
                                dst[j] += src[j]
                        src += wo
                else:
                    for i in range(ho):
                        yy = i * stride + u - ph
                        if 0 <= yy < h:
                            for j in range(wo):
                                xx = j * stride + v - pw
                                if 0 <= xx < w:
                                    gx[(<long> ci * h + yy) * w + xx] += src[j]
                        src += wo


def conv2d_forward(cnp.ndarray x, cnp.ndarray w, int stride, int ph, int pw):
    cdef int c = x.shape[0], h = x.shape[1], ww = x.shape[2]
    cdef int f = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef int ho = (h + 2 * ph - kh) // stride + 1
    cdef int wo = (ww + 2 * pw - kw) // stride + 1
    cdef int kdim = c * kh * kw, n = ho * wo
    cols_arr = np.empty((kdim, n))
    out_arr = np.empty((f, ho, wo))
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, :, ::1] xv = x
    _im2col(&xv[0, 0, 0], &cols[0, 0], c, h, ww, kh, kw, stride, ph, pw, ho, wo)
    cdef double[:, :, :, ::1] wv = w
    cdef double[:, :, ::1] outv = out_arr
    _gemm_nn(&wv[0, 0, 0, 0], &cols[0, 0], &outv[0, 0, 0], f, kdim, n)
    return out_arr, cols_arr


def conv2d_backward(cnp.ndarray gout, cnp.ndarray cols_arr, cnp.ndarray w,
                    x_shape, int stride, int ph, int pw):
    cdef int f = w.shape[0], c = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef int ho = gout.shape[1], wo = gout.shape[2]
    cdef int kdim = c * kh * kw, n = ho * wo
    gw_arr = np.empty((f, c, kh, kw))
    gcols_arr = np.empty((kdim, n))
    gx_arr = np.zeros((x_shape[0], x_shape[1], x_shape[2]))
    cdef double[:, :, ::1] gv = gout
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, :, :, ::1] wv = w
    cdef double[:, :, :, ::1] gwv = gw_arr
    cdef double[:, ::1] gcols = gcols_arr
    cdef double[:, :, ::1] gxv = gx_arr
    # gw(F,K) = g2(F,N) @ cols(K,N)^T
    _gemm_nt(&gv[0, 0, 0], &cols[0, 0], &gwv[0, 0, 0, 0], f, n, kdim)
    # gcols(K,N) = w2(F,K)^T @ g2(F,N)
    _gemm_tn(&wv[0, 0, 0, 0], &gv[0, 0, 0], &gcols[0, 0], kdim, f, n)
    _col2im(&gcols[0, 0], &gxv[0, 0, 0], x_shape[0], x_shape[1], x_shape[2],
            kh, kw, stride, ph, pw, ho, wo)
    return gx_arr, gw_arr


cdef void _corr_same(const double[:, :, ::1] x, const double[:, ::1] k,
                     double[:, :, ::1] out, bint flip) noexcept nogil:
    cdef int c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef int kk = k.shape[0], p = k.shape[0] // 2
    cdef int ci, i, j, u, v, yy, xx
    cdef double acc, kv
    for ci in range(c):
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for u in range(kk):
                    yy = i + u - p
                    if yy < 0 or yy >= h:
                        continue
                    for v in range(kk):
                        xx = j + v - p
                        if xx < 0 or xx >= w:
                            continue
                        kv = k[kk - 1 - u, kk - 1 - v] if flip else k[u, v]
                        acc += kv * x[ci, yy, xx]
                out[ci, i, j] = acc


def depthwise_forward(cnp.ndarray x, cnp.ndarray k):
    out_arr = np.empty_like(x)
    cdef double[:, :, ::1] xv = x, outv = out_arr
    cdef double[:, ::1] kv = k
    _corr_same(xv, kv, outv, False)
    return out_arr


def depthwise_backward(cnp.ndarray gout, cnp.ndarray k):
    out_arr = np.empty_like(gout)
    cdef double[:, :, ::1] gv = gout, outv = out_arr
    cdef double[:, ::1] kv = k
    _corr_same(gv, kv, outv, True)
    return out_arr


def _axis_taps(int n_in, int scale):
    # half-pixel centers: src = (dst+0.5)/scale - 0.5, clamped
    n_out = n_in * scale
    i0 = np.empty(n_out, dtype=np.int64)
    i1 = np.empty(n_out, dtype=np.int64)
    fr = np.empty(n_out)
    for dst in range(n_out):
        src = (dst + 0.5) / scale - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        lo = int(np.floor(src))
        i0[dst] = lo
        i1[dst] = min(lo + 1, n_in - 1)
        fr[dst] = src - lo
    return i0, i1, fr


def upsample_forward(cnp.ndarray x, int scale):
    cdef int c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef int ho = h * scale, wo = w * scale
    y0a, y1a, fya = _axis_taps(h, scale)
    x0a, x1a, fxa = _axis_taps(w, scale)
    out_arr = np.empty((c, ho, wo))
    cdef double[:, :, ::1] xv = x, outv = out_arr
    cdef cnp.int64_t[::1] y0 = y0a, y1 = y1a, x0 = x0a, x1 = x1a
    cdef double[::1] fy = fya, fx = fxa
    cdef int ci, i, j
    cdef double wy0, wy1, top, bot
    with nogil:
        for ci in range(c):
            for i in range(ho):
                wy1 = fy[i]
                wy0 = 1.0 - wy1
                for j in range(wo):
                    top = (1.0 - fx[j]) * xv[ci, y0[i], x0[j]] + fx[j] * xv[ci, y0[i], x1[j]]
                    bot = (1.0 - fx[j]) * xv[ci, y1[i], x0[j]] + fx[j] * xv[ci, y1[i], x1[j]]
                    outv[ci, i, j] = wy0 * top + wy1 * bot
    return out_arr


def upsample_backward(cnp.ndarray gout, int h, int w, int scale):
    cdef int c = gout.shape[0], ho = gout.shape[1], wo = gout.shape[2]
    y0a, y1a, fya = _axis_taps(h, scale)
    x0a, x1a, fxa = _axis_taps(w, scale)
    gx_arr = np.zeros((c, h, w))
    cdef double[:, :, ::1] gv = gout, gxv = gx_arr
    cdef cnp.int64_t[::1] y0 = y0a, y1 = y1a, x0 = x0a, x1 = x1a
    cdef double[::1] fy = fya, fx = fxa
    cdef int ci, i, j
    cdef double g, wy0, wy1
    with nogil:
        for ci in range(c):
            for i in range(ho):
                wy1 = fy[i]
                wy0 = 1.0 - wy1
                for j in range(wo):
                    g = gv[ci, i, j]
                    gxv[ci, y0[i], x0[j]] += wy0 * (1.0 - fx[j]) * g
                    gxv[ci, y0[i], x1[j]] += wy0 * fx[j] * g
                    gxv[ci, y1[i], x0[j]] += wy1 * (1.0 - fx[j]) * g
                    gxv[ci, y1[i], x1[j]] += wy1 * fx[j] * g
    return gx_arr


def maxpool2_forward(cnp.ndarray x):
    cdef int c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef int ho = h // 2, wo = w // 2
    out_arr = np.empty((c, ho, wo))
    arg_arr = np.empty((c, ho, wo), dtype=np.int8)
    cdef double[:, :, ::1] xv = x, outv = out_arr
    cdef cnp.int8_t[:, :, ::1] argv = arg_arr
    cdef int ci, i, j, besti
    cdef double v0, v1, v2, v3, best
    with nogil:
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    v0 = xv[ci, 2 * i, 2 * j]
                    v1 = xv[ci, 2 * i, 2 * j + 1]
                    v2 = xv[ci, 2 * i + 1, 2 * j]
                    v3 = xv[ci, 2 * i + 1, 2 * j + 1]
                    best = v0
                    besti = 0
                    if v1 > best:
                        best = v1
                        besti = 1
                    if v2 > best:
                        best = v2
                        besti = 2
                    if v3 > best:
                        best = v3
                        besti = 3
                    outv[ci, i, j] = best
                    argv[ci, i, j] = <cnp.int8_t> besti
    return out_arr, arg_arr


def maxpool2_backward(cnp.ndarray gout, cnp.ndarray arg, int h, int w):
    cdef int c = gout.shape[0], ho = gout.shape[1], wo = gout.shape[2]
    gx_arr = np.zeros((c, h, w))
    cdef double[:, :, ::1] gv = gout, gxv = gx_arr
    cdef cnp.int8_t[:, :, ::1] argv = arg
    cdef int ci, i, j, a
    with nogil:
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    a = argv[ci, i, j]
                    gxv[ci, 2 * i + (a >> 1), 2 * j + (a & 1)] += gv[ci, i, j]
    return gx_arr


def avgpool2_forward(cnp.ndarray x):
    cdef int c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef int ho = h // 2, wo = w // 2
    out_arr = np.empty((c, ho, wo))
    cdef double[:, :, ::1] xv = x, outv = out_arr
    cdef int ci, i, j
    with nogil:
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    outv[ci, i, j] = 0.25 * (
                        xv[ci, 2 * i, 2 * j] + xv[ci, 2 * i, 2 * j + 1]
                        + xv[ci, 2 * i + 1, 2 * j] + xv[ci, 2 * i + 1, 2 * j + 1])
    return out_arr


def avgpool2_backward(cnp.ndarray gout, int h, int w):
    cdef int c = gout.shape[0], ho = gout.shape[1], wo = gout.shape[2]
    gx_arr = np.empty((c, h, w))
    cdef double[:, :, ::1] gv = gout, gxv = gx_arr
    cdef int ci, i, j
    cdef double g
    with nogil:
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    g = 0.25 * gv[ci, i, j]
                    gxv[ci, 2 * i, 2 * j] = g
                    gxv[ci, 2 * i, 2 * j + 1] = g
                    gxv[ci, 2 * i + 1, 2 * j] = g
                    gxv[ci, 2 * i + 1, 2 * j + 1] = g
    return gx_arr
