# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels (same contract as ``_npkernels``)."""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport erf, erff
from libc.string cimport memcpy, memset

cnp.import_array()

NAME = "cython"

cdef extern from *:
    """
    #if defined(__SSE2__) || defined(_M_X64)
    #include <xmmintrin.h>
    #define SCET_FTZ_BITS 0x8040u  /* flush-to-zero | denormals-are-zero */
    static int scet_get_ftz(void) { return (_mm_getcsr() & SCET_FTZ_BITS) == SCET_FTZ_BITS; }
    static int scet_set_ftz(int on) {
        unsigned int csr = _mm_getcsr();
        _mm_setcsr(on ? (csr | SCET_FTZ_BITS) : (csr & ~SCET_FTZ_BITS));
        return 1;
    }
    #else
    static int scet_get_ftz(void) { return 0; }
    static int scet_set_ftz(int on) { return 0; }
    #endif
    """
    int scet_get_ftz()
    int scet_set_ftz(int on)


def get_flush_denormal():
    """Whether subnormal floats are flushed to zero on the calling thread."""
    return bool(scet_get_ftz())


def set_flush_denormal(bint on):
    """Set FTZ/DAZ on the calling thread; returns False where the CPU has no such mode."""
    return bool(scet_set_ftz(on))


def im2col(floating[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t pad, Py_ssize_t stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - kw) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((n, c * kh * kw, ho * wo), dtype=dtype)
    cdef floating[:, :, ::1] cols = out
    cdef Py_ssize_t b, ch, i, j, oy, ox, iy, row, lo, hi, off
    cdef floating* dst
    cdef const floating* src
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        off = j - pad
                        # ox range with ix = ox*stride + off inside [0, w)
                        lo = 0
                        while lo < wo and lo * stride + off < 0:
                            lo += 1
                        hi = wo
                        while hi > lo and (hi - 1) * stride + off >= w:
                            hi -= 1
                        for oy in range(ho):
                            dst = &cols[b, row, oy * wo]
                            iy = oy * stride - pad + i
                            if iy < 0 or iy >= h:
                                memset(dst, 0, wo * sizeof(floating))
                                continue
                            src = &x[b, ch, iy, 0]
                            for ox in range(lo):
                                dst[ox] = 0
                            if stride == 1:
                                if hi > lo:
                                    memcpy(dst + lo, src + lo + off, (hi - lo) * sizeof(floating))
                            else:
                                for ox in range(lo, hi):
                                    dst[ox] = src[ox * stride + off]
                            for ox in range(hi, wo):
                                dst[ox] = 0
    return out


def col2im(floating[:, :, ::1] cols, Py_ssize_t c, Py_ssize_t h, Py_ssize_t w,
           Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t pad, Py_ssize_t stride):
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - kw) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    res = np.zeros((n, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] out = res
    cdef Py_ssize_t b, ch, i, j, oy, ox, iy, ix, row, lo, hi
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        lo = 0
                        while lo < wo and lo * stride - pad + j < 0:
                            lo += 1
                        hi = wo
                        while hi > lo and (hi - 1) * stride - pad + j >= w:
                            hi -= 1
                        for oy in range(ho):
                            iy = oy * stride - pad + i
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(lo, hi):
                                ix = ox * stride - pad + j
                                out[b, ch, iy, ix] += cols[b, row, oy * wo + ox]
    return res


def dw_conv_forward(floating[:, :, :, ::1] x, floating[:, :, ::1] weight, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t kh = weight.shape[1], kw = weight.shape[2]
    cdef Py_ssize_t ho = h + 2 * pad - kh + 1
    cdef Py_ssize_t wo = w + 2 * pad - kw + 1
    dtype = np.float32 if floating is float else np.float64
    res = np.zeros((n, c, ho, wo), dtype=dtype)
    cdef floating[:, :, :, ::1] out = res
    cdef Py_ssize_t b, ch, i, j, oy, ox, iy, lo, hi, off
    cdef floating wv
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        wv = weight[ch, i, j]
                        off = j - pad
                        lo = 0 if off >= 0 else -off
                        hi = wo if wo + off <= w else w - off
                        for oy in range(ho):
                            iy = oy - pad + i
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(lo, hi):
                                out[b, ch, oy, ox] += wv * x[b, ch, iy, ox + off]
    return res


def dw_conv_backward(floating[:, :, :, ::1] x, floating[:, :, ::1] weight,
                     floating[:, :, :, ::1] grad_out, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t kh = weight.shape[1], kw = weight.shape[2]
    cdef Py_ssize_t ho = grad_out.shape[2], wo = grad_out.shape[3]
    dtype = np.float32 if floating is float else np.float64
    gx_arr = np.zeros((n, c, h, w), dtype=dtype)
    gw_arr = np.zeros((c, kh, kw), dtype=dtype)
    cdef floating[:, :, :, ::1] gx = gx_arr
    cdef floating[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t b, ch, i, j, oy, ox, iy, lo, hi, off
    cdef floating wv, acc, g
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        wv = weight[ch, i, j]
                        off = j - pad
                        lo = 0 if off >= 0 else -off
                        hi = wo if wo + off <= w else w - off
                        acc = 0
                        for oy in range(ho):
                            iy = oy - pad + i
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(lo, hi):
                                g = grad_out[b, ch, oy, ox]
                                acc = acc + g * x[b, ch, iy, ox + off]
                                gx[b, ch, iy, ox + off] += g * wv
                        gw[ch, i, j] += acc
    return gx_arr, gw_arr


cdef double _INV_SQRT2 = 0.7071067811865476


def gelu_forward(floating[::1] x):
    """Exact GELU on a flat array; returns ``(x * Phi(x), Phi(x))``."""
    cdef Py_ssize_t i, n = x.shape[0]
    dtype = np.float32 if floating is float else np.float64
    res = np.empty(n, dtype=dtype)
    cdf_arr = np.empty(n, dtype=dtype)
    cdef floating[::1] out = res
    cdef floating[::1] cdf = cdf_arr
    cdef floating p
    with nogil:
        for i in range(n):
            if floating is float:
                p = 0.5 * (1.0 + erff(x[i] * <float>_INV_SQRT2))
            else:
                p = 0.5 * (1.0 + erf(x[i] * _INV_SQRT2))
            cdf[i] = p
            out[i] = x[i] * p
    return res, cdf_arr


# numpy's SIMD exp beats a scalar libm loop here
from ._npkernels import gelu_backward  # noqa: E402
