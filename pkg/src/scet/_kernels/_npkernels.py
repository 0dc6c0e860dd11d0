"""Pure-numpy convolution kernels.

Reference backend, and the one used when the compiled extension is not
available. Every function here has a twin with the same signature in
``_ckernels.pyx``.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import ndtr

NAME = "python"
_INV_SQRT2PI = 0.3989422804014327


def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def im2col(x, kh, kw, pad, stride):
    """Unfold ``x`` (N, C, H, W) into columns (N, C*kh*kw, Ho*Wo)."""
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    win = sliding_window_view(_pad(x, pad), (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # (N, C, Ho, Wo, kh, kw) -> (N, C, kh, kw, Ho, Wo)
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))
    return cols.reshape(n, c * kh * kw, ho * wo)


def col2im(cols, c, h, w, kh, kw, pad, stride):
    """Adjoint of :func:`im2col`: scatter-add columns back into (N, C, H, W)."""
    n = cols.shape[0]
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(out)


def dw_conv_forward(x, weight, pad):
    """Depthwise cross-correlation, stride 1. ``weight`` is (C, kh, kw)."""
    n, c, h, w = x.shape
    _, kh, kw = weight.shape
    ho = h + 2 * pad - kh + 1
    wo = w + 2 * pad - kw + 1
    xp = _pad(x, pad)
    out = np.zeros((n, c, ho, wo), dtype=np.result_type(x, weight))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i:i + ho, j:j + wo] * weight[None, :, i, j, None, None]
    return out


def dw_conv_backward(x, weight, grad_out, pad):
    """Gradients of :func:`dw_conv_forward` w.r.t. input and weight."""
    n, c, h, w = x.shape
    _, kh, kw = weight.shape
    ho, wo = grad_out.shape[2:]
    xp = _pad(x, pad)
    gx = np.zeros_like(xp, dtype=np.result_type(x, weight, grad_out))
    gw = np.empty(weight.shape, dtype=gx.dtype)
    for i in range(kh):
        for j in range(kw):
            gw[:, i, j] = np.einsum("nchw,nchw->c", grad_out, xp[:, :, i:i + ho, j:j + wo])
            gx[:, :, i:i + ho, j:j + wo] += grad_out * weight[None, :, i, j, None, None]
    if pad:
        gx = gx[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(gx), gw


def gelu_forward(x):
    """Exact GELU on a flat array; returns ``(x * Phi(x), Phi(x))``."""
    cdf = ndtr(x).astype(x.dtype, copy=False)
    return x * cdf, cdf


def gelu_backward(x, cdf, grad_out):
    pdf = np.exp(-0.5 * x * x) * x.dtype.type(_INV_SQRT2PI)
    return grad_out * (cdf + x * pdf)
