"""Differentiable primitives the network is assembled from."""
from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np
from scipy.special import expit

from . import _kernels
from .tensor import Tensor, concat  # noqa: F401  (re-exported)

_trace = threading.local()


@contextmanager
def trace_macs():
    """Count multiply-accumulates executed by conv2d/matmul on this thread.

    Yields a dict with a running ``"total"`` and a per-op ``"ops"`` list of
    ``(kind, macs)`` entries.
    """
    prev = getattr(_trace, "counter", None)
    counter = {"total": 0, "ops": []}
    _trace.counter = counter
    try:
        yield counter
    finally:
        _trace.counter = prev


def _tally(kind, macs):
    counter = getattr(_trace, "counter", None)
    if counter is not None:
        counter["total"] += int(macs)
        counter["ops"].append((kind, int(macs)))


# ---------------------------------------------------------------------------
# convolution


def conv2d(x, weight, bias=None, stride=1, padding=0, groups=1):
    """Grouped 2-D cross-correlation over NCHW input.

    ``weight`` is (Cout, Cin/groups, kh, kw). Output extent per axis is
    ``(H + 2*padding - k) // stride + 1``.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    if cin % groups or cout % groups:
        raise ValueError(f"channels (in={cin}, out={cout}) not divisible by groups={groups}")
    if cin_g != cin // groups:
        raise ValueError(
            f"weight expects {cin_g} input channels per group but input has "
            f"{cin} channels over {groups} groups ({cin // groups} per group)"
        )
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} does not match {cout} output channels")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {h}x{w}")

    xd = x.data
    wd = weight.data
    if xd.dtype != wd.dtype:
        dt = np.result_type(xd, wd)
        xd, wd = xd.astype(dt), wd.astype(dt)
    _tally("conv", n * cout * cin_g * kh * kw * ho * wo)

    if groups == 1 and kh == kw == 1 and stride == 1 and padding == 0:
        out, bw = _conv_pointwise(xd, wd)
    elif groups == cin == cout and stride == 1:
        out, bw = _conv_depthwise(xd, wd, padding)
    else:
        out, bw = _conv_im2col(xd, wd, stride, padding, groups, ho, wo)

    if bias is not None:
        out += bias.data.reshape(1, cout, 1, 1)
        parents = (x, weight, bias)

        def backward(g):
            gx, gw = bw(g)
            return gx, gw, g.sum(axis=(0, 2, 3))
    else:
        parents = (x, weight)
        backward = bw
    return Tensor._result(out, parents, backward, "conv2d")


def _conv_pointwise(x, w):
    n, cin, h, wd = x.shape
    cout = w.shape[0]
    w2 = w.reshape(cout, cin)
    xf = x.reshape(n, cin, h * wd)
    out = np.matmul(w2, xf).reshape(n, cout, h, wd)

    def bw(g):
        gf = g.reshape(n, cout, h * wd)
        gx = np.matmul(w2.T, gf).reshape(x.shape)
        gw = np.tensordot(gf, xf, axes=([0, 2], [0, 2])).reshape(w.shape)
        return gx, gw

    return out, bw


def _conv_depthwise(x, w, pad):
    k = _kernels.backend
    w3 = np.ascontiguousarray(w.reshape(w.shape[0], w.shape[2], w.shape[3]))
    xc = np.ascontiguousarray(x)
    out = k.dw_conv_forward(xc, w3, pad)

    def bw(g):
        gx, gw = _kernels.backend.dw_conv_backward(xc, w3, np.ascontiguousarray(g, dtype=xc.dtype), pad)
        return gx, gw.reshape(w.shape)

    return out, bw


def _conv_im2col(x, w, stride, pad, groups, ho, wo):
    k = _kernels.backend
    n, cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    cout_g = cout // groups
    cols = k.im2col(np.ascontiguousarray(x), kh, kw, pad, stride)  # (N, Cin*kh*kw, P)
    rows = cin_g * kh * kw
    colsg = cols.reshape(n, groups, rows, ho * wo)
    wg = w.reshape(groups, cout_g, rows)
    out = np.matmul(wg[None], colsg).reshape(n, cout, ho, wo)

    def bw(g):
        gg = g.reshape(n, groups, cout_g, ho * wo)
        gw = np.matmul(gg, colsg.transpose(0, 1, 3, 2)).sum(axis=0).reshape(w.shape)
        gcols = np.matmul(wg.transpose(0, 2, 1)[None], gg).reshape(n, cin * kh * kw, ho * wo)
        gx = _kernels.backend.col2im(np.ascontiguousarray(gcols), cin, h, wd, kh, kw, pad, stride)
        return gx, gw

    return out, bw


# ---------------------------------------------------------------------------
# activations and normalisation


def sigmoid(x):
    y = expit(x.data)
    return Tensor._result(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def gelu(x):
    """Exact GELU, x * Phi(x)."""
    xd = np.ascontiguousarray(x.data)
    k = _kernels.backend
    y, cdf = k.gelu_forward(xd.reshape(-1))

    def bw(g):
        g = np.ascontiguousarray(g, dtype=xd.dtype)
        return (k.gelu_backward(xd.reshape(-1), cdf, g.reshape(-1)).reshape(xd.shape),)

    return Tensor._result(y.reshape(xd.shape), (x,), bw, "gelu")


def softmax_lastdim(x):
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._result(y, (x,), bw, "softmax")


def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalise each pixel's channel vector of an NCHW tensor, then apply per-channel affine."""
    if x.ndim != 4:
        raise ValueError("layer_norm expects NCHW input")
    c = x.shape[1]
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gv = gamma.data.reshape(1, c, 1, 1)
    out = xhat * gv + beta.data.reshape(1, c, 1, 1)

    def bw(g):
        gxhat = g * gv
        gx = inv * (gxhat - gxhat.mean(axis=1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=1, keepdims=True))
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return Tensor._result(out, (x, gamma, beta), bw, "layer_norm")


# ---------------------------------------------------------------------------
# products and rearrangements


def matmul(a, b):
    """Batched matrix product over the last two axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands need at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    if a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul batch extents differ: {a.shape[:-2]} vs {b.shape[:-2]}")
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)
    _tally("matmul", out.size * a.shape[-1])

    def bw(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(ad, -1, -2), g) if b.requires_grad else None
        return ga, gb

    return Tensor._result(out, (a, b), bw, "matmul")


def _shuffle(x, r):
    n, c, h, w = x.shape
    if c % (r * r):
        raise ValueError(f"channel extent {c} not divisible by r^2 = {r * r}")
    co = c // (r * r)
    return x.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)


def _unshuffle(x, r):
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ValueError(f"spatial extent {h}x{w} not divisible by r = {r}")
    return x.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h // r, w // r)


def pixel_shuffle(x, r):
    """(N, C*r^2, H, W) -> (N, C, rH, rW); out[n, c, rh+i, rw+j] = x[n, c*r^2 + i*r + j, h, w]."""
    if x.ndim != 4:
        raise ValueError("pixel_shuffle expects NCHW input")
    out = _shuffle(x.data, r)
    return Tensor._result(out, (x,), lambda g: (_unshuffle(g, r),), "pixel_shuffle")


def pixel_unshuffle(x, r):
    if x.ndim != 4:
        raise ValueError("pixel_unshuffle expects NCHW input")
    out = _unshuffle(x.data, r)
    return Tensor._result(out, (x,), lambda g: (_shuffle(g, r),), "pixel_unshuffle")
