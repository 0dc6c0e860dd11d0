"""Image I/O, bicubic degradation and Y-channel PSNR/SSIM.

Images are numpy arrays in HWC layout. ``uint8`` arrays are the on-disk 8-bit
sRGB form; float arrays hold samples in [0, 1]. All resampling and metric
arithmetic is done in float64.
"""
from __future__ import annotations

import struct
import zlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

PSNR_CAP = 100.0

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


class ImageFormatError(ValueError):
    """File is not a well-formed PNG."""


class UnsupportedDepthError(ValueError):
    """PNG sample depth other than 8 bits."""


# ---------------------------------------------------------------------------
# conversions


def to_float(img):
    if img.dtype != np.uint8:
        raise TypeError(f"expected uint8 image, got {img.dtype}")
    return img.astype(np.float64) / 255.0


def to_uint8(img):
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def rgb_to_ycbcr_y(img):
    """Luma of BT.601 studio-swing YCbCr for RGB in [0, 1]; result lies in [16/255, 235/255]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {img.shape}")
    return (16.0 + img @ np.array([65.481, 128.553, 24.966])) / 255.0


def y_plane(img_u8):
    """Y channel of an 8-bit image on the 8-bit scale [16, 235] (not rounded)."""
    return rgb_to_ycbcr_y(to_float(img_u8)) * 255.0


def crop_to_multiple(img, s):
    """Centre-crop so both extents are divisible by ``s``."""
    h, w = img.shape[:2]
    nh, nw = h - h % s, w - w % s
    top, left = (h - nh) // 2, (w - nw) // 2
    return img[top:top + nh, left:left + nw]


# ---------------------------------------------------------------------------
# bicubic resampling


def cubic(x):
    """Keys cubic convolution kernel with a = -0.5."""
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    return ((1.5 * ax3 - 2.5 * ax2 + 1.0) * (ax <= 1)
            + (-0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0) * ((ax > 1) & (ax <= 2)))


def resize_taps(n_in, n_out):
    """Source indices (clamped) and normalised weights for each output sample.

    On downscaling the kernel is stretched by the inverse scale, which
    low-pass filters the input.
    """
    scale = n_out / n_in
    width = 4.0 / scale if scale < 1 else 4.0
    u = (np.arange(n_out) + 0.5) / scale - 0.5
    left = np.floor(u - width / 2)
    taps = int(np.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    dist = u[:, None] - idx
    wts = scale * cubic(scale * dist) if scale < 1 else cubic(dist)
    wts = wts / wts.sum(axis=1, keepdims=True)
    return np.clip(idx, 0, n_in - 1).astype(np.intp), wts


def resize_matrix(n_in, n_out):
    idx, wts = resize_taps(n_in, n_out)
    mat = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), idx.shape[1])
    np.add.at(mat, (rows, idx.ravel()), wts.ravel())
    return mat


def bicubic_resize(img, out_h, out_w):
    """Separable antialiased bicubic resize of an HxW or HxWxC float image, clamped to [0, 1]."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output extents must be >= 1")
    img = np.asarray(img, dtype=np.float64)
    rh = resize_matrix(img.shape[0], out_h)
    rw = resize_matrix(img.shape[1], out_w)
    out = np.tensordot(rh, img, axes=(1, 0))
    out = np.moveaxis(np.tensordot(rw, out, axes=(1, 1)), 0, 1)
    return np.clip(out, 0.0, 1.0)


def degrade(hr_u8, s):
    """Bicubic x``s`` downscale of a scale-divisible 8-bit image, requantised to 8 bits."""
    h, w = hr_u8.shape[:2]
    if h % s or w % s:
        raise ValueError(f"image {h}x{w} not divisible by scale {s}")
    return to_uint8(bicubic_resize(to_float(hr_u8), h // s, w // s))


def upscale(lr_u8, s):
    h, w = lr_u8.shape[:2]
    return to_uint8(bicubic_resize(to_float(lr_u8), h * s, w * s))


# ---------------------------------------------------------------------------
# metrics


def _shave(plane, shave):
    if shave == 0:
        return plane
    return plane[shave:-shave, shave:-shave]


def psnr_planes(ref, test, shave=0):
    ref = _shave(np.asarray(ref, dtype=np.float64), shave)
    test = _shave(np.asarray(test, dtype=np.float64), shave)
    if ref.shape != test.shape:
        raise ValueError(f"plane extents differ: {ref.shape} vs {test.shape}")
    mse = np.mean((ref - test) ** 2)
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(255.0 ** 2 / mse))


def psnr_y(ref, test, shave):
    """PSNR in dB between the Y planes of two 8-bit images, ignoring a ``shave``-wide border."""
    if ref.shape != test.shape:
        raise ValueError(f"image extents differ: {ref.shape} vs {test.shape}")
    return psnr_planes(y_plane(ref), y_plane(test), shave)


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(plane, g):
    k = g.size
    rows = sliding_window_view(plane, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def ssim_planes(ref, test, shave=0, size=11, sigma=1.5, k1=0.01, k2=0.03, data_range=255.0):
    a = _shave(np.asarray(ref, dtype=np.float64), shave)
    b = _shave(np.asarray(test, dtype=np.float64), shave)
    if a.shape != b.shape:
        raise ValueError(f"plane extents differ: {a.shape} vs {b.shape}")
    if a.shape[0] < size or a.shape[1] < size:
        raise ValueError(f"image {a.shape[0]}x{a.shape[1]} after shaving is smaller than the {size}x{size} window")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    g = gaussian_window(size, sigma)
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim_y(ref, test, shave):
    """Mean SSIM of the Y planes (11x11 Gaussian window, sigma 1.5, L = 255)."""
    if ref.shape != test.shape:
        raise ValueError(f"image extents differ: {ref.shape} vs {test.shape}")
    return ssim_planes(y_plane(ref), y_plane(test), shave)


# ---------------------------------------------------------------------------
# PNG I/O


def _png_header(raw, path):
    if raw[:8] != _PNG_SIG:
        raise ImageFormatError(f"{path}: not a PNG file")
    if len(raw) < 33 or raw[12:16] != b"IHDR":
        raise ImageFormatError(f"{path}: missing IHDR chunk")
    (length,) = struct.unpack(">I", raw[8:12])
    ihdr = raw[16:16 + length]
    (crc,) = struct.unpack(">I", raw[16 + length:20 + length])
    if length != 13 or zlib.crc32(raw[12:16 + length]) != crc:
        raise ImageFormatError(f"{path}: corrupt IHDR chunk")
    width, height, depth, color_type = struct.unpack(">IIBB", ihdr[:10])
    return width, height, depth, color_type


def load_png(path):
    """Read an 8-bit PNG as an HxWx3 uint8 array (grey is replicated, alpha dropped)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    _, _, depth, color_type = _png_header(raw, path)
    if depth != 8 and not (color_type == 3 and depth < 8):
        raise UnsupportedDepthError(f"{path}: {depth}-bit samples are not supported")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "LA"):
                arr = np.asarray(im.convert("L"))
                return np.repeat(arr[:, :, None], 3, axis=2)
            return np.asarray(im.convert("RGB")).copy()
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageFormatError(f"{path}: {exc}") from None


def save_png(img, path):
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"save_png expects an HxWx3 uint8 array, got {img.dtype} {img.shape}")
    Image.fromarray(img, "RGB").save(path, format="PNG")
