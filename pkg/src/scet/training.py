"""L1 training with Adam, cosine decay, and dihedral patch augmentation."""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels, imaging
from .checkpoint import save_checkpoint
from .tensor import NonFiniteError, Tensor, backward

log = logging.getLogger(__name__)


class DatasetError(Exception):
    """Training/evaluation data is missing or unreadable."""


class NumericalError(Exception):
    """Loss or gradients became NaN/Inf."""


class MissingGradientError(KeyError):
    pass


@dataclass
class TrainConfig:
    total_iters: int = 1000
    lr0: float = 2e-4
    lr_min: float = 1e-7
    weight_decay: float = 1e-4
    batch_size: int = 16
    gt_patch: int = 416
    scale: int = 4
    seed: int = 0
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    augment: bool = True
    log_every: int = 100
    ckpt_every: int = 0
    lr_dir: str | None = None

    def __post_init__(self):
        if self.total_iters < 0:
            raise ValueError("total_iters must be >= 0")
        if not self.lr_min < self.lr0 and self.lr0 > 0:
            raise ValueError(f"lr_min ({self.lr_min}) must be below lr0 ({self.lr0})")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be 2, 3 or 4, got {self.scale}")

    @property
    def patch(self):
        """GT patch rounded down to a multiple of the scale (416 -> 414 at x3)."""
        return self.gt_patch - self.gt_patch % self.scale


# ---------------------------------------------------------------------------
# objective and optimiser


def l1_loss(pred, target):
    """Mean absolute error over every element."""
    if not isinstance(target, Tensor):
        target = Tensor(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"l1_loss shapes differ: {pred.shape} vs {target.shape}")
    return (pred - target).abs().mean()


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_registry(cls, registry):
        return cls({n: np.zeros_like(p.data) for n, p in registry.items()},
                   {n: np.zeros_like(p.data) for n, p in registry.items()})


def decays(p):
    """Weight decay applies to kernels only; biases, norm affines and temperatures are exempt."""
    return p.ndim >= 2


def flush_subnormal(a):
    """Zero the subnormal entries of ``a`` in place (signed zeros are kept).

    Weight decay drives kernels with vanishing gradients towards zero, and
    once they sit in the subnormal range BLAS slows down several-fold.
    """
    tiny = np.finfo(a.dtype).tiny
    a[(np.abs(a) < tiny) & (a != 0)] = 0
    return a


def adam_step(registry, state, lr_t, config):
    """One Adam update with coupled L2 weight decay; clears gradients afterwards.

    Subnormal parameters and moments are flushed to zero after the update.
    """
    missing = [n for n, p in registry.items() if p.grad is None]
    if missing:
        raise MissingGradientError(f"no gradient for parameter {missing[0]!r}")
    b1, b2 = config.betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in registry.items():
        g = p.grad
        if config.weight_decay and decays(p):
            g = g + config.weight_decay * p.data
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if lr_t:  # x - 0 would still flip -0.0 to +0.0
            p.data -= (lr_t * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)).astype(p.dtype, copy=False)
            flush_subnormal(p.data)
        flush_subnormal(m)
        flush_subnormal(v)
        p.grad = None


def cosine_lr(t, total, lr0, lr_min):
    if total <= 0 or t >= total:
        return lr_min
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * t / total))


# ---------------------------------------------------------------------------
# data


@dataclass
class SamplePair:
    lr: np.ndarray  # (3, p/s, p/s)
    hr: np.ndarray  # (3, p, p)
    origin: tuple = (0, 0)  # HR (row, col) of the crop


def sample_patch(hr, lr, gt_patch, s, rng):
    """Aligned random crop; ``hr``/``lr`` are HxWx3 float images with ``lr`` = ``hr`` / s."""
    hh, hw = hr.shape[:2]
    if gt_patch % s:
        raise ValueError(f"patch {gt_patch} not divisible by scale {s}")
    if lr.shape[0] * s != hh or lr.shape[1] * s != hw:
        raise ValueError(f"LR {lr.shape[:2]} is not HR {hr.shape[:2]} / {s}")
    if hh < gt_patch or hw < gt_patch:
        raise ValueError(f"image {hh}x{hw} smaller than patch {gt_patch}")
    lp = gt_patch // s
    ly = int(rng.integers(0, lr.shape[0] - lp + 1))
    lx = int(rng.integers(0, lr.shape[1] - lp + 1))
    hy, hx = ly * s, lx * s
    return SamplePair(
        lr=np.ascontiguousarray(lr[ly:ly + lp, lx:lx + lp].transpose(2, 0, 1)),
        hr=np.ascontiguousarray(hr[hy:hy + gt_patch, hx:hx + gt_patch].transpose(2, 0, 1)),
        origin=(hy, hx),
    )


def dihedral(arr, k):
    """Apply transform ``k`` in 0..7 to a CHW array: ``k % 4`` quarter turns, then a mirror if ``k >= 4``."""
    out = np.rot90(arr, k % 4, axes=(1, 2))
    if k >= 4:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out)


def inverse_dihedral(arr, k):
    out = arr[:, :, ::-1] if k >= 4 else arr
    return np.ascontiguousarray(np.rot90(out, -(k % 4), axes=(1, 2)))


def augment(pair, rng, k=None):
    if k is None:
        k = int(rng.integers(8))
    return SamplePair(dihedral(pair.lr, k), dihedral(pair.hr, k), pair.origin)


def load_dataset(hr_dir, scale, lr_dir=None):
    """Load HR PNGs (cropped to scale multiples) with LR partners.

    LR images come from ``lr_dir`` when it holds a file of the same name, and
    are otherwise produced by bicubic degradation.
    """
    if not os.path.isdir(hr_dir):
        raise DatasetError(f"dataset directory not found: {hr_dir}")
    names = sorted(f for f in os.listdir(hr_dir) if f.lower().endswith(".png"))
    if not names:
        raise DatasetError(f"no PNG images in {hr_dir}")
    items = []
    for name in names:
        path = os.path.join(hr_dir, name)
        try:
            hr = imaging.crop_to_multiple(imaging.load_png(path), scale)
        except (OSError, ValueError) as exc:
            raise DatasetError(f"cannot read {path}: {exc}") from None
        lr_path = os.path.join(lr_dir, name) if lr_dir else None
        if lr_path and os.path.exists(lr_path):
            try:
                lr = imaging.load_png(lr_path)
            except (OSError, ValueError) as exc:
                raise DatasetError(f"cannot read {lr_path}: {exc}") from None
            if lr.shape[0] * scale != hr.shape[0] or lr.shape[1] * scale != hr.shape[1]:
                raise DatasetError(f"{lr_path}: extents do not match HR / {scale}")
        else:
            lr = imaging.degrade(hr, scale)
        items.append((name, imaging.to_float(hr).astype(np.float32), imaging.to_float(lr).astype(np.float32)))
    return items


# ---------------------------------------------------------------------------
# loop


@dataclass
class TraceRow:
    iter: int
    lr: float
    loss: float


def write_trace(trace, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "lr", "loss"])
        for r in trace:
            w.writerow([r.iter, repr(r.lr), repr(r.loss)])


def train_loop(model, dataset, config, out_dir=None):
    """Run ``config.total_iters`` Adam steps on L1 loss; returns ``(model, trace)``.

    ``dataset`` is a directory of HR PNGs or the list returned by
    :func:`load_dataset`. With ``out_dir`` set, the loss trace goes to
    ``loss.csv`` and checkpoints to ``iter_XXXXXXX.scet`` / ``final.scet``.
    Subnormals are flushed to zero (FTZ/DAZ) while the loop runs.
    """
    s = config.scale
    if s != model.config.scale:
        raise ValueError(f"train scale {s} differs from model scale {model.config.scale}")
    items = load_dataset(dataset, s, config.lr_dir) if isinstance(dataset, (str, os.PathLike)) else dataset
    if not items:
        raise DatasetError("empty dataset")
    smallest = min(min(hr.shape[:2]) for _, hr, _ in items)
    patch = config.patch
    if smallest < patch:
        patch = smallest - smallest % s
        log.warning("patch %d exceeds smallest image; using %d", config.patch, patch)

    rng = np.random.default_rng(config.seed)
    state = AdamState.for_registry(model.registry)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    trace = []
    # weights that decay towards zero otherwise feed subnormals to BLAS
    ftz_prev = _kernels.get_flush_denormal()
    _kernels.set_flush_denormal(True)
    try:
        for it in range(config.total_iters):
            lr_t = cosine_lr(it, config.total_iters, config.lr0, config.lr_min)
            pairs = []
            for _ in range(config.batch_size):
                _, hr, lr = items[int(rng.integers(len(items)))]
                pair = sample_patch(hr, lr, patch, s, rng)
                pairs.append(augment(pair, rng) if config.augment else pair)
            x = Tensor(np.stack([p.lr for p in pairs]), dtype=model.dtype)
            y = Tensor(np.stack([p.hr for p in pairs]), dtype=model.dtype)
            try:
                loss = l1_loss(model(x), y)
                backward(loss)
            except NonFiniteError as exc:
                raise NumericalError(f"iteration {it}: {exc}") from None
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(f"iteration {it}: loss is {value}")
            adam_step(model.registry, state, lr_t, config)
            trace.append(TraceRow(it, lr_t, value))
            if config.log_every and (it % config.log_every == 0 or it == config.total_iters - 1):
                log.info("iter %d lr %.3g loss %.6f", it, lr_t, value)
            if out_dir and config.ckpt_every and (it + 1) % config.ckpt_every == 0:
                save_checkpoint(model, os.path.join(out_dir, f"iter_{it + 1:07d}.scet"))
    finally:
        _kernels.set_flush_denormal(ftz_prev)
    if out_dir:
        save_checkpoint(model, os.path.join(out_dir, "final.scet"))
        write_trace(trace, os.path.join(out_dir, "loss.csv"))
    return model, trace


# ---------------------------------------------------------------------------
# presets

PRESETS = {
    # full-scale run: 416 GT patches, Adam 2e-4 with cosine decay, wd 1e-4
    "full": dict(num_blocks=16, channels=64, scale=4, total_iters=1_000_000, lr0=2e-4,
                  lr_min=1e-7, weight_decay=1e-4, batch_size=16, gt_patch=416, branch_gain=0.0),
    # single-CPU scale: 32x32 LR patches, small model
    "desk-tiny": dict(num_blocks=4, channels=32, scale=2, total_iters=20_000, lr0=2e-3,
                      lr_min=1e-6, weight_decay=1e-4, batch_size=8, gt_patch=64, branch_gain=0.0),
}


MODEL_PRESET_KEYS = ("num_blocks", "channels", "branch_gain")

CORPUS_SPLITS = ("mini", "train", "heldout")


def corpus_dir(split="mini"):
    """Path of a split of the bundled desk corpus (128x128 RGB tiles)."""
    if split not in CORPUS_SPLITS:
        raise ValueError(f"unknown corpus split {split!r}; choose from {CORPUS_SPLITS}")
    return os.path.join(os.path.dirname(os.path.abspath(__file__)), "data", "desk", split)


def preset_train_config(name, **overrides):
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    p = {k: v for k, v in PRESETS[name].items() if k not in MODEL_PRESET_KEYS}
    return replace(TrainConfig(**p), **overrides)
