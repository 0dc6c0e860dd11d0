"""Lightweight super-resolution network on a small numpy autodiff core.

Subpackages and modules:

``tensor`` / ``functional``
    Rank-4 tensors with reverse-mode autodiff and the differentiable primitives.
``model`` / ``checkpoint``
    The network, its parameter registry and the binary checkpoint format.
``complexity``
    Parameter and Multi-Adds accounting.
``imaging``
    PNG I/O, bicubic degradation, Y-channel PSNR/SSIM.
``training``
    L1 objective, Adam with cosine decay, patch sampling and the training loop.
``cli``
    The ``scet`` command.
"""
from ._kernels import BACKEND
from .checkpoint import load_checkpoint, save_checkpoint
from .complexity import count_macs, count_multiadds, count_params, report
from .model import SCETConfig, SCETModel, init_weights
from .tensor import Tensor, backward, no_grad, precision

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "SCETConfig", "SCETModel", "Tensor", "backward", "count_macs", "count_multiadds",
    "count_params", "init_weights", "load_checkpoint", "no_grad", "precision", "report",
    "save_checkpoint",
]
