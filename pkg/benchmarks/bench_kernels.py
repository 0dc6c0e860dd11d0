"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat N] [--step]

Each kernel is timed on a desk-tiny sized input (batch 8, 32 channels,
32x32 LR patches); ``--step`` also times one full forward/backward pass of
the desk-tiny model under each backend.
"""
import argparse
import timeit

import numpy as np

from scet import _kernels
from scet.model import SCETConfig, SCETModel
from scet.tensor import Tensor, backward
from scet.training import l1_loss


def kernel_cases(rng, dtype=np.float32):
    x = rng.standard_normal((8, 32, 32, 32)).astype(dtype)
    cols = rng.standard_normal((8, 32 * 9, 32 * 32)).astype(dtype)
    w = rng.standard_normal((32, 3, 3)).astype(dtype)
    flat = rng.standard_normal(8 * 64 * 32 * 32).astype(dtype)
    _, cdf = _kernels.python_backend.gelu_forward(flat)
    return {
        "im2col 3x3": lambda k: k.im2col(x, 3, 3, 1, 1),
        "col2im 3x3": lambda k: k.col2im(cols, 32, 32, 32, 3, 3, 1, 1),
        "depthwise fwd": lambda k: k.dw_conv_forward(x, w, 1),
        "depthwise bwd": lambda k: k.dw_conv_backward(x, w, x, 1),
        "gelu fwd": lambda k: k.gelu_forward(flat),
        "gelu bwd": lambda k: k.gelu_backward(flat, cdf, flat),
    }


def best_ms(fn, repeat):
    return 1e3 * min(timeit.repeat(fn, number=1, repeat=repeat))


def train_step(model, x, y):
    loss = l1_loss(model(x), y)
    backward(loss)
    model.zero_grad()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--step", action="store_true", help="also time a full desk-tiny training step")
    args = ap.parse_args()
    if _kernels.compiled_backend is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")

    rng = np.random.default_rng(0)
    backends = {"python": _kernels.python_backend, "cython": _kernels.compiled_backend}
    print(f"{'kernel':<16}{'python ms':>12}{'cython ms':>12}{'speed-up':>10}")
    for name, fn in kernel_cases(rng).items():
        t = {b: best_ms(lambda k=k: fn(k), args.repeat) for b, k in backends.items()}
        print(f"{name:<16}{t['python']:>12.2f}{t['cython']:>12.2f}{t['python'] / t['cython']:>9.2f}x")

    if args.step:
        model = SCETModel(SCETConfig(num_blocks=4, channels=32, scale=2), seed=0, branch_gain=0.0)
        x = Tensor(rng.random((8, 3, 32, 32)).astype(np.float32))
        y = Tensor(rng.random((8, 3, 64, 64)).astype(np.float32))
        t = {}
        for b in backends:
            prev = _kernels.use(b)
            try:
                t[b] = best_ms(lambda: train_step(model, x, y), max(3, args.repeat // 2))
            finally:
                _kernels.use(prev)
        print(f"{'train step':<16}{t['python']:>12.1f}{t['cython']:>12.1f}{t['python'] / t['cython']:>9.2f}x")


if __name__ == "__main__":
    main()
