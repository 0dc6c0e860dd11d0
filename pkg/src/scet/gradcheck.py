"""Central finite-difference check of analytic gradients."""
import numpy as np

from .tensor import Tensor, backward, no_grad


def _scalarise(out, rng):
    if out.size == 1:
        return out
    # fixed random projection so every output element contributes
    proj = Tensor(rng.standard_normal(out.shape), dtype=out.dtype)
    return (out * proj).sum()


def grad_check(fn, inputs, eps=1e-5, seed=0):
    """Max relative error between backprop and central differences.

    ``fn`` maps the tensors in ``inputs`` to a tensor; non-scalar outputs are
    reduced with a fixed random projection. Error per element is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``. Only inputs with
    ``requires_grad`` are perturbed. Use 64-bit inputs.
    """
    inputs = list(inputs)
    targets = [t for t in inputs if t.requires_grad]
    for t in targets:
        t.zero_grad()
    rng_seed = np.random.default_rng(seed).integers(1 << 31)

    def objective():
        return _scalarise(fn(*inputs), np.random.default_rng(rng_seed))

    backward(objective())
    worst = 0.0
    with no_grad():
        for t in targets:
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            ga = analytic.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = objective().item()
                flat[i] = orig - eps
                fm = objective().item()
                flat[i] = orig
                num = (fp - fm) / (2 * eps)
                err = abs(ga[i] - num) / max(1.0, abs(ga[i]), abs(num))
                worst = max(worst, err)
    return worst
