"""Finite-difference gradient cases shared by the unit and acceptance suites.

Every case builds float64 inputs and returns ``grad_check``'s max relative
error.
"""
import numpy as np

from scet import functional as F
from scet.gradcheck import grad_check
from scet.model import (GDFNLayer, MDTALayer, ParamRegistry, SCETConfig, SCETModel, SCPABlock,
                        gdfn_forward, mdta_forward, scpa_forward)
from scet.tensor import Tensor, precision
from scet.training import l1_loss

TOL = 1e-4


def _leaf(rng, shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)


def _randomise(registry, rng, scale=0.5):
    for name, p in registry.items():
        if name.endswith("temperature"):
            p.data[...] = rng.uniform(0.5, 1.5, size=p.shape)
        elif name.endswith("norm.weight"):
            p.data[...] = 1.0 + 0.2 * rng.standard_normal(p.shape)
        else:
            p.data[...] = rng.standard_normal(p.shape) * scale


def _conv(cin, cout, k, stride, pad, groups, bias):
    def case(rng):
        x = _leaf(rng, (2, cin, 5, 5))
        w = _leaf(rng, (cout, cin // groups, k, k))
        b = _leaf(rng, (cout,)) if bias else None
        ins = [x, w] + ([b] if bias else [])
        return grad_check(lambda *t: F.conv2d(t[0], t[1], t[2] if bias else None, stride, pad, groups), ins)
    return case


def _unary(fn, scale=1.0):
    def case(rng):
        return grad_check(fn, [_leaf(rng, (2, 3, 4), scale)])
    return case


def _layer_norm(rng):
    x, g, b = _leaf(rng, (2, 5, 3, 3)), _leaf(rng, (5,)), _leaf(rng, (5,))
    return grad_check(lambda *t: F.layer_norm(*t, eps=1e-6), [x, g, b])


def _matmul(rng):
    return grad_check(F.matmul, [_leaf(rng, (2, 3, 4)), _leaf(rng, (2, 4, 5))])


def _pixel_shuffle(rng):
    return grad_check(lambda t: F.pixel_shuffle(t, 2), [_leaf(rng, (1, 8, 3, 2))])


def _l1(rng):
    pred = _leaf(rng, (2, 3, 4, 4))
    target = Tensor(pred.data + rng.choice([-1.0, 1.0], pred.shape) * rng.uniform(0.1, 1.0, pred.shape))
    return grad_check(lambda p: l1_loss(p, target), [pred])


def _block(build, forward, c=8):
    def case(rng):
        with precision(np.float64):
            reg = ParamRegistry()
            layer = build(reg, c)
            _randomise(reg, rng)
            x = _leaf(rng, (1, c, 4, 4))
            params = list(reg.values())
            return grad_check(lambda x_, *ps: forward(layer, x_), [x] + params)
    return case


def _scet(rng):
    model = SCETModel(SCETConfig(num_blocks=2, channels=8, scale=2), dtype=np.float64)
    _randomise(model.registry, rng, scale=0.3)
    x = _leaf(rng, (1, 3, 8, 8), 0.5)
    return grad_check(lambda x_, *ps: model(x_), [x] + model.parameters())


PRIMITIVES = {
    "conv pointwise": _conv(4, 3, 1, 1, 0, 1, True),
    "conv 3x3": _conv(3, 2, 3, 1, 1, 1, True),
    "conv 3x3 no bias": _conv(2, 3, 3, 1, 1, 1, False),
    "conv depthwise": _conv(3, 3, 3, 1, 1, 3, True),
    "conv grouped strided": _conv(4, 2, 3, 2, 1, 2, True),
    "sigmoid": _unary(F.sigmoid, 2.0),
    "gelu": _unary(F.gelu, 2.0),
    "softmax": _unary(F.softmax_lastdim, 2.0),
    "layer_norm": _layer_norm,
    "matmul": _matmul,
    "pixel_shuffle": _pixel_shuffle,
    "l1_loss": _l1,
}

COMPOSITES = {
    "SCPA block": _block(lambda reg, c: SCPABlock(reg, "b", c, dtype=np.float64), scpa_forward),
    "MDTA 1 head": _block(lambda reg, c: MDTALayer(reg, "m", c, 1, 1e-6, np.float64), mdta_forward),
    "MDTA 2 heads": _block(lambda reg, c: MDTALayer(reg, "m", c, 2, 1e-6, np.float64), mdta_forward),
    "GDFN": _block(lambda reg, c: GDFNLayer(reg, "g", c, 16, 1e-6, np.float64), gdfn_forward),
    "SCET d2 w8 x2": _scet,
}

ALL = {**PRIMITIVES, **COMPOSITES}


def run(name, seed=0):
    return ALL[name](np.random.default_rng(seed))
