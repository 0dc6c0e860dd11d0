"""The SCET network: SCPA backbone, channel-attention transformer, upsamplers.

Data flow for an LR batch ``x`` of shape (N, 3, h, w)::

    f0   = head(x)                       3x3 conv, 3 -> w
    fsc  = body(f0)                      d SCPA blocks in sequence
    fout = gdfn(mdta(fsc))               efficient transformer (optional)
    sr   = up1(fout) + up2(f0)           both end in pixel_shuffle(s)

``up1`` is a 3x3 w->w conv followed by a 1x1 w->3s^2 projection; ``up2`` (the
global residual path) is a single 1x1 w->3s^2 projection.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import functional as F
from .tensor import Tensor, concat


@dataclass(frozen=True)
class SCETConfig:
    num_blocks: int = 16
    channels: int = 64
    scale: int = 4
    mdta_heads: int = 1
    gdfn_expansion: float = 2.0
    ln_eps: float = 1e-6
    use_transformer: bool = True
    scpa_bias: bool = False

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ValueError(f"num_blocks must be >= 1, got {self.num_blocks}")
        if self.channels < 2 or self.channels % 2:
            raise ValueError(f"channels must be even (SCPA halves them), got {self.channels}")
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.mdta_heads < 1 or self.channels % self.mdta_heads:
            raise ValueError(f"channels {self.channels} not divisible by mdta_heads {self.mdta_heads}")
        if not self.gdfn_expansion > 0:
            raise ValueError("gdfn_expansion must be positive")
        if not self.ln_eps > 0:
            raise ValueError("ln_eps must be positive")

    @property
    def hidden(self):
        """GDFN hidden width, ceil(expansion * channels)."""
        return math.ceil(round(self.gdfn_expansion * self.channels, 9))

    def as_dict(self):
        return asdict(self)


class ParamRegistry:
    """Ordered, uniquely named set of learnable tensors."""

    def __init__(self):
        self._params = {}

    def add(self, name, tensor):
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def names(self):
        return list(self._params)

    def numel(self, prefix=None):
        return sum(
            t.size for n, t in self._params.items()
            if prefix is None or n == prefix or n.startswith(prefix + ".")
        )

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None


# ---------------------------------------------------------------------------
# layers


class Conv2d:
    def __init__(self, reg, name, cin, cout, k, groups=1, bias=True, dtype=np.float32):
        self.cin, self.cout, self.k, self.groups = cin, cout, k, groups
        self.weight_name = f"{name}.weight"
        self.padding = (k - 1) // 2
        self.weight = reg.add(f"{name}.weight", _param((cout, cin // groups, k, k), dtype))
        self.bias = reg.add(f"{name}.bias", _param((cout,), dtype)) if bias else None

    def __call__(self, x):
        return F.conv2d(x, self.weight, self.bias, 1, self.padding, self.groups)

    def macs(self, h, w):
        return self.cout * (self.cin // self.groups) * self.k * self.k * h * w


class LayerNorm:
    def __init__(self, reg, name, c, eps, dtype=np.float32):
        self.eps = eps
        self.weight = reg.add(f"{name}.weight", _param((c,), dtype))
        self.bias = reg.add(f"{name}.bias", _param((c,), dtype))

    def __call__(self, x):
        return F.layer_norm(x, self.weight, self.bias, self.eps)


def _param(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _check_channels(x, c, what):
    if x.ndim != 4 or x.shape[1] != c:
        raise ValueError(f"{what} expects (N, {c}, H, W) input, got {x.shape}")


class SCPABlock:
    """Two-branch block: pixel-attention branch and plain 3x3 branch, fused by 1x1 conv."""

    def __init__(self, reg, name, w, bias=False, dtype=np.float32):
        h = w // 2
        self.name = name
        self.channels = w
        self.pconv_upper = Conv2d(reg, f"{name}.pconv_upper", w, h, 1, bias=bias, dtype=dtype)
        self.pconv_lower = Conv2d(reg, f"{name}.pconv_lower", w, h, 1, bias=bias, dtype=dtype)
        self.attn_conv = Conv2d(reg, f"{name}.attn_conv", h, h, 3, bias=bias, dtype=dtype)
        self.attn_gate = Conv2d(reg, f"{name}.attn_gate", h, h, 1, bias=bias, dtype=dtype)
        self.upper_conv = Conv2d(reg, f"{name}.upper_conv", h, h, 3, bias=bias, dtype=dtype)
        self.lower_conv = Conv2d(reg, f"{name}.lower_conv", h, h, 3, bias=bias, dtype=dtype)
        self.fuse = Conv2d(reg, f"{name}.fuse", w, w, 1, bias=bias, dtype=dtype)

    def convs(self):
        return [self.pconv_upper, self.pconv_lower, self.attn_conv, self.attn_gate,
                self.upper_conv, self.lower_conv, self.fuse]

    def __call__(self, x):
        return scpa_forward(self, x)

    def macs(self, h, w):
        return sum(c.macs(h, w) for c in self.convs())


class MDTALayer:
    """Transposed (channel-to-channel) attention with depthwise-conv projections."""

    def __init__(self, reg, name, c, heads, eps, dtype=np.float32):
        self.name = name
        self.channels, self.heads = c, heads
        self.norm = LayerNorm(reg, f"{name}.norm", c, eps, dtype)
        self.q_pconv = Conv2d(reg, f"{name}.q_pconv", c, c, 1, dtype=dtype)
        self.k_pconv = Conv2d(reg, f"{name}.k_pconv", c, c, 1, dtype=dtype)
        self.v_pconv = Conv2d(reg, f"{name}.v_pconv", c, c, 1, dtype=dtype)
        self.q_dconv = Conv2d(reg, f"{name}.q_dconv", c, c, 3, groups=c, dtype=dtype)
        self.k_dconv = Conv2d(reg, f"{name}.k_dconv", c, c, 3, groups=c, dtype=dtype)
        self.v_dconv = Conv2d(reg, f"{name}.v_dconv", c, c, 3, groups=c, dtype=dtype)
        self.proj = Conv2d(reg, f"{name}.proj", c, c, 1, dtype=dtype)
        self.temperature = reg.add(f"{name}.temperature", _param((heads,), dtype))

    def convs(self):
        return [self.q_pconv, self.k_pconv, self.v_pconv,
                self.q_dconv, self.k_dconv, self.v_dconv, self.proj]

    def __call__(self, x):
        return mdta_forward(self, x)

    def attention_macs(self, h, w):
        per_head = self.channels // self.heads
        # K.Q^T and S^T.V, each per_head^2 * HW per head
        return 2 * self.heads * per_head * per_head * h * w

    def macs(self, h, w):
        return sum(c.macs(h, w) for c in self.convs()) + self.attention_macs(h, w)


class GDFNLayer:
    """Gated feed-forward: GELU path times linear path, both 1x1 + depthwise 3x3."""

    def __init__(self, reg, name, c, hidden, eps, dtype=np.float32):
        self.name = name
        self.channels, self.hidden = c, hidden
        self.norm = LayerNorm(reg, f"{name}.norm", c, eps, dtype)
        self.gate_pconv = Conv2d(reg, f"{name}.gate_pconv", c, hidden, 1, dtype=dtype)
        self.gate_dconv = Conv2d(reg, f"{name}.gate_dconv", hidden, hidden, 3, groups=hidden, dtype=dtype)
        self.value_pconv = Conv2d(reg, f"{name}.value_pconv", c, hidden, 1, dtype=dtype)
        self.value_dconv = Conv2d(reg, f"{name}.value_dconv", hidden, hidden, 3, groups=hidden, dtype=dtype)
        self.proj = Conv2d(reg, f"{name}.proj", hidden, c, 1, dtype=dtype)

    def convs(self):
        return [self.gate_pconv, self.gate_dconv, self.value_pconv, self.value_dconv, self.proj]

    def __call__(self, x):
        return gdfn_forward(self, x)

    def macs(self, h, w):
        return sum(c.macs(h, w) for c in self.convs())


class Upsampler:
    """Optional 3x3 w->w conv, 1x1 w->3s^2 projection, pixel shuffle."""

    def __init__(self, reg, name, w, scale, with_conv, dtype=np.float32):
        self.name = name
        self.scale = scale
        self.conv = Conv2d(reg, f"{name}.conv", w, w, 3, dtype=dtype) if with_conv else None
        self.proj = Conv2d(reg, f"{name}.proj", w, 3 * scale * scale, 1, dtype=dtype)

    def convs(self):
        return ([self.conv] if self.conv else []) + [self.proj]

    def __call__(self, x):
        if self.conv is not None:
            x = self.conv(x)
        return F.pixel_shuffle(self.proj(x), self.scale)

    def macs(self, h, w):
        return sum(c.macs(h, w) for c in self.convs())


class SCETModel:
    def __init__(self, config=None, dtype=np.float32, seed=None, branch_gain=1.0):
        self.config = config = config or SCETConfig()
        self.dtype = np.dtype(dtype).type
        self.registry = reg = ParamRegistry()
        w = config.channels
        self.head = Conv2d(reg, "head", 3, w, 3, dtype=dtype)
        self.body = [SCPABlock(reg, f"body.{i}", w, bias=config.scpa_bias, dtype=dtype)
                     for i in range(config.num_blocks)]
        if config.use_transformer:
            self.mdta = MDTALayer(reg, "transformer.mdta", w, config.mdta_heads, config.ln_eps, dtype)
            self.gdfn = GDFNLayer(reg, "transformer.gdfn", w, config.hidden, config.ln_eps, dtype)
        else:
            self.mdta = self.gdfn = None
        self.up1 = Upsampler(reg, "up1", w, config.scale, with_conv=True, dtype=dtype)
        self.up2 = Upsampler(reg, "up2", w, config.scale, with_conv=False, dtype=dtype)
        if seed is not None:
            init_weights(self, seed, branch_gain)

    def __call__(self, x):
        return scet_forward(self, x)

    def parameters(self):
        return list(self.registry.values())

    def zero_grad(self):
        self.registry.zero_grad()

    def branch_outputs(self):
        """Names of the convs that close a residual branch or feed the SR output."""
        names = [b.fuse.weight_name for b in self.body]
        if self.mdta is not None:
            names += [self.mdta.proj.weight_name, self.gdfn.proj.weight_name]
        return names + [self.up1.proj.weight_name]

    def submodules(self):
        """(name, module) pairs in registry order; every parameter belongs to exactly one."""
        mods = [("head", self.head)]
        mods += [(b.name, b) for b in self.body]
        if self.mdta is not None:
            mods += [(self.mdta.name, self.mdta), (self.gdfn.name, self.gdfn)]
        mods += [("up1", self.up1), ("up2", self.up2)]
        return mods


# ---------------------------------------------------------------------------
# forward passes


def scpa_forward(block, x):
    _check_channels(x, block.channels, "SCPA block")
    upper = block.pconv_upper(x)
    attended = block.attn_conv(upper) * F.sigmoid(block.attn_gate(upper))
    upper = block.upper_conv(attended)
    lower = block.lower_conv(block.pconv_lower(x))
    return block.fuse(concat([upper, lower], axis=1)) + x


def sc_module_forward(blocks, x):
    for block in blocks:
        x = scpa_forward(block, x)
    return x


def mdta_forward(layer, x, return_attention=False):
    _check_channels(x, layer.channels, "MDTA")
    n, c, h, w = x.shape
    heads, ch = layer.heads, c // layer.heads
    y = layer.norm(x)
    q = layer.q_dconv(layer.q_pconv(y)).reshape(n, heads, ch, h * w)
    k = layer.k_dconv(layer.k_pconv(y)).reshape(n, heads, ch, h * w)
    v = layer.v_dconv(layer.v_pconv(y)).reshape(n, heads, ch, h * w)
    # K.Q over pixels gives a (ch x ch) map per head; rows normalised by softmax
    logits = F.matmul(k, q.T) / layer.temperature.reshape(1, heads, 1, 1)
    attn = F.softmax_lastdim(logits)
    # (V_hat . S)^T = S^T . V, kept channel-major
    out = F.matmul(attn.T, v).reshape(n, c, h, w)
    out = layer.proj(out) + x
    return (out, attn) if return_attention else out


def gdfn_forward(layer, x):
    _check_channels(x, layer.channels, "GDFN")
    y = layer.norm(x)
    gate = F.gelu(layer.gate_dconv(layer.gate_pconv(y)))
    value = layer.value_dconv(layer.value_pconv(y))
    return layer.proj(gate * value) + x


def scet_forward(model, x):
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"SCET expects (N, 3, h, w) input, got {x.shape}")
    f0 = model.head(x)
    feat = sc_module_forward(model.body, f0)
    if model.mdta is not None:
        feat = gdfn_forward(model.gdfn, mdta_forward(model.mdta, feat))
    return model.up1(feat) + model.up2(f0)


def init_weights(model, seed, branch_gain=1.0):
    """He-normal conv weights, zero biases, unit LN scale, unit attention temperature.

    ``branch_gain`` multiplies the initial weights of the convs listed by
    :meth:`SCETModel.branch_outputs`. With 0 every residual branch starts as
    the identity and the output is the global residual path alone, which
    keeps activations bounded through the deep linear stack at init.
    """
    rng = np.random.default_rng(seed)
    damped = set(model.branch_outputs()) if branch_gain != 1.0 else set()
    for name, p in model.registry.items():
        if name.endswith(".weight") and p.ndim == 4:
            fan_in = int(np.prod(p.shape[1:]))
            p.data[...] = rng.standard_normal(p.shape) * math.sqrt(2.0 / fan_in)
            if name in damped:
                p.data *= branch_gain
        elif name.endswith("norm.weight") or name.endswith(".temperature"):
            p.data[...] = 1.0
        else:
            p.data[...] = 0.0
        p.grad = None
