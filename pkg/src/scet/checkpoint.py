"""Binary checkpoint format.

Little-endian, no padding::

    b"SCETCKPT"                       magic, 8 bytes
    u32 version                       currently 1
    u32 d, u32 w, u32 s, u32 heads    config block
    f64 gdfn_expansion
    u32 parameter count
    per parameter:
        u16 name length, UTF-8 name
        u8 rank, u32 extent * rank
        f32 data (row-major)

Whether the transformer is present is recovered from the parameter names.
"""
from __future__ import annotations

import struct

import numpy as np

from .model import SCETConfig, SCETModel

MAGIC = b"SCETCKPT"
VERSION = 1
_HEADER = struct.Struct("<8sIIIIIdI")


class CheckpointError(Exception):
    """Base class for checkpoint load failures."""


class CorruptCheckpointError(CheckpointError):
    """Bad magic, unsupported version, or truncated/overlong file."""


class UnknownParameterError(CheckpointError):
    """A stored name has no counterpart in the model built from the header."""


class ShapeMismatchError(CheckpointError):
    """A stored tensor's extents disagree with the model built from the header."""


class ConfigMismatchError(CheckpointError):
    """The stored config is not the one the caller asked for."""


def save_checkpoint(model, path):
    cfg = model.config
    reg = model.registry
    parts = [_HEADER.pack(MAGIC, VERSION, cfg.num_blocks, cfg.channels, cfg.scale,
                          cfg.mdta_heads, float(cfg.gdfn_expansion), len(reg))]
    for name, t in reg.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<B{t.ndim}I", t.ndim, *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CorruptCheckpointError(f"truncated checkpoint at byte {self.pos} (need {n} more)")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def _read_records(buf):
    r = _Reader(buf)
    magic, version, d, w, s, heads, gamma, count = r.unpack(_HEADER.format)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CorruptCheckpointError(f"unsupported checkpoint version {version}")
    records = []
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        try:
            name = r.take(nlen).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptCheckpointError(f"parameter name is not UTF-8: {exc}") from None
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I") if rank else ()
        n = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape)
        records.append((name, tuple(shape), data))
    if r.pos != len(buf):
        raise CorruptCheckpointError(f"{len(buf) - r.pos} trailing bytes after last parameter")
    return (d, w, s, heads, gamma), records


def load_checkpoint(path, expect=None, dtype=np.float32):
    """Rebuild the model stored at ``path``.

    ``expect`` (an :class:`SCETConfig`) makes a mismatching stored config an
    error instead of silently loading a different architecture.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    (d, w, s, heads, gamma), records = _read_records(buf)
    names = {name for name, _, _ in records}
    has_transformer = any(n.startswith("transformer.") for n in names)
    scpa_bias = "body.0.fuse.bias" in names
    try:
        cfg = SCETConfig(num_blocks=d, channels=w, scale=s, mdta_heads=heads, gdfn_expansion=gamma,
                         use_transformer=has_transformer, scpa_bias=scpa_bias)
    except ValueError as exc:
        raise CorruptCheckpointError(f"invalid config in header: {exc}") from None
    if expect is not None:
        fields = ("num_blocks", "channels", "scale", "mdta_heads", "gdfn_expansion", "use_transformer")
        diffs = [f"{f}: stored {getattr(cfg, f)!r}, requested {getattr(expect, f)!r}"
                 for f in fields if getattr(cfg, f) != getattr(expect, f)]
        if diffs:
            raise ConfigMismatchError("checkpoint config mismatch (" + "; ".join(diffs) + ")")
    model = SCETModel(cfg, dtype=dtype)
    reg = model.registry
    seen = set()
    for name, shape, data in records:
        if name not in reg:
            raise UnknownParameterError(f"unknown parameter {name!r}")
        if name in seen:
            raise CorruptCheckpointError(f"parameter {name!r} stored twice")
        target = reg[name]
        if target.shape != shape:
            raise ShapeMismatchError(f"{name}: stored shape {shape}, model expects {target.shape}")
        target.data[...] = data
        seen.add(name)
    missing = [n for n in reg if n not in seen]
    if missing:
        raise CorruptCheckpointError(f"checkpoint lacks {len(missing)} parameters, e.g. {missing[0]!r}")
    return model


def checkpoint_numel(path):
    """Element count implied by the bytes of a checkpoint (header-free arithmetic)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    _, records = _read_records(buf)
    return sum(data.size for _, _, data in records)
