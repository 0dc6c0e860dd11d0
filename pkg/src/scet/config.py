"""Line-based ``key = value`` run configuration.

One setting per line; ``#`` starts a comment; blank lines are ignored. Keys
are case-sensitive and may use the short aliases listed in :data:`ALIASES`
(``d`` for ``num_blocks``, ``lr`` for ``lr0`` and so on). Values are parsed
according to :data:`SCHEMA`. Any line that is not exactly one ``key = value``
pair is rejected with its line number.
"""
from __future__ import annotations

import re

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _bool(text):
    t = text.lower()
    if t in _BOOL_TRUE:
        return True
    if t in _BOOL_FALSE:
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _str(text):
    return text


SCHEMA = {
    "preset": _str,
    "data": _str,
    "lr_dir": _str,
    "out": _str,
    "num_blocks": int,
    "channels": int,
    "scale": int,
    "mdta_heads": int,
    "gdfn_expansion": float,
    "use_transformer": _bool,
    "branch_gain": float,
    "total_iters": int,
    "lr0": float,
    "lr_min": float,
    "weight_decay": float,
    "batch_size": int,
    "gt_patch": int,
    "seed": int,
    "augment": _bool,
    "log_every": int,
    "ckpt_every": int,
}

ALIASES = {
    "d": "num_blocks",
    "w": "channels",
    "heads": "mdta_heads",
    "transformer": "use_transformer",
    "iters": "total_iters",
    "lr": "lr0",
    "wd": "weight_decay",
    "batch": "batch_size",
    "patch": "gt_patch",
}

_LINE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*([^=]*?)\s*$")


class ConfigError(ValueError):
    """Malformed line, unknown key, or a value of the wrong type."""


def canonical(key):
    return ALIASES.get(key, key)


def parse_config(text, source="<config>"):
    """Parse config text into ``{canonical_key: typed_value}``; later lines win."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE.match(line)
        if m is None or not m.group(2):
            raise ConfigError(f"{source}:{lineno}: malformed line {raw.strip()!r} (expected 'key = value')")
        key = canonical(m.group(1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {m.group(1)!r}")
        try:
            out[key] = SCHEMA[key](m.group(2))
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {m.group(1)!r}: {exc}") from None
    return out


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror or exc}") from None
    except UnicodeDecodeError:
        raise ConfigError(f"config file {path} is not UTF-8 text") from None
    return parse_config(text, str(path))


def render_config(values):
    """Inverse of :func:`parse_config` for the values it can produce."""
    lines = []
    for key in sorted(values):
        v = values[key]
        if v is None:
            continue
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"
