"""Parameter and Multi-Adds accounting.

Multi-Adds follow the common SR convention in which every multiply-accumulate
contributes one multiplication and one addition, so ``multiadds == 2 * macs``.
Convolutions count
``Cout * Cin/g * k^2 * Hout * Wout`` MACs; the two attention products count
``(C/h)^2 * HW`` each per head. Bias adds, activations, softmax, layer norm and
other elementwise work are not counted. Every layer before pixel shuffle runs
at LR extent, i.e. the HR size divided by the scale.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

OPS_PER_MAC = 2


def count_params(model):
    return sum(t.size for t in model.registry.values())


def _lr_extent(model, hr_width, hr_height):
    s = model.config.scale
    if hr_width % s or hr_height % s:
        raise ValueError(f"HR size {hr_width}x{hr_height} not divisible by scale {s}")
    return hr_height // s, hr_width // s


def count_macs(model, hr_width=1280, hr_height=720):
    h, w = _lr_extent(model, hr_width, hr_height)
    return sum(mod.macs(h, w) for _, mod in model.submodules())


def count_multiadds(model, hr_width=1280, hr_height=720):
    return OPS_PER_MAC * count_macs(model, hr_width, hr_height)


@dataclass
class CostRow:
    name: str
    params: int
    multiadds: int


@dataclass
class CostReport:
    hr_width: int
    hr_height: int
    rows: list = field(default_factory=list)

    @property
    def total_params(self):
        return sum(r.params for r in self.rows)

    @property
    def total_multiadds(self):
        return sum(r.multiadds for r in self.rows)

    def to_csv(self):
        buf = io.StringIO()
        buf.write("name,params,multiadds\n")
        for r in self.rows:
            buf.write(f"{r.name},{r.params},{r.multiadds}\n")
        buf.write(f"total,{self.total_params},{self.total_multiadds}\n")
        return buf.getvalue()

    def to_text(self):
        width = max([len(r.name) for r in self.rows] + [5])
        lines = [
            f"complexity at {self.hr_width}x{self.hr_height} HR",
            f"{'name':<{width}}  {'params':>12}  {'multi-adds':>16}",
        ]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {r.params:>12,}  {r.multiadds:>16,}")
        lines.append("-" * len(lines[1]))
        lines.append(f"{'total':<{width}}  {self.total_params:>12,}  {self.total_multiadds:>16,}")
        lines.append(
            f"{'':<{width}}  {self.total_params / 1e3:>11.1f}K  {self.total_multiadds / 1e9:>15.2f}G"
        )
        return "\n".join(lines) + "\n"

    def render(self, fmt="text"):
        if fmt == "csv":
            return self.to_csv()
        if fmt == "text":
            return self.to_text()
        raise ValueError(f"unknown report format {fmt!r}")


def cost_report(model, hr_width=1280, hr_height=720):
    h, w = _lr_extent(model, hr_width, hr_height)
    rep = CostReport(hr_width, hr_height)
    for name, mod in model.submodules():
        rep.rows.append(CostRow(name, model.registry.numel(name), OPS_PER_MAC * mod.macs(h, w)))
    return rep


def report(model, hr_size=(1280, 720), fmt="text"):
    """Render the per-submodule cost table as text or CSV."""
    return cost_report(model, *hr_size).render(fmt)
