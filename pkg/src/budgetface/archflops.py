"""Declarative architecture descriptions, MAdd accounting, and
budget-constrained depth/width expansion.

Operation counts follow the MAdd convention: one multiply-accumulate is
two ops. Counts are plain Python ints, so 30G budgets are exact.

An architecture file has one item per line, `kind key=value ...`:

    input channels=3 height=112 width=112
    conv2d out=64 kernel=3 stride=1 padding=1 bias=0
    batchnorm
    activation
    stage blocks=3 channels=64 stride=2
    ...
    fc out=256 bias=1

A `stage` line expands into `blocks` residual units (BN, 3x3 conv, BN,
activation, strided 3x3 conv, BN, projection shortcut when the shape
changes, add). Depth/width expansion scales stage block counts and
channel widths (plus plain conv widths in the stem); fully connected
head widths are left alone.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple, Union

from .errors import EmptyResult, ShapeMismatch


@dataclass
class LayerSpec:
    kind: str
    name: str = ""
    in_channels: Optional[int] = None   # validated against the running shape when set
    out_channels: Optional[int] = None  # conv2d / fc output width
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    bias: bool = False
    out_h: Optional[int] = None         # upsample target
    out_w: Optional[int] = None

    KINDS = ("conv2d", "fc", "maxpool", "avgpool_global", "upsample",
             "batchnorm", "activation", "dropout", "add")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")


@dataclass
class StageSpec:
    """A run of identical residual units."""

    blocks: int
    channels: int
    stride: int = 2
    name: str = ""


@dataclass
class ArchSpec:
    input_shape: Tuple[int, int, int]  # (C, H, W)
    items: List[Union[LayerSpec, StageSpec]] = field(default_factory=list)


def _conv_out(h: int, k: int, s: int, p: int) -> int:
    out = (h + 2 * p - k) // s + 1
    if out <= 0:
        raise ShapeMismatch(f"conv arithmetic gives non-positive size {out}")
    return out


def layer_flops(layer: LayerSpec, input_shape):
    """MAdd count and output shape for a single layer.

    input_shape is (C, H, W) or a flat (features,) tuple.
    """
    if layer.kind == "fc":
        feats = int(math.prod(input_shape))
        if layer.in_channels is not None and layer.in_channels != feats:
            raise ShapeMismatch(f"fc expects {layer.in_channels} inputs, got {feats}")
        ops = 2 * feats * layer.out_channels
        if layer.bias:
            ops += layer.out_channels
        return ops, (layer.out_channels,)

    if len(input_shape) == 1:
        # 1-D features (post-fc): only elementwise layers apply.
        feats = input_shape[0]
        if layer.kind == "batchnorm":
            return 2 * feats, input_shape
        if layer.kind == "activation":
            return feats, input_shape
        if layer.kind == "dropout":
            return 0, input_shape
        raise ShapeMismatch(f"{layer.kind} needs a (C, H, W) input")
    c, h, w = input_shape

    if layer.in_channels is not None and layer.in_channels != c:
        raise ShapeMismatch(f"{layer.kind} expects {layer.in_channels} channels, got {c}")

    if layer.kind == "conv2d":
        ho = _conv_out(h, layer.kernel, layer.stride, layer.padding)
        wo = _conv_out(w, layer.kernel, layer.stride, layer.padding)
        ops = 2 * layer.kernel * layer.kernel * c * layer.out_channels * ho * wo
        if layer.bias:
            ops += layer.out_channels * ho * wo
        return ops, (layer.out_channels, ho, wo)
    if layer.kind == "maxpool":
        ho = _conv_out(h, layer.kernel, layer.stride, layer.padding)
        wo = _conv_out(w, layer.kernel, layer.stride, layer.padding)
        return c * ho * wo, (c, ho, wo)
    if layer.kind == "avgpool_global":
        return c, (c, 1, 1)
    if layer.kind == "upsample":
        return c * layer.out_h * layer.out_w, (c, layer.out_h, layer.out_w)
    if layer.kind == "batchnorm":
        return 2 * c * h * w, (c, h, w)
    if layer.kind == "activation":
        return c * h * w, (c, h, w)
    if layer.kind == "dropout":
        return 0, (c, h, w)  # identity at inference; not counted
    if layer.kind == "add":
        return c * h * w, (c, h, w)
    raise ShapeMismatch(f"unhandled kind {layer.kind}")


def _residual_unit_flops(in_shape, out_ch: int, stride: int):
    """One residual unit; the projection shortcut branches off the unit input."""
    main = [
        LayerSpec("batchnorm"),
        LayerSpec("conv2d", out_channels=out_ch, kernel=3, stride=1, padding=1),
        LayerSpec("batchnorm"),
        LayerSpec("activation"),
        LayerSpec("conv2d", out_channels=out_ch, kernel=3, stride=stride, padding=1),
        LayerSpec("batchnorm"),
    ]
    ops = 0
    shape = in_shape
    for layer in main:
        o, shape = layer_flops(layer, shape)
        ops += o
    if stride != 1 or in_shape[0] != out_ch:
        sc_shape = in_shape
        for layer in (LayerSpec("conv2d", out_channels=out_ch, kernel=1,
                                stride=stride, padding=0),
                      LayerSpec("batchnorm")):
            o, sc_shape = layer_flops(layer, sc_shape)
            ops += o
        if sc_shape != shape:
            raise ShapeMismatch("shortcut and main branch shapes differ")
    o, shape = layer_flops(LayerSpec("add"), shape)
    ops += o
    return ops, shape


def _stage_flops(stage: StageSpec, in_shape):
    ops = 0
    shape = in_shape
    for b in range(stage.blocks):
        stride = stage.stride if b == 0 else 1
        o, shape = _residual_unit_flops(shape, stage.channels, stride)
        ops += o
    return ops, shape


def arch_flops_breakdown(arch: ArchSpec):
    """Per-item (name, flops, output_shape) plus the running total."""
    shape: tuple = tuple(arch.input_shape)
    rows = []
    total = 0
    for i, item in enumerate(arch.items):
        if isinstance(item, StageSpec):
            sub, shape = _stage_flops(item, shape)
            name = item.name or f"stage{i}[{item.blocks}x{item.channels}]"
            rows.append((name, sub, shape))
            total += sub
        else:
            ops, shape = layer_flops(item, shape)
            rows.append((item.name or f"{item.kind}{i}", ops, shape))
            total += ops
    return rows, total


def arch_flops(arch: ArchSpec) -> int:
    """Total MAdd count of the fully unrolled architecture."""
    return arch_flops_breakdown(arch)[1]


@dataclass
class BudgetQuery:
    budget: int
    depth_multipliers: List[float]
    width_multipliers: List[float]
    channel_rounding: int = 1

    def __post_init__(self):
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if not self.depth_multipliers or not self.width_multipliers:
            raise ValueError("multiplier grids must be non-empty")
        if self.channel_rounding < 1:
            raise ValueError("channel rounding must be >= 1")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _scale_arch(base: ArchSpec, dm: float, wm: float, rounding: int) -> ArchSpec:
    def width(c: int) -> int:
        r = rounding * max(1, _round_half_up(c * wm / rounding))
        return r

    items: List[Union[LayerSpec, StageSpec]] = []
    for item in base.items:
        if isinstance(item, StageSpec):
            items.append(replace(item,
                                 blocks=max(1, _round_half_up(item.blocks * dm)),
                                 channels=width(item.channels)))
        elif item.kind == "conv2d":
            items.append(replace(item, out_channels=width(item.out_channels)))
        else:
            items.append(replace(item))
    return ArchSpec(tuple(base.input_shape), items)


def expand_under_budget(base: ArchSpec, q: BudgetQuery):
    """Depth x width grid search filtered by the flops budget.

    Returns [(candidate, flops)] sorted by flops descending (ties broken
    by the multiplier pair). Raises EmptyResult if nothing fits.
    """
    results = []
    for dm, wm in itertools.product(q.depth_multipliers, q.width_multipliers):
        cand = _scale_arch(base, dm, wm, q.channel_rounding)
        fl = arch_flops(cand)
        if fl <= q.budget:
            results.append((dm, wm, cand, fl))
    if not results:
        raise EmptyResult("no candidate fits the budget")
    results.sort(key=lambda r: (-r[3], r[0], r[1]))
    return [(cand, fl) for _, _, cand, fl in results]


# ---------------------------------------------------------------------------
# Text serialization.

_INT_KEYS = {"out", "in", "kernel", "stride", "padding", "bias", "height",
             "width", "blocks", "channels"}


def parse_arch(text: str) -> ArchSpec:
    input_shape = None
    items: List[Union[LayerSpec, StageSpec]] = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind, kv = parts[0], {}
        for p in parts[1:]:
            k, v = p.split("=", 1)
            kv[k] = int(v) if k in _INT_KEYS else v
        if kind == "input":
            input_shape = (kv["channels"], kv["height"], kv["width"])
        elif kind == "stage":
            items.append(StageSpec(blocks=kv["blocks"], channels=kv["channels"],
                                   stride=kv.get("stride", 2),
                                   name=kv.get("name", "")))
        else:
            items.append(LayerSpec(
                kind,
                name=kv.get("name", ""),
                in_channels=kv.get("in"),
                out_channels=kv.get("out"),
                kernel=kv.get("kernel", 1),
                stride=kv.get("stride", 1),
                padding=kv.get("padding", 0),
                bias=bool(kv.get("bias", 0)),
                out_h=kv.get("height"),
                out_w=kv.get("width"),
            ))
    if input_shape is None:
        raise ShapeMismatch("archfile missing an `input` line")
    return ArchSpec(input_shape, items)


def format_arch(arch: ArchSpec) -> str:
    c, h, w = arch.input_shape
    lines = [f"input channels={c} height={h} width={w}"]
    for item in arch.items:
        if isinstance(item, StageSpec):
            lines.append(f"stage blocks={item.blocks} channels={item.channels} "
                         f"stride={item.stride}")
        else:
            parts = [item.kind]
            if item.kind == "conv2d":
                parts += [f"out={item.out_channels}", f"kernel={item.kernel}",
                          f"stride={item.stride}", f"padding={item.padding}",
                          f"bias={int(item.bias)}"]
            elif item.kind == "fc":
                parts += [f"out={item.out_channels}", f"bias={int(item.bias)}"]
            elif item.kind == "maxpool":
                parts += [f"kernel={item.kernel}", f"stride={item.stride}",
                          f"padding={item.padding}"]
            elif item.kind == "upsample":
                parts += [f"height={item.out_h}", f"width={item.out_w}"]
            lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


# Bundled ResNet-100-style backbone: 112x112 input, stages [3,13,30,3] with
# channels [64,128,256,512], 256-d embedding head.
R100_TEXT = """\
input channels=3 height=112 width=112
conv2d out=64 kernel=3 stride=1 padding=1 bias=0
batchnorm
activation
stage blocks=3 channels=64 stride=2
stage blocks=13 channels=128 stride=2
stage blocks=30 channels=256 stride=2
stage blocks=3 channels=512 stride=2
batchnorm
dropout
fc out=256 bias=1
batchnorm
"""


def r100_spec() -> ArchSpec:
    return parse_arch(R100_TEXT)
