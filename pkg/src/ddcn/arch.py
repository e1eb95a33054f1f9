"""Declarative two-stack architecture descriptions and their analyzers.

Three stacks are expressible: the dilated coarse stack ("Stack 1 (OUR)"),
the VGG-style downsampling baseline ("Stack 1 (VGG)"), and the local
refinement stack ("Stack 2").  A width_scale rational multiplies hidden
channel counts so the same shapes can be trained at desk scale; at
width_scale 1 the built-in specs are exactly the published layout.

Specs render to a fixed text table (render_table) whose hash serves as
the checkpoint architecture fingerprint, and parse back losslessly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from fractions import Fraction

from .errors import ConfigError, GeometryError, ShapeError
from .ops import receptive_field

STACK_OURS = "Stack 1 (OUR)"
STACK_VGG = "Stack 1 (VGG)"
STACK_FINE = "Stack 2"

KIND_CONV = "conv"
KIND_FC = "fc_as_conv"
KIND_CONCAT = "concat"
KIND_RESHAPE = "reshape"
KIND_UPSAMPLE = "upsample"

# Stride-2 pooling used between VGG blocks; stride-1 same-padded pooling
# used inside the fine stack.
VGG_POOL = ((2, 2), (2, 2), (0, 0))
FINE_POOL = ((3, 3), (1, 1), (1, 1))


@dataclass(frozen=True)
class LayerSpec:
    """One column of the architecture table (a block of repeated convs,
    an fc layer, a concat join, or the reshape/upsample head)."""
    name: str
    kind: str
    conv_count: int = 1
    in_channels: int = 0
    out_channels: int = 0
    kernel: tuple[int, int] = (0, 0)
    dilation: int = 1
    relu: bool = True
    pool_after: bool = False
    notes: str = ""

    def __post_init__(self):
        if self.dilation > 1 and self.kind != KIND_CONV:
            raise ConfigError(f"layer {self.name}: dilation > 1 only valid on convs")

    def param_count(self, fc_in_dim: int | None = None) -> int:
        if self.kind == KIND_CONV:
            kh, kw = self.kernel
            total = 0
            cin = self.in_channels
            for _ in range(self.conv_count):
                total += self.out_channels * cin * kh * kw + self.out_channels
                cin = self.out_channels
            return total
        if self.kind == KIND_FC:
            if fc_in_dim is None:
                raise ShapeError(f"layer {self.name}: fc parameter count needs the flattened input size")
            return self.out_channels * fc_in_dim + self.out_channels
        return 0


@dataclass(frozen=True)
class ArchSpec:
    """Ordered stacks plus the coarse-stack input size and width scale."""
    name: str
    stacks: tuple[tuple[str, tuple[LayerSpec, ...]], ...]
    input_size: tuple[int, int]
    width_scale: Fraction = Fraction(1)
    fine_pool: bool = True
    vgg_head: str = "reshape"  # "reshape" or "upsample2x"

    def stack(self, stack_name: str) -> tuple[LayerSpec, ...]:
        for sname, layers in self.stacks:
            if sname == stack_name:
                return layers
        raise KeyError(stack_name)

    def stack_names(self) -> list[str]:
        return [sname for sname, _ in self.stacks]


@dataclass
class ParamReport:
    per_layer: list[tuple[str, int]]       # ("Stack 1 (OUR)/1.1", count)
    stack_totals: dict[str, int]
    ratio_vgg_over_ours: Fraction | None = None


def check_width_scale(scale: Fraction) -> Fraction:
    scale = Fraction(scale)
    if not (0 < scale <= 1):
        raise ConfigError(f"width_scale must be in (0, 1], got {scale}")
    return scale


def scaled_channels(base: int, scale: Fraction) -> int:
    """Round base*scale half-up; a result below 1 is a config error."""
    value = int(base * scale + Fraction(1, 2))
    if value < 1:
        raise ConfigError(f"width_scale {scale} underflows a {base}-channel layer")
    return value


def dilated_coarse_layers(scale: Fraction) -> tuple[LayerSpec, ...]:
    """Stack 1 (OUR): same-padded 3x3 blocks with dilations 1,2,3,2,3 then a
    7x7 dilation-4 layer and two 1x1 layers down to one channel."""
    s = check_width_scale(scale)
    c64, c128, c256, c512 = (scaled_channels(c, s) for c in (64, 128, 256, 512))
    return (
        LayerSpec("1.1", KIND_CONV, 2, 3, c64, (3, 3), 1),
        LayerSpec("1.2", KIND_CONV, 2, c64, c128, (3, 3), 2),
        LayerSpec("1.3", KIND_CONV, 3, c128, c256, (3, 3), 3),
        LayerSpec("1.4", KIND_CONV, 3, c256, c512, (3, 3), 2),
        LayerSpec("1.5", KIND_CONV, 3, c512, c512, (3, 3), 3),
        LayerSpec("1.6", KIND_CONV, 1, c512, c512, (7, 7), 4),
        LayerSpec("1.7", KIND_CONV, 1, c512, c512, (1, 1), 1),
        LayerSpec("1.8", KIND_CONV, 1, c512, 1, (1, 1), 1, relu=False),
    )


def vgg_coarse_layers(scale: Fraction, head: str = "reshape") -> tuple[LayerSpec, ...]:
    """Stack 1 (VGG): five conv blocks with 2x pooling after the first four,
    then three fc layers; the final 4800-vector becomes the 80x60 map."""
    s = check_width_scale(scale)
    c64, c128, c256, c512 = (scaled_channels(c, s) for c in (64, 128, 256, 512))
    c4096 = scaled_channels(4096, s)
    if head == "reshape":
        fc_out, head_spec = 4800, LayerSpec("upsamp", KIND_RESHAPE, 0, 4800, 1, relu=False)
    elif head == "upsample2x":
        fc_out, head_spec = 1200, LayerSpec("upsamp", KIND_UPSAMPLE, 0, 1200, 1, relu=False)
    else:
        raise ConfigError(f"unknown vgg head mode {head!r}")
    return (
        LayerSpec("1.1", KIND_CONV, 2, 3, c64, (3, 3), 1, pool_after=True),
        LayerSpec("1.2", KIND_CONV, 2, c64, c128, (3, 3), 1, pool_after=True),
        LayerSpec("1.3", KIND_CONV, 3, c128, c256, (3, 3), 1, pool_after=True),
        LayerSpec("1.4", KIND_CONV, 3, c256, c512, (3, 3), 1, pool_after=True),
        LayerSpec("1.5", KIND_CONV, 3, c512, c512, (3, 3), 1),
        LayerSpec("1.6", KIND_FC, 1, c512, c4096),
        LayerSpec("1.7", KIND_FC, 1, c4096, c4096),
        LayerSpec("1.8", KIND_FC, 1, c4096, fc_out, relu=False),
        head_spec,
    )


def fine_layers(scale: Fraction, pool: bool = True) -> tuple[LayerSpec, ...]:
    """Stack 2: a 9x9 edge-feature layer (with pooling), concat with the
    one-channel coarse prediction, then two 5x5 layers down to depth."""
    s = check_width_scale(scale)
    c63 = scaled_channels(63, s)
    c64 = scaled_channels(64, s)
    return (
        LayerSpec("2.1", KIND_CONV, 1, 3, c63, (9, 9), 1, pool_after=pool),
        LayerSpec("2.2", KIND_CONCAT, 0, c63, c63 + 1),
        LayerSpec("2.3", KIND_CONV, 1, c63 + 1, c64, (5, 5), 1),
        LayerSpec("2.4", KIND_CONV, 1, c64, 1, (5, 5), 1, relu=False),
    )


def make_arch(name: str, width_scale=Fraction(1), fine_pool: bool = True,
              vgg_head: str = "reshape") -> ArchSpec:
    """Build a named architecture: "ours"/"vgg" are coarse+fine pipelines,
    "both" additionally carries the other coarse stack for comparison."""
    scale = check_width_scale(Fraction(width_scale))
    fine = fine_layers(scale, pool=fine_pool)
    if name == "ours":
        stacks = ((STACK_OURS, dilated_coarse_layers(scale)), (STACK_FINE, fine))
        input_size = (80, 60)
    elif name == "vgg":
        stacks = ((STACK_VGG, vgg_coarse_layers(scale, vgg_head)), (STACK_FINE, fine))
        input_size = (160, 120)
    elif name == "both":
        stacks = ((STACK_VGG, vgg_coarse_layers(scale, vgg_head)),
                  (STACK_OURS, dilated_coarse_layers(scale)),
                  (STACK_FINE, fine))
        input_size = (80, 60)
    else:
        raise ConfigError(f"unknown architecture {name!r} (expected ours, vgg, or both)")
    arch = ArchSpec(name, stacks, input_size, scale, fine_pool, vgg_head)
    validate_arch(arch)
    return arch


def stack_input_size(arch: ArchSpec, stack_name: str) -> tuple[int, int]:
    """Input resolution each stack consumes; both coarse output and the
    fine stack run at 80x60 regardless of the coarse input."""
    if stack_name == STACK_VGG:
        return (160, 120) if arch.name != "vgg" else arch.input_size
    if stack_name == STACK_OURS:
        return (80, 60) if arch.name == "both" else arch.input_size
    return (80, 60)


def validate_arch(arch: ArchSpec) -> None:
    """Channel chaining: each layer consumes its predecessor's output,
    with the concat join adding the coarse stack's single channel."""
    check_width_scale(arch.width_scale)
    for sname, layers in arch.stacks:
        if not layers:
            raise ConfigError(f"stack {sname} is empty")
        prev_out = None
        for spec in layers:
            if spec.kind == KIND_CONCAT:
                if spec.out_channels != spec.in_channels + 1:
                    raise ShapeError(f"{sname}/{spec.name}: concat must add the "
                                     f"one-channel coarse map")
            if prev_out is not None and spec.in_channels != prev_out:
                raise ShapeError(f"{sname}/{spec.name}: expects {spec.in_channels} input "
                                 f"channels but predecessor produces {prev_out}")
            prev_out = spec.out_channels


def _pool_geometry(size: tuple[int, int], window, stride, padding,
                   where: str) -> tuple[int, int]:
    h, w = size
    oh = (h + 2 * padding[0] - window[0]) // stride[0] + 1
    ow = (w + 2 * padding[1] - window[1]) // stride[1] + 1
    if oh < 1 or ow < 1:
        raise GeometryError(f"{where}: pooling {h}x{w} with window "
                            f"{window[0]}x{window[1]} stride {stride[0]} leaves {oh}x{ow}")
    return oh, ow


def stack_flow(layers: tuple[LayerSpec, ...], input_size: tuple[int, int],
               stack_name: str) -> list[tuple[str, tuple[int, int], tuple[int, int]]]:
    """Walk the size pyramid: per block (name, incoming size, table size).

    Incoming size is what the block consumes (an fc layer flattens it);
    table size is the resolution the size row shows (fc rows read 1x1,
    the head reads 80x60)."""
    size = input_size
    rows = []
    for spec in layers:
        if spec.kind in (KIND_RESHAPE, KIND_UPSAMPLE):
            rows.append((spec.name, size, (80, 60)))
            size = (80, 60)
            continue
        rows.append((spec.name, size, (1, 1) if spec.kind == KIND_FC else size))
        if spec.kind == KIND_FC:
            size = (1, 1)
        elif spec.kind == KIND_CONV and spec.pool_after:
            window, stride, padding = FINE_POOL if stack_name == STACK_FINE else VGG_POOL
            size = _pool_geometry(size, window, stride, padding,
                                  f"{stack_name}/{spec.name}")
    return rows


def stack_geometry(layers: tuple[LayerSpec, ...], input_size: tuple[int, int],
                   stack_name: str) -> list[tuple[str, tuple[int, int]]]:
    """Per-block table sizes (the size row), validating the pyramid."""
    return [(name, table) for name, _, table in stack_flow(layers, input_size, stack_name)]


def geometry_report(arch: ArchSpec, input_size: tuple[int, int] | None = None):
    """Per-layer (stack, name, size, receptive field) rows.

    Receptive fields accumulate through each stack independently; once an
    fc layer collapses the map the field is global.
    """
    rows = []
    for sname, layers in arch.stacks:
        base = input_size if (input_size and sname != STACK_FINE) else stack_input_size(arch, sname)
        sizes = dict(stack_geometry(layers, base, sname))
        rf_layers = []
        global_rf = False
        for spec in layers:
            if spec.kind == KIND_CONV:
                rf_layers.extend([(spec.kernel, spec.dilation, 1)] * spec.conv_count)
                if spec.pool_after:
                    window, stride, _ = FINE_POOL if sname == STACK_FINE else VGG_POOL
                    rf_layers.append((window, 1, stride))
            elif spec.kind == KIND_FC:
                global_rf = True
            rf = "global" if global_rf else "{}x{}".format(*receptive_field(rf_layers))
            h, w = sizes[spec.name]
            rows.append((sname, spec.name, f"{h}x{w}", rf))
    return rows


def count_parameters(arch: ArchSpec) -> ParamReport:
    """Parameter counts per table column; convs cost out*in*kh*kw + out per
    repetition (independent of dilation), fc layers are counted dense."""
    validate_arch(arch)
    per_layer = []
    stack_totals: dict[str, int] = {}
    for sname, layers in arch.stacks:
        incoming = {name: size for name, size, _ in
                    stack_flow(layers, stack_input_size(arch, sname), sname)}
        total = 0
        for spec in layers:
            if spec.kind == KIND_FC:
                h, w = incoming[spec.name]
                count = spec.param_count(fc_in_dim=spec.in_channels * h * w)
            else:
                count = spec.param_count()
            per_layer.append((f"{sname}/{spec.name}", count))
            total += count
        stack_totals[sname] = total
    ratio = None
    if STACK_VGG in stack_totals and STACK_OURS in stack_totals:
        ratio = Fraction(stack_totals[STACK_VGG], stack_totals[STACK_OURS])
    return ParamReport(per_layer, stack_totals, ratio)


# ---------------------------------------------------------------------------
# Text table round-trip

_ROWS = ("size", "conv", "chan", "ker.sz", "dilation")


def _cell(spec: LayerSpec, row: str, size: tuple[int, int]) -> str:
    if row == "size":
        return f"{size[0]}x{size[1]}"
    if row == "conv":
        return str(spec.conv_count) if spec.kind == KIND_CONV else "-"
    if row == "chan":
        if spec.kind == KIND_CONCAT:
            return "-"
        return str(spec.out_channels) if spec.kind not in (KIND_RESHAPE, KIND_UPSAMPLE) else "1"
    if row == "ker.sz":
        if spec.kind == KIND_CONV:
            return f"{spec.kernel[0]}x{spec.kernel[1]}"
        return "-"
    if row == "dilation":
        if spec.kind == KIND_CONV and spec.kernel != (1, 1):
            return str(spec.dilation)
        return "-"
    raise ValueError(row)


def render_table(arch: ArchSpec) -> str:
    """Fixed-layout text table (size/conv/chan/ker.sz/dilation rows per
    stack).  The rendering is the canonical serialized form: its hash is
    the architecture fingerprint and parse_table inverts it."""
    lines = [f"arch {arch.name} width_scale {arch.width_scale} "
             f"input {arch.input_size[0]}x{arch.input_size[1]} "
             f"fine_pool {'on' if arch.fine_pool else 'off'} vgg_head {arch.vgg_head}"]
    for sname, layers in arch.stacks:
        sizes = dict(stack_geometry(layers, stack_input_size(arch, sname), sname))
        use_dilation = any(spec.dilation > 1 for spec in layers)
        rows = [r for r in _ROWS if r != "dilation" or use_dilation]
        cols: list[list[str]] = [["layer"] + [r for r in rows]]
        for spec in layers:
            cols.append([spec.name] + [_cell(spec, r, sizes[spec.name]) for r in rows])
        if sname == STACK_FINE:
            out_size = sizes[layers[-1].name]
            cols.append(["final", f"{out_size[0]}x{out_size[1]}", "-", "1", "-"])
        widths = [max(len(cell) for cell in col) for col in cols]
        lines.append(f"-- {sname} --")
        for i in range(len(cols[0])):
            lines.append("  ".join(col[i].rjust(widths[j]) for j, col in enumerate(cols)))
    return "\n".join(lines) + "\n"


def fingerprint(arch: ArchSpec) -> str:
    return hashlib.sha256(render_table(arch).encode()).hexdigest()[:16]


def parse_table(text: str) -> ArchSpec:
    """Invert render_table.  Only the canonical layouts are parseable; the
    conventions (first block consumes RGB, last parameterized block of a
    stack is linear, pooling follows spatial shrink) are reapplied."""
    lines = [ln.rstrip() for ln in text.strip().splitlines()]
    head = lines[0].split()
    if head[0] != "arch":
        raise ShapeError("not an architecture table")
    name = head[1]
    width_scale = Fraction(head[3])
    h, w = (int(v) for v in head[5].split("x"))
    fine_pool = head[7] == "on"
    vgg_head = head[9]

    stacks = []
    i = 1
    while i < len(lines):
        if not lines[i].startswith("-- "):
            raise ShapeError(f"expected stack header at line {i + 1}")
        sname = lines[i][3:-3]
        rows = {}
        order = []
        i += 1
        while i < len(lines) and not lines[i].startswith("-- "):
            cells = lines[i].split()
            rows[cells[0]] = cells[1:]
            order.append(cells[0])
            i += 1
        names = rows["layer"]
        specs = []
        prev_out = 3
        for col, lname in enumerate(names):
            if sname == STACK_FINE and lname == "final":
                continue
            conv = rows["conv"][col]
            chan = rows["chan"][col]
            ker = rows["ker.sz"][col]
            dil = rows.get("dilation", ["-"] * len(names))[col]
            if lname == "upsamp":
                kind = KIND_RESHAPE if vgg_head == "reshape" else KIND_UPSAMPLE
                specs.append(LayerSpec(lname, kind, 0, prev_out, 1, relu=False))
                prev_out = 1
            elif chan != "-" and ker == "-":
                specs.append(LayerSpec(lname, KIND_FC, 1, prev_out, int(chan)))
                prev_out = int(chan)
            elif chan == "-":
                specs.append(LayerSpec(lname, KIND_CONCAT, 0, prev_out, prev_out + 1))
                prev_out += 1
            else:
                kh, kw = (int(v) for v in ker.split("x"))
                dilation = 1 if dil == "-" else int(dil)
                if sname == STACK_FINE:
                    pool_after = fine_pool and lname == "2.1"
                else:
                    this_size = rows["size"][col]
                    next_size = rows["size"][col + 1] if col + 1 < len(names) else this_size
                    pool_after = sname == STACK_VGG and next_size != this_size and next_size != "1x1"
                specs.append(LayerSpec(lname, KIND_CONV, int(conv), prev_out, int(chan),
                                       (kh, kw), dilation, pool_after=pool_after))
                prev_out = int(chan)
        # the last parameterized block of each stack is linear output
        for j in range(len(specs) - 1, -1, -1):
            if specs[j].kind in (KIND_CONV, KIND_FC):
                specs[j] = replace(specs[j], relu=False)
                break
        stacks.append((sname, tuple(specs)))
    arch = ArchSpec(name, tuple(stacks), (h, w), width_scale, fine_pool, vgg_head)
    validate_arch(arch)
    return arch
