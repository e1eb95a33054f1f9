"""Runtime networks built from an ArchSpec.

Layers are stateful in the usual hand-rolled-backprop style: forward
stashes the reverse closures, backward consumes them and leaves gradient
arrays behind keyed like the parameters.  Parameters live in plain
name->array dicts so the optimizer and the checkpoint format can treat
them uniformly.

Hidden layers use uniform fan-in initialization; prediction heads (the
linear layers ending each stack) start at zero so the first forward pass
is a constant map and early training is stable.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .arch import (
    ArchSpec, FINE_POOL, KIND_CONCAT, KIND_CONV, KIND_FC, KIND_RESHAPE,
    KIND_UPSAMPLE, LayerSpec, STACK_FINE, STACK_OURS, STACK_VGG, VGG_POOL,
    stack_flow, stack_input_size, validate_arch,
)
from .errors import GeometryError, ShapeError
from .tensor import F32, make_rng, uniform_fanin


class ConvBlock:
    """conv_count stride-1 same-padded convolutions, ReLU after each when
    the spec says so (prediction heads are linear and zero-initialized)."""

    def __init__(self, spec: LayerSpec, dtype, rng):
        self.spec = spec
        self.padding = ops.same_padding(spec.kernel, spec.dilation)
        self.names = ([spec.name] if spec.conv_count == 1 else
                      [f"{spec.name}{chr(ord('a') + r)}" for r in range(spec.conv_count)])
        self.weights: dict[str, np.ndarray] = {}
        kh, kw = spec.kernel
        cin = spec.in_channels
        for name in self.names:
            shape = (spec.out_channels, cin, kh, kw)
            if spec.relu:
                w = uniform_fanin(shape, cin * kh * kw, rng, dtype)
            else:
                w = np.zeros(shape, dtype=dtype)
            self.weights[f"{name}.weight"] = w
            self.weights[f"{name}.bias"] = np.zeros(spec.out_channels, dtype=dtype)
            cin = spec.out_channels
        self.grads: dict[str, np.ndarray] = {}
        self._tape = []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._tape = []
        for name in self.names:
            p = ops.ConvParams(self.weights[f"{name}.weight"], self.weights[f"{name}.bias"],
                               dilation=self.spec.dilation, padding=self.padding)
            gp = ops.conv2d_dilated(x, p)
            self._tape.append(("conv", name, gp))
            x = gp.output
            if self.spec.relu:
                gp = ops.relu(x)
                self._tape.append(("relu", name, gp))
                x = gp.output
        return x

    def backward(self, up: np.ndarray) -> np.ndarray:
        for kind, name, gp in reversed(self._tape):
            if kind == "relu":
                up = gp.backward(up)
            else:
                up, dw, db = gp.backward(up)
                self.grads[f"{name}.weight"] = dw
                self.grads[f"{name}.bias"] = db
        return up


class FcBlock:
    """Dense layer over the flattened incoming volume."""

    def __init__(self, spec: LayerSpec, in_dim: int, dtype, rng):
        self.spec = spec
        self.in_dim = in_dim
        if spec.relu:
            w = uniform_fanin((spec.out_channels, in_dim), in_dim, rng, dtype)
        else:
            w = np.zeros((spec.out_channels, in_dim), dtype=dtype)
        self.weights = {f"{spec.name}.weight": w,
                        f"{spec.name}.bias": np.zeros(spec.out_channels, dtype=dtype)}
        self.grads: dict[str, np.ndarray] = {}
        self._tape = []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._tape = []
        gp = ops.dense(x, self.weights[f"{self.spec.name}.weight"],
                       self.weights[f"{self.spec.name}.bias"])
        self._tape.append(("dense", gp))
        x = gp.output
        if self.spec.relu:
            gp = ops.relu(x)
            self._tape.append(("relu", gp))
            x = gp.output
        return x

    def backward(self, up: np.ndarray) -> np.ndarray:
        for kind, gp in reversed(self._tape):
            if kind == "relu":
                up = gp.backward(up)
            else:
                up, dw, db = gp.backward(up)
                self.grads[f"{self.spec.name}.weight"] = dw
                self.grads[f"{self.spec.name}.bias"] = db
        return up


class _Stack:
    """Shared parameter plumbing over an ordered list of blocks."""

    def __init__(self):
        self.blocks = []

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for b in self.blocks:
            if hasattr(b, "weights"):
                out.update(b.weights)
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for b in self.blocks:
            if hasattr(b, "grads"):
                out.update(b.grads)
        return out

    def set_parameters(self, params: dict[str, np.ndarray]) -> None:
        for b in self.blocks:
            if not hasattr(b, "weights"):
                continue
            for key in b.weights:
                if key in params:
                    if params[key].shape != b.weights[key].shape:
                        raise ShapeError(f"parameter {key}: shape {params[key].shape} "
                                         f"!= expected {b.weights[key].shape}")
                    b.weights[key] = params[key]


class CoarseDilatedNet(_Stack):
    """Stack 1 (OUR): resolution-preserving dilated stack, 80x60 in/out."""

    def __init__(self, arch: ArchSpec, dtype, rng):
        super().__init__()
        self.input_size = stack_input_size(arch, STACK_OURS)
        self.blocks = [ConvBlock(spec, dtype, rng) for spec in arch.stack(STACK_OURS)]

    def forward(self, x: np.ndarray) -> np.ndarray:
        for b in self.blocks:
            x = b.forward(x)
        return x

    def backward(self, up: np.ndarray) -> np.ndarray:
        for b in reversed(self.blocks):
            up = b.backward(up)
        return up


class _Pool:
    def __init__(self, window, stride, padding):
        self.window, self.stride, self.padding = window, stride, padding
        self._gp = None

    def forward(self, x):
        self._gp = ops.maxpool2d(x, self.window, self.stride, self.padding)
        return self._gp.output

    def backward(self, up):
        return self._gp.backward(up)


class _ReshapeHead:
    """4800-vector -> (1, 80, 60); the fc output is exactly the depth map."""

    def __init__(self):
        self._in_shape = None

    def forward(self, x):
        n, c = x.shape[:2]
        if c != 80 * 60:
            raise ShapeError(f"reshape head expects 4800 channels, got {c}")
        self._in_shape = x.shape
        return x.reshape(n, 1, 80, 60)

    def backward(self, up):
        return up.reshape(self._in_shape)


class _UpsampleHead:
    """Alternate head reading: 1200-vector -> (1, 40, 30), nearest 2x."""

    def __init__(self):
        self._in_shape = None
        self._gp = None

    def forward(self, x):
        n, c = x.shape[:2]
        if c != 40 * 30:
            raise ShapeError(f"upsample head expects 1200 channels, got {c}")
        self._in_shape = x.shape
        self._gp = ops.upsample_nearest(x.reshape(n, 1, 40, 30), (2, 2))
        return self._gp.output

    def backward(self, up):
        return self._gp.backward(up).reshape(self._in_shape)


class VggCoarseNet(_Stack):
    """Stack 1 (VGG): downsampling pyramid, fc layers, 80x60 head."""

    def __init__(self, arch: ArchSpec, dtype, rng):
        super().__init__()
        self.input_size = stack_input_size(arch, STACK_VGG)
        specs = arch.stack(STACK_VGG)
        incoming = {name: size for name, size, _ in
                    stack_flow(specs, self.input_size, STACK_VGG)}
        self.blocks = []
        for spec in specs:
            if spec.kind == KIND_CONV:
                self.blocks.append(ConvBlock(spec, dtype, rng))
                if spec.pool_after:
                    self.blocks.append(_Pool(*VGG_POOL))
            elif spec.kind == KIND_FC:
                h, w = incoming[spec.name]
                self.blocks.append(FcBlock(spec, spec.in_channels * h * w, dtype, rng))
            elif spec.kind == KIND_RESHAPE:
                self.blocks.append(_ReshapeHead())
            elif spec.kind == KIND_UPSAMPLE:
                self.blocks.append(_UpsampleHead())
            else:
                raise ShapeError(f"unexpected layer kind {spec.kind} in VGG stack")

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[2:] != self.input_size:
            raise GeometryError(f"VGG coarse stack is built for {self.input_size[0]}x"
                                f"{self.input_size[1]} input, got {x.shape[2]}x{x.shape[3]}")
        for b in self.blocks:
            x = b.forward(x)
        return x

    def backward(self, up: np.ndarray) -> np.ndarray:
        for b in reversed(self.blocks):
            up = b.backward(up)
        return up


class FineNet(_Stack):
    """Stack 2: edge features from the 80x60 image, concatenated with the
    coarse prediction, refined down to one channel."""

    def __init__(self, arch: ArchSpec, dtype, rng):
        super().__init__()
        specs = arch.stack(STACK_FINE)
        by_name = {s.name: s for s in specs}
        self.edge = ConvBlock(by_name["2.1"], dtype, rng)
        self.pool = _Pool(*FINE_POOL) if by_name["2.1"].pool_after else None
        self.mix = ConvBlock(by_name["2.3"], dtype, rng)
        self.head = ConvBlock(by_name["2.4"], dtype, rng)
        self.blocks = [self.edge, self.mix, self.head]
        self._concat_gp = None

    def forward(self, image: np.ndarray, coarse_pred: np.ndarray) -> np.ndarray:
        x = self.edge.forward(image)
        if self.pool is not None:
            x = self.pool.forward(x)
        self._concat_gp = ops.concat_channels(x, coarse_pred)
        x = self.mix.forward(self._concat_gp.output)
        return self.head.forward(x)

    def backward(self, up: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Returns (d_image, d_coarse_pred)."""
        up = self.mix.backward(self.head.backward(up))
        d_feat, d_coarse = self._concat_gp.backward(up)
        if self.pool is not None:
            d_feat = self.pool.backward(d_feat)
        return self.edge.backward(d_feat), d_coarse


class TwoStackNet:
    """Coarse stack plus refinement stack; parameters are namespaced
    "coarse.*" / "fine.*" for the optimizer and checkpoints."""

    def __init__(self, arch: ArchSpec, seed: int = 0, dtype=F32):
        validate_arch(arch)
        self.arch = arch
        self.dtype = dtype
        rng = make_rng(seed, 1)
        coarse_stack = STACK_VGG if arch.name == "vgg" else STACK_OURS
        if coarse_stack == STACK_VGG:
            self.coarse = VggCoarseNet(arch, dtype, rng)
        else:
            self.coarse = CoarseDilatedNet(arch, dtype, rng)
        self.fine = FineNet(arch, dtype, rng)
        self.coarse_input_size = self.coarse.input_size
        self.fine_input_size = (80, 60)
        self.output_size = (80, 60)

    def parameters(self) -> dict[str, np.ndarray]:
        out = {f"coarse.{k}": v for k, v in self.coarse.parameters().items()}
        out.update({f"fine.{k}": v for k, v in self.fine.parameters().items()})
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {f"coarse.{k}": v for k, v in self.coarse.gradients().items()}
        out.update({f"fine.{k}": v for k, v in self.fine.gradients().items()})
        return out

    def set_parameters(self, params: dict[str, np.ndarray]) -> None:
        self.coarse.set_parameters({k[len("coarse."):]: v for k, v in params.items()
                                    if k.startswith("coarse.")})
        self.fine.set_parameters({k[len("fine."):]: v for k, v in params.items()
                                  if k.startswith("fine.")})

    def forward_coarse(self, image: np.ndarray) -> np.ndarray:
        return self.coarse.forward(image)

    def forward_full(self, coarse_image: np.ndarray, fine_image: np.ndarray,
                     coarse_pred: np.ndarray | None = None) -> np.ndarray:
        """Full pipeline; a precomputed coarse prediction may be supplied
        when the coarse stack is frozen (it is then not re-run)."""
        if coarse_pred is None:
            coarse_pred = self.coarse.forward(coarse_image)
        return self.fine.forward(fine_image, coarse_pred)

    def backward_full(self, up: np.ndarray, freeze_coarse: bool = True) -> None:
        _, d_coarse = self.fine.backward(up)
        if not freeze_coarse:
            self.coarse.backward(d_coarse)

    def trainable_keys(self, phase: int, freeze_coarse: bool = True) -> list[str]:
        params = self.parameters()
        if phase == 1:
            return [k for k in params if k.startswith("coarse.")]
        if freeze_coarse:
            return [k for k in params if k.startswith("fine.")]
        return list(params)


def build_model(arch: ArchSpec, seed: int = 0, dtype=F32) -> TwoStackNet:
    return TwoStackNet(arch, seed=seed, dtype=dtype)
