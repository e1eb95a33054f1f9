"""Layer primitives with forward and reverse-mode backward passes.

Every op returns a GradPair: the forward output plus a closure that maps
the upstream gradient to gradients for the op's inputs (and parameters,
where it has any).  The closures capture only immutable saved values.

The dilated convolution is restructured as one matrix product per kernel
tap (a patch-gather formulation that never materializes the full patch
matrix), keeping everything inside BLAS.  The plain nested-loop
transcription lives in reference.py and is only used to verify this
path.  Dilation 1 is the standard convolution: same code.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import GeometryError, ShapeError
from .tensor import check_tensor4


@dataclass
class GradPair:
    """Forward output plus the reverse-mode closure for this op."""
    output: np.ndarray
    backward: Callable


@dataclass
class ConvParams:
    """Weights (out, in, kh, kw), per-output-channel bias, dilation, padding.

    Stride is carried for geometry bookkeeping but must be 1: all
    convolutions in the two stacks are stride-1, and downsampling is done
    by pooling.  Parameter count is out*in*kh*kw + out, independent of
    dilation.
    """
    weights: np.ndarray
    bias: np.ndarray
    dilation: int = 1
    stride: int = 1
    padding: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError("conv weights must have shape (out, in, kh, kw)")
        out_ch, _, kh, kw = self.weights.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"kernel dims must be odd, got {kh}x{kw}")
        if self.bias.shape != (out_ch,):
            raise ShapeError(f"bias must have shape ({out_ch},), got {self.bias.shape}")
        if self.dilation < 1:
            raise ShapeError(f"dilation must be >= 1, got {self.dilation}")
        if self.stride != 1:
            raise ShapeError("only stride-1 convolutions are supported")
        if self.padding[0] < 0 or self.padding[1] < 0:
            raise ShapeError(f"padding must be non-negative, got {self.padding}")

    @property
    def n_params(self) -> int:
        out_ch, in_ch, kh, kw = self.weights.shape
        return out_ch * in_ch * kh * kw + out_ch


def same_padding(kernel: tuple[int, int], dilation: int) -> tuple[int, int]:
    """Padding that keeps spatial size under stride-1 dilated convolution."""
    kh, kw = kernel
    return (dilation * (kh - 1) // 2, dilation * (kw - 1) // 2)


def conv_output_size(size: tuple[int, int], kernel: tuple[int, int],
                     dilation: int, padding: tuple[int, int]) -> tuple[int, int]:
    h, w = size
    kh, kw = kernel
    ph, pw = padding
    return (h + 2 * ph - dilation * (kh - 1), w + 2 * pw - dilation * (kw - 1))


def conv2d_dilated(x: np.ndarray, p: ConvParams) -> GradPair:
    """Stride-1 dilated 2-D convolution with zero padding.

    out(n, o, y, x) = bias(o) + sum_{c,i,j}
        in(n, c, y + dilation*i - pad_h, x + dilation*j - pad_w) * w(o, c, i, j)

    Evaluated tap by tap: for each kernel position (i, j) the shifted
    input window feeds one (out x in) matrix product, so the whole op is
    a sequence of GEMMs with no patch matrix in memory.

    backward(upstream) -> (d_input, d_weights, d_bias)
    """
    check_tensor4(x, "conv input")
    n, c, h, w = x.shape
    out_ch, in_ch, kh, kw = p.weights.shape
    if c != in_ch:
        raise ShapeError(f"conv expects {in_ch} input channels, got {c}")
    ph, pw = p.padding
    dil = p.dilation
    oh, ow = conv_output_size((h, w), (kh, kw), dil, p.padding)
    if oh < 1 or ow < 1:
        raise GeometryError(
            f"conv output {oh}x{ow} < 1 for input {h}x{w}, kernel {kh}x{kw}, "
            f"dilation {dil}, padding {p.padding}")

    padded = bool(ph or pw)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if padded else x
    # (kh, kw, out, in): tap weights must be contiguous or matmul leaves BLAS
    w_taps = np.ascontiguousarray(p.weights.transpose(2, 3, 0, 1))
    single_tap = kh == 1 and kw == 1

    def window(i: int, j: int):
        return xp[:, :, i * dil:i * dil + oh, j * dil:j * dil + ow]

    # one reused window buffer: per-tap allocations dominate otherwise
    src = np.empty((n, c, oh, ow), dtype=x.dtype) if not single_tap else None

    def tap(i: int, j: int) -> np.ndarray:
        if single_tap:
            return np.ascontiguousarray(window(i, j)).reshape(n, c, oh * ow)
        np.copyto(src, window(i, j))
        return src.reshape(n, c, oh * ow)

    acc = np.zeros((n, out_ch, oh * ow), dtype=x.dtype)
    tmp = np.empty_like(acc)
    for i in range(kh):
        for j in range(kw):
            np.matmul(w_taps[i, j], tap(i, j), out=tmp)
            acc += tmp
    acc += p.bias.astype(x.dtype)[:, None]
    out = acc.reshape(n, out_ch, oh, ow)

    def backward(up: np.ndarray):
        if up.shape != out.shape:
            raise ShapeError(f"upstream shape {up.shape} != forward output {out.shape}")
        up_mat = up.reshape(n, out_ch, oh * ow)
        d_bias = up.sum(axis=(0, 2, 3), dtype=np.float64).astype(x.dtype)
        d_w = np.empty_like(p.weights)
        dxp = np.zeros_like(xp)
        dw_tmp = np.empty((n, out_ch, c), dtype=x.dtype)
        dsrc_tmp = np.empty((n, c, oh * ow), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                np.matmul(up_mat, tap(i, j).transpose(0, 2, 1), out=dw_tmp)
                d_w[:, :, i, j] = dw_tmp.sum(axis=0)
                np.matmul(w_taps[i, j].T, up_mat, out=dsrc_tmp)
                dxp[:, :, i * dil:i * dil + oh, j * dil:j * dil + ow] += \
                    dsrc_tmp.reshape(n, c, oh, ow)
        d_x = dxp[:, :, ph:ph + h, pw:pw + w] if padded else dxp
        return d_x, d_w, d_bias

    return GradPair(out, backward)


def dense(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> GradPair:
    """Fully connected layer over a flattened (c, h, w) volume.

    weights has shape (out, c*h*w); output is (n, out, 1, 1).
    backward(upstream) -> (d_input, d_weights, d_bias)
    """
    check_tensor4(x, "dense input")
    n = x.shape[0]
    flat = x.reshape(n, -1)
    out_ch, in_dim = weights.shape
    if flat.shape[1] != in_dim:
        raise ShapeError(f"dense expects {in_dim} inputs, got {flat.shape[1]} "
                         f"from shape {x.shape[1:]}")
    y = flat @ weights.T + bias.astype(x.dtype)
    out = y.reshape(n, out_ch, 1, 1)

    def backward(up: np.ndarray):
        if up.shape != out.shape:
            raise ShapeError(f"upstream shape {up.shape} != forward output {out.shape}")
        up_mat = up.reshape(n, out_ch)
        d_w = up_mat.T @ flat
        d_b = up_mat.sum(axis=0, dtype=np.float64).astype(x.dtype)
        d_x = (up_mat @ weights).reshape(x.shape)
        return d_x, d_w, d_b

    return GradPair(out, backward)


def relu(x: np.ndarray) -> GradPair:
    """max(0, x); the derivative at exactly 0 is defined as 0."""
    out = np.maximum(x, 0)
    gate = x > 0

    def backward(up: np.ndarray):
        if up.shape != out.shape:
            raise ShapeError(f"upstream shape {up.shape} != forward output {out.shape}")
        return up * gate

    return GradPair(out, backward)


def maxpool2d(x: np.ndarray, window: tuple[int, int], stride: tuple[int, int],
              padding: tuple[int, int] = (0, 0)) -> GradPair:
    """Per-window maximum; padded positions never win the max.

    backward routes the upstream gradient to the arg-max position of each
    window, first occurrence in row-major window order on ties.
    """
    check_tensor4(x, "pool input")
    n, c, h, w = x.shape
    wh, ww = window
    sh, sw = stride
    ph, pw = padding
    hp, wp = h + 2 * ph, w + 2 * pw
    if wh > hp or ww > wp:
        raise GeometryError(f"pool window {wh}x{ww} larger than padded input {hp}x{wp}")
    oh = (hp - wh) // sh + 1
    ow = (wp - ww) // sw + 1

    fill_value = -np.inf if (ph or pw) else 0.0
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=fill_value)
    windows = np.empty((n, c, wh * ww, oh, ow), dtype=x.dtype)
    for i in range(wh):
        for j in range(ww):
            windows[:, :, i * ww + j] = xp[:, :, i:i + (oh - 1) * sh + 1:sh,
                                           j:j + (ow - 1) * sw + 1:sw]
    arg = windows.argmax(axis=2)
    out = np.take_along_axis(windows, arg[:, :, None], axis=2)[:, :, 0]

    def backward(up: np.ndarray):
        if up.shape != out.shape:
            raise ShapeError(f"upstream shape {up.shape} != forward output {out.shape}")
        di, dj = arg // ww, arg % ww
        oy = np.arange(oh)[None, None, :, None]
        ox = np.arange(ow)[None, None, None, :]
        iy = oy * sh + di
        ix = ox * sw + dj
        bi = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        dxp = np.zeros((n, c, hp, wp), dtype=x.dtype)
        np.add.at(dxp, (np.broadcast_to(bi, arg.shape), np.broadcast_to(ci, arg.shape), iy, ix), up)
        return dxp[:, :, ph:ph + h, pw:pw + w]

    return GradPair(out, backward)


def upsample_nearest(x: np.ndarray, factor: tuple[int, int]) -> GradPair:
    """Replicate each pixel factor_h x factor_w times.

    backward sums the upstream gradient over each replication block.
    """
    check_tensor4(x, "upsample input")
    fh, fw = factor
    if fh < 1 or fw < 1:
        raise ShapeError(f"upsample factors must be >= 1, got {factor}")
    out = x.repeat(fh, axis=2).repeat(fw, axis=3)
    n, c, h, w = x.shape

    def backward(up: np.ndarray):
        if up.shape != out.shape:
            raise ShapeError(f"upstream shape {up.shape} != forward output {out.shape}")
        return up.reshape(n, c, h, fh, w, fw).sum(axis=(3, 5))

    return GradPair(out, backward)


def concat_channels(a: np.ndarray, b: np.ndarray) -> GradPair:
    """Stack b's channels after a's; backward splits at the boundary."""
    check_tensor4(a, "concat lhs")
    check_tensor4(b, "concat rhs")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat needs matching batch/spatial dims: {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a, b], axis=1)

    def backward(up: np.ndarray):
        if up.shape != out.shape:
            raise ShapeError(f"upstream shape {up.shape} != forward output {out.shape}")
        return up[:, :ca].copy(), up[:, ca:].copy()

    return GradPair(out, backward)


def receptive_field(layers) -> tuple[int, int]:
    """Receptive field of a stack of (kernel, dilation, stride) layers.

    Accumulates rf += (k - 1) * dilation * jump per layer with jump
    multiplying by the stride, starting from rf = 1, jump = 1.  kernel
    and stride entries may be ints or (h, w) pairs.
    """
    if not layers:
        raise ValueError("layer list must be non-empty")
    rf = [1, 1]
    jump = [1, 1]
    for kernel, dilation, stride in layers:
        ks = (kernel, kernel) if isinstance(kernel, int) else tuple(kernel)
        ss = (stride, stride) if isinstance(stride, int) else tuple(stride)
        for ax in (0, 1):
            rf[ax] += (ks[ax] - 1) * dilation * jump[ax]
            jump[ax] *= ss[ax]
    return (rf[0], rf[1])
