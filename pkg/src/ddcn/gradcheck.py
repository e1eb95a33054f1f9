"""Central finite-difference verification of every backward pass.

All checks run at float64 (the differences are meaningless at 32-bit) and
probe each op through a random linear functional of its output, so the
analytic gradient is just backward(projection).  Tolerances: 1e-4
relative for layer ops, 1e-6 for the loss gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import loss as silog
from . import ops
from .tensor import F64, make_rng

STEP = 1e-5
TOL_OPS = 1e-4
TOL_LOSS = 1e-6


@dataclass
class OpReport:
    name: str
    instances: int
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance


def finite_diff(f, x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of scalar f w.r.t. every element of x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = g.reshape(-1)
    xw = x.copy()
    xf = xw.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + step
        hi = f(xw)
        xf[i] = orig - step
        lo = f(xw)
        xf[i] = orig
        flat[i] = (hi - lo) / (2 * step)
    return g


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(analytic))),
                float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def _distinct_values(rng, shape) -> np.ndarray:
    """Random tensor whose elements are pairwise >= 0.01 apart, so an
    FD step of 1e-5 can never flip a pooling arg-max."""
    total = int(np.prod(shape))
    vals = (rng.permutation(total) * 0.01).astype(np.float64)
    return (vals - vals.mean()).reshape(shape)


# (kernel, dilation) pairs whose dilated span l*(k-1)+1 fits an 8-pixel input
_CONV_CASES = [(1, 1), (1, 2), (1, 3), (3, 1), (3, 2), (3, 3), (5, 1)]


def _check_conv(rng, sabotage: bool) -> float:
    n = int(rng.integers(1, 3))
    c = int(rng.integers(1, 4))
    out_ch = int(rng.integers(1, 4))
    k, l = _CONV_CASES[int(rng.integers(0, len(_CONV_CASES)))]
    span = l * (k - 1) + 1
    h = int(rng.integers(span, 9))
    w = int(rng.integers(span, 9))
    pad = ops.same_padding((k, k), l) if rng.integers(0, 2) else (0, 0)
    x = rng.standard_normal((n, c, h, w))
    weights = rng.standard_normal((out_ch, c, k, k))
    bias = rng.standard_normal(out_ch)
    p = ops.ConvParams(weights, bias, dilation=l, padding=pad)
    gp = ops.conv2d_dilated(x, p)
    proj = rng.standard_normal(gp.output.shape)
    dx, dw, db = gp.backward(proj)
    if sabotage:
        dw = dw * 1.01
    err = rel_err(dx, finite_diff(lambda v: float(np.sum(ops.conv2d_dilated(v, p).output * proj)), x))
    err = max(err, rel_err(dw, finite_diff(
        lambda v: float(np.sum(ops.conv2d_dilated(
            x, ops.ConvParams(v, bias, dilation=l, padding=pad)).output * proj)), weights)))
    err = max(err, rel_err(db, finite_diff(
        lambda v: float(np.sum(ops.conv2d_dilated(
            x, ops.ConvParams(weights, v, dilation=l, padding=pad)).output * proj)), bias)))
    return err


def _check_relu(rng, sabotage: bool) -> float:
    shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4)),
             int(rng.integers(2, 7)), int(rng.integers(2, 7)))
    x = rng.standard_normal(shape)
    x = np.where(np.abs(x) < 0.05, 0.1, x)  # keep clear of the kink
    gp = ops.relu(x)
    proj = rng.standard_normal(gp.output.shape)
    dx = gp.backward(proj)
    if sabotage:
        dx = dx * 1.01
    return rel_err(dx, finite_diff(lambda v: float(np.sum(ops.relu(v).output * proj)), x))


def _check_maxpool(rng, sabotage: bool) -> float:
    shape = (int(rng.integers(1, 3)), int(rng.integers(1, 3)),
             int(rng.integers(4, 8)), int(rng.integers(4, 8)))
    x = _distinct_values(rng, shape)
    window = (int(rng.integers(2, 4)), int(rng.integers(2, 4)))
    same = bool(rng.integers(0, 2)) and window == (3, 3)
    stride = (1, 1) if same else (int(rng.integers(1, 3)), int(rng.integers(1, 3)))
    padding = (1, 1) if same else (0, 0)
    gp = ops.maxpool2d(x, window, stride, padding)
    proj = rng.standard_normal(gp.output.shape)
    dx = gp.backward(proj)
    if sabotage:
        dx = dx * 1.01
    return rel_err(dx, finite_diff(
        lambda v: float(np.sum(ops.maxpool2d(v, window, stride, padding).output * proj)), x))


def _check_upsample(rng, sabotage: bool) -> float:
    shape = (int(rng.integers(1, 3)), int(rng.integers(1, 3)),
             int(rng.integers(2, 6)), int(rng.integers(2, 6)))
    x = rng.standard_normal(shape)
    factor = (int(rng.integers(1, 4)), int(rng.integers(1, 4)))
    gp = ops.upsample_nearest(x, factor)
    proj = rng.standard_normal(gp.output.shape)
    dx = gp.backward(proj)
    if sabotage:
        dx = dx * 1.01
    return rel_err(dx, finite_diff(
        lambda v: float(np.sum(ops.upsample_nearest(v, factor).output * proj)), x))


def _check_concat(rng, sabotage: bool) -> float:
    n, h, w = int(rng.integers(1, 3)), int(rng.integers(2, 6)), int(rng.integers(2, 6))
    a = rng.standard_normal((n, int(rng.integers(1, 4)), h, w))
    b = rng.standard_normal((n, int(rng.integers(1, 4)), h, w))
    gp = ops.concat_channels(a, b)
    proj = rng.standard_normal(gp.output.shape)
    da, db = gp.backward(proj)
    if sabotage:
        da = da * 1.01
    err = rel_err(da, finite_diff(lambda v: float(np.sum(ops.concat_channels(v, b).output * proj)), a))
    return max(err, rel_err(db, finite_diff(
        lambda v: float(np.sum(ops.concat_channels(a, v).output * proj)), b)))


def _check_dense(rng, sabotage: bool) -> float:
    n, c, h, w = int(rng.integers(1, 3)), int(rng.integers(1, 4)), 2, 3
    out_ch = int(rng.integers(1, 5))
    x = rng.standard_normal((n, c, h, w))
    weights = rng.standard_normal((out_ch, c * h * w))
    bias = rng.standard_normal(out_ch)
    gp = ops.dense(x, weights, bias)
    proj = rng.standard_normal(gp.output.shape)
    dx, dw, db = gp.backward(proj)
    if sabotage:
        dw = dw * 1.01
    err = rel_err(dx, finite_diff(lambda v: float(np.sum(ops.dense(v, weights, bias).output * proj)), x))
    err = max(err, rel_err(dw, finite_diff(
        lambda v: float(np.sum(ops.dense(x, v, bias).output * proj)), weights)))
    return max(err, rel_err(db, finite_diff(
        lambda v: float(np.sum(ops.dense(x, weights, v).output * proj)), bias)))


def _check_loss(rng, sabotage: bool) -> float:
    h, w = int(rng.integers(2, 5)), int(rng.integers(2, 5))
    pred = rng.standard_normal((1, 1, h, w))
    depth = rng.uniform(0.5, 10.0, (1, 1, h, w))
    if rng.integers(0, 2):
        drop = rng.integers(0, 2, (1, 1, h, w)).astype(bool)
        drop.reshape(-1)[:2] = True  # keep n_valid >= 2
        depth = np.where(drop, depth, 0.0)
    pair = silog.LogDepthPair.from_depth(pred, depth)
    analytic = silog.loss_gradient(pair)
    if sabotage:
        analytic = analytic * 1.01

    def f(v):
        return silog.variance_loss(silog.LogDepthPair.from_depth(v, depth))

    return rel_err(analytic, finite_diff(f, pred))


_SUITES = [
    ("conv2d_dilated", _check_conv, TOL_OPS),
    ("relu", _check_relu, TOL_OPS),
    ("maxpool2d", _check_maxpool, TOL_OPS),
    ("upsample_nearest", _check_upsample, TOL_OPS),
    ("concat_channels", _check_concat, TOL_OPS),
    ("dense", _check_dense, TOL_OPS),
    ("loss_gradient", _check_loss, TOL_LOSS),
]


def run_all(seed: int = 0, instances: int = 20, sabotage: str | None = None) -> list[OpReport]:
    """Run every op's finite-difference suite; `sabotage` perturbs the named
    op's analytic gradient (a negative control for the checker itself)."""
    reports = []
    for idx, (name, check, tol) in enumerate(_SUITES):
        rng = make_rng(seed, 5, idx)
        worst = 0.0
        for _ in range(instances):
            worst = max(worst, check(rng, sabotage == name))
        reports.append(OpReport(name, instances, worst, tol))
    return reports
