"""Naive direct-sum implementations used as verification oracles.

These are intentionally plain nested loops that transcribe the defining
sums, with no shared code with the vectorized paths in ops.py/loss.py.
They stay in-tree so the equivalence checks can always be re-run.
"""

from __future__ import annotations

import numpy as np


def conv2d_direct(x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
                  dilation: int = 1, padding: tuple[int, int] = (0, 0)) -> np.ndarray:
    """Dilated 2-D convolution by direct summation (6 nested loops).

    out(n, o, y, x) = bias(o)
        + sum_{c,i,j} in(n, c, y + dilation*i - pad_h, x + dilation*j - pad_w)
                      * weights(o, c, i, j)
    with out-of-range input treated as zero.
    """
    n, c, h, w = x.shape
    out_ch, in_ch, kh, kw = weights.shape
    assert c == in_ch
    ph, pw = padding
    oh = h + 2 * ph - dilation * (kh - 1)
    ow = w + 2 * pw - dilation * (kw - 1)
    out = np.zeros((n, out_ch, oh, ow), dtype=np.float64)
    for b in range(n):
        for o in range(out_ch):
            for y in range(oh):
                for xx in range(ow):
                    acc = float(bias[o])
                    for ci in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                sy = y + dilation * i - ph
                                sx = xx + dilation * j - pw
                                if 0 <= sy < h and 0 <= sx < w:
                                    acc += float(x[b, ci, sy, sx]) * float(weights[o, ci, i, j])
                    out[b, o, y, xx] = acc
    return out.astype(x.dtype)


def maxpool2d_direct(x: np.ndarray, window: tuple[int, int], stride: tuple[int, int],
                     padding: tuple[int, int] = (0, 0)) -> np.ndarray:
    """Sliding-window maximum by enumeration; padded positions never win."""
    n, c, h, w = x.shape
    wh, ww = window
    sh, sw = stride
    ph, pw = padding
    oh = (h + 2 * ph - wh) // sh + 1
    ow = (w + 2 * pw - ww) // sw + 1
    out = np.empty((n, c, oh, ow), dtype=x.dtype)
    for b in range(n):
        for ci in range(c):
            for y in range(oh):
                for xx in range(ow):
                    best = -np.inf
                    for i in range(wh):
                        for j in range(ww):
                            sy = y * sh + i - ph
                            sx = xx * sw + j - pw
                            if 0 <= sy < h and 0 <= sx < w:
                                v = float(x[b, ci, sy, sx])
                                if v > best:
                                    best = v
                    out[b, ci, y, xx] = best
    return out


def pairwise_loss_direct(d: np.ndarray, mask: np.ndarray) -> float:
    """Training loss by the explicit O(n^2) double sum over valid pixels:

        (1 / 2n^2) * sum_{i,j} (d_i - d_j)^2
    """
    dv = [float(v) for v in np.asarray(d)[np.asarray(mask, dtype=bool)]]
    n = len(dv)
    assert n >= 2
    total = 0.0
    for i in range(n):
        for j in range(n):
            total += (dv[i] - dv[j]) ** 2
    return total / (2.0 * n * n)


def best_shift_scan(d: np.ndarray, mask: np.ndarray,
                    lo: float = -10.0, hi: float = 10.0, step: float = 1e-4) -> float:
    """Dense scan for the shift t minimizing (1/2n) sum (d_i + t)^2."""
    dv = np.asarray(d, dtype=np.float64)[np.asarray(mask, dtype=bool)]
    n = dv.size
    assert n >= 1
    ts = np.arange(lo, hi + step, step)
    vals = 0.5 / n * ((dv[None, :] + ts[:, None]) ** 2).sum(axis=1)
    return float(ts[int(np.argmin(vals))])
