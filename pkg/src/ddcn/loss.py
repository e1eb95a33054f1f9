"""Scale-invariant log-depth error family with invalid-pixel masking.

The network predicts log-depth directly; ground truth arrives in meters
and is log-transformed (with a 1e-3 m floor) when a pair is built.
Pixels with non-positive ground truth are masked out and the pixel count
n in every formula below is the number of valid pixels.

With d_i = log y_i - log y*_i over valid pixels:

  optimal shift     a    = -(1/n) sum_i d_i
  shifted error     D    = (1/2n) sum_i (d_i + a)^2
  training loss     L    = (1/2n^2) sum_{i,j} (d_i - d_j)^2
                         = (1/n) sum_i d_i^2 - (1/n^2) (sum_i d_i)^2

The production loss always evaluates the O(n) second form; the explicit
O(n^2) double sum lives in reference.py as its oracle.  All sums
accumulate at 64-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EmptyMaskError
from .tensor import check_tensor4

DEPTH_FLOOR = 1e-3  # meters; bounds |log| on valid but tiny readings


@dataclass
class LogDepthPair:
    """Aligned prediction/truth tensors in log space plus the valid mask."""
    pred_log: np.ndarray
    true_log: np.ndarray
    mask: np.ndarray
    n_valid: int

    @classmethod
    def from_depth(cls, pred_log: np.ndarray, true_depth: np.ndarray,
                   mask: np.ndarray | None = None) -> "LogDepthPair":
        """Build a pair from predicted log-depth and metric ground truth.

        Without an explicit mask, non-positive depths are masked out (the
        missing-reading convention).  With one, a non-positive depth on a
        pixel the mask claims valid is a domain error.
        """
        check_tensor4(pred_log, "pred_log")
        check_tensor4(true_depth, "true_depth")
        if pred_log.shape != true_depth.shape:
            raise EmptyMaskError(f"prediction/truth shape mismatch: "
                                 f"{pred_log.shape} vs {true_depth.shape}")
        if mask is None:
            valid = true_depth > 0
        else:
            valid = np.asarray(mask, dtype=bool)
            if valid.shape != true_depth.shape:
                raise EmptyMaskError(f"mask shape {valid.shape} != depth shape {true_depth.shape}")
            if np.any(valid & (true_depth <= 0)):
                raise DomainError("non-positive ground-truth depth on a valid pixel")
        n_valid = int(valid.sum())
        if n_valid == 0:
            raise EmptyMaskError("no valid pixels in ground truth")
        true_log = np.zeros_like(pred_log)
        true_log[valid] = np.log(np.maximum(true_depth[valid], DEPTH_FLOOR)).astype(pred_log.dtype)
        return cls(pred_log, true_log, valid, n_valid)

    @property
    def d_field(self) -> np.ndarray:
        """Per-pixel log difference; exactly zero on masked pixels."""
        return np.where(self.mask, self.pred_log - self.true_log, 0).astype(self.pred_log.dtype)


@dataclass
class LossReport:
    loss: float
    d_field: np.ndarray
    alpha: float
    grad: np.ndarray


def _sums(pair: LogDepthPair) -> tuple[np.ndarray, float, float]:
    d = pair.d_field
    s1 = float(np.sum(d, dtype=np.float64))
    s2 = float(np.sum(np.square(d, dtype=np.float64)))
    return d, s1, s2


def _clamp_nonneg(value: float) -> float:
    """Zero out negative round-off; non-finite values must pass through so
    divergence detection sees them (max(0, nan) would hide a NaN)."""
    if not np.isfinite(value):
        return value
    return max(0.0, value)


def optimal_shift(pair: LogDepthPair) -> float:
    """The log-space shift that best aligns prediction to truth:
    (1/n) sum (log y* - log y).  exp of it is the best aligning scale."""
    _, s1, _ = _sums(pair)
    return -s1 / pair.n_valid


def scale_invariant_mse(pair: LogDepthPair) -> float:
    """Shift-compensated mean squared log error (1/2n) sum (d_i + shift)^2."""
    d, s1, s2 = _sums(pair)
    n = pair.n_valid
    a = -s1 / n
    # expand (d + a)^2 = d^2 + 2ad + a^2 over valid pixels
    return _clamp_nonneg((s2 + 2 * a * s1 + n * a * a) / (2 * n))


def variance_loss(pair: LogDepthPair) -> float:
    """The training loss in its O(n) form: (1/n) sum d^2 - (1/n^2)(sum d)^2."""
    if pair.n_valid < 2:
        raise EmptyMaskError(f"pairwise loss needs >= 2 valid pixels, got {pair.n_valid}")
    _, s1, s2 = _sums(pair)
    n = pair.n_valid
    return _clamp_nonneg(s2 / n - (s1 / n) ** 2)


def loss_gradient(pair: LogDepthPair) -> np.ndarray:
    """Gradient of the training loss w.r.t. predicted log-depth:
    (2/n) d_i - (2/n^2) sum_j d_j on valid pixels, zero on masked ones."""
    if pair.n_valid < 2:
        raise EmptyMaskError(f"pairwise loss needs >= 2 valid pixels, got {pair.n_valid}")
    d, s1, _ = _sums(pair)
    n = pair.n_valid
    g = (2.0 / n) * d - (2.0 * s1 / (n * n))
    return np.where(pair.mask, g, 0).astype(pair.pred_log.dtype)


def training_loss(pair: LogDepthPair) -> LossReport:
    """Loss value (O(n) form), optimal shift, d field, and analytic gradient."""
    return LossReport(
        loss=variance_loss(pair),
        d_field=pair.d_field,
        alpha=optimal_shift(pair),
        grad=loss_gradient(pair),
    )
