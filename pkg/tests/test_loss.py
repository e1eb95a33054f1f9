import numpy as np
import pytest

from ddcn import loss as silog
from ddcn import reference
from ddcn.errors import DomainError, EmptyMaskError
from ddcn.gradcheck import finite_diff, rel_err
from ddcn.tensor import make_rng


def _pair(pred_log, depth, mask=None):
    return silog.LogDepthPair.from_depth(np.asarray(pred_log, dtype=np.float64),
                                         np.asarray(depth, dtype=np.float64), mask)


def _random_pair(rng, h=3, w=3, with_holes=False):
    pred = rng.standard_normal((1, 1, h, w))
    depth = rng.uniform(0.5, 10.0, (1, 1, h, w))
    if with_holes:
        holes = rng.integers(0, 2, depth.shape).astype(bool)
        holes.reshape(-1)[:2] = True
        depth = np.where(holes, depth, 0.0)
    return _pair(pred, depth)


# ---------------------------------------------------------------------------
# optimal shift (alpha)

def test_shift_zero_for_identical_maps():
    depth = np.full((1, 1, 2, 2), 3.0)
    pair = _pair(np.log(depth), depth)
    assert silog.optimal_shift(pair) == pytest.approx(0.0, abs=1e-12)


def test_shift_is_minus_one_for_e_scale():
    depth = np.full((1, 1, 2, 2), 2.0)
    pair = _pair(np.log(depth) + 1.0, depth)  # prediction e times too large
    assert silog.optimal_shift(pair) == pytest.approx(-1.0, abs=1e-12)


def test_shift_matches_dense_scan_oracle():
    rng = make_rng(21)
    pair = _random_pair(rng, 2, 2)
    scanned = reference.best_shift_scan(pair.d_field, pair.mask)
    assert abs(silog.optimal_shift(pair) - scanned) < 1e-3


def test_shift_beats_every_scanned_shift():
    rng = make_rng(22)
    for _ in range(5):
        pair = _random_pair(rng, 3, 2, with_holes=True)
        d = pair.d_field[pair.mask]
        n = pair.n_valid
        a = silog.optimal_shift(pair)
        d_at_alpha = silog.scale_invariant_mse(pair)
        ts = np.arange(-10.0, 10.0001, 1e-2)
        vals = 0.5 / n * ((d[None, :] + ts[:, None]) ** 2).sum(axis=1)
        assert d_at_alpha <= vals.min() + 1e-12
        assert np.isclose(d_at_alpha, 0.5 / n * ((d + a) ** 2).sum())


def test_shift_empty_mask_error():
    with pytest.raises(EmptyMaskError):
        _pair(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 2)))


# ---------------------------------------------------------------------------
# shift-compensated error D

def test_mse_zero_for_identical():
    depth = np.full((1, 1, 3, 3), 4.0)
    assert silog.scale_invariant_mse(_pair(np.log(depth), depth)) == pytest.approx(0.0, abs=1e-15)


def test_mse_zero_for_any_constant_scale():
    rng = make_rng(23)
    depth = rng.uniform(1, 9, (1, 1, 3, 3))
    for c in (0.1, 2.0, 10.0):
        pair = _pair(np.log(c * depth), depth)
        assert silog.scale_invariant_mse(pair) == pytest.approx(0.0, abs=1e-12)


def test_mse_two_pixel_hand_case():
    # prediction (1, e^2), truth (1, 1): d = (0, 2), shift -1, D = 1/4 * 2 = 0.5
    pred_log = np.array([0.0, 2.0]).reshape(1, 1, 1, 2)
    depth = np.ones((1, 1, 1, 2))
    assert silog.scale_invariant_mse(_pair(pred_log, depth)) == pytest.approx(0.5)


def test_domain_error_on_explicit_valid_nonpositive():
    depth = np.array([[1.0, 0.0]]).reshape(1, 1, 1, 2)
    mask = np.ones((1, 1, 1, 2), dtype=bool)
    with pytest.raises(DomainError):
        _pair(np.zeros((1, 1, 1, 2)), depth, mask)


# ---------------------------------------------------------------------------
# training loss

def test_loss_zero_at_perfect_prediction():
    rng = make_rng(24)
    depth = rng.uniform(1, 9, (1, 1, 3, 3))
    report = silog.training_loss(_pair(np.log(depth), depth))
    assert report.loss == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(report.grad, 0.0, atol=1e-12)


def test_loss_two_pixel_hand_case():
    # d = (0, 2): L = (1/2)*4 - (1/4)*(2^2) = 1.0
    pred_log = np.array([0.0, 2.0]).reshape(1, 1, 1, 2)
    depth = np.ones((1, 1, 1, 2))
    pair = _pair(pred_log, depth)
    assert silog.variance_loss(pair) == pytest.approx(1.0)
    assert reference.pairwise_loss_direct(pair.d_field, pair.mask) == pytest.approx(1.0)


def test_loss_scale_invariance():
    rng = make_rng(25)
    depth = rng.uniform(0.5, 10, (1, 1, 4, 4))
    pred = rng.standard_normal((1, 1, 4, 4))
    base = silog.variance_loss(_pair(pred, depth))
    for c in (0.1, 1.0, np.e, 10.0):
        scaled = silog.variance_loss(_pair(pred + np.log(c), depth))
        assert abs(scaled - base) <= 1e-9


def test_reformulated_equals_double_loop_oracle():
    rng = make_rng(26)
    for size in [(1, 16), (2, 8), (4, 4), (8, 8), (1, 2)]:
        pair = _random_pair(rng, *size, with_holes=size[0] * size[1] > 4)
        fast = silog.variance_loss(pair)
        slow = reference.pairwise_loss_direct(pair.d_field, pair.mask)
        assert abs(fast - slow) <= 1e-10 * max(1.0, abs(slow))


def test_loss_nonnegative_and_zero_iff_constant_d():
    rng = make_rng(27)
    for _ in range(10):
        pair = _random_pair(rng, 3, 3, with_holes=True)
        assert silog.variance_loss(pair) >= 0.0
    depth = rng.uniform(1, 9, (1, 1, 3, 3))
    constant_d = _pair(np.log(depth) + 0.37, depth)
    assert silog.variance_loss(constant_d) == pytest.approx(0.0, abs=1e-12)


def test_loss_symmetric_under_swap():
    # swapping prediction and truth flips the sign of d, leaving L unchanged
    rng = make_rng(28)
    depth_a = rng.uniform(1, 9, (1, 1, 3, 3))
    depth_b = rng.uniform(1, 9, (1, 1, 3, 3))
    ab = silog.variance_loss(_pair(np.log(depth_a), depth_b))
    ba = silog.variance_loss(_pair(np.log(depth_b), depth_a))
    assert ab == pytest.approx(ba, rel=1e-12)


def test_loss_needs_two_valid_pixels():
    depth = np.array([[5.0, 0.0]]).reshape(1, 1, 1, 2)
    pair = _pair(np.zeros((1, 1, 1, 2)), depth)
    with pytest.raises(EmptyMaskError):
        silog.variance_loss(pair)


# ---------------------------------------------------------------------------
# gradient

def test_gradient_sums_to_zero_and_masks():
    rng = make_rng(29)
    pair = _random_pair(rng, 4, 4, with_holes=True)
    g = silog.loss_gradient(pair)
    assert abs(g.sum()) < 1e-12
    assert np.all(g[~pair.mask] == 0.0)


def test_gradient_matches_finite_differences():
    rng = make_rng(30)
    for _ in range(5):
        pred = rng.standard_normal((1, 1, 3, 3))
        depth = rng.uniform(0.5, 10.0, (1, 1, 3, 3))
        pair = _pair(pred, depth)
        analytic = silog.loss_gradient(pair)

        def f(v):
            return silog.variance_loss(_pair(v, depth))

        assert rel_err(analytic, finite_diff(f, pred)) < 1e-6


def test_training_loss_report_fields():
    rng = make_rng(31)
    pair = _random_pair(rng, 3, 3)
    report = silog.training_loss(pair)
    assert report.loss >= 0
    assert report.grad.shape == pair.pred_log.shape
    assert report.d_field.shape == pair.pred_log.shape
    assert np.isfinite(report.alpha)


def test_nan_prediction_propagates_to_loss():
    # a non-finite prediction must surface as a non-finite loss, not get
    # clamped away, or divergence detection would be blind
    pred = np.array([np.nan, 1.0]).reshape(1, 1, 1, 2)
    depth = np.full((1, 1, 1, 2), 2.0)
    pair = _pair(pred, depth)
    assert not np.isfinite(silog.variance_loss(pair))
    assert not np.isfinite(silog.scale_invariant_mse(pair))


def test_depth_floor_bounds_log():
    depth = np.array([[1e-9, 5.0]]).reshape(1, 1, 1, 2)
    mask = np.ones((1, 1, 1, 2), dtype=bool)
    pair = _pair(np.zeros((1, 1, 1, 2)), depth, mask)
    assert np.isfinite(pair.true_log).all()
    assert pair.true_log[0, 0, 0, 0] == pytest.approx(np.log(1e-3))
