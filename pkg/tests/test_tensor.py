import numpy as np
import pytest

from ddcn import tensor
from ddcn.errors import ShapeError


def test_fill_constant():
    t = tensor.fill((1, 1, 2, 2), 0.0)
    assert t.shape == (1, 1, 2, 2)
    assert np.all(t == 0.0)

    t = tensor.fill((2, 3, 4, 5), 1.5)
    assert t.size == 120
    assert np.all(t == 1.5)

    t = tensor.fill((1, 1, 1, 1), -2.0)
    assert t[0, 0, 0, 0] == -2.0


def test_fill_rejects_bad_shape():
    with pytest.raises(ShapeError):
        tensor.fill((1, 0, 2, 2), 1.0)
    with pytest.raises(ShapeError):
        tensor.fill((1, 2, 2), 1.0)


def test_map2_elementwise():
    a = tensor.fill((1, 1, 1, 2), 0.0)
    a[0, 0, 0] = [1, 2]
    b = tensor.fill((1, 1, 1, 2), 0.0)
    b[0, 0, 0] = [3, 4]
    assert np.array_equal(tensor.map2(a, b, np.add)[0, 0, 0], [4, 6])

    x = tensor.fill((2, 1, 3, 3), 2.5)
    zeros = tensor.fill((2, 1, 3, 3), 0.0)
    assert np.all(tensor.map2(x, zeros, np.multiply) == 0.0)
    assert np.all(tensor.map2(x, x, np.subtract) == 0.0)


def test_map2_shape_mismatch():
    with pytest.raises(ShapeError):
        tensor.map2(tensor.fill((1, 1, 2, 2), 1.0), tensor.fill((1, 1, 2, 3), 1.0), np.add)


def test_reduce_examples():
    ones = tensor.fill((1, 1, 2, 2), 1.0)
    assert tensor.reduce(ones, "sum") == 4.0
    vals = np.array([-1.0, 0.0, 5.0, 3.0]).reshape(1, 1, 2, 2)
    assert tensor.reduce(vals, "max") == 5.0
    two_four = np.array([2.0, 4.0]).reshape(1, 1, 1, 2)
    assert tensor.reduce(two_four, "mean") == 3.0


def test_reduce_permutation_invariant():
    rng = tensor.make_rng(11)
    vals = rng.standard_normal(512).astype(np.float32)
    perm = rng.permutation(512)
    a = vals.reshape(2, 4, 8, 8)
    b = vals[perm].reshape(2, 4, 8, 8)
    sa, sb = tensor.reduce(a, "sum"), tensor.reduce(b, "sum")
    assert abs(sa - sb) <= 1e-12 * max(1.0, abs(sa))


def test_add_commutes_within_ulp():
    rng = tensor.make_rng(5)
    a = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    b = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    ab = tensor.map2(a, b, np.add)
    ba = tensor.map2(b, a, np.add)
    assert np.array_equal(ab, ba)
    c = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    lhs = tensor.map2(tensor.map2(a, b, np.add), c, np.add)
    rhs = tensor.map2(a, tensor.map2(b, c, np.add), np.add)
    # round-off is bounded by ulps of the largest intermediate magnitude
    biggest = np.max(np.stack([np.abs(v) for v in (a, b, c, a + b, b + c, lhs, rhs)]), axis=0)
    assert np.all(np.abs(lhs - rhs) <= 4 * np.spacing(biggest))


def test_reshape_round_trip():
    rng = tensor.make_rng(3)
    t = rng.standard_normal((2, 3, 4, 5)).astype(np.float32)
    back = t.reshape(6, 20).reshape(2, 3, 4, 5)
    assert np.array_equal(back, t)


def test_rng_streams_bit_identical():
    a = tensor.make_rng(42).standard_normal(1000)
    b = tensor.make_rng(42).standard_normal(1000)
    assert np.array_equal(a, b)
    c = tensor.make_rng(43).standard_normal(1000)
    assert not np.array_equal(a, c)


def test_uniform_fanin_bounds():
    rng = tensor.make_rng(1)
    t = tensor.uniform_fanin((2, 3, 4, 4), fan_in=6, rng=rng)
    assert np.all(t >= -1.0) and np.all(t <= 1.0)  # sqrt(6/6) = 1


def test_uniform_fanin_deterministic():
    a = tensor.uniform_fanin((1, 2, 3, 4), 10, tensor.make_rng(9))
    b = tensor.uniform_fanin((1, 2, 3, 4), 10, tensor.make_rng(9))
    assert np.array_equal(a, b)


def test_uniform_fanin_mean_statistics():
    # mean of n uniform samples on [-b, b] has sd b/sqrt(3n)
    n = 10 ** 6
    fan_in = 6
    bound = np.sqrt(6 / fan_in)
    t = tensor.uniform_fanin((1, 1, 1000, 1000), fan_in, tensor.make_rng(123), dtype=np.float64)
    sd_of_mean = bound / np.sqrt(3 * n)
    assert abs(float(t.mean())) < 3 * sd_of_mean
