from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lpvinterval.interval import (
    DimensionError,
    IntervalMatrix,
    IntervalVector,
    OrderError,
    interval_product_bounds,
    mul_const_interval,
    mul_interval_interval,
    mul_symmetric_interval,
    neg,
    norm_max,
    pos,
    split_parts,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def corner_hull(a_lo, a_hi, x_lo, x_hi):
    """Exact range of ``A v`` over the boxes, by enumerating every corner."""
    m, n = a_lo.shape
    vs = np.array(list(itertools.product(*zip(x_lo, x_hi))))
    lo = np.full(m, np.inf)
    hi = np.full(m, -np.inf)
    for i in range(m):
        rows = np.array(list(itertools.product(*zip(a_lo[i], a_hi[i]))))
        vals = rows @ vs.T
        lo[i], hi[i] = vals.min(), vals.max()
    return lo, hi


class TestIntervalVector:
    def test_order_is_enforced(self):
        with pytest.raises(OrderError, match="index 1"):
            IntervalVector([0.0, 2.0], [1.0, 1.0])

    def test_nan_is_rejected(self):
        with pytest.raises(OrderError):
            IntervalVector([np.nan], [1.0])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            IntervalVector([0.0], [1.0, 2.0])

    def test_empty(self):
        with pytest.raises(DimensionError):
            IntervalVector([], [])

    def test_immutable(self):
        iv = IntervalVector([0.0], [1.0])
        with pytest.raises(ValueError):
            iv.lower[0] = 5.0

    def test_point_width_center_contains(self):
        iv = IntervalVector.point([1.0, -2.0])
        assert np.array_equal(iv.width, [0.0, 0.0])
        assert iv.contains([1.0, -2.0])
        assert not iv.contains([1.0, -1.9])
        assert iv.contains([1.0, -1.9], tol=0.2)
        assert np.array_equal(IntervalVector([0.0], [2.0]).center, [1.0])

    def test_hull(self):
        h = IntervalVector([0.0, 5.0], [1.0, 6.0]).hull(IntervalVector([-1.0, 5.5], [0.5, 7.0]))
        assert h == IntervalVector([-1.0, 5.0], [1.0, 7.0])

    def test_matrix_order(self):
        with pytest.raises(OrderError, match=r"\(0, 1\)"):
            IntervalMatrix([[0.0, 1.0]], [[1.0, 0.0]])


class TestSplitParts:
    def test_example(self):
        p, m = split_parts([[1, -2], [0, 3]])
        assert np.array_equal(p, [[1, 0], [0, 3]])
        assert np.array_equal(m, [[0, 2], [0, 0]])

    def test_zero(self):
        p, m = split_parts(np.zeros((2, 2)))
        assert not p.any() and not m.any()
        assert not np.signbit(m).any()

    def test_negative_identity(self):
        p, m = split_parts(-np.eye(3))
        assert np.array_equal(p, np.zeros((3, 3)))
        assert np.array_equal(m, np.eye(3))

    @given(arrays(float, (3, 4), elements=finite))
    def test_round_trip(self, a):
        p, m = split_parts(a)
        assert np.all(p >= 0) and np.all(m >= 0)
        assert np.array_equal(p - m, a)
        assert np.array_equal(p + m, np.abs(a))

    def test_pos_neg(self):
        x = np.array([-2.0, 0.0, 3.0])
        assert np.array_equal(pos(x), [0, 0, 3])
        assert np.array_equal(neg(x), [2, 0, 0])
        assert np.array_equal(pos(x) - neg(x), x)


class TestConstProduct:
    def test_identity(self):
        x = IntervalVector([-1.0, 2.0], [3.0, 4.0])
        assert mul_const_interval(np.eye(2), x) == x

    def test_difference_row(self):
        r = mul_const_interval([[1.0, -1.0]], IntervalVector([0.0, 0.0], [1.0, 1.0]))
        assert r == IntervalVector([-1.0], [1.0])
        assert np.array_equal(corner_hull(np.array([[1.0, -1.0]]), np.array([[1.0, -1.0]]), [0, 0], [1, 1])[0], [-1])

    def test_negation(self):
        x = IntervalVector([-1.0, 2.0], [3.0, 4.0])
        assert mul_const_interval(-np.eye(2), x) == IntervalVector([-3.0, -4.0], [1.0, -2.0])

    def test_dimension(self):
        with pytest.raises(DimensionError):
            mul_const_interval(np.eye(3), IntervalVector([0.0], [1.0]))

    def test_const_is_tight(self, rng):
        for _ in range(50):
            a = rng.integers(-4, 5, (3, 3)).astype(float)
            lo = rng.integers(-4, 4, 3).astype(float)
            x = IntervalVector(lo, lo + rng.integers(0, 4, 3))
            r = mul_const_interval(a, x)
            lo, hi = corner_hull(a, a, x.lower, x.upper)
            assert np.array_equal(r.lower, lo) and np.array_equal(r.upper, hi)


class TestIntervalProduct:
    def test_degenerate_matches_const_bitwise(self, rng):
        for _ in range(100):
            a = rng.normal(size=(3, 2))
            lo = rng.normal(size=2)
            x = IntervalVector(lo, lo + rng.random(2))
            assert mul_interval_interval(IntervalMatrix.point(a), x) == mul_const_interval(a, x)

    def test_symmetric_example(self):
        # the bound is sound but not tight here: the true range is [-3, 3]
        a = IntervalMatrix([[-1.0]], [[1.0]])
        x = IntervalVector([-2.0], [3.0])
        r = mul_interval_interval(a, x)
        assert r == IntervalVector([-5.0], [5.0])
        assert mul_symmetric_interval([[1.0]], x) == r
        lo, hi = corner_hull(a.lower, a.upper, x.lower, x.upper)
        assert (lo[0], hi[0]) == (-3.0, 3.0)

    def test_zero_vector(self):
        a = IntervalMatrix([[-1.0, 2.0]], [[1.0, 3.0]])
        r = mul_interval_interval(a, IntervalVector([0.0, 0.0], [0.0, 0.0]))
        assert r == IntervalVector([0.0], [0.0])

    def test_symmetric_shortcut_agrees(self, rng):
        for _ in range(100):
            ah = rng.random((2, 3))
            lo = rng.normal(size=3)
            x = IntervalVector(lo, lo + rng.random(3))
            r1 = mul_interval_interval(IntervalMatrix(-ah, ah), x)
            r2 = mul_symmetric_interval(ah, x)
            assert np.allclose(r1.lower, r2.lower, atol=1e-12) and np.allclose(r1.upper, r2.upper, atol=1e-12)

    def test_symmetric_rejects_negative(self):
        with pytest.raises(ValueError):
            mul_symmetric_interval([[-1.0]], IntervalVector([0.0], [1.0]))

    def test_raw_bounds_match_validated(self, rng):
        a_lo = rng.normal(size=(2, 2))
        a_hi = a_lo + rng.random((2, 2))
        lo = rng.normal(size=2)
        hi = lo + 1.0
        r = mul_interval_interval(IntervalMatrix(a_lo, a_hi), IntervalVector(lo, hi))
        raw = interval_product_bounds(a_lo, a_hi, lo, hi)
        assert np.array_equal(r.lower, raw[0]) and np.array_equal(r.upper, raw[1])


@settings(max_examples=200, deadline=None)
@given(
    arrays(float, (2, 3), elements=finite),
    arrays(float, (2, 3), elements=st.floats(0, 10)),
    arrays(float, 3, elements=finite),
    arrays(float, 3, elements=st.floats(0, 10)),
    st.integers(0, 2**31 - 1),
)
def test_enclosure_on_random_samples(a_lo, a_w, x_lo, x_w, seed):
    rng = np.random.default_rng(seed)
    a = IntervalMatrix(a_lo, a_lo + a_w)
    x = IntervalVector(x_lo, x_lo + x_w)
    r = mul_interval_interval(a, x)
    rc = mul_const_interval(a.lower, x)
    scale = 1e-12 * (1.0 + np.abs(a.upper).max() + np.abs(a.lower).max()) * (1.0 + np.abs(x.upper).max() + np.abs(x.lower).max())
    for _ in range(20):
        am = a.lower + rng.random(a.shape) * (a.upper - a.lower)
        v = x.lower + rng.random(3) * (x.upper - x.lower)
        y = am @ v
        assert np.all(r.lower <= y + scale) and np.all(y <= r.upper + scale)
        yc = a.lower @ v
        assert np.all(rc.lower <= yc + scale) and np.all(yc <= rc.upper + scale)


@settings(max_examples=200, deadline=None)
@given(
    arrays(float, (2, 2), elements=st.integers(-8, 8).map(float)),
    arrays(float, (2, 2), elements=st.integers(0, 4).map(float)),
    arrays(float, 2, elements=st.integers(-8, 8).map(float)),
    arrays(float, 2, elements=st.integers(0, 4).map(float)),
    arrays(float, 2, elements=st.integers(0, 4).map(float)),
)
def test_widening_never_shrinks(a_lo, a_w, x_lo, x_w, grow):
    a = IntervalMatrix(a_lo, a_lo + a_w)
    small = mul_interval_interval(a, IntervalVector(x_lo, x_lo + x_w))
    big = mul_interval_interval(a, IntervalVector(x_lo - grow, x_lo + x_w + grow))
    assert np.all(big.lower <= small.lower) and np.all(big.upper >= small.upper)
    small_c = mul_const_interval(a_lo, IntervalVector(x_lo, x_lo + x_w))
    big_c = mul_const_interval(a_lo, IntervalVector(x_lo - grow, x_lo + x_w + grow))
    assert np.all(big_c.lower <= small_c.lower) and np.all(big_c.upper >= small_c.upper)


def test_norm_max():
    assert norm_max([[1.0, -3.0], [2.0, 0.0]]) == 3.0
