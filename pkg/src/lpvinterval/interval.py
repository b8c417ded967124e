"""Interval vectors/matrices and the interval-product bounds.

Everything here is plain floating point on small dense numpy arrays; no
outward rounding is attempted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Operands have incompatible shapes."""


class OrderError(ValueError):
    """An interval was built with lower > upper somewhere."""


def _as_array(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim == 0 and ndim == 1:
        arr = arr.reshape(1)
    elif arr.ndim == 0 and ndim == 2:
        arr = arr.reshape(1, 1)
    if arr.ndim != ndim:
        raise DimensionError(f"expected a {ndim}-d array, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionError("empty operand")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class IntervalVector:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _as_array(self.lower, 1)
        hi = _as_array(self.upper, 1)
        if lo.shape != hi.shape:
            raise DimensionError(f"bound shapes differ: {lo.shape} vs {hi.shape}")
        bad = np.flatnonzero(~(lo <= hi))
        if bad.size:
            i = int(bad[0])
            raise OrderError(f"lower > upper at index {i}: {lo[i]!r} > {hi[i]!r}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def point(cls, x) -> IntervalVector:
        x = np.asarray(x, dtype=float)
        return cls(x, x)

    def __len__(self) -> int:
        return self.lower.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def hull(self, other: IntervalVector) -> IntervalVector:
        return IntervalVector(np.minimum(self.lower, other.lower), np.maximum(self.upper, other.upper))

    def __eq__(self, other) -> bool:
        if not isinstance(other, IntervalVector):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    def __repr__(self) -> str:
        return f"IntervalVector(lower={self.lower.tolist()}, upper={self.upper.tolist()})"


@dataclass(frozen=True, eq=False)
class IntervalMatrix:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _as_array(self.lower, 2)
        hi = _as_array(self.upper, 2)
        if lo.shape != hi.shape:
            raise DimensionError(f"bound shapes differ: {lo.shape} vs {hi.shape}")
        if not np.all(lo <= hi):
            i, j = map(int, np.argwhere(~(lo <= hi))[0])
            raise OrderError(f"lower > upper at entry ({i}, {j})")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def point(cls, a) -> IntervalMatrix:
        a = np.asarray(a, dtype=float)
        return cls(a, a)

    @classmethod
    def hull_of(cls, matrices) -> IntervalMatrix:
        stack = np.stack([np.asarray(m, dtype=float) for m in matrices])
        return cls(stack.min(axis=0), stack.max(axis=0))

    @property
    def shape(self) -> tuple[int, int]:
        return self.lower.shape

    def __repr__(self) -> str:
        return f"IntervalMatrix(lower={self.lower.tolist()}, upper={self.upper.tolist()})"


def pos(a: np.ndarray) -> np.ndarray:
    """Elementwise positive part max(0, a)."""
    return np.maximum(a, 0.0)


def neg(a: np.ndarray) -> np.ndarray:
    """Elementwise negative part max(0, -a), so that a = pos(a) - neg(a)."""
    return np.maximum(-a, 0.0)


def split_parts(m) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(m_plus, m_minus)``, both nonnegative, with ``m = m_plus - m_minus``."""
    m = np.asarray(m, dtype=float)
    m_plus = pos(m)
    # +0.0 normalises the -0.0 that max(0, -0) can leave behind
    return m_plus, (m_plus - m) + 0.0


def _check_mv(shape: tuple[int, ...], n: int):
    if len(shape) != 2 or shape[1] != n:
        raise DimensionError(f"matrix of shape {shape} cannot multiply a vector of length {n}")


def mul_const_interval(a, x: IntervalVector) -> IntervalVector:
    """Enclose ``{a v : x.lower <= v <= x.upper}`` for a constant matrix ``a``."""
    a = np.asarray(a, dtype=float)
    _check_mv(a.shape, len(x))
    ap, am = split_parts(a)
    lo = ap @ x.lower - am @ x.upper
    hi = ap @ x.upper - am @ x.lower
    return IntervalVector(lo, hi)


def interval_product_bounds(a_lo, a_hi, x_lo, x_hi) -> tuple[np.ndarray, np.ndarray]:
    """Raw-array form of the matrix-interval times vector-interval bound.

    Works on plain arrays so the predictors can call it on intermediate
    states without constructing validated intervals.
    """
    alp, alm = split_parts(a_lo)
    ahp, ahm = split_parts(a_hi)
    xlp, xlm = pos(x_lo), neg(x_lo)
    xhp, xhm = pos(x_hi), neg(x_hi)
    lo = alp @ xlp - ahp @ xlm - alm @ xhp + ahm @ xhm
    hi = ahp @ xhp - alp @ xhm - ahm @ xlp + alm @ xlm
    return lo, hi


def mul_interval_interval(a: IntervalMatrix, x: IntervalVector) -> IntervalVector:
    """Enclose ``{m v : m in a, v in x}``.

    When ``a`` is degenerate this reduces to :func:`mul_const_interval`
    exactly (the bound is evaluated through the same split parts).
    """
    _check_mv(a.shape, len(x))
    if np.array_equal(a.lower, a.upper):
        return mul_const_interval(a.lower, x)
    lo, hi = interval_product_bounds(a.lower, a.upper, x.lower, x.upper)
    return IntervalVector(lo, hi)


def mul_symmetric_interval(a_hi, x: IntervalVector) -> IntervalVector:
    """Shortcut for the symmetric case ``-a_hi <= a <= a_hi``: ``±a_hi (x.upper⁺ + x.lower⁻)``."""
    a_hi = np.asarray(a_hi, dtype=float)
    _check_mv(a_hi.shape, len(x))
    if np.any(a_hi < 0):
        raise ValueError("symmetric bound must be nonnegative")
    r = a_hi @ (pos(x.upper) + neg(x.lower))
    return IntervalVector(-r, r)


def norm_max(a) -> float:
    return float(np.max(np.abs(np.asarray(a, dtype=float))))
