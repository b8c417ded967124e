"""Naive and polytopic interval predictors, and their fixed-step integrator."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .interval import (
    DimensionError,
    IntervalMatrix,
    IntervalVector,
    interval_product_bounds,
    neg,
    pos,
    split_parts,
)
from .metzler import is_metzler


class Method(str, enum.Enum):
    NAIVE = "naive"
    STABLE = "stable"


class OrderViolation(RuntimeError):
    def __init__(self, time: float, index: int):
        super().__init__(f"lower bound crossed upper bound at t={time:.6g} (component {index}); reduce dt")
        self.time = time
        self.index = index


class NonFiniteState(RuntimeError):
    def __init__(self, time: float, trajectory: IntervalTrajectory | None = None):
        super().__init__(f"interval bounds became non-finite at t={time:.6g}")
        self.time = time
        self.trajectory = trajectory


@dataclass(frozen=True, eq=False)
class PolytopicModel:
    """``A(θ) = A0 + Σ λ_i(θ) ΔA_i`` plus a known input matrix.

    ``weights="simplex"`` is the classic polytope (λ on the unit simplex).
    ``weights="box"`` lets every λ_i range over [0, 1] independently, which
    describes an affine parameter box with two deviations per parameter
    instead of one per corner. The predictors only use the deviations
    through their summed positive and negative parts, and the inclusion
    argument needs nothing beyond ``0 <= λ_i <= 1``, so both readings are
    served by the same right-hand side.
    """

    A0: np.ndarray
    deltas: tuple
    B: np.ndarray
    weights: str = "simplex"
    delta_plus: np.ndarray = field(init=False)
    delta_minus: np.ndarray = field(init=False)

    def __post_init__(self):
        a0 = np.array(self.A0, dtype=float, ndmin=2)
        n = a0.shape[0]
        if a0.shape != (n, n):
            raise DimensionError(f"A0 must be square, got {a0.shape}")
        if not is_metzler(a0, 1e-9):
            raise ValueError("A0 must be Metzler")
        deltas = tuple(np.array(d, dtype=float, ndmin=2) for d in self.deltas)
        for d in deltas:
            if d.shape != (n, n):
                raise DimensionError(f"deviation of shape {d.shape} does not match A0 {a0.shape}")
        if self.weights not in ("simplex", "box"):
            raise ValueError(f"weights must be 'simplex' or 'box', got {self.weights!r}")
        b = np.array(self.B, dtype=float, ndmin=2)
        if b.shape[0] != n:
            raise DimensionError(f"B has {b.shape[0]} rows, expected {n}")
        dp = np.zeros((n, n))
        dm = np.zeros((n, n))
        for d in deltas:
            p, m = split_parts(d)
            dp += p
            dm += m
        for name, val in (("A0", a0), ("B", b), ("delta_plus", dp), ("delta_minus", dm)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "deltas", deltas)

    @classmethod
    def from_vertices(cls, a0, vertices: Sequence, b) -> PolytopicModel:
        """Build from full vertex matrices ``A(θ_i)``; deviations are taken about ``a0``."""
        a0 = np.asarray(a0, dtype=float)
        return cls(a0, tuple(np.asarray(v, dtype=float) - a0 for v in vertices), b)

    @property
    def n(self) -> int:
        return self.A0.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def vertex_matrices(self) -> list[np.ndarray]:
        """``A0 + ΔA_i``; for simplex weights these are the polytope's vertices."""
        if not self.deltas:
            return [self.A0]
        return [self.A0 + d for d in self.deltas]

    def interval_matrix(self) -> IntervalMatrix:
        """Elementwise hull of the admissible matrices, as consumed by the naive predictor."""
        if self.weights == "box":
            return IntervalMatrix(self.A0 - self.delta_minus, self.A0 + self.delta_plus)
        return IntervalMatrix.hull_of(self.vertex_matrices())


@dataclass(frozen=True, eq=False)
class SignalBounds:
    """Piecewise-constant input bounds.

    Sample ``k`` is in force on ``[times[k], times[k+1])``; the last sample
    holds forever.
    """

    times: np.ndarray
    d_lower: np.ndarray
    d_upper: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.times, dtype=float))
        lo = np.asarray(self.d_lower, dtype=float)
        hi = np.asarray(self.d_upper, dtype=float)
        if lo.ndim == 1:
            lo = lo.reshape(len(t), -1) if len(t) > 1 else lo.reshape(1, -1)
        if hi.ndim == 1:
            hi = hi.reshape(len(t), -1) if len(t) > 1 else hi.reshape(1, -1)
        if lo.shape != hi.shape or lo.shape[0] != t.shape[0]:
            raise DimensionError("times, d_lower and d_upper must have matching lengths")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(lo > hi):
            raise ValueError("d_lower must not exceed d_upper")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "d_lower", lo)
        object.__setattr__(self, "d_upper", hi)

    @classmethod
    def constant(cls, lower, upper) -> SignalBounds:
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        return cls(np.array([0.0]), lower[None, :], upper[None, :])

    @property
    def m(self) -> int:
        return self.d_lower.shape[1]

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        k = max(int(np.searchsorted(self.times, t, side="right")) - 1, 0)
        return self.d_lower[k], self.d_upper[k]

    def widened(self, margin) -> SignalBounds:
        margin = np.asarray(margin, dtype=float)
        return SignalBounds(self.times, self.d_lower - margin, self.d_upper + margin)


@dataclass(frozen=True, eq=False)
class IntervalTrajectory:
    times: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    method: Method
    dt: float
    truncated: bool = False
    labels: tuple = ()

    def __post_init__(self):
        if self.lower.shape != self.upper.shape or self.lower.shape[0] != self.times.shape[0]:
            raise DimensionError("trajectory arrays have inconsistent shapes")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(self.lower > self.upper):
            raise ValueError("trajectory has lower > upper")

    def __len__(self) -> int:
        return self.times.shape[0]

    @property
    def n(self) -> int:
        return self.lower.shape[1]

    @property
    def states(self) -> list[IntervalVector]:
        return [IntervalVector(lo, hi) for lo, hi in zip(self.lower, self.upper)]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def __getitem__(self, k) -> IntervalVector:
        return IntervalVector(self.lower[k], self.upper[k])

    def hull(self, other: IntervalTrajectory) -> IntervalTrajectory:
        if not np.array_equal(self.times, other.times):
            raise ValueError("cannot hull trajectories on different time grids")
        return IntervalTrajectory(
            self.times,
            np.minimum(self.lower, other.lower),
            np.maximum(self.upper, other.upper),
            self.method,
            self.dt,
            self.truncated or other.truncated,
            self.labels,
        )


def _input_bounds(b, d_lo, d_hi):
    bp, bm = split_parts(b)
    return bp @ d_lo - bm @ d_hi, bp @ d_hi - bm @ d_lo


def naive_rhs(x_lo, x_hi, a: IntervalMatrix, b, d: IntervalVector):
    """Right-hand side of the direct predictor built from elementwise matrix bounds."""
    x_lo = np.asarray(x_lo, dtype=float)
    x_hi = np.asarray(x_hi, dtype=float)
    b = np.array(b, dtype=float, ndmin=2)
    n = x_lo.shape[0]
    if a.shape != (n, n) or x_hi.shape != (n,) or b.shape != (n, len(d)):
        raise DimensionError("naive_rhs operands have inconsistent shapes")
    lo, hi = interval_product_bounds(a.lower, a.upper, x_lo, x_hi)
    u_lo, u_hi = _input_bounds(b, d.lower, d.upper)
    return lo + u_lo, hi + u_hi


def stable_rhs(x_lo, x_hi, model: PolytopicModel, d: IntervalVector):
    """Right-hand side of the polytopic predictor (Metzler center + summed deviation parts)."""
    x_lo = np.asarray(x_lo, dtype=float)
    x_hi = np.asarray(x_hi, dtype=float)
    if x_lo.shape != (model.n,) or x_hi.shape != (model.n,) or len(d) != model.m:
        raise DimensionError("stable_rhs operands do not match the model")
    dp, dm = model.delta_plus, model.delta_minus
    u_lo, u_hi = _input_bounds(model.B, d.lower, d.upper)
    dx_lo = model.A0 @ x_lo - dp @ neg(x_lo) - dm @ pos(x_hi) + u_lo
    dx_hi = model.A0 @ x_hi + dp @ pos(x_hi) + dm @ neg(x_lo) + u_hi
    return dx_lo, dx_hi


def extended_system_matrices(model: PolytopicModel):
    """Block matrices of ``Ẋ = 𝒜X + R₊X⁺ − R₋X⁻ + δ`` for ``X = (x_lo, x_hi)``."""
    n = model.n
    z = np.zeros((n, n))
    a0, dp, dm = model.A0, model.delta_plus, model.delta_minus
    a_cal = np.block([[a0, z], [z, a0]])
    r_plus = np.block([[z, -dm], [z, dp]])
    r_minus = np.block([[dp, z], [-dm, z]])
    return a_cal, r_plus, r_minus


def extended_input(model: PolytopicModel, d_lo, d_hi) -> np.ndarray:
    """The input term δ of the extended system."""
    bp, bm = split_parts(model.B)
    return np.concatenate([bp @ d_lo - bm @ d_hi, bp @ d_hi - bm @ d_lo])


def _rk4(f: Callable, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(t, y)
    k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def time_grid(horizon: float, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not horizon >= dt:
        raise ValueError("horizon must be at least dt")
    steps = int(round(horizon / dt))
    if abs(steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        steps = int(np.floor(horizon / dt + 1e-9))
    return dt * np.arange(steps + 1)


def integrate(method, system, x0: IntervalVector, d: SignalBounds, horizon: float, dt: float = 0.01,
              labels: Sequence[str] = ()) -> IntervalTrajectory:
    """RK4 on the coupled ``(x_lo, x_hi)`` system.

    ``system`` is a :class:`PolytopicModel` for the stable predictor; the
    naive predictor accepts either a model (its elementwise hull is used)
    or a ``(IntervalMatrix, B)`` pair.

    Input bounds are frozen over each step at their value at the step start,
    which keeps piecewise-constant inputs exact when their switching times
    lie on the grid.

    On divergence the trajectory is cut at the last finite sample and
    attached to the raised :class:`NonFiniteState`.
    """
    method = Method(method)
    if method is Method.STABLE:
        if not isinstance(system, PolytopicModel):
            raise TypeError("the stable predictor needs a PolytopicModel")
        model = system
        n = model.n

        def rhs(lo, hi, dv):
            return stable_rhs(lo, hi, model, dv)
    else:
        if isinstance(system, PolytopicModel):
            a_int, b = system.interval_matrix(), system.B
        else:
            a_int, b = system
        b = np.array(b, dtype=float, ndmin=2)
        n = a_int.shape[0]

        def rhs(lo, hi, dv):
            return naive_rhs(lo, hi, a_int, b, dv)

    if len(x0) != n:
        raise DimensionError(f"x0 has dimension {len(x0)}, system has {n}")
    times = time_grid(horizon, dt)
    out = np.empty((times.size, 2 * n))
    y = np.concatenate([x0.lower, x0.upper])
    out[0] = y

    for k in range(1, times.size):
        t = times[k - 1]
        dv = IntervalVector(*d.at(t))

        def f(_t, yy):
            lo, hi = rhs(yy[:n], yy[n:], dv)
            return np.concatenate([lo, hi])

        with np.errstate(over="ignore", invalid="ignore"):
            y = _rk4(f, t, y, dt)
        if not np.all(np.isfinite(y)):
            traj = IntervalTrajectory(times[:k], out[:k, :n].copy(), out[:k, n:].copy(), method, dt, True,
                                      tuple(labels))
            raise NonFiniteState(float(times[k]), traj)
        bad = np.flatnonzero(y[:n] > y[n:])
        if bad.size:
            raise OrderViolation(float(times[k]), int(bad[0]))
        out[k] = y

    return IntervalTrajectory(times, out[:, :n].copy(), out[:, n:].copy(), method, dt, False, tuple(labels))


def integrate_or_truncate(method, system, x0, d, horizon, dt=0.01, labels=()) -> IntervalTrajectory:
    """Like :func:`integrate` but returns the truncated trajectory instead of raising on divergence."""
    try:
        return integrate(method, system, x0, d, horizon, dt, labels)
    except NonFiniteState as exc:
        return exc.trajectory


def simulate_lpv(model: PolytopicModel, x0, weights: Callable, d: Callable, horizon: float, dt: float) -> np.ndarray:
    """Integrate ``ẋ = (A0 + Σ w_i ΔA_i) x + B d`` for a batch of realizations.

    ``x0`` has shape ``(S, n)``; ``weights(k)`` returns ``(S, N)`` weights
    (simplex or box, matching ``model.weights``) and ``d(k)`` an ``(S, m)`` input, both held over step ``k``.
    Returns an array of shape ``(steps + 1, S, n)``.
    """
    times = time_grid(horizon, dt)
    x = np.array(x0, dtype=float, ndmin=2)
    deltas = np.stack(model.deltas) if model.deltas else np.zeros((0, model.n, model.n))
    out = np.empty((times.size,) + x.shape)
    out[0] = x
    for k in range(1, times.size):
        w = weights(k - 1)
        a = model.A0[None] + np.einsum("si,ijk->sjk", w, deltas)
        u = d(k - 1) @ model.B.T

        def f(_t, xx):
            return np.einsum("sjk,sk->sj", a, xx) + u

        x = _rk4(f, 0.0, x, dt)
        out[k] = x
    return out
