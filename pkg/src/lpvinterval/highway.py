"""Highway traffic prediction: vehicle model, LPV embeddings and ground-truth sampling.

Longitudinal and lateral motions are predicted separately. The longitudinal
chain (positions then velocities of every vehicle) is a single LPV system;
each vehicle's lateral motion is a 2-state LPV system whose speed
dependence is covered by the velocity tube of the longitudinal prediction.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .interval import IntervalVector, mul_const_interval
from .metzler import SimilarityTransform, eigendecomposition_transform
from .predictor import (
    IntervalTrajectory,
    Method,
    PolytopicModel,
    SignalBounds,
    integrate_or_truncate,
    time_grid,
)

V_MIN = 1.0
STATE_LABELS = ("x", "y", "v", "psi")
# keeps the lateral center's eigenvalues real and apart: p0 * v <= θ5² / 8
LATERAL_DAMPING_RATIO = 8.0


class ScenarioError(ValueError):
    pass


class CyclicFollowing(ScenarioError):
    pass


class SpeedTooLow(ValueError):
    pass


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    v: float
    psi: float

    def __post_init__(self):
        for name in ("x", "y", "v", "psi"):
            if not math.isfinite(getattr(self, name)):
                raise ScenarioError(f"vehicle state {name} must be finite")
        if self.v < 0:
            raise ScenarioError("vehicle speed must be nonnegative")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.v, self.psi])


@dataclass(frozen=True)
class BehaviorParams:
    """Longitudinal gains θ1..θ3 (speed tracking, front-speed and distance braking), lateral θ4, heading θ5."""

    theta1: float
    theta2: float
    theta3: float
    theta4: float
    theta5: float

    def __post_init__(self):
        if any(t < 0 for t in self.as_array()):
            raise ScenarioError("behaviour parameters must be nonnegative")

    @classmethod
    def from_array(cls, a) -> BehaviorParams:
        return cls(*(float(x) for x in a))

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2, self.theta3, self.theta4, self.theta5])


@dataclass(frozen=True)
class Rules:
    v0: float = 25.0
    d0: float = 10.0
    T: float = 1.5

    def __post_init__(self):
        if not (math.isfinite(self.v0) and self.v0 > 0):
            raise ScenarioError("speed limit v0 must be positive")
        if not (math.isfinite(self.d0) and self.d0 >= 0):
            raise ScenarioError("jam distance d0 must be nonnegative")
        if not (math.isfinite(self.T) and self.T >= 0):
            raise ScenarioError("time gap T must be nonnegative")


@dataclass(frozen=True)
class Lane:
    y: float
    psi: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.y) and math.isfinite(self.psi)):
            raise ScenarioError("lane geometry must be finite")


@dataclass(frozen=True)
class Road:
    lanes: tuple
    width: float = 4.0

    def __post_init__(self):
        if not self.lanes:
            raise ScenarioError("road needs at least one lane")
        if not (math.isfinite(self.width) and self.width > 0):
            raise ScenarioError("lane width must be positive")
        object.__setattr__(self, "lanes", tuple(self.lanes))


@dataclass(frozen=True)
class Vehicle:
    id: str
    state: VehicleState
    theta_lower: np.ndarray
    theta_upper: np.ndarray
    lanes: tuple
    l: float = 2.5
    front: str | None = None

    def __post_init__(self):
        lo = np.asarray(self.theta_lower, dtype=float)
        hi = np.asarray(self.theta_upper, dtype=float)
        if lo.shape != (5,) or hi.shape != (5,):
            raise ScenarioError(f"vehicle {self.id}: theta bounds need 5 entries")
        if np.any(lo > hi):
            raise ScenarioError(f"vehicle {self.id}: parameter box order (theta_lower > theta_upper)")
        if np.any(lo < 0):
            raise ScenarioError(f"vehicle {self.id}: behaviour parameters must be nonnegative")
        if not self.l > 0:
            raise ScenarioError(f"vehicle {self.id}: half-length must be positive")
        if not self.lanes:
            raise ScenarioError(f"vehicle {self.id}: at least one lane hypothesis is required")
        if self.front == self.id:
            raise ScenarioError(f"vehicle {self.id} cannot follow itself")
        object.__setattr__(self, "theta_lower", lo)
        object.__setattr__(self, "theta_upper", hi)
        object.__setattr__(self, "lanes", tuple(int(k) for k in self.lanes))

    @property
    def theta_mid(self) -> np.ndarray:
        return 0.5 * (self.theta_lower + self.theta_upper)


@dataclass(frozen=True)
class Scenario:
    vehicles: tuple
    road: Road
    rules: Rules = Rules()
    right_hand_traffic: bool = False

    def __post_init__(self):
        ids = [v.id for v in self.vehicles]
        if not ids:
            raise ScenarioError("scenario has no vehicles")
        if len(set(ids)) != len(ids):
            raise ScenarioError("vehicle ids must be unique")
        for veh in self.vehicles:
            if veh.front is not None and veh.front not in ids:
                raise ScenarioError(f"vehicle {veh.id}: unknown front vehicle {veh.front!r}")
            for k in veh.lanes:
                if not 0 <= k < len(self.road.lanes):
                    raise ScenarioError(f"vehicle {veh.id}: lane index {k} out of range")
        self.front_indices()

    def index(self, vid: str) -> int:
        return [v.id for v in self.vehicles].index(vid)

    def front_indices(self) -> list[int | None]:
        """Front-vehicle index per vehicle; rejects following cycles."""
        fronts = [None if v.front is None else self.index(v.front) for v in self.vehicles]
        for start in range(len(fronts)):
            seen = {start}
            j = fronts[start]
            while j is not None:
                if j in seen:
                    raise CyclicFollowing(f"following cycle through vehicle {self.vehicles[start].id}")
                seen.add(j)
                j = fronts[j]
        return fronts

    def current_lane(self, i: int) -> int:
        y = self.vehicles[i].state.y
        return int(np.argmin([abs(lane.y - y) for lane in self.road.lanes]))

    def lane_hypotheses(self, i: int) -> tuple[int, ...]:
        """Admissible lanes for vehicle ``i``.

        Lanes are indexed left to right. With right-hand traffic a vehicle is
        never expected to move to a lane left of the one it occupies.
        """
        lanes = self.vehicles[i].lanes
        if self.right_hand_traffic:
            cur = self.current_lane(i)
            kept = tuple(k for k in lanes if k >= cur)
            return kept or (max(lanes),)
        return lanes

    def with_vehicles(self, vehicles) -> Scenario:
        return Scenario(tuple(vehicles), self.road, self.rules, self.right_hand_traffic)


# -- vehicle model ---------------------------------------------------------

def bicycle_rhs(z: VehicleState, a: float, beta: float, l: float) -> np.ndarray:
    if not l > 0:
        raise ValueError("half-length must be positive")
    return np.array([z.v * math.cos(z.psi), z.v * math.sin(z.psi), a, z.v / l * math.tan(beta)])


def _negpart(s):
    return np.maximum(-s, 0.0)


def longitudinal_acceleration(theta: BehaviorParams, v: float, v_front: float | None = None,
                              gap: float | None = None, rules: Rules = Rules()) -> float:
    """Linear IDM-like command; ``gap`` is the front position minus own position."""
    if (v_front is None) != (gap is None):
        raise ValueError("v_front and gap must be given together")
    a = theta.theta1 * (rules.v0 - v)
    if v_front is not None:
        a -= theta.theta2 * _negpart(v_front - v)
        a -= theta.theta3 * _negpart(gap - (rules.d0 + v * rules.T))
    return float(a)


@dataclass(frozen=True)
class LateralCommand:
    psi_dot: float
    beta: float
    clamped: bool


def lateral_closed_loop(theta: BehaviorParams, y: float, psi: float, lane: Lane, v: float, l: float = 2.5,
                        v_min: float = V_MIN) -> LateralCommand:
    """Cascade lane-keeping controller: heading-rate command and the slip angle achieving it.

    The arcsine argument is clamped to [-1, 1]; ``clamped`` reports when that
    happened.
    """
    if v < v_min:
        raise SpeedTooLow(f"speed {v} below {v_min}")
    ratio = theta.theta4 * (lane.y - y) / v
    clamped = abs(ratio) > 1.0
    ratio = min(1.0, max(-1.0, ratio))
    psi_dot = theta.theta5 * (lane.psi + math.asin(ratio) - psi)
    beta = math.atan(l / v * psi_dot)
    return LateralCommand(psi_dot, beta, clamped)


# -- LPV embeddings --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LpvEmbedding:
    """``Ż = A(θ)(Z - Zc) + d`` with ``A(θ)`` in a polytope, expressed in eigen-coordinates.

    ``model`` lives in the coordinates ``Z' = S⁻¹(Z - Zc)``; ``center`` and
    ``deviations`` describe the same matrix set in the original coordinates.
    """

    Zc: np.ndarray
    d_bounds: SignalBounds
    model: PolytopicModel
    transform: SimilarityTransform
    coordinate_labels: tuple
    center: np.ndarray
    deviations: tuple
    B: np.ndarray

    def to_transformed(self, z: IntervalVector) -> IntervalVector:
        shifted = IntervalVector(z.lower - self.Zc, z.upper - self.Zc)
        return mul_const_interval(self.transform.S_inv, shifted)

    def to_original(self, lower: np.ndarray, upper: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Back-transform a batch of transformed-coordinate boxes."""
        s = self.transform.S
        sp, sm = np.maximum(s, 0.0), np.maximum(-s, 0.0)
        lo = lower @ sp.T - upper @ sm.T + self.Zc
        hi = upper @ sp.T - lower @ sm.T + self.Zc
        return lo, hi


def _build_embedding(center, deviations, weights, b_orig, zc, d_lo, d_hi, labels) -> LpvEmbedding:
    tr = eigendecomposition_transform(center)
    model = PolytopicModel(tr.transformed_center, tuple(tr.to_new(dv) for dv in deviations), tr.S_inv @ b_orig,
                           weights)
    return LpvEmbedding(
        Zc=np.asarray(zc, dtype=float),
        d_bounds=SignalBounds.constant(d_lo, d_hi),
        model=model,
        transform=tr,
        coordinate_labels=tuple(labels),
        center=np.asarray(center, dtype=float),
        deviations=tuple(np.asarray(dv, dtype=float) for dv in deviations),
        B=np.asarray(b_orig, dtype=float),
    )


def _deviations(fn, center, lo, hi, polytope: str):
    """Deviations of the affine map ``fn`` from ``fn(center)`` over the box ``[lo, hi]``.

    ``"corners"``: one deviation per box corner (simplex weights).
    ``"generators"``: ``(lo_j - c_j) G_j`` and ``(hi_j - c_j) G_j`` per
    parameter with independent weights in [0, 1], where ``G_j`` is the
    coefficient matrix of parameter ``j``.
    """
    base = fn(np.zeros_like(center))
    a0 = fn(center)
    if polytope == "corners":
        return [fn(c) - a0 for c in _box_corners(lo, hi)], "simplex"
    if polytope != "generators":
        raise ValueError(f"unknown polytope description {polytope!r}")
    out = []
    for j in range(center.size):
        e = np.zeros_like(center)
        e[j] = 1.0
        g = fn(e) - base
        for bound in (lo[j], hi[j]):
            step = bound - center[j]
            if step != 0.0 and np.any(g != 0.0):
                out.append(step * g)
    return out, "box"


@dataclass(frozen=True)
class LongitudinalStructure:
    """Which features are active per vehicle, frozen at prediction start."""

    fronts: tuple
    speed_active: tuple
    gap_active: tuple

    @classmethod
    def of(cls, scenario: Scenario) -> LongitudinalStructure:
        fronts = scenario.front_indices()
        rules = scenario.rules
        speed, gap = [], []
        for i, f in enumerate(fronts):
            if f is None:
                speed.append(False)
                gap.append(False)
                continue
            me, fr = scenario.vehicles[i].state, scenario.vehicles[f].state
            speed.append(fr.v < me.v)
            gap.append(fr.x - me.x < rules.d0 + me.v * rules.T)
        return cls(tuple(fronts), tuple(speed), tuple(gap))

    def active_params(self) -> list[tuple[int, int]]:
        """(vehicle, theta index) pairs that enter ``A(θ)``."""
        out = []
        for i in range(len(self.fronts)):
            out.append((i, 0))
            if self.speed_active[i]:
                out.append((i, 1))
            if self.gap_active[i]:
                out.append((i, 2))
        return out


def longitudinal_matrix(structure: LongitudinalStructure, thetas: np.ndarray, rules: Rules) -> np.ndarray:
    """``A(θ)`` for state ``[x_1..x_N, v_1..v_N]``; ``thetas`` is ``(N, 5)``."""
    n = len(structure.fronts)
    a = np.zeros((2 * n, 2 * n))
    for i, f in enumerate(structure.fronts):
        th = thetas[i]
        a[i, n + i] = 1.0
        a[n + i, n + i] = -th[0]
        if structure.speed_active[i]:
            a[n + i, n + i] -= th[1]
            a[n + i, n + f] += th[1]
        if structure.gap_active[i]:
            a[n + i, n + i] -= th[2] * rules.T
            a[n + i, i] -= th[2]
            a[n + i, f] += th[2]
    return a


def longitudinal_center_shift(structure: LongitudinalStructure, rules: Rules) -> np.ndarray:
    """Shift ``Zc`` that makes the affine part of the dynamics independent of θ."""
    n = len(structure.fronts)
    zc = np.zeros(2 * n)
    zc[n:] = rules.v0

    def pos(i):
        f = structure.fronts[i]
        if f is None or not structure.gap_active[i]:
            return 0.0
        return pos(f) - rules.d0 - rules.v0 * rules.T

    for i in range(n):
        zc[i] = pos(i)
    return zc


def _box_corners(lo: np.ndarray, hi: np.ndarray) -> list[np.ndarray]:
    """Corners of a box, skipping duplicate corners along degenerate axes."""
    free = [k for k in range(lo.size) if hi[k] > lo[k]]
    corners = []
    for bits in itertools.product((0, 1), repeat=len(free)):
        c = lo.copy()
        for k, b in zip(free, bits):
            if b:
                c[k] = hi[k]
        corners.append(c)
    return corners


def build_longitudinal_embedding(scenario: Scenario, polytope: str = "generators") -> LpvEmbedding:
    """Longitudinal chain ``[x_1..x_N, v_1..v_N]`` in eigen-coordinates of the midpoint matrix.

    Only the active parameters (θ1 always, θ2/θ3 when the feature is active
    at the start) are uncertain; ``polytope`` selects how their box is
    described (see :func:`_deviations`).
    """
    structure = LongitudinalStructure.of(scenario)
    rules = scenario.rules
    n = len(scenario.vehicles)
    lo = np.stack([v.theta_lower for v in scenario.vehicles])
    hi = np.stack([v.theta_upper for v in scenario.vehicles])
    mid = 0.5 * (lo + hi)
    active = structure.active_params()

    def fn(values):
        th = mid.copy()
        for (i, k), val in zip(active, values):
            th[i, k] = val
        return longitudinal_matrix(structure, th, rules)

    a_lo = np.array([lo[i, k] for i, k in active])
    a_hi = np.array([hi[i, k] for i, k in active])
    a_mid = 0.5 * (a_lo + a_hi)
    deviations, weights = _deviations(fn, a_mid, a_lo, a_hi, polytope)
    center = fn(a_mid)
    zc = longitudinal_center_shift(structure, rules)
    d = np.concatenate([np.full(n, rules.v0), np.zeros(n)])
    labels = [f"x:{v.id}" for v in scenario.vehicles] + [f"v:{v.id}" for v in scenario.vehicles]
    return _build_embedding(center, deviations, weights, np.eye(2 * n), zc, d, d, labels)


def lateral_matrix(theta5: float, v: float, gain: float) -> np.ndarray:
    """Linearised lane-keeping dynamics; ``gain`` stands for θ4·θ5/v."""
    return np.array([[0.0, v], [-gain, -theta5]])


def lateral_parameter_box(vehicle: Vehicle, v_bounds: IntervalVector) -> tuple[np.ndarray, np.ndarray]:
    """Bounds on (θ5, v, θ4·θ5/v); the product is bounded through the corners of (θ4, θ5, v)."""
    v_lo, v_hi = float(v_bounds.lower[0]), float(v_bounds.upper[0])
    t4 = (vehicle.theta_lower[3], vehicle.theta_upper[3])
    t5 = (vehicle.theta_lower[4], vehicle.theta_upper[4])
    gains = [a * b / v for a in t4 for b in t5 for v in (v_lo, v_hi)]
    return (np.array([t5[0], v_lo, min(gains)]), np.array([t5[1], v_hi, max(gains)]))


def build_lateral_embedding(vehicle: Vehicle, lane: Lane, v_bounds: IntervalVector, v_min: float = V_MIN,
                            polytope: str = "generators") -> LpvEmbedding:
    """2-state embedding in ``(y - y_L, ψ - ψ_L)`` with speed treated as a bounded parameter.

    The polytope center is the parameter midpoint unless that matrix has
    complex or nearly repeated eigenvalues, in which case the speed-gain
    entry of the center is reduced until the eigenvalues are real and
    separated. Deviations are taken from that center, so the described set
    still covers every admissible matrix.
    """
    if not v_bounds.lower[0] > v_min:
        raise SpeedTooLow(f"speed lower bound {v_bounds.lower[0]:.3g} not above {v_min}")
    lo, hi = lateral_parameter_box(vehicle, v_bounds)
    t5, v, gain = 0.5 * (lo + hi)
    if t5 > 0 and v > 0:
        gain = min(gain, t5 * t5 / (LATERAL_DAMPING_RATIO * v))
    c = np.array([t5, v, gain])

    def fn(p):
        return lateral_matrix(*p)

    if polytope == "corners":
        deviations, weights = [fn(k) - fn(c) for k in _box_corners(lo, hi)], "simplex"
    else:
        deviations, weights = _deviations(fn, c, lo, hi, polytope)
    b = np.array([[1.0], [0.0]])
    d_lo = np.array([min(lane.psi * v_bounds.lower[0], lane.psi * v_bounds.upper[0])])
    d_hi = np.array([max(lane.psi * v_bounds.lower[0], lane.psi * v_bounds.upper[0])])
    return _build_embedding(fn(c), deviations, weights, b, np.array([lane.y, lane.psi]), d_lo, d_hi,
                            [f"y:{vehicle.id}", f"psi:{vehicle.id}"])


# -- prediction ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class VehiclePrediction:
    """Tube over ``(x, y, v, psi)``; ``lane_tubes`` holds one tube per lane hypothesis."""

    vehicle: str
    tube: IntervalTrajectory
    lane_tubes: dict
    lateral_degraded: bool = False


@dataclass(frozen=True, eq=False)
class HighwayPrediction:
    vehicles: tuple
    method: Method
    longitudinal: LpvEmbedding
    longitudinal_tube: IntervalTrajectory
    truncated: bool = False

    def __getitem__(self, vid: str) -> VehiclePrediction:
        for p in self.vehicles:
            if p.vehicle == vid:
                return p
        raise KeyError(vid)

    @property
    def trajectories(self) -> list[IntervalTrajectory]:
        return [p.tube for p in self.vehicles]


def _run(method: Method, emb: LpvEmbedding, z0: IntervalVector, horizon: float, dt: float):
    x0 = emb.to_transformed(z0)
    tr = integrate_or_truncate(method, emb.model, x0, emb.d_bounds, horizon, dt, emb.coordinate_labels)
    lo, hi = emb.to_original(tr.lower, tr.upper)
    return tr.times, lo, hi, tr.truncated


def _pad(times_full, times, lo, hi):
    """Extend a truncated tube to the full grid with infinite bounds."""
    k = times.size
    if k == times_full.size:
        return lo, hi
    n = lo.shape[1]
    lo_f = np.full((times_full.size, n), -np.inf)
    hi_f = np.full((times_full.size, n), np.inf)
    lo_f[:k], hi_f[:k] = lo, hi
    return lo_f, hi_f


def _constant_heading_tube(vehicle: Vehicle, v_lo: float, v_hi: float, times: np.ndarray):
    s = math.sin(vehicle.state.psi)
    rate_lo, rate_hi = min(v_lo * s, v_hi * s), max(v_lo * s, v_hi * s)
    y_lo = vehicle.state.y + times * rate_lo
    y_hi = vehicle.state.y + times * rate_hi
    psi = np.full(times.size, vehicle.state.psi)
    return np.stack([y_lo, psi], 1), np.stack([y_hi, psi], 1)


def predict_highway(scenario: Scenario, horizon: float = 2.0, dt: float = 0.02,
                    method: Method | str = Method.STABLE, v_min: float = V_MIN,
                    polytope: str = "generators") -> HighwayPrediction:
    """Interval tubes over ``(x, y, v, psi)`` for every vehicle, in road coordinates.

    Each lane hypothesis gets its own lateral tube; ``tube`` is their hull.
    A vehicle whose speed tube drops to ``v_min`` gets a constant-heading
    lateral tube instead (flagged ``lateral_degraded``).
    """
    method = Method(method)
    times = time_grid(horizon, dt)
    n = len(scenario.vehicles)
    emb = build_longitudinal_embedding(scenario, polytope)
    z0 = np.array([v.state.x for v in scenario.vehicles] + [v.state.v for v in scenario.vehicles])
    t_long, lo_long, hi_long, trunc = _run(method, emb, IntervalVector.point(z0), horizon, dt)
    lo_long, hi_long = _pad(times, t_long, lo_long, hi_long)
    long_tube = IntervalTrajectory(times, lo_long, hi_long, method, dt, trunc, emb.coordinate_labels)

    preds = []
    for i, veh in enumerate(scenario.vehicles):
        v_lo = float(np.min(lo_long[:, n + i]))
        v_hi = float(np.max(hi_long[:, n + i]))
        lane_tubes = {}
        degraded = False
        for k in scenario.lane_hypotheses(i):
            lane = scenario.road.lanes[k]
            lat_trunc = False
            if np.isfinite(v_lo) and np.isfinite(v_hi) and v_lo > v_min:
                lat = build_lateral_embedding(veh, lane, IntervalVector([v_lo], [v_hi]), v_min, polytope)
                y0 = IntervalVector.point([veh.state.y, veh.state.psi])
                t_lat, lo_lat, hi_lat, lat_trunc = _run(method, lat, y0, horizon, dt)
                lo_lat, hi_lat = _pad(times, t_lat, lo_lat, hi_lat)
            else:
                degraded = True
                lo_lat, hi_lat = _constant_heading_tube(veh, max(v_lo, 0.0), v_hi, times)
            lo = np.stack([lo_long[:, i], lo_lat[:, 0], lo_long[:, n + i], lo_lat[:, 1]], 1)
            hi = np.stack([hi_long[:, i], hi_lat[:, 0], hi_long[:, n + i], hi_lat[:, 1]], 1)
            lane_tubes[k] = IntervalTrajectory(times, lo, hi, method, dt, trunc or lat_trunc, STATE_LABELS)
        tubes = list(lane_tubes.values())
        hull = tubes[0]
        for t in tubes[1:]:
            hull = hull.hull(t)
        preds.append(VehiclePrediction(veh.id, hull, lane_tubes, degraded))
        trunc = trunc or hull.truncated
    return HighwayPrediction(tuple(preds), method, emb, long_tube, trunc)


# -- ground truth ----------------------------------------------------------

def _rk4(f, y, dt):
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass(frozen=True, eq=False)
class TruthSamples:
    """Sampled trajectories, ``states`` of shape ``(steps + 1, samples, vehicles, 4)`` over (x, y, v, psi)."""

    times: np.ndarray
    states: np.ndarray
    lanes: np.ndarray = field(repr=False)

    def vehicle(self, i: int) -> np.ndarray:
        return self.states[:, :, i, :]


def _sampler(scenario: Scenario, samples: int, resample_period: float | None, dt: float, seed: int):
    """Yield per-step parameter draws ``(samples, N, 5)``, held for ``resample_period``."""
    rng = np.random.default_rng(seed)
    lo = np.stack([v.theta_lower for v in scenario.vehicles])
    hi = np.stack([v.theta_upper for v in scenario.vehicles])
    every = None if not resample_period else max(1, int(round(resample_period / dt)))
    lanes = np.empty((samples, len(scenario.vehicles)), dtype=int)
    for i in range(len(scenario.vehicles)):
        hyp = np.array(scenario.lane_hypotheses(i))
        lanes[:, i] = hyp[rng.integers(0, hyp.size, samples)]
    state = {"theta": rng.uniform(lo, hi, size=(samples,) + lo.shape)}

    def theta_at(k: int) -> np.ndarray:
        if every is not None and k > 0 and k % every == 0:
            state["theta"] = rng.uniform(lo, hi, size=(samples,) + lo.shape)
        return state["theta"]

    return lanes, theta_at


def _initial_states(scenario: Scenario, samples: int) -> np.ndarray:
    z0 = np.stack([v.state.as_array() for v in scenario.vehicles])
    return np.broadcast_to(z0, (samples,) + z0.shape).copy()


def monte_carlo_truth(scenario: Scenario, samples: int, resample_period: float | None = None, seed: int = 0,
                      horizon: float = 2.0, dt: float = 0.02, v_min: float = V_MIN) -> TruthSamples:
    """Sample the nonlinear closed loop (bicycle kinematics, live feature gating, arcsine clamp).

    Each sample draws its parameters uniformly in every vehicle's box and one
    lane among the admissible hypotheses.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    times = time_grid(horizon, dt)
    fronts = scenario.front_indices()
    rules = scenario.rules
    has_front = np.array([f is not None for f in fronts])
    fidx = np.array([f if f is not None else i for i, f in enumerate(fronts)])
    ell = np.array([v.l for v in scenario.vehicles])
    lanes, theta_at = _sampler(scenario, samples, resample_period, dt, seed)
    lane_y = np.array([ln.y for ln in scenario.road.lanes])[lanes]
    lane_psi = np.array([ln.psi for ln in scenario.road.lanes])[lanes]

    z = _initial_states(scenario, samples)
    out = np.empty((times.size,) + z.shape)
    out[0] = z
    for k in range(1, times.size):
        th = theta_at(k - 1)

        def f(s):
            x, y, v, psi = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
            a = th[..., 0] * (rules.v0 - v)
            gap = x[:, fidx] - x - (rules.d0 + v * rules.T)
            a = a - has_front * (th[..., 1] * _negpart(v[:, fidx] - v) + th[..., 2] * _negpart(gap))
            # no reversing: a stopped vehicle cannot brake further
            a = np.where(v <= 0.0, np.maximum(a, 0.0), a)
            v_safe = np.maximum(v, v_min)
            ratio = np.clip(th[..., 3] * (lane_y - y) / v_safe, -1.0, 1.0)
            psi_dot_cmd = th[..., 4] * (lane_psi + np.arcsin(ratio) - psi)
            beta = np.arctan(ell / v_safe * psi_dot_cmd)
            psi_dot = np.maximum(v, 0.0) / ell * np.tan(beta)
            return np.stack([v * np.cos(psi), v * np.sin(psi), a, psi_dot], -1)

        z = _rk4(f, z, dt)
        out[k] = z
    return TruthSamples(times, out, lanes)


def lpv_truth(scenario: Scenario, samples: int, resample_period: float | None = None, seed: int = 0,
              horizon: float = 2.0, dt: float = 0.02) -> TruthSamples:
    """Sample the linearised dynamics the predictor models.

    Longitudinal: ``Ż = A(θ)(Z - Zc) + d`` with the feature gating frozen at
    the start. Lateral: the linearised lane-keeping system driven by each
    sample's own (time-varying) speed.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    times = time_grid(horizon, dt)
    structure = LongitudinalStructure.of(scenario)
    rules = scenario.rules
    n = len(scenario.vehicles)
    zc = longitudinal_center_shift(structure, rules)
    d = np.concatenate([np.full(n, rules.v0), np.zeros(n)])
    lanes, theta_at = _sampler(scenario, samples, resample_period, dt, seed)
    lane_y = np.array([ln.y for ln in scenario.road.lanes])[lanes]
    lane_psi = np.array([ln.psi for ln in scenario.road.lanes])[lanes]

    z = _initial_states(scenario, samples)
    out = np.empty((times.size,) + z.shape)
    out[0] = z
    for k in range(1, times.size):
        th = theta_at(k - 1)
        a_long = np.stack([longitudinal_matrix(structure, th[s], rules) for s in range(samples)])

        def f(s):
            zl = np.concatenate([s[..., 0], s[..., 2]], axis=1)
            dz = np.einsum("sij,sj->si", a_long, zl - zc) + d
            v = s[..., 2]
            ey, epsi = s[..., 1] - lane_y, s[..., 3] - lane_psi
            dy = v * epsi + v * lane_psi
            dpsi = -th[..., 3] * th[..., 4] / v * ey - th[..., 4] * epsi
            return np.stack([dz[:, :n], dy, dz[:, n:], dpsi], -1)

        z = _rk4(f, z, dt)
        out[k] = z
    return TruthSamples(times, out, lanes)


def count_violations(pred: HighwayPrediction, truth: TruthSamples, slack) -> np.ndarray:
    """Number of (time, sample) pairs outside each vehicle's tube, per vehicle and coordinate.

    ``slack`` is either a scalar or a callable of the sampled states returning
    an array broadcastable to them.
    """
    counts = np.zeros((len(pred.vehicles), 4), dtype=int)
    for i, vp in enumerate(pred.vehicles):
        states = truth.vehicle(i)
        sl = slack(states) if callable(slack) else slack
        lo = vp.tube.lower[:, None, :]
        hi = vp.tube.upper[:, None, :]
        bad = (states < lo - sl) | (states > hi + sl)
        counts[i] = bad.sum(axis=(0, 1))
    return counts
