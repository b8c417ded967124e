"""Scenario and model files, trace files and SVG plots.

Scenario files are JSON with a required ``"schema": 1`` field. Two shapes are
accepted: a highway scenario and a reduced scalar form
``{"schema": 1, "scalar": {"theta": [lo, hi], "d": [lo, hi], "x0": [lo, hi]}}``
describing ``ẋ = -θ x + d``. Model files for the certificate tools use either
the scalar form or ``{"schema": 1, "model": {"A0", "deltas", "B", "weights"}}``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .highway import (
    BehaviorParams,
    Lane,
    Road,
    Rules,
    Scenario,
    ScenarioError,
    Vehicle,
    VehicleState,
)
from .interval import IntervalVector, OrderError
from .predictor import IntervalTrajectory, PolytopicModel, SignalBounds

SCHEMA_VERSION = 1
CSV_HEADER = ("t", "vehicle", "coord", "lower", "upper")


class ParseError(ValueError):
    """The file is not valid JSON or does not have the documented shape."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.field = field


class ValidationError(ValueError):
    """The file parsed but the values violate an invariant (named in the message)."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


@dataclass(frozen=True, eq=False)
class ScalarProblem:
    """``ẋ = -θ x + d`` with θ, d and x(0) in intervals."""

    theta: tuple
    d: tuple
    x0: tuple

    def model(self) -> PolytopicModel:
        """Center at the vertex ``-θ̄`` so that every deviation is nonnegative.

        A symmetric center would give ``ΔA₋ > 0`` and a tube that drifts
        apart; with this choice ``ΔA₋ = 0`` and the tube settles at ``d/θ̲``.
        """
        lo, hi = self.theta
        return PolytopicModel([[-hi]], ([[0.0]], [[hi - lo]]), [[1.0]])

    def signal_bounds(self) -> SignalBounds:
        return SignalBounds.constant([self.d[0]], [self.d[1]])

    def initial(self) -> IntervalVector:
        return IntervalVector([self.x0[0]], [self.x0[1]])


# -- strict JSON reading -----------------------------------------------------

def _read_json(path) -> object:
    path = Path(path)
    try:
        text = path.read_text()
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8 text: {exc.reason}", line=1) from exc
    if not text.strip():
        raise ParseError("empty file", line=1)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from exc


def _obj(data, field: str, required: Sequence[str], optional: Sequence[str] = ()) -> dict:
    if not isinstance(data, dict):
        raise ParseError("expected an object", field=field)
    unknown = sorted(set(data) - set(required) - set(optional))
    if unknown:
        raise ParseError(f"unknown field {unknown[0]!r}", field=f"{field}.{unknown[0]}" if field else unknown[0])
    for key in required:
        if key not in data:
            raise ParseError("missing required field", field=f"{field}.{key}" if field else key)
    return data


def _num(data, field: str) -> float:
    if isinstance(data, bool) or not isinstance(data, (int, float)):
        raise ParseError("expected a number", field=field)
    return float(data)


def _nums(data, field: str, length: int | None = None) -> list[float]:
    if not isinstance(data, list):
        raise ParseError("expected a list of numbers", field=field)
    if length is not None and len(data) != length:
        raise ParseError(f"expected {length} entries, got {len(data)}", field=field)
    return [_num(x, f"{field}[{i}]") for i, x in enumerate(data)]


def _pair(data, field: str) -> tuple[float, float]:
    lo, hi = _nums(data, field, 2)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValidationError("bounds must be finite", field)
    if lo > hi:
        raise ValidationError("interval order (lower > upper)", field)
    return lo, hi


def _matrix(data, field: str) -> np.ndarray:
    if not isinstance(data, list) or not data:
        raise ParseError("expected a nonempty list of rows", field=field)
    rows = [_nums(r, f"{field}[{i}]") for i, r in enumerate(data)]
    if len({len(r) for r in rows}) != 1:
        raise ParseError("rows have differing lengths", field=field)
    return np.array(rows)


def _check_schema(data) -> None:
    if not isinstance(data, dict):
        raise ParseError("top level must be an object")
    if "schema" not in data:
        raise ParseError("missing required field", field="schema")
    if data["schema"] != SCHEMA_VERSION or isinstance(data["schema"], bool):
        raise ParseError(f"unsupported schema version {data['schema']!r}, expected {SCHEMA_VERSION}", field="schema")


def _scalar(data) -> ScalarProblem:
    body = _obj(data, "scalar", ("theta", "d", "x0"))
    theta = _pair(body["theta"], "scalar.theta")
    if theta[0] < 0:
        raise ValidationError("theta must be nonnegative", "scalar.theta")
    return ScalarProblem(theta, _pair(body["d"], "scalar.d"), _pair(body["x0"], "scalar.x0"))


def _vehicle(data, k: int) -> Vehicle:
    f = f"vehicles[{k}]"
    body = _obj(data, f, ("id", "state", "theta_lower", "theta_upper", "lane"), ("l", "front"))
    if not isinstance(body["id"], str) or not body["id"]:
        raise ParseError("expected a nonempty string", field=f"{f}.id")
    st = _obj(body["state"], f"{f}.state", ("x", "y", "v", "psi"))
    lane = body["lane"]
    lanes = [lane] if not isinstance(lane, list) else lane
    for i, k_lane in enumerate(lanes):
        if isinstance(k_lane, bool) or not isinstance(k_lane, int):
            raise ParseError("lane indices must be integers", field=f"{f}.lane[{i}]")
    front = body.get("front")
    if front is not None and not isinstance(front, str):
        raise ParseError("expected a vehicle id or null", field=f"{f}.front")
    lo = _nums(body["theta_lower"], f"{f}.theta_lower", 5)
    hi = _nums(body["theta_upper"], f"{f}.theta_upper", 5)
    try:
        state = VehicleState(*(_num(st[c], f"{f}.state.{c}") for c in ("x", "y", "v", "psi")))
        BehaviorParams.from_array(lo)
        return Vehicle(body["id"], state, np.array(lo), np.array(hi), tuple(lanes),
                       _num(body.get("l", 2.5), f"{f}.l"), front)
    except ScenarioError as exc:
        raise ValidationError(str(exc), f) from exc


def _highway(data) -> Scenario:
    body = _obj(data, "", ("schema", "rules", "road", "vehicles"), ("right_hand_traffic",))
    rules = _obj(body["rules"], "rules", ("v0", "d0", "T"))
    road = _obj(body["road"], "road", ("lanes",), ("width",))
    if not isinstance(road["lanes"], list):
        raise ParseError("expected a list", field="road.lanes")
    if not isinstance(body["vehicles"], list):
        raise ParseError("expected a list", field="vehicles")
    rht = body.get("right_hand_traffic", False)
    if not isinstance(rht, bool):
        raise ParseError("expected true or false", field="right_hand_traffic")
    try:
        rules_v = Rules(*(_num(rules[k], f"rules.{k}") for k in ("v0", "d0", "T")))
    except ScenarioError as exc:
        raise ValidationError(str(exc), "rules") from exc
    lanes = []
    for i, lane in enumerate(road["lanes"]):
        lane = _obj(lane, f"road.lanes[{i}]", ("y",), ("psi",))
        try:
            lanes.append(Lane(_num(lane["y"], f"road.lanes[{i}].y"), _num(lane.get("psi", 0.0), f"road.lanes[{i}].psi")))
        except ScenarioError as exc:
            raise ValidationError(str(exc), f"road.lanes[{i}]") from exc
    try:
        road_v = Road(tuple(lanes), _num(road.get("width", 4.0), "road.width"))
    except ScenarioError as exc:
        raise ValidationError(str(exc), "road") from exc
    vehicles = tuple(_vehicle(v, k) for k, v in enumerate(body["vehicles"]))
    try:
        return Scenario(vehicles, road_v, rules_v, rht)
    except ScenarioError as exc:
        raise ValidationError(str(exc), "vehicles") from exc


def load_scenario(path) -> Scenario | ScalarProblem:
    """Read and validate a scenario file.

    Raises :class:`ParseError` for malformed JSON, unknown or missing fields
    and wrong types; :class:`ValidationError` for values breaking an invariant.
    """
    data = _read_json(path)
    _check_schema(data)
    if "scalar" in data:
        _obj(data, "", ("schema", "scalar"))
        return _scalar(data["scalar"])
    return _highway(data)


def load_model(path) -> PolytopicModel:
    """Read a polytopic model, either in scalar form or as explicit matrices."""
    data = _read_json(path)
    _check_schema(data)
    if "scalar" in data:
        _obj(data, "", ("schema", "scalar"))
        return _scalar(data["scalar"]).model()
    _obj(data, "", ("schema", "model"))
    body = _obj(data["model"], "model", ("A0", "deltas", "B"), ("weights",))
    if not isinstance(body["deltas"], list):
        raise ParseError("expected a list of matrices", field="model.deltas")
    a0 = _matrix(body["A0"], "model.A0")
    deltas = tuple(_matrix(d, f"model.deltas[{i}]") for i, d in enumerate(body["deltas"]))
    b = _matrix(body["B"], "model.B")
    weights = body.get("weights", "simplex")
    if weights not in ("simplex", "box"):
        raise ParseError("weights must be 'simplex' or 'box'", field="model.weights")
    try:
        return PolytopicModel(a0, deltas, b, weights)
    except ValueError as exc:
        raise ValidationError(str(exc), "model") from exc


def scenario_to_dict(scenario: Scenario) -> dict:
    """Inverse of the highway branch of :func:`load_scenario`."""
    return {
        "schema": SCHEMA_VERSION,
        "rules": {"v0": scenario.rules.v0, "d0": scenario.rules.d0, "T": scenario.rules.T},
        "road": {"lanes": [{"y": ln.y, "psi": ln.psi} for ln in scenario.road.lanes], "width": scenario.road.width},
        "right_hand_traffic": scenario.right_hand_traffic,
        "vehicles": [
            {
                "id": v.id,
                "state": {"x": v.state.x, "y": v.state.y, "v": v.state.v, "psi": v.state.psi},
                "l": v.l,
                "front": v.front,
                "lane": list(v.lanes),
                "theta_lower": v.theta_lower.tolist(),
                "theta_upper": v.theta_upper.tolist(),
            }
            for v in scenario.vehicles
        ],
    }


# -- traces ------------------------------------------------------------------

@dataclass(frozen=True)
class TraceRecord:
    t: float
    vehicle: str
    coord: str
    lower: float
    upper: float
    truth: tuple | None = None

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise OrderError(f"trace record {self.vehicle}/{self.coord} at t={self.t}: lower > upper")


def _labels(traj: IntervalTrajectory) -> tuple:
    if traj.labels and len(traj.labels) == traj.n:
        return tuple(traj.labels)
    return tuple(f"x{i}" for i in range(traj.n))


def trace_records(series: Sequence[tuple[str, IntervalTrajectory]],
                  truth: Mapping[str, np.ndarray] | None = None) -> list[TraceRecord]:
    """Flatten ``(vehicle, trajectory)`` pairs into records, time-major per vehicle.

    ``truth[vehicle]``, when given, is an array ``(len(times), samples, n)``
    on the trajectory's time grid.
    """
    out = []
    for name, traj in series:
        samples = None if truth is None else truth.get(name)
        for k, t in enumerate(traj.times):
            for j, coord in enumerate(_labels(traj)):
                tr = None if samples is None else tuple(float(x) for x in samples[k, :, j])
                out.append(TraceRecord(float(t), name, coord, float(traj.lower[k, j]), float(traj.upper[k, j]), tr))
    return out


def _fmt(x: float) -> str:
    return format(x, ".17g")


def write_traces(series: Sequence[tuple[str, IntervalTrajectory]], fmt: str, path,
                 truth: Mapping[str, np.ndarray] | None = None) -> None:
    """Write interval bounds as CSV (``t,vehicle,coord,lower,upper``) or JSON.

    Numbers are written with 17 significant digits, which reads back to the
    same double. Truth samples are only carried by the JSON format.
    """
    records = trace_records(series, truth)
    path = Path(path)
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in records:
                w.writerow((_fmt(r.t), r.vehicle, r.coord, _fmt(r.lower), _fmt(r.upper)))
    elif fmt == "json":
        rows = []
        for r in records:
            row = {"t": r.t, "vehicle": r.vehicle, "coord": r.coord, "lower": r.lower, "upper": r.upper}
            if r.truth is not None:
                row["truth"] = list(r.truth)
            rows.append(row)
        path.write_text(json.dumps({"schema": SCHEMA_VERSION, "records": rows}, indent=1) + "\n")
    else:
        raise ValueError(f"unknown trace format {fmt!r}")


def read_traces(path, fmt: str | None = None) -> list[TraceRecord]:
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".")
    if fmt == "csv":
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(rows[0]) != CSV_HEADER:
            raise ParseError("missing or wrong CSV header", line=1)
        out = []
        for i, row in enumerate(rows[1:], start=2):
            if len(row) != len(CSV_HEADER):
                raise ParseError(f"expected {len(CSV_HEADER)} columns", line=i)
            try:
                out.append(TraceRecord(float(row[0]), row[1], row[2], float(row[3]), float(row[4])))
            except ValueError as exc:
                raise ParseError(str(exc), line=i) from exc
        return out
    if fmt == "json":
        data = _read_json(path)
        _check_schema(data)
        _obj(data, "", ("schema", "records"))
        out = []
        for i, r in enumerate(data["records"]):
            r = _obj(r, f"records[{i}]", ("t", "vehicle", "coord", "lower", "upper"), ("truth",))
            truth = tuple(r["truth"]) if "truth" in r else None
            out.append(TraceRecord(r["t"], r["vehicle"], r["coord"], r["lower"], r["upper"], truth))
        return out
    raise ValueError(f"unknown trace format {fmt!r}")


# -- SVG ---------------------------------------------------------------------

SVG_WIDTH = 800
PANEL_HEIGHT = 180
PANEL_GAP = 40
MARGIN_LEFT = 80
MARGIN_RIGHT = 20
CLIP_SPAN = 4.0
CLIP_REF_FRACTION = 0.25
MAX_TRUTH_CURVES = 40
COLORS = {"naive": "#d62728", "stable": "#1f77b4"}


def _c(v: float) -> str:
    return f"{v:.2f}"


def _panel_window(bands, truth, t0, t1):
    """y-range of one panel and whether any band had to be clipped.

    The reference range is the truth, the band midpoints and the bands over
    the first quarter of the horizon; bands may extend the axis up to
    ``CLIP_SPAN`` reference widths beyond it and are clipped past that.
    """
    ref = []
    data = []
    cut = t0 + CLIP_REF_FRACTION * (t1 - t0)
    for times, lo, hi in bands:
        fin = np.isfinite(lo) & np.isfinite(hi)
        ref.append(0.5 * (lo[fin] + hi[fin]))
        early = fin & (times <= cut)
        ref += [lo[early], hi[early]]
        data += [lo[np.isfinite(lo)], hi[np.isfinite(hi)]]
    if truth is not None:
        ref.append(truth.ravel())
        data.append(truth.ravel())
    ref = np.concatenate(ref) if ref else np.zeros(1)
    data = np.concatenate(data) if data else ref
    if ref.size == 0:
        ref = np.zeros(1)
    r_lo, r_hi = float(ref.min()), float(ref.max())
    pad = CLIP_SPAN * max(r_hi - r_lo, 1.0)
    lo_lim, hi_lim = r_lo - pad, r_hi + pad
    d_lo = float(data.min()) if data.size else r_lo
    d_hi = float(data.max()) if data.size else r_hi
    y_lo, y_hi = max(d_lo, lo_lim), min(d_hi, hi_lim)
    if y_hi - y_lo < 1e-12:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    m = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - m, y_hi + m
    clipped = [bool(np.any(~(lo >= y_lo)) or np.any(~(hi <= y_hi))) for _, lo, hi in bands]
    return y_lo, y_hi, clipped


def render_svg(series: Sequence[tuple[str, IntervalTrajectory]], truth: Mapping | None, path,
               title: str = "") -> None:
    """Draw each (vehicle, coordinate) pair as a panel with one band per trajectory.

    Several trajectories for the same vehicle share panels, so naive and
    stable runs overlay. ``truth[vehicle]`` is ``(times, samples)`` with
    ``samples`` shaped ``(len(times), S, n)``. The output depends only on
    the inputs, so identical runs give identical bytes.
    """
    if not series:
        raise ValueError("render_svg needs at least one trajectory")
    panels: dict = {}
    for name, traj in series:
        for j, coord in enumerate(_labels(traj)):
            panels.setdefault((name, coord), []).append((traj, j))
    height = PANEL_GAP + len(panels) * (PANEL_HEIGHT + PANEL_GAP)
    plot_w = SVG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {SVG_WIDTH} {height}" '
        f'width="{SVG_WIDTH}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{SVG_WIDTH}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{MARGIN_LEFT}" y="20" font-size="14">{_escape(title)}</text>')

    for p, ((name, coord), members) in enumerate(panels.items()):
        top = PANEL_GAP + p * (PANEL_HEIGHT + PANEL_GAP)
        t0 = min(float(tr.times[0]) for tr, _ in members)
        t1 = max(float(tr.times[-1]) for tr, _ in members)
        span_t = t1 - t0 if t1 > t0 else 1.0
        samples = None
        if truth is not None and name in truth:
            t_times, t_vals = truth[name]
            j = members[0][1]
            samples = np.asarray(t_vals)[:, :MAX_TRUTH_CURVES, j]
        bands = [(tr.times, tr.lower[:, j], tr.upper[:, j]) for tr, j in members]
        y_lo, y_hi, clipped = _panel_window(bands, samples, t0, t1)

        def px(t):
            return MARGIN_LEFT + (t - t0) / span_t * plot_w

        def py(v):
            v = min(max(v, y_lo), y_hi)
            return top + PANEL_HEIGHT - (v - y_lo) / (y_hi - y_lo) * PANEL_HEIGHT

        out.append(f'<g id="panel-{p}">')
        out.append(f'<rect x="{MARGIN_LEFT}" y="{top}" width="{plot_w}" height="{PANEL_HEIGHT}" '
                   f'fill="none" stroke="#444" stroke-width="1"/>')
        out.append(f'<text x="{MARGIN_LEFT}" y="{top - 6}">{_escape(name)} : {_escape(coord)}</text>')
        for frac in (0.0, 0.5, 1.0):
            v = y_lo + frac * (y_hi - y_lo)
            out.append(f'<text x="{MARGIN_LEFT - 6}" y="{_c(py(v) + 4)}" text-anchor="end">{v:.4g}</text>')
            t = t0 + frac * span_t
            out.append(f'<text x="{_c(px(t))}" y="{top + PANEL_HEIGHT + 14}" text-anchor="middle">{t:.4g}</text>')

        for (tr, _), (times, lo, hi), clip in zip(members, bands, clipped):
            color = COLORS.get(tr.method.value, "#2ca02c")
            if times.size == 1:
                x = _c(px(float(times[0])))
                out.append(f'<line x1="{x}" y1="{_c(py(hi[0]))}" x2="{x}" y2="{_c(py(lo[0]))}" '
                           f'stroke="{color}" stroke-width="2" class="band {tr.method.value}"/>')
            else:
                upper = [f"{_c(px(t))},{_c(py(v))}" for t, v in zip(times, _clean(hi, y_hi))]
                lower = [f"{_c(px(t))},{_c(py(v))}" for t, v in zip(times[::-1], _clean(lo[::-1], y_lo))]
                out.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.3" '
                           f'stroke="{color}" stroke-width="1" class="band {tr.method.value}"/>')
            if clip:
                k = int(np.argmax(~(lo >= y_lo) | ~(hi <= y_hi)))
                x = px(float(times[k]))
                out.append(f'<path d="M{_c(x - 5)},{top + 10} L{_c(x + 5)},{top + 10} L{_c(x)},{top} Z" '
                           f'fill="{color}" class="clip-marker"/>')
                out.append(f'<text x="{_c(x + 8)}" y="{top + 12}" fill="{color}" class="clip-marker">'
                           f'{tr.method.value} clipped</text>')

        if samples is not None:
            for s in range(samples.shape[1]):
                pts = " ".join(f"{_c(px(t))},{_c(py(v))}" for t, v in zip(t_times, samples[:, s]))
                out.append(f'<polyline points="{pts}" fill="none" stroke="#555" stroke-opacity="0.5" '
                           f'stroke-width="0.7" class="truth"/>')
        out.append("</g>")
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def _clean(values: np.ndarray, fallback: float) -> np.ndarray:
    """Non-finite bounds are drawn at the plot edge."""
    v = np.array(values, dtype=float)
    v[~np.isfinite(v)] = fallback
    return v


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
