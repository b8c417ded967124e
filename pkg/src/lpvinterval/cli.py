"""Command-line front end.

Exit codes: 0 success, 1 certificate infeasible, 2 bad flags, 3 the stable
predictor diverged, 4 unreadable or invalid input file, 5 the LPV embedding
could not be built.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from importlib.resources import files
from pathlib import Path

import numpy as np

from . import __version__
from .highway import SpeedTooLow, count_violations, lpv_truth, monte_carlo_truth, predict_highway
from .lmi import DEFAULT_TOL, Infeasible, LmiCertificate, check_certificate, search_certificate
from .metzler import IllConditioned, MuTooSmall, NotRealDiagonalisable, SpectrumMatchFailure
from .predictor import IntervalTrajectory, Method, integrate_or_truncate, simulate_lpv, time_grid
from .scenario_io import (
    ParseError,
    ScalarProblem,
    ValidationError,
    load_model,
    load_scenario,
    render_svg,
    write_traces,
)

EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_INPUT = 4
EXIT_EMBEDDING = 5

# width growth over the second half of the horizon that counts as divergence
DIVERGENCE_GROWTH = 4.0
NONLINEAR_SLACK = 1e-3
LPV_SLACK = 1e-6


def bundled(name: str) -> Path:
    return Path(str(files("lpvinterval") / "data" / name))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (math.isfinite(value) and value > 0):
        raise argparse.ArgumentTypeError(f"must be a positive number, got {text}")
    return value


def _nonneg_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lpv-interval", description="Interval prediction for LPV systems.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, horizon, dt):
        sp.add_argument("--method", choices=("naive", "stable", "both"), default="both")
        sp.add_argument("--horizon", type=_positive, default=horizon, help=f"seconds (default {horizon})")
        sp.add_argument("--dt", type=_positive, default=dt, help=f"integration step (default {dt})")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory (default ./out)")
        sp.add_argument("--format", choices=("csv", "json", "svg", "all"), default="all")
        sp.add_argument("--seed", type=_nonneg_int, default=0)

    sd = sub.add_parser("scalar-demo", help="the scalar example: x' = -theta x + d")
    common(sd, 10.0, 0.01)
    sd.add_argument("--input", type=Path, default=None, help="scalar problem file (default: bundled)")
    sd.add_argument("--mc", type=_nonneg_int, default=0, help="sampled realisations to overlay (default 0)")
    sd.add_argument("--resample", type=_positive, default=0.1, help="theta/d resampling period (default 0.1)")

    hw = sub.add_parser("highway", help="two-second traffic prediction")
    common(hw, 2.0, 0.02)
    hw.add_argument("--scenario", type=Path, default=None, help="scenario file (default: bundled two-vehicle)")
    hw.add_argument("--mc", type=_nonneg_int, default=0, help="Monte-Carlo samples for the inclusion check")
    hw.add_argument("--resample", type=_positive, default=0.2, help="theta resampling period (default 0.2)")

    cert = sub.add_parser("cert", help="stability certificates")
    csub = cert.add_subparsers(dest="action", required=True, parser_class=_Parser)
    chk = csub.add_parser("check", help="verify a certificate")
    chk.add_argument("--model", type=Path, default=None, help="model file (default: bundled scalar example)")
    chk.add_argument("--cert", type=Path, required=True)
    chk.add_argument("--tol", type=float, default=DEFAULT_TOL)
    fnd = csub.add_parser("find", help="search for a certificate")
    fnd.add_argument("--model", type=Path, default=None, help="model file (default: bundled scalar example)")
    fnd.add_argument("--seed", type=_nonneg_int, default=0)
    fnd.add_argument("--max-iters", type=_nonneg_int, default=4000)
    fnd.add_argument("--out", type=Path, default=Path("certificate.json"))
    return p


# -- manifest ----------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    flags: dict
    seed: int | None
    input_hash: str
    outputs: dict = field(default_factory=dict)

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _blob_hash(data: bytes) -> str:
    return hashlib.sha256(b"blob %d\0" % len(data) + data).hexdigest()


def content_hash(paths) -> str:
    """Hash of the input files' bytes (git-style blob headers), independent of their location."""
    h = hashlib.sha256()
    for p in paths:
        h.update(_blob_hash(Path(p).read_bytes()).encode())
    return h.hexdigest()


def _flags(args: argparse.Namespace) -> dict:
    skip = {"out", "func"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        out[k] = v.name if isinstance(v, Path) else v
    return out


def _write_outputs(args, series, truth_traces, truth_svg, title, input_paths) -> RunManifest:
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(args.command, _flags(args), args.seed, content_hash(input_paths))
    methods = sorted({tr.method.value for _, tr in series})
    fmts = ("csv", "json", "svg") if args.format == "all" else (args.format,)
    written = []
    for fmt in fmts:
        if fmt == "svg":
            name = "plot.svg"
            render_svg(series, truth_svg, out / name, title)
            written.append(name)
            continue
        for m in methods:
            name = f"traces_{m}.{fmt}"
            part = [(n, tr) for n, tr in series if tr.method.value == m]
            write_traces(part, fmt, out / name, truth_traces if fmt == "json" else None)
            written.append(name)
    for name in written:
        manifest.outputs[name] = hashlib.sha256((out / name).read_bytes()).hexdigest()
    manifest.write(out / "manifest.json")
    return manifest


# -- summaries ---------------------------------------------------------------

@dataclass(frozen=True)
class Divergence:
    growth: float
    ratio: float
    diverging: bool


def divergence_summary(traj: IntervalTrajectory) -> Divergence:
    """Width growth over the second half of the horizon, and end-to-start width ratio."""
    w = traj.width
    if traj.truncated or not np.all(np.isfinite(w)):
        return Divergence(math.inf, math.inf, True)
    k = (len(w) - 1) // 2
    with np.errstate(divide="ignore", invalid="ignore"):
        growth = np.where(w[k] > 0, w[-1] / w[k], np.where(w[-1] > 0, np.inf, 1.0))
        ratio = np.where(w[0] > 0, w[-1] / w[0], np.where(w[-1] > 0, np.inf, 1.0))
    g = float(np.max(growth))
    return Divergence(g, float(np.max(ratio)), g > DIVERGENCE_GROWTH)


def _methods(choice: str) -> list[Method]:
    return [Method.NAIVE, Method.STABLE] if choice == "both" else [Method(choice)]


def _fmt_interval(lo, hi) -> str:
    return "[" + ", ".join(f"[{a:.6g}, {b:.6g}]" for a, b in zip(lo, hi)) + "]"


# -- commands ----------------------------------------------------------------

def _scalar_truth(problem: ScalarProblem, samples: int, period: float, seed: int, horizon: float, dt: float):
    model = problem.model()
    rng = np.random.default_rng(seed)
    steps = time_grid(horizon, dt).size - 1
    every = max(1, int(round(period / dt)))
    n_blocks = steps // every + 1
    lam = rng.uniform(0.0, 1.0, size=(n_blocks, samples))
    dval = rng.uniform(problem.d[0], problem.d[1], size=(n_blocks, samples, 1))
    x0 = rng.uniform(problem.x0[0], problem.x0[1], size=(samples, 1))

    def weights(k):
        w = lam[k // every]
        return np.stack([1.0 - w, w], axis=1)

    return simulate_lpv(model, x0, weights, lambda k: dval[k // every], horizon, dt)


def cmd_scalar_demo(args) -> int:
    path = args.input or bundled("scalar_demo.json")
    try:
        problem = load_scenario(path)
    except (OSError, ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if not isinstance(problem, ScalarProblem):
        print(f"error: {path} is not a scalar problem file", file=sys.stderr)
        return EXIT_INPUT
    model = problem.model()
    series = []
    code = EXIT_OK
    for m in _methods(args.method):
        tr = integrate_or_truncate(m, model, problem.initial(), problem.signal_bounds(), args.horizon, args.dt, ("x",))
        series.append(("scalar", tr))
        s = divergence_summary(tr)
        print(f"{m.value}: t={tr.times[-1]:.6g} interval {_fmt_interval(tr.lower[-1], tr.upper[-1])} "
              f"width ratio end/start {s.ratio:.6g}, second-half growth {s.growth:.6g}"
              + (" DIVERGING" if s.diverging else ""))
        if tr.truncated:
            print(f"{m.value}: bounds became non-finite at t={tr.times[-1]:.6g}; trace truncated", file=sys.stderr)
            if m is Method.STABLE:
                code = EXIT_DIVERGED
    truth_traces = truth_svg = None
    if args.mc > 0:
        samples = _scalar_truth(problem, args.mc, args.resample, args.seed, args.horizon, args.dt)
        times = time_grid(args.horizon, args.dt)
        truth_traces = {"scalar": samples}
        truth_svg = {"scalar": (times, samples)}
    _write_outputs(args, series, truth_traces, truth_svg, "scalar example", [path])
    return code


def cmd_highway(args) -> int:
    path = args.scenario or bundled("two_vehicle.json")
    try:
        scenario = load_scenario(path)
    except (OSError, ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if isinstance(scenario, ScalarProblem):
        print(f"error: {path} is a scalar problem, not a highway scenario", file=sys.stderr)
        return EXIT_INPUT

    preds = {}
    try:
        for m in _methods(args.method):
            preds[m] = predict_highway(scenario, args.horizon, args.dt, m)
    except (NotRealDiagonalisable, IllConditioned, MuTooSmall, SpectrumMatchFailure, SpeedTooLow) as exc:
        print(f"error: embedding construction failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_EMBEDDING

    code = EXIT_OK
    series = []
    for m, pred in preds.items():
        for vp in pred.vehicles:
            series.append((vp.vehicle, vp.tube))
        s = divergence_summary(pred.longitudinal_tube)
        w = pred.longitudinal_tube.width[-1]
        print(f"{m.value}: longitudinal width at t={pred.longitudinal_tube.times[-1]:.6g}: "
              + ", ".join(f"{lab}={x:.6g}" for lab, x in zip(pred.longitudinal_tube.labels, w))
              + f"; second-half growth {s.growth:.6g}" + (" DIVERGING" if s.diverging else ""))
        for vp in pred.vehicles:
            if vp.lateral_degraded:
                print(f"{m.value}: warning: {vp.vehicle} speed tube reaches the minimum speed; "
                      "lateral tube falls back to constant heading", file=sys.stderr)
        if s.diverging and m is Method.NAIVE:
            print("naive: warning: the tube diverges", file=sys.stderr)
        if pred.truncated:
            print(f"{m.value}: bounds became non-finite; trace truncated", file=sys.stderr)
            if m is Method.STABLE:
                code = EXIT_DIVERGED

    truth_traces = truth_svg = None
    if args.mc > 0:
        lin = lpv_truth(scenario, args.mc, args.resample, args.seed, args.horizon, args.dt)
        nl = monte_carlo_truth(scenario, args.mc, args.resample, args.seed, args.horizon, args.dt)
        for m, pred in preds.items():
            v_lin = count_violations(pred, lin, LPV_SLACK)
            v_nl = count_violations(pred, nl, lambda z: NONLINEAR_SLACK * (1.0 + np.linalg.norm(z, axis=-1, keepdims=True)))
            print(f"{m.value}: {args.mc} samples: exact-LPV violations {int(v_lin.sum())} (slack {LPV_SLACK:g}), "
                  f"nonlinear violations {int(v_nl.sum())} (slack {NONLINEAR_SLACK:g}(1+|Z|))")
        truth_traces = {v.id: nl.vehicle(i) for i, v in enumerate(scenario.vehicles)}
        truth_svg = {v.id: (nl.times, nl.vehicle(i)) for i, v in enumerate(scenario.vehicles)}
    _write_outputs(args, series, truth_traces, truth_svg, "highway prediction", [path])
    return code


def cmd_cert(args) -> int:
    model_path = args.model or bundled("scalar_demo.json")
    try:
        model = load_model(model_path)
    except (OSError, ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.action == "check":
        try:
            cert = LmiCertificate.load(args.cert)
            report = check_certificate(model, cert, args.tol)
        except (OSError, json.JSONDecodeError, ValueError, TypeError) as exc:
            print(f"error: cannot use certificate {args.cert}: {exc}", file=sys.stderr)
            return EXIT_INPUT
        for k, v in report.as_dict().items():
            print(f"{k}: {v!r}")
        return EXIT_OK if report.feasible else EXIT_INFEASIBLE
    try:
        cert = search_certificate(model, max_iters=args.max_iters, seed=args.seed)
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    cert.dump(args.out)
    for k, v in check_certificate(model, cert).as_dict().items():
        print(f"{k}: {v!r}")
    print(f"certificate written to {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = os.environ.get("IVP_THREADS")
    if threads is not None and not (threads.isdigit() and int(threads) > 0):
        parser.error(f"IVP_THREADS must be a positive integer, got {threads!r}")
    if args.command != "cert" and args.dt > args.horizon:
        parser.error(f"--dt {args.dt} exceeds --horizon {args.horizon}")
    if args.command == "scalar-demo":
        return cmd_scalar_demo(args)
    if args.command == "highway":
        return cmd_highway(args)
    return cmd_cert(args)


if __name__ == "__main__":
    sys.exit(main())
