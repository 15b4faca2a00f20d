"""Command-line interface and file formats.

Exit codes: 0 on success, 1 on user error (bad arguments, bad input files,
parameters outside a formula's domain), 2 on anything unexpected.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import chains, estimation, harness, theory
from .errors import BadHeader, MarkovCPError, ParseError, UnsupportedFormat

SERIES_HEADER = ["t", "value"]
REPORT_COLUMNS = ("method",) + harness.REPORT_FIELDS
PLOT_COLUMNS = ("x", "method", "metric", "value")


# ---------------------------------------------------------------------------
# Files


@dataclass(frozen=True)
class SeriesFile:
    timestamps: List[str]
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.timestamps)


def load_series_csv(path) -> SeriesFile:
    """Read a ``t,value`` CSV file (UTF-8, header required)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != SERIES_HEADER:
            raise BadHeader(f"{path}: expected header 't,value', got {header!r}")
        stamps, values = [], []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(line, f"expected 2 fields, got {len(row)}")
            try:
                v = float(row[1])
            except ValueError:
                raise ParseError(line, f"value {row[1]!r} is not a number") from None
            if not math.isfinite(v):
                raise ParseError(line, f"value {row[1]!r} is not finite")
            stamps.append(row[0])
            values.append(v)
    return SeriesFile(stamps, np.asarray(values))


def write_series_csv(path, values: Sequence, timestamps: Optional[Sequence] = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_HEADER)
        stamps = range(len(values)) if timestamps is None else timestamps
        for t, v in zip(stamps, values):
            w.writerow([t, repr(v.item() if hasattr(v, "item") else v)])


def _cell(v) -> str:
    return "" if v is None else repr(v)


def report_to_csv(report: Mapping[str, harness.MethodSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for method, s in report.items():
        w.writerow([method] + [_cell(getattr(s, f)) for f in harness.REPORT_FIELDS])
    return buf.getvalue()


def write_report(report, path, format: str = "json") -> None:
    """Write a coverage or rolling report as JSON (one object per method) or CSV."""
    methods = report.methods
    if format == "json":
        text = json.dumps({m: {f: getattr(s, f) for f in harness.REPORT_FIELDS} for m, s in methods.items()}, indent=2)
        text += "\n"
    elif format == "csv":
        text = report_to_csv(methods)
    else:
        raise UnsupportedFormat(f"unsupported report format {format!r} (use json or csv)")
    Path(path).write_text(text, encoding="utf-8")


def read_report_json(path) -> harness.CoverageReport:
    return harness.CoverageReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def plot_rows(sweep: Mapping, metrics: Sequence[str] = ("coverage_mean", "relative_length_error", "mean_halfwidth", "k_used")) -> List[Tuple]:
    """Long-format rows ``(x, method, metric, value)`` sorted by (x, method, metric).

    ``sweep`` maps an x value (calibration size, time bucket...) to a report
    or to a plain ``{method: {metric: value}}`` mapping.
    """
    if not sweep:
        raise ValueError("sweep is empty")
    rows = []
    for x, rep in sweep.items():
        per_method = rep.methods if hasattr(rep, "methods") else rep
        for method, s in per_method.items():
            for metric in metrics:
                if isinstance(s, Mapping):
                    if metric not in s:
                        continue
                    v = s[metric]
                else:
                    v = getattr(s, metric)
                rows.append((x, method, metric, v))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return rows


def emit_plot_data(sweep: Mapping, path=None, metrics: Optional[Sequence[str]] = None) -> str:
    """Render :func:`plot_rows` as CSV; also write it to ``path`` when given."""
    rows = plot_rows(sweep) if metrics is None else plot_rows(sweep, metrics)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLOT_COLUMNS)
    for x, method, metric, v in rows:
        w.writerow([x, method, metric, _cell(v)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


# ---------------------------------------------------------------------------
# Subcommands


def _emit(obj, out: Optional[str] = None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_simulate(args) -> None:
    if args.chain == "lazy-walk":
        p = chains.lazy_walk_kernel(args.w)
        values = chains.simulate_finite(p, np.full(args.w, 1.0 / args.w), args.len, args.seed)
    else:
        spec = chains.Ar1Spec(args.theta, args.omega)
        values = chains.simulate_ar1(spec, args.x0, args.len, args.seed)
    if args.out:
        write_series_csv(args.out, values)
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SERIES_HEADER)
        for t, v in enumerate(values):
            w.writerow([t, repr(v.item())])
        sys.stdout.write(buf.getvalue())


def cmd_experiment(args) -> None:
    cfg_data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    cfg = harness.ExperimentConfig.from_dict(cfg_data)
    if args.sweep_n:
        sizes = [int(s) for s in args.sweep_n.split(",")]
        sweep = harness.sweep_calibration_sizes(cfg, sizes, workers=args.workers)
        if args.plot_data:
            emit_plot_data(sweep, args.plot_data)
        report = sweep[sizes[-1]]
    else:
        report = harness.run_coverage_experiment(cfg, workers=args.workers)
    if args.out:
        write_report(report, args.out, args.format)
    else:
        sys.stdout.write(report_to_csv(report.methods) if args.format == "csv" else json.dumps(report.to_dict(), indent=2) + "\n")


def cmd_rolling(args) -> None:
    series = load_series_csv(args.series)
    methods = args.method or list(harness.METHODS)
    rep = harness.run_rolling_experiment(
        series.values, args.train, args.cal, args.alpha, args.k, methods, args.bucket, args.max_lag
    )
    if args.out:
        write_report(rep, args.out, args.format)
    if args.plot_data:
        sweep = {
            i: {m: {"coverage_mean": float(rep.bucket_coverage[m][i])} for m in methods}
            for i in range(len(rep.bucket_coverage[methods[0]]))
        }
        emit_plot_data(sweep, args.plot_data, metrics=("coverage_mean",))
    summary = {"K": rep.K, "rho_hat": rep.rho_hat, "methods": rep.to_dict()}
    if not args.out:
        _emit(summary)


def cmd_estimate_gap(args) -> None:
    series = load_series_csv(args.traj)
    states = series.values.astype(np.int64)
    if np.any(states != series.values):
        raise ParseError(0, "trajectory values must be integer state indices")
    ek = estimation.empirical_kernel(states, args.states)
    rho = estimation.estimate_rho(ek)
    out = {"rho_hat": rho, "gap_hat": 1.0 - rho}
    if args.n:
        out["K_hat"] = estimation.adaptive_k(args.n, rho)
    _emit(out)


def cmd_estimate_rho(args) -> None:
    series = load_series_csv(args.series).values
    if args.returns:
        series = estimation.returns(series)
    rho = estimation.estimate_rho_autocorr(series, args.max_lag)
    out = {"rho_hat": rho}
    if args.n:
        out["K_hat"] = estimation.adaptive_k(args.n, rho)
    _emit(out)


def cmd_kstar(args) -> None:
    _emit({"k_star": theory.k_star(args.n, args.rho), "k_star_real": theory.k_star_real(args.n, args.rho)})


def _delta1(spec: Optional[str]):
    if not spec:
        return None
    c, rho = (float(v) for v in spec.split(","))
    return lambda a: min(1.0, c * rho**a)


def _bound_inputs(args) -> theory.BoundInputs:
    return theory.BoundInputs(
        n=args.n,
        t_mix=getattr(args, "tmix", 1.0),
        alpha=getattr(args, "alpha", 0.1),
        r=getattr(args, "r", None),
        K=getattr(args, "K", None),
        rho=getattr(args, "rho", None),
        delta1=_delta1(getattr(args, "delta1_geom", None)),
        delta_N=getattr(args, "delta_N", 0.0),
        delta_nN1=getattr(args, "delta_nN1", 0.0),
        beta_r=getattr(args, "beta_r", 0.0),
        beta_K=getattr(args, "beta_K", 0.0),
        beta_prime_K=getattr(args, "beta_prime_K", None),
        beta_n1=getattr(args, "beta_n1", 0.0),
    )


def cmd_bounds(args) -> None:
    kind = args.bound
    if kind == "kstar":
        return cmd_kstar(args)
    if kind == "iid":
        low, high = theory.iid_coverage_bounds(args.m, args.alpha)
        return _emit({"low": low, "high": high})
    b = _bound_inputs(args)
    if kind == "gamma-restart":
        out = {"gamma": theory.gamma_restart(args.u, b)}
    elif kind == "gamma":
        out = {"gamma": theory.gamma_norestart(args.u, args.r, b)}
    elif kind == "gamma-opt":
        g = theory.gamma_optimal_r(b)
        out = {"gamma": g.value, "arg_u": g.arg_u, "arg_r": g.arg_r}
    elif kind == "ksplit-gap":
        low, high = theory.ksplit_gap(
            args.n, args.K, args.r, b, stationary=not args.nonstationary, restart=not args.no_restart
        )
        out = {"low": low, "high": high}
    else:  # quantile-dev
        fn = theory.ksplit_quantile_bound if args.K and args.K > 1 else theory.quantile_deviation_bound
        q = fn(b, args.kappa, args.cN, args.dN, args.delta, args.mode)
        out = {"u_star": q.u_star, "deviation": q.deviation}
    _emit(out)


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="markovcp", description="Conformal prediction for Markovian data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a chain and write a t,value CSV")
    p.add_argument("--chain", choices=["lazy-walk", "ar1"], required=True)
    p.add_argument("--w", type=int, default=20, help="lazy walk cycle length")
    p.add_argument("--theta", type=float, default=0.9, help="AR(1) coefficient")
    p.add_argument("--omega", type=float, default=1.0, help="AR(1) noise std")
    p.add_argument("--x0", type=float, default=0.0, help="AR(1) initial value")
    p.add_argument("--len", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", help="run a Monte Carlo coverage experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--sweep-n", help="comma-separated calibration sizes")
    p.add_argument("--plot-data", help="write long-format x,method,metric,value CSV here")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("rolling", help="rolling-window CP on the returns of a t,value price series")
    p.add_argument("--series", required=True)
    p.add_argument("--train", type=int, required=True)
    p.add_argument("--cal", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--method", action="append", choices=list(harness.METHODS))
    p.add_argument("--k", default="adaptive", help="fixed:<int> | kstar | adaptive")
    p.add_argument("--bucket", type=int, help="steps per coverage bucket")
    p.add_argument("--max-lag", type=int, default=20)
    p.add_argument("--out")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--plot-data")
    p.set_defaults(func=cmd_rolling)

    p = sub.add_parser("estimate-gap", help="spectral-gap estimate from a state trajectory")
    p.add_argument("--traj", required=True)
    p.add_argument("--states", type=int, required=True)
    p.add_argument("--n", type=int, help="calibration size for the adaptive K")
    p.set_defaults(func=cmd_estimate_gap)

    p = sub.add_parser("estimate-rho", help="rate estimate from autocorrelation decay")
    p.add_argument("--series", required=True)
    p.add_argument("--max-lag", type=int, default=20)
    p.add_argument("--returns", action="store_true", help="convert prices to returns first")
    p.add_argument("--n", type=int, help="calibration size for the adaptive K")
    p.set_defaults(func=cmd_estimate_rho)

    p = sub.add_parser("kstar", help="optimal thinning step")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.set_defaults(func=cmd_kstar)

    p = sub.add_parser("bounds", help="coverage-gap and quantile bounds")
    bsub = p.add_subparsers(dest="bound", required=True)

    def common(q, r=False, deltas=False):
        q.add_argument("--n", type=int, required=True)
        q.add_argument("--tmix", type=float, default=1.0)
        q.add_argument("--alpha", type=float, default=0.1)
        if r:
            q.add_argument("--r", type=int, required=True)
        if deltas:
            q.add_argument("--delta-N", dest="delta_N", type=float, default=0.0)
            q.add_argument("--delta-nN1", dest="delta_nN1", type=float, default=0.0)
            q.add_argument("--beta-r", dest="beta_r", type=float, default=0.0)

    q = bsub.add_parser("gamma-restart")
    common(q)
    q.add_argument("--u", type=float, required=True)
    q.add_argument("--delta1-geom", help="C,RHO: delta1(a) = min(1, C * RHO**a)")
    q = bsub.add_parser("gamma")
    common(q, r=True, deltas=True)
    q.add_argument("--u", type=float, required=True)
    q = bsub.add_parser("gamma-opt")
    common(q, r=True, deltas=True)
    q.add_argument("--beta-n1", dest="beta_n1", type=float, default=0.0)
    q = bsub.add_parser("kstar")
    q.add_argument("--n", type=int, required=True)
    q.add_argument("--rho", type=float, required=True)
    q = bsub.add_parser("ksplit-gap")
    common(q)
    q.add_argument("--K", type=int, required=True)
    q.add_argument("--r", type=int)
    q.add_argument("--beta-K", dest="beta_K", type=float, default=0.0)
    q.add_argument("--beta-prime-K", dest="beta_prime_K", type=float)
    q.add_argument("--beta-r", dest="beta_r", type=float, default=0.0)
    q.add_argument("--no-restart", action="store_true")
    q.add_argument("--nonstationary", action="store_true")
    q = bsub.add_parser("quantile-dev")
    common(q)
    q.add_argument("--kappa", type=float, required=True)
    q.add_argument("--cN", type=float, default=0.0)
    q.add_argument("--dN", type=float, default=0.0)
    q.add_argument("--delta", type=float, default=0.05)
    q.add_argument("--mode", choices=["restart", "norestart"], default="restart")
    q.add_argument("--rho", type=float)
    q.add_argument("--K", type=int, help="thinning step (K > 1 uses the thinned bound)")
    q.add_argument("--delta-N", dest="delta_N", type=float, default=0.0)
    q.add_argument("--delta1-geom", help="C,RHO: delta1(a) = min(1, C * RHO**a)")
    q = bsub.add_parser("iid")
    q.add_argument("--m", type=int, required=True)
    q.add_argument("--alpha", type=float, default=0.1)
    p.set_defaults(func=cmd_bounds)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        args.func(args)
    except (MarkovCPError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
