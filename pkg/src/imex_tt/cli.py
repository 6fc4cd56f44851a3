"""Command-line entry point: ``imex-tt {run,converge,scale,fit-damping}``."""

from __future__ import annotations

import argparse
import sys
from fractions import Fraction
from pathlib import Path

from .domain import ConfigError, load_config
from .experiments import (
    InsufficientPeaksError,
    apply_worker_count,
    convergence_study,
    damping_fit,
    read_csv,
    run_case,
    scaling_study,
    write_convergence,
    write_scaling,
)


def _number_list(text: str, conv=float) -> list:
    """Comma-separated numbers; fractions such as ``1/16`` are accepted."""
    try:
        return [conv(Fraction(item.strip())) for item in text.split(",") if item.strip()]
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"cannot parse number list {text!r}") from exc


def _load(path: str):
    text = Path(path).read_text(encoding="utf-8")
    return load_config(text), text


def cmd_run(args) -> int:
    cfg, text = _load(args.config)
    log = print if args.verbose else None
    result = run_case(cfg, config_text=text, log=log)
    if result.status != 0:
        print(f"run failed: {result.message}", file=sys.stderr)
        return result.status
    print(f"wrote {result.output_dir}")
    for key, value in result.summary.items():
        print(f"{key} = {value}")
    return 0


def cmd_converge(args) -> int:
    cfg, _ = _load(args.config)
    rows = convergence_study(cfg, args.dt_list)
    out = Path(args.output or Path(cfg.output_dir) / "convergence.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_convergence(out, rows)
    print(f"{'dt':>12} {'rel. error':>12} {'order':>7}")
    for r in rows:
        order = "" if r.observed_order is None else f"{r.observed_order:7.3f}"
        print(f"{r.dt:12.6g} {r.relative_error:12.4e} {order:>7}")
    return 0


def cmd_scale(args) -> int:
    cfg, _ = _load(args.config)
    apply_worker_count()
    rows = scaling_study(cfg, args.nv_list, repeats=args.repeats, with_dense=args.dense)
    out = Path(args.output or Path(cfg.output_dir) / "scaling.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_scaling(out, rows, with_dense=args.dense)
    print(f"{'Nv':>6} {'seconds':>10} {'ratio':>7}")
    for r in rows:
        ratio = "" if r.ratio is None else f"{r.ratio:7.3f}"
        print(f"{r.nv:6d} {r.wall_seconds:10.4f} {ratio:>7}")
    return 0


def cmd_fit(args) -> int:
    header, data = read_csv(Path(args.csv))
    try:
        t = data[:, header.index("t")]
        e = data[:, header.index(args.column)]
    except ValueError:
        print(f"CSV must contain columns 't' and {args.column!r}", file=sys.stderr)
        return 2
    window = None
    if args.t_min is not None or args.t_max is not None:
        window = (args.t_min if args.t_min is not None else t[0], args.t_max if args.t_max is not None else t[-1])
    try:
        gamma, diag = damping_fit(t, e, window=window, min_peaks=args.min_peaks)
    except InsufficientPeaksError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return 1
    print(f"gamma = {gamma:.6f}")
    print(f"peaks = {len(diag.peak_times)}, window = {diag.window}, rms residual = {diag.residual_rms:.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="imex-tt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment from a config file")
    p.add_argument("config")
    p.add_argument("-v", "--verbose", action="store_true", help="print progress at every diagnostics row")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("converge", help="time-step convergence study against the exact solution")
    p.add_argument("config")
    p.add_argument("--dt-list", required=True, type=_number_list, help="e.g. 1/16,1/32,1/64")
    p.add_argument("-o", "--output", help="CSV path (default: <output_dir>/convergence.csv)")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("scale", help="wall time of the stepping loop versus Nv")
    p.add_argument("config")
    p.add_argument("--nv-list", required=True, type=lambda s: _number_list(s, int))
    p.add_argument("--repeats", type=int, default=1, help="report the best of this many timings")
    p.add_argument("--dense", action="store_true", help="also time the dense oracle where it fits")
    p.add_argument("-o", "--output", help="CSV path (default: <output_dir>/scaling.csv)")
    p.set_defaults(func=cmd_scale)

    p = sub.add_parser("fit-damping", help="damping rate from an electric-energy series")
    p.add_argument("csv")
    p.add_argument("--column", default="electric_energy")
    p.add_argument("--t-min", type=float)
    p.add_argument("--t-max", type=float)
    p.add_argument("--min-peaks", type=int, default=4)
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
