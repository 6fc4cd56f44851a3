"""Run the two-stream case for several collision strengths and tabulate the rank history.

Usage::

    python3 scripts/two_stream_sweep.py scripts/configs/two_stream.cfg --eta 0,0.01,0.03,0.05

Each run writes its usual artifacts to ``<output_dir>_eta<value>``. A summary table of the
maximal effective ranks at a few times is printed at the end.
"""

import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from imex_tt.domain import load_config
from imex_tt.experiments import read_csv, run_case


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("config", type=Path)
    parser.add_argument("--eta", default="0,0.01,0.03,0.05", help="comma-separated values")
    parser.add_argument("--report-times", default="0,10,20,30,40,45")
    args = parser.parse_args(argv)

    base = load_config(args.config.read_text())
    etas = [float(s) for s in args.eta.split(",")]
    times = [float(s) for s in args.report_times.split(",")]
    stem = str(base.output_dir).rstrip("/").removesuffix(f"_eta{base.eta:g}")

    table = []
    for eta in etas:
        cfg = replace(base, eta=eta, output_dir=Path(f"{stem}_eta{eta:g}"))
        result = run_case(cfg, config_text=args.config.read_text())
        if result.status != 0:
            print(f"eta={eta:g}: failed ({result.message})")
            continue
        header, data = read_csv(cfg.output_dir / "diagnostics.csv")
        t = data[:, header.index("t")]
        ranks = data[:, [header.index("R1"), header.index("R2")]].astype(int)
        row = []
        for tq in times:
            k = int(np.argmin(np.abs(t - tq)))
            row.append(f"({ranks[k, 0]},{ranks[k, 1]})")
        table.append((eta, row))

    print("eta    " + "  ".join(f"t={tq:<6g}" for tq in times))
    for eta, row in table:
        print(f"{eta:<6g} " + "  ".join(f"{r:<8}" for r in row))


if __name__ == "__main__":
    main()
