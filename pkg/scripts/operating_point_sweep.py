#!/usr/bin/env python3
"""Sweep the clock for one network/backend and report the latency/energy
trade-off curve.

Each frequency runs at the lowest voltage the chip supports there, so
the sweep walks the voltage staircase; the non-dominated points (one per
voltage step: its fastest clock) form the printed front. Writes the full
sweep as CSV when asked, and a scatter plot if matplotlib is around.

Usage:
    python3 scripts/operating_point_sweep.py --preset TY:3-3-88 --backend multi
    python3 scripts/operating_point_sweep.py --preset TY:10-3-112 --backend ne \\
        --fmin 50e6 --fmax 370e6 --step 5e6 --out sweep.csv --svg sweep.svg
"""
import argparse
import csv
import sys

from tyolo.graph import build_graph
from tyolo.perf import operating_point, pareto, predict
from tyolo.presets import parse_preset
from tyolo.refdata import calibrated_profiles, resolve_backend


def sweep(graph, profile, fmin, fmax, step):
    points = []
    f = fmin
    while f <= fmax + 1e-6:
        rep = predict(graph, profile, operating_point(f))
        points.append(
            {
                "freq_mhz": f / 1e6,
                "voltage": rep.op_point.voltage,
                "latency_ms": rep.latency_ms,
                "energy_uj": rep.energy_uj,
                "power_mw": rep.power_w * 1e3,
                "mac_per_cycle": rep.mac_per_cycle,
            }
        )
        f += step
    return points


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", default="TY:3-3-88")
    ap.add_argument("--backend", default="multi", help="single | multi | ne")
    ap.add_argument("--fmin", type=float, default=50e6)
    ap.add_argument("--fmax", type=float, default=370e6)
    ap.add_argument("--step", type=float, default=10e6)
    ap.add_argument("--out", help="write the full sweep as CSV")
    ap.add_argument("--svg", help="write a latency/energy scatter plot")
    args = ap.parse_args()

    graph = build_graph(parse_preset(args.preset))
    profile = calibrated_profiles()[resolve_backend(args.backend)]
    points = sweep(graph, profile, args.fmin, args.fmax, args.step)

    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(points[0].keys()), lineterminator="\n")
            w.writeheader()
            w.writerows(points)

    front_pts = pareto([(p["latency_ms"], p["energy_uj"]) for p in points])
    front_set = set(front_pts)
    front = [p for p in points if (p["latency_ms"], p["energy_uj"]) in front_set]

    print(f"{args.preset} on {resolve_backend(args.backend)}: "
          f"{len(points)} operating points, {len(front)} on the front")
    fmt = "{freq_mhz:>8.0f} MHz  {voltage:>5.2f} V  {latency_ms:>9.3f} ms  {energy_uj:>9.2f} uJ  {power_mw:>7.2f} mW"
    for p in front:
        print(fmt.format(**p))

    if args.svg:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4))
        ax.scatter([p["latency_ms"] for p in points], [p["energy_uj"] for p in points], s=12, alpha=0.4)
        ax.plot([p["latency_ms"] for p in front], [p["energy_uj"] for p in front], "o-", color="crimson")
        ax.set_xlabel("latency [ms]")
        ax.set_ylabel("energy [uJ]")
        ax.set_title(f"{args.preset} / {resolve_backend(args.backend)}")
        fig.tight_layout()
        fig.savefig(args.svg, format="svg")
        print(f"wrote {args.svg}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
