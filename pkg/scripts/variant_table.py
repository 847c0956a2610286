#!/usr/bin/env python3
"""Print the size/workload table for every named network variant.

Columns: parameter count (computed vs the bundled published table and
the residual between them), MAC count, head vector length, and the
integerized weight-store footprint. A quick way to eyeball how the
family scales along the class/resolution/kernel axes.

Usage:
    python3 scripts/variant_table.py [--csv]
"""
import argparse
import csv
import sys

from tyolo.graph import build_graph, count_macs, count_params
from tyolo.presets import PRESET_NAMES, parse_preset
from tyolo.refdata import published_params
from tyolo.tiling import weight_store_bytes


def rows():
    published = published_params()
    for name in PRESET_NAMES:
        g = build_graph(parse_preset(name))
        params = count_params(g)
        pub = published.get(name)
        yield {
            "name": name,
            "params": params,
            "published": pub if pub is not None else "",
            "residual": params - pub if pub is not None else "",
            "macs": count_macs(g),
            "output_len": g.output_len,
            "weight_store_bytes": weight_store_bytes(g),
        }


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--csv", action="store_true", help="machine-readable output")
    args = ap.parse_args()

    table = list(rows())
    if args.csv:
        w = csv.DictWriter(sys.stdout, fieldnames=list(table[0].keys()), lineterminator="\n")
        w.writeheader()
        w.writerows(table)
        return 0

    fmt = "{name:<12} {params:>10} {published:>10} {residual:>9} {macs:>12} {output_len:>8} {weight_store_bytes:>12}"
    print(fmt.format(name="variant", params="params", published="published", residual="residual",
                     macs="macs", output_len="out_len", weight_store_bytes="store_B"))
    for r in table:
        print(fmt.format(**r))
    return 0


if __name__ == "__main__":
    sys.exit(main())
