"""Command-line front end.

Subcommands
-----------
model info|build   describe a network or write its description file
quantize           seeded weights + calibration -> integer container
infer              run a quantized network on a netpbm image
tile               plan the memory-hierarchy tiling for a network
perf predict       cycle/latency/power/energy prediction for a backend
pareto             non-dominated (latency, energy) filtering / sweeps
compare            consistency checks against the bundled measurements
eval               detection mAP between two JSONL box files

Reports are JSON by default (``--format csv`` where a table makes sense).
Exit codes: 0 success, 1 a compare check exceeded tolerance, 2 bad
usage/input.  Every command is deterministic for a fixed ``--seed``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import asdict

import numpy as np

from .detect import (
    decode,
    load_detections_jsonl,
    load_ground_truth_jsonl,
    mean_ap,
    nms,
    save_detections_jsonl,
)
from .errors import ToolError
from .execute import run
from .graph import (
    ModelGraph,
    activation_memory,
    build_graph,
    count_macs,
    count_params,
    layer_table,
    model_size_bytes,
)
from .images import load_model_input
from .perf import CostReport, min_voltage, operating_point, pareto, predict
from .presets import (
    config_to_dict,
    load_config,
    parse_preset,
    preset_name,
    save_config,
)
from .quantize import calibrate, dequantize_output, generate_weights, integerize, quantize_input
from .refdata import calibrated_profiles, resolve_backend
from .tiling import MemoryHierarchy, plan_network, weight_store_bytes
from .validate import has_failures, run_checks
from .weights_io import load_quantized, save_activations, save_quantized


# ---------------------------------------------------------------------------
# Output helpers


def _emit_text(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_json(payload, out: str | None) -> None:
    _emit_text(json.dumps(payload, indent=2) + "\n", out)


def _emit_csv(rows: list[dict], out: str | None, fieldnames: list[str] | None = None) -> None:
    if not rows:
        _emit_text("", out)
        return
    names = fieldnames or list(rows[0].keys())
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in names})
    _emit_text(buf.getvalue(), out)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Shared argument plumbing


def _add_network_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--preset", help="named variant, e.g. TY:3-3-88")
    g.add_argument("--config", help="path to a model-description JSON file")


def _load_graph(args) -> ModelGraph:
    if args.preset:
        return build_graph(parse_preset(args.preset))
    return build_graph(load_config(args.config))


def _network_label(graph: ModelGraph) -> str:
    return preset_name(graph.config) or "custom"


def _add_hierarchy_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--l1", type=int, default=131_072, help="L1 scratchpad bytes (default 131072)")
    p.add_argument("--l2", type=int, default=1_572_864, help="L2 memory bytes (default 1572864)")
    p.add_argument("--l3", type=int, default=2_097_152, help="L3 memory bytes (default 2097152)")
    p.add_argument("--double-buffer", action="store_true", help="halve the usable L1 for ping-pong buffers")


def _hierarchy(args) -> MemoryHierarchy:
    return MemoryHierarchy(l1=args.l1, l2=args.l2, l3=args.l3, double_buffering=args.double_buffer)


def _report_dict(report: CostReport, graph: ModelGraph) -> dict:
    return {
        "network": _network_label(graph),
        "config": config_to_dict(graph.config),
        "backend": report.backend,
        "freq_hz": report.op_point.freq_hz,
        "voltage": report.op_point.voltage,
        "total_cycles": report.total_cycles,
        "latency_ms": report.latency_ms,
        "power_mw": report.power_w * 1e3,
        "energy_uj": report.energy_uj,
        "mac_per_cycle": report.mac_per_cycle,
        "layers": [asdict(l) for l in report.layers],
    }


def _predict_for(graph: ModelGraph, backend: str, freq_hz: float, voltage: float | None) -> CostReport:
    kind = resolve_backend(backend)
    profile = calibrated_profiles()[kind]
    return predict(graph, profile, operating_point(freq_hz, voltage))


# ---------------------------------------------------------------------------
# model


def cmd_model(args) -> int:
    graph = _load_graph(args)
    if args.action == "build":
        if not args.out:
            _emit_json(config_to_dict(graph.config), None)
        else:
            save_config(args.out, graph.config)
        return 0
    rows, act_peak = activation_memory(graph)
    info = {
        "name": _network_label(graph),
        "config": config_to_dict(graph.config),
        "output_len": graph.output_len,
        "params": count_params(graph),
        "macs": count_macs(graph),
        "model_size_bytes": model_size_bytes(graph),
        "weight_store_bytes": weight_store_bytes(graph),
        "activation_peak_bytes": act_peak,
        "layers": layer_table(graph),
    }
    if args.format == "csv":
        table = [dict(r, in_shape="x".join(map(str, r["in_shape"])), out_shape="x".join(map(str, r["out_shape"]))) for r in info["layers"]]
        _emit_csv(table, args.out)
    else:
        _emit_json(info, args.out)
    return 0


# ---------------------------------------------------------------------------
# quantize


def _calibration_inputs(args, graph: ModelGraph) -> list[np.ndarray]:
    paths: list[str] = []
    if args.calib:
        paths.extend(args.calib)
    if args.calib_dir:
        if not os.path.isdir(args.calib_dir):
            raise ToolError(f"calibration directory {args.calib_dir!r} does not exist")
        for entry in sorted(os.listdir(args.calib_dir)):
            if entry.lower().endswith((".pgm", ".ppm")):
                paths.append(os.path.join(args.calib_dir, entry))
    cfg = graph.config
    inputs = [load_model_input(p, cfg.resolution, cfg.in_channels).astype(np.float64) for p in paths]
    if args.calib_random:
        rng = np.random.default_rng(args.seed + 1000)
        shape = graph.input_shape.as_tuple()
        for _ in range(args.calib_random):
            inputs.append(rng.integers(-128, 128, size=shape).astype(np.float64))
    if not inputs:
        raise ToolError("no calibration inputs: pass --calib, --calib-dir, or --calib-random")
    return inputs


def cmd_quantize(args) -> int:
    graph = _load_graph(args)
    weights = generate_weights(graph, args.seed)
    calib = calibrate(graph, weights, _calibration_inputs(args, graph))
    qg = integerize(graph, weights, calib)
    save_quantized(args.out, qg)
    _emit_json(
        {
            "network": _network_label(graph),
            "out": args.out,
            "sha256": _sha256(args.out),
            "seed": args.seed,
            "input_scale": qg.io_scales["input"].scale,
            "output_scale": qg.io_scales["output"].scale,
            "bytes": os.path.getsize(args.out),
        },
        None,
    )
    return 0


# ---------------------------------------------------------------------------
# infer


def cmd_infer(args) -> int:
    graph = _load_graph(args)
    qg = load_quantized(args.weights, graph)
    cfg = graph.config
    img = load_model_input(args.image, cfg.resolution, cfg.in_channels)
    x = quantize_input(img.astype(np.float64), qg.io_scales["input"].scale)
    result = run(qg, x, capture=bool(args.dump_activations), workers=args.workers)
    if args.dump_activations:
        save_activations(args.dump_activations, result.snapshots)
    vector = dequantize_output(result.output, qg.io_scales["output"])
    image_id = os.path.splitext(os.path.basename(args.image))[0]
    dets = decode(vector, cfg.grid, cfg.boxes, cfg.classes, threshold=args.threshold, image_id=image_id)
    dets = nms(dets, iou_threshold=args.nms_iou)
    if args.out:
        save_detections_jsonl(args.out, dets)
    else:
        for d in dets:
            sys.stdout.write(json.dumps(asdict(d)) + "\n")
    return 0


# ---------------------------------------------------------------------------
# tile


def cmd_tile(args) -> int:
    graph = _load_graph(args)
    plan = plan_network(graph, _hierarchy(args))
    layers = [
        {
            "name": p.name,
            "kind": p.kind,
            "tile": list(p.tile),
            "n_tiles": p.n_tiles,
            "buffer_bytes": p.buffer_bytes,
            "in_bytes": p.in_bytes,
            "weight_bytes": p.weight_bytes,
            "out_bytes": p.out_bytes,
            "total_bytes": p.total_bytes,
        }
        for p in plan.plans
    ]
    if args.format == "csv":
        table = [dict(r, tile="x".join(map(str, r["tile"]))) for r in layers]
        _emit_csv(table, args.out)
        return 0
    _emit_json(
        {
            "network": _network_label(graph),
            "hierarchy": {
                "l1": plan.hierarchy.l1,
                "l2": plan.hierarchy.l2,
                "l3": plan.hierarchy.l3,
                "double_buffering": plan.hierarchy.double_buffering,
                "l1_budget": plan.hierarchy.l1_budget,
            },
            "weight_store_bytes": plan.weight_store_bytes,
            "activation_peak_bytes": plan.activation_peak_bytes,
            "weights_level": plan.weights_level,
            "total_bytes": plan.total_bytes,
            "layers": layers,
        },
        args.out,
    )
    return 0


# ---------------------------------------------------------------------------
# perf


def cmd_perf(args) -> int:
    graph = _load_graph(args)
    report = _predict_for(graph, args.backend, args.freq, args.voltage)
    payload = _report_dict(report, graph)
    if args.format == "csv":
        rows = payload.pop("layers")
        rows.append(
            {
                "name": "TOTAL",
                "kind": "",
                "macs": sum(r["macs"] for r in rows),
                "cycles": report.total_cycles,
                "eff": report.mac_per_cycle,
                "scheme": "",
            }
        )
        _emit_csv(rows, args.out)
    else:
        _emit_json(payload, args.out)
    return 0


# ---------------------------------------------------------------------------
# pareto


def _read_points_csv(path: str) -> tuple[list[dict], list[str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise ToolError(f"{path}: empty CSV")
            fieldnames = list(reader.fieldnames)
            rows = list(reader)
    except OSError as exc:
        raise ToolError(f"cannot read {path}: {exc}") from exc
    for col in ("latency_ms", "energy_uj"):
        if col not in fieldnames:
            raise ToolError(f"{path}: missing required column {col!r}")
    return rows, fieldnames

def _row_point(row: dict) -> tuple[float, float]:
    try:
        return float(row["latency_ms"]), float(row["energy_uj"])
    except (TypeError, ValueError) as exc:
        raise ToolError(f"bad point row {row!r}: {exc}") from exc


def _pareto_rows(rows: list[dict]) -> list[dict]:
    """Filter rows to the non-dominated front, preserving extra columns.

    Delegates the point-set decision to perf.pareto and maps the kept
    (latency, energy) multiset back onto rows in input order.
    """
    from collections import defaultdict, deque

    points = [_row_point(r) for r in rows]
    kept = pareto(points)
    pool: dict[tuple[float, float], deque] = defaultdict(deque)
    for pt, row in zip(points, rows):
        pool[pt].append(row)
    return [pool[pt].popleft() for pt in kept]


def _sweep_rows(graph: ModelGraph, backend: str, fmin: float, fmax: float, fstep: float) -> list[dict]:
    if fstep <= 0 or fmax < fmin:
        raise ToolError("sweep needs freq-step > 0 and freq-max >= freq-min")
    rows = []
    steps = int(math.floor((fmax - fmin) / fstep + 1e-9))
    for i in range(steps + 1):
        f = fmin + i * fstep
        report = _predict_for(graph, backend, f, None)
        rows.append(
            {
                "freq_mhz": f / 1e6,
                "voltage": report.op_point.voltage,
                "latency_ms": repr(report.latency_ms),
                "energy_uj": repr(report.energy_uj),
            }
        )
    return rows


def _write_svg(path: str, all_points: list[tuple[float, float]], front: list[tuple[float, float]]) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ToolError("SVG output needs matplotlib (install the 'plot' extra)") from exc
    fig, ax = plt.subplots(figsize=(6, 4))
    if all_points:
        ax.scatter([p[0] for p in all_points], [p[1] for p in all_points], s=14, alpha=0.4, label="points")
    if front:
        ax.plot([p[0] for p in front], [p[1] for p in front], "o-", color="crimson", label="pareto front")
    ax.set_xlabel("latency [ms]")
    ax.set_ylabel("energy [uJ]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def cmd_pareto(args) -> int:
    if args.infile:
        rows, fieldnames = _read_points_csv(args.infile)
    elif args.preset or args.config:
        graph = _load_graph(args)
        rows = _sweep_rows(graph, args.backend, args.freq_min, args.freq_max, args.freq_step)
        fieldnames = list(rows[0].keys()) if rows else ["latency_ms", "energy_uj"]
    else:
        raise ToolError("pareto needs --in points.csv or a network (--preset/--config)")
    front_rows = _pareto_rows(rows)
    if args.svg:
        _write_svg(args.svg, [_row_point(r) for r in rows], [_row_point(r) for r in front_rows])
    _emit_csv(front_rows, args.out, fieldnames)
    return 0


# ---------------------------------------------------------------------------
# compare


_METRIC_KEYS = ("total_cycles", "latency_ms", "power_mw", "energy_uj", "mac_per_cycle")


def _compare_reports(current: dict, reference: dict, tol: float) -> list[dict]:
    rows = []
    for key in _METRIC_KEYS:
        if key not in reference:
            continue
        expected = float(reference[key])
        actual = float(current[key])
        rel = 0.0 if expected == 0 else (actual - expected) / expected
        rows.append(
            {
                "check": "report",
                "subject": key,
                "expected": expected,
                "actual": actual,
                "rel_err": rel,
                "tol": tol,
                "status": "ok" if abs(rel) <= tol + 1e-12 else "fail",
                "note": "",
            }
        )
    return rows


def cmd_compare(args) -> int:
    if args.against:
        try:
            with open(args.against, encoding="utf-8") as fh:
                reference = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ToolError(f"cannot read reference report {args.against}: {exc}") from exc
        for key in ("config", "backend", "freq_hz"):
            if key not in reference:
                raise ToolError(f"reference report lacks {key!r}; was it written by 'perf predict'?")
        from .presets import config_from_dict

        graph = build_graph(config_from_dict(reference["config"]))
        report = _predict_for(graph, reference["backend"], float(reference["freq_hz"]), reference.get("voltage"))
        rows = _compare_reports(_report_dict(report, graph), reference, args.tol)
    else:
        rows = run_checks(args.what)
    payload = {
        "rows": rows,
        "checks": len(rows),
        "failures": sum(r["status"] == "fail" for r in rows),
        "anomalies": sum(r["status"] == "anomaly" for r in rows),
    }
    if args.format == "csv":
        _emit_csv(rows, args.out)
    else:
        _emit_json(payload, args.out)
    return 1 if has_failures(rows) else 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    dets = load_detections_jsonl(args.detections)
    gts = load_ground_truth_jsonl(args.ground_truth)
    try:
        value, per_class = mean_ap(dets, gts, iou_threshold=args.iou, method=args.method)
    except ValueError as exc:
        raise ToolError(str(exc)) from exc
    _emit_json(
        {
            "map": value,
            "per_class": {str(k): v for k, v in sorted(per_class.items())},
            "iou": args.iou,
            "method": args.method,
            "detections": len(dets),
            "ground_truth": len(gts),
        },
        args.out,
    )
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tyolo", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("model", help="describe or export a network")
    p.add_argument("action", choices=("info", "build"))
    _add_network_args(p)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("quantize", help="produce an integer weight container")
    _add_network_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--calib", nargs="+", metavar="IMAGE", help="netpbm calibration images")
    p.add_argument("--calib-dir", help="directory of .pgm/.ppm calibration images")
    p.add_argument("--calib-random", type=int, default=0, metavar="N", help="add N seeded synthetic calibration inputs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("infer", help="run a quantized network on an image")
    _add_network_args(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--threshold", type=float, default=0.0, help="score threshold for emitted boxes")
    p.add_argument("--nms-iou", type=float, default=0.5)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--dump-activations", metavar="PATH", help="save every intermediate tensor")
    p.add_argument("--out", help="write boxes as JSONL (default: stdout)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("tile", help="plan memory-hierarchy tiling")
    _add_network_args(p)
    _add_hierarchy_args(p)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("perf", help="performance prediction")
    perf_sub = p.add_subparsers(dest="action", required=True)
    pp = perf_sub.add_parser("predict", help="predict latency/power/energy")
    _add_network_args(pp)
    pp.add_argument("--backend", default="single", help="single | multi | ne (aliases accepted)")
    pp.add_argument("--freq", type=float, required=True, help="clock in Hz, e.g. 370e6")
    pp.add_argument("--voltage", type=float, help="supply voltage; default: minimum for the clock")
    pp.add_argument("--format", choices=("json", "csv"), default="json")
    pp.add_argument("--out")
    pp.set_defaults(func=cmd_perf)

    p = sub.add_parser("pareto", help="non-dominated latency/energy filtering")
    _add_network_args(p, required=False)
    p.add_argument("--in", dest="infile", metavar="CSV", help="filter an existing points file")
    p.add_argument("--backend", default="multi")
    p.add_argument("--freq-min", type=float, default=50e6)
    p.add_argument("--freq-max", type=float, default=370e6)
    p.add_argument("--freq-step", type=float, default=10e6)
    p.add_argument("--svg", metavar="PATH", help="also draw a scatter plot (needs matplotlib)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("compare", help="check predictions against bundled measurements")
    p.add_argument("what", nargs="?", default="all", choices=("all", "params", "perf", "devices", "report"))
    p.add_argument("--against", metavar="REPORT_JSON", help="re-run a saved perf report and diff it")
    p.add_argument("--tol", type=float, default=0.02, help="relative tolerance for --against (default 2%%)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("eval", help="mAP between detection and ground-truth JSONL files")
    p.add_argument("--detections", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--method", choices=("11point", "interp_all"), default="11point")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ToolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (KeyError, ValueError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
