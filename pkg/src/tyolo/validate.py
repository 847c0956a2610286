"""Deviation checks between the model and the embedded reference data.

Every check returns uniform rows:

    {check, subject, expected, actual, rel_err, tol, status, note}

status is "ok" (within tolerance), "fail" (model or data outside
tolerance), or "anomaly" (a known internal inconsistency in the
reference tables themselves — reported, but never a failure). The CLI's
compare command renders these rows and exits nonzero only on "fail".
"""
from __future__ import annotations

from itertools import combinations

from .graph import build_graph, count_macs, count_params
from .perf import operating_point, predict
from .presets import parse_preset
from .refdata import calibrated_profiles, claims, find_record, load_dataset, published_params


def _row(check, subject, expected, actual, tol, status=None, note=""):
    rel = 0.0 if expected == 0 else (actual - expected) / expected
    if status is None:
        status = "ok" if abs(rel) <= tol + 1e-12 else "fail"
    return {
        "check": check,
        "subject": subject,
        "expected": expected,
        "actual": actual,
        "rel_err": rel,
        "tol": tol,
        "status": status,
        "note": note,
    }


def _computed_params() -> dict[str, int]:
    return {name: count_params(build_graph(parse_preset(name))) for name in published_params()}


def check_param_scaling() -> list[dict]:
    """Pairwise published param differences along the class and resolution
    axes (3x3-kernel variants) must be reproduced exactly."""
    published = published_params()
    computed = _computed_params()
    rows = []
    classes, resolutions = (3, 10, 20), (88, 112, 224)
    for res in resolutions:
        for c1, c2 in combinations(classes, 2):
            a, b = f"TY:{c1}-3-{res}", f"TY:{c2}-3-{res}"
            rows.append(
                _row(
                    "param-scaling",
                    f"class delta {c1}->{c2} at {res}px",
                    published[b] - published[a],
                    computed[b] - computed[a],
                    0.0,
                )
            )
    for c in classes:
        for r1, r2 in combinations(resolutions, 2):
            a, b = f"TY:{c}-3-{r1}", f"TY:{c}-3-{r2}"
            rows.append(
                _row(
                    "param-scaling",
                    f"resolution delta {r1}->{r2} at {c} classes",
                    published[b] - published[a],
                    computed[b] - computed[a],
                    0.0,
                )
            )
    return rows


def check_kernel_deltas() -> list[dict]:
    """First-layer 3x3 -> 7x7 swap adds exactly 1,920 parameters. Reference
    rows whose published delta disagrees are flagged as data anomalies."""
    expected_delta = claims()["first_kernel_param_delta"]
    published = published_params()
    computed = _computed_params()
    rows = []
    for c in (3, 10, 20):
        for res in (88, 112, 224):
            a, b = f"TY:{c}-3-{res}", f"TY:{c}-7-{res}"
            got = computed[b] - computed[a]
            rows.append(_row("kernel-delta", f"model delta for {b}", expected_delta, got, 0.0))
            pub = published[b] - published[a]
            if pub == got:
                rows.append(_row("kernel-delta", f"published delta for {b}", got, pub, 0.0))
            else:
                rows.append(
                    _row(
                        "kernel-delta",
                        f"published delta for {b}",
                        got,
                        pub,
                        0.0,
                        status="anomaly",
                        note="reference table disagrees with its own increment rule; flagged, not failed",
                    )
                )
    return rows


def check_totals(tol: float = 0.01) -> list[dict]:
    """Computed totals for the 3x3 variants land within 1% of the published
    table (a constant -3,440 bookkeeping offset is documented)."""
    published = published_params()
    computed = _computed_params()
    rows = []
    for c in (3, 10, 20):
        for res in (88, 112, 224):
            name = f"TY:{c}-3-{res}"
            rows.append(
                _row(
                    "param-total",
                    name,
                    published[name],
                    computed[name],
                    tol,
                    note=f"residual {computed[name] - published[name]:+d}",
                )
            )
    return rows


def check_mac_counts() -> list[dict]:
    """MAC totals versus throughput-derived reference workloads."""
    rows = []
    for name, tol in (("TY:3-3-88", 0.15), ("TY:10-3-112", 0.10)):
        rec = find_record(name, "single_core")
        expected = rec.cycles * rec.mac_per_cycle
        actual = count_macs(build_graph(parse_preset(name)))
        rows.append(_row("mac-count", name, expected, actual, tol))
    return rows


def check_holdout_predictions() -> list[dict]:
    """Profiles are calibrated on the small network only; the larger one is
    a holdout whose measurements the model must hit within 20% (30% on
    the cross-backend ratio claims)."""
    profiles = calibrated_profiles()
    graph = build_graph(parse_preset("TY:10-3-112"))
    rows = []

    single = predict(graph, profiles["single_core"], operating_point(370e6))
    multi_hi = predict(graph, profiles["multi_core"], operating_point(370e6))
    multi_lo = predict(graph, profiles["multi_core"], operating_point(150e6))
    accel = predict(graph, profiles["accelerator"], operating_point(370e6))

    checks = [
        ("single-core latency @370MHz", find_record("TY:10-3-112", "single_core", 370).latency_ms, single.latency_ms),
        ("multi-core latency @370MHz", find_record("TY:10-3-112", "multi_core", 370).latency_ms, multi_hi.latency_ms),
        ("multi-core latency @150MHz", find_record("TY:10-3-112", "multi_core", 150).latency_ms, multi_lo.latency_ms),
        ("accelerator latency @370MHz", find_record("TY:10-3-112", "accelerator", 370).latency_ms, accel.latency_ms),
        ("accelerator energy @370MHz", find_record("TY:10-3-112", "accelerator", 370).energy_uj, accel.energy_uj),
    ]
    for subject, expected, actual in checks:
        rows.append(_row("holdout", subject, expected, actual, 0.20))

    c = claims()
    rsingle = c["ratio_single_vs_accel"]
    ratio = single.latency_ms / accel.latency_ms
    rows.append(_row("holdout-ratio", "single vs accelerator latency ratio", rsingle["value"], ratio, rsingle["tolerance"]))

    band = c["ratio_multi_vs_accel"]
    ratio2 = multi_hi.latency_ms / accel.latency_ms
    lo, hi = band["low"] * (1 - band["tolerance"]), band["high"] * (1 + band["tolerance"])
    ok = lo <= ratio2 <= hi
    rows.append(
        {
            "check": "holdout-ratio",
            "subject": "multi vs accelerator latency ratio",
            "expected": f"{band['low']}-{band['high']}x",
            "actual": ratio2,
            "rel_err": 0.0 if ok else min(abs(ratio2 - lo) / lo, abs(ratio2 - hi) / hi),
            "tol": band["tolerance"],
            "status": "ok" if ok else "fail",
            "note": f"accept band [{lo:.2f}, {hi:.2f}]",
        }
    )
    return rows


def check_calibration_network() -> list[dict]:
    """Sanity on the calibration network itself: cycle totals and the
    latency the cycles imply, against the measured traces."""
    profiles = calibrated_profiles()
    graph = build_graph(parse_preset("TY:3-3-88"))
    rows = []

    single = predict(graph, profiles["single_core"], operating_point(370e6))
    rec = find_record("TY:3-3-88", "single_core", 370)
    rows.append(_row("calibration", "single-core cycle total", rec.cycles, single.total_cycles, 0.20))

    multi = predict(graph, profiles["multi_core"], operating_point(370e6))
    rec = find_record("TY:3-3-88", "multi_core", 370)
    rows.append(
        _row(
            "calibration",
            "multi-core latency @370MHz",
            rec.latency_ms,
            multi.latency_ms,
            0.15,
            note="cycles are canonical; the measured latency disagrees with its own cycle count",
        )
    )

    accel = predict(graph, profiles["accelerator"], operating_point(370e6))
    rec = find_record("TY:3-3-88", "accelerator", 370)
    rows.append(_row("calibration", "accelerator latency @370MHz", rec.latency_ms, accel.latency_ms, 0.15))
    rows.append(_row("calibration", "accelerator cycle total", rec.cycles, accel.total_cycles, 0.15))

    # Power-fit consistency: the reported per-MHz efficiency implies a power
    # draw near the directly measured one.
    eff_uw_mhz = claims()["multi_energy_per_mhz_uw"]
    implied_mw = eff_uw_mhz * 370 / 1e3
    measured_mw = find_record("TY:3-3-88", "multi_core", 370).power_mw
    rows.append(_row("calibration", "per-MHz efficiency vs measured power", measured_mw, implied_mw, 0.10))
    return rows


def check_energy_arithmetic() -> list[dict]:
    """energy = power x latency on the measured eight-core pairs."""
    rows = []
    lo = find_record("TY:3-3-88", "multi_core", 150)
    rows.append(
        _row(
            "energy",
            "eight-core energy @150MHz",
            lo.energy_uj,
            lo.power_mw * lo.latency_ms,
            0.05,
            note="measured average power times measured latency",
        )
    )
    hi = find_record("TY:3-3-88", "multi_core", 370)
    derived = hi.energy_per_mhz_uw * hi.cycles / 1e6
    rows.append(
        _row(
            "energy",
            "eight-core energy @370MHz",
            hi.energy_uj,
            derived,
            0.05,
            note="per-MHz efficiency (uW/MHz == pJ/cycle) times the cycle count",
        )
    )
    return rows


def check_device_ratios() -> list[dict]:
    """Cross-device advantage of the on-chip array over the external
    accelerator chip, recomputed from the embedded records."""
    c = claims()["max78000_vs_accel"]
    gap9 = find_record("TY:3-3-88", "accelerator", 370)
    max78k = find_record("TY:3-3-88", "accelerator", 50, device="MAX78000")
    rows = [
        _row(
            "device-ratio",
            "latency advantage vs MAX78000",
            c["latency_ratio"],
            max78k.latency_ms / gap9.latency_ms,
            c["tolerance"],
        ),
        _row(
            "device-ratio",
            "energy advantage vs MAX78000",
            c["energy_ratio"],
            max78k.energy_uj / gap9.energy_uj,
            c["tolerance"],
        ),
    ]
    return rows


CHECK_GROUPS = {
    "params": (check_param_scaling, check_kernel_deltas, check_totals, check_mac_counts),
    "perf": (check_holdout_predictions, check_calibration_network, check_energy_arithmetic),
    "devices": (check_device_ratios,),
}


def run_checks(group: str = "all") -> list[dict]:
    if group == "all" or group == "report":
        fns = [fn for fns in CHECK_GROUPS.values() for fn in fns]
    else:
        try:
            fns = list(CHECK_GROUPS[group])
        except KeyError:
            raise KeyError(f"unknown check group {group!r}; choose params, perf, devices, or all") from None
    rows = []
    for fn in fns:
        rows.extend(fn())
    return rows


def has_failures(rows: list[dict]) -> bool:
    return any(r["status"] == "fail" for r in rows)
