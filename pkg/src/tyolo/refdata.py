"""Embedded reference dataset: measurements, published tables, claims.

The JSON shipped under tyolo/data is the single source of truth for
every externally measured number the package checks itself against.
This module loads it, exposes typed accessors, and builds the three
calibrated backend profiles from it (power fits plus the two calibrated
throughput scalars).
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import FormatError
from .graph import build_graph
from .perf import (
    BackendProfile,
    OperatingPoint,
    calibrate_accel_peak,
    calibrate_parallel_eff,
    fit_power_model,
    fit_single_point_power,
)
from .presets import parse_preset


@dataclass(frozen=True)
class MeasurementRecord:
    device: str
    network: str
    backend: str
    freq_mhz: float
    voltage: float | None
    latency_ms: float
    energy_uj: float
    power_mw: float | None
    mac_per_cycle: float | None
    cycles: float | None
    source: str
    derived: bool = False
    energy_per_mhz_uw: float | None = None

    @property
    def latency_s(self) -> float:
        return self.latency_ms / 1e3

    @property
    def energy_j(self) -> float:
        return self.energy_uj / 1e6

    @property
    def op_point(self) -> OperatingPoint:
        if self.voltage is None:
            raise FormatError(f"record {self.device}/{self.network} has no voltage")
        return OperatingPoint(freq_hz=self.freq_mhz * 1e6, voltage=self.voltage)


def _dataset_source() -> str:
    """Resolve where the measurement dataset lives.

    TY_DATA_DIR points at a directory holding a replacement
    measurements.json; empty string means the packaged copy.  The
    caches below key on this string so flipping the env var between
    calls is honoured.
    """
    override = os.environ.get("TY_DATA_DIR", "").strip()
    if override:
        return str(Path(override) / "measurements.json")
    return ""


@lru_cache(maxsize=8)
def _load_dataset(source: str) -> dict:
    if source:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise FormatError(f"cannot read measurement dataset {source}: {exc}") from exc
    else:
        text = resources.files("tyolo.data").joinpath("measurements.json").read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"measurement dataset is not valid JSON: {exc}") from exc
    if data.get("version") != 1:
        raise FormatError(f"unsupported dataset version {data.get('version')}")
    return data


def load_dataset() -> dict:
    return _load_dataset(_dataset_source())


@lru_cache(maxsize=8)
def _records(source: str) -> tuple[MeasurementRecord, ...]:
    out = []
    for row in _load_dataset(source)["records"]:
        row = dict(row)
        out.append(MeasurementRecord(**row))
    return tuple(out)


def records() -> tuple[MeasurementRecord, ...]:
    return _records(_dataset_source())


def find_record(network: str, backend: str, freq_mhz: float | None = None, device: str = "GAP9") -> MeasurementRecord:
    matches = [
        r
        for r in records()
        if r.network == network
        and r.backend == backend
        and r.device == device
        and (freq_mhz is None or r.freq_mhz == freq_mhz)
    ]
    if not matches:
        raise KeyError(f"no measurement for {device}/{network}/{backend}@{freq_mhz}")
    if len(matches) > 1:
        raise KeyError(f"ambiguous measurement query {device}/{network}/{backend} — pass freq_mhz")
    return matches[0]


def published_params() -> dict[str, int]:
    return {row["name"]: row["published_params"] for row in load_dataset()["params_table"]}


def published_map() -> dict[str, float]:
    return {row["name"]: row["map_percent"] for row in load_dataset()["map_table"]}


def claims() -> dict:
    return load_dataset()["claims"]


def _power_points(backend: str) -> list[tuple[OperatingPoint, float]]:
    rows = load_dataset()["power_fit_points_mw"][backend]
    return [(OperatingPoint(freq_hz=f * 1e6, voltage=v), mw / 1e3) for f, v, mw in rows]


def calibrated_profiles() -> dict[str, BackendProfile]:
    return _calibrated_profiles(_dataset_source())


@lru_cache(maxsize=8)
def _calibrated_profiles(source: str) -> dict[str, BackendProfile]:
    """The three backend profiles with power models fitted and the two
    free scalars calibrated on the dataset's calibration network."""
    data = _load_dataset(source)
    cal = data["calibration"]
    graph = build_graph(parse_preset(cal["network"]))

    multi_power = fit_power_model(_power_points("multi_core"))
    accel_power = fit_power_model(_power_points("accelerator"))
    # Single-core has one measured power point; it shares the cluster's
    # leakage term since both run on the same compute domain.
    (single_op, single_w), = _power_points("single_core")
    single_power = fit_single_point_power(single_op, single_w, multi_power.leak_a)

    single = BackendProfile(
        kind="single_core",
        base_eff=cal["single_base_mac_per_cycle"],
        peak_mac_per_cycle=cal["single_peak_mac_per_cycle"],
        power=single_power,
    )
    multi = BackendProfile(
        kind="multi_core",
        base_eff=cal["single_base_mac_per_cycle"],
        cores=8,
        peak_mac_per_cycle=8 * cal["single_base_mac_per_cycle"],
        power=multi_power,
    )
    eff = calibrate_parallel_eff(graph, single, multi, cal["multi_overall_speedup"])
    multi = replace(multi, parallel_eff=eff)

    accel_seed = BackendProfile(kind="accelerator", base_eff=1.0, power=accel_power, fallback=multi)
    peak = calibrate_accel_peak(graph, accel_seed, cal["accel_avg_mac_per_cycle"])
    accel = replace(accel_seed, base_eff=peak, peak_mac_per_cycle=peak)
    return {"single_core": single, "multi_core": multi, "accelerator": accel}


BACKEND_ALIASES = {
    "single": "single_core",
    "single_core": "single_core",
    "multi": "multi_core",
    "multi_core": "multi_core",
    "cluster": "multi_core",
    "ne": "accelerator",
    "ne16": "accelerator",
    "accel": "accelerator",
    "accelerator": "accelerator",
}


def resolve_backend(name: str) -> str:
    try:
        return BACKEND_ALIASES[name.lower()]
    except KeyError:
        raise FormatError(f"unknown backend {name!r}; choose from single, multi, ne") from None
