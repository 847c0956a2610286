"""Analytical latency/power/energy model for three execution backends.

Backends:
  * single_core      — one RISC-V class core with 8-bit SIMD; a flat
                       MAC/cycle efficiency.
  * multi_core       — eight such cores; each conv picks the better of
                       two work-splitting schemes (image columns or
                       output channels), modeled as an ideal chunked
                       load balance scaled by one calibrated parallel
                       efficiency factor.
  * accelerator      — a 16-channel-aligned MAC array; utilization is
                       the product of input-channel occupancy and
                       output-channel alignment, with a calibrated peak.
                       Kernels it cannot run (pools, large first-layer
                       kernels) fall back to the multi-core model.

Cycles are canonical: latency := cycles / f, energy := power(f, V) ×
latency. The power model P = c_dyn * f * V^2 + a * V is least-squares
fitted to measured (f, V, P) points; with exactly two points the fit is
exact. Each costed layer (conv, pool, linear) carries a fixed overhead
cycle count covering launch/DMA bookkeeping; requant and flatten are
free (they fuse into their producer).

The two free scalars — the multi-core parallel efficiency and the
accelerator peak MAC/cycle — are calibrated on the smallest default
network only and validated on a held-out one (see validate module).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import CalibrationError, ConfigError
from .graph import Conv, Flatten, Linear, MaxPool, ModelGraph, Requant

MIN_VOLTAGE = 0.65
DEFAULT_OVERHEAD_CYCLES = 1000
ACCEL_ARRAY_CHANNELS = 16
ACCEL_KERNELS = (1, 3)


@dataclass(frozen=True)
class OperatingPoint:
    freq_hz: float
    voltage: float

    def __post_init__(self):
        if self.freq_hz <= 0:
            raise ConfigError(f"frequency must be positive, got {self.freq_hz}")
        if self.voltage < MIN_VOLTAGE:
            raise ConfigError(f"voltage {self.voltage} below the {MIN_VOLTAGE} V floor")

    @property
    def freq_mhz(self) -> float:
        return self.freq_hz / 1e6


@dataclass(frozen=True)
class PowerModel:
    c_dyn: float  # W per Hz per V^2
    leak_a: float  # W per V

    def __post_init__(self):
        if self.c_dyn < 0 or self.leak_a < 0:
            raise CalibrationError("power model coefficients must be non-negative")

    def power_w(self, op: OperatingPoint) -> float:
        return self.c_dyn * op.freq_hz * op.voltage**2 + self.leak_a * op.voltage


@dataclass(frozen=True)
class BackendProfile:
    kind: str  # single_core | multi_core | accelerator
    base_eff: float  # MAC/cycle at unit utilization (cluster kinds)
    cores: int = 1
    parallel_eff: float = 1.0
    overhead_cycles: int = DEFAULT_OVERHEAD_CYCLES
    peak_mac_per_cycle: float = 0.0
    power: PowerModel | None = None
    fallback: "BackendProfile | None" = None  # accelerator -> multi_core

    def __post_init__(self):
        if self.base_eff <= 0:
            raise ConfigError("base_eff must be positive")
        if self.cores < 1:
            raise ConfigError("cores must be >= 1")
        if not 0 < self.parallel_eff <= 1:
            raise ConfigError("parallel efficiency must be in (0, 1]")


@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str
    macs: int
    cycles: float
    eff: float  # MAC/cycle achieved (0 for free layers)
    scheme: str  # columns | output_channels | array | fallback | overhead | fused


@dataclass(frozen=True)
class CostReport:
    backend: str
    op_point: OperatingPoint
    layers: tuple[LayerCost, ...]
    total_cycles: float
    latency_s: float
    power_w: float
    energy_j: float

    @property
    def mac_per_cycle(self) -> float:
        return sum(l.macs for l in self.layers) / self.total_cycles

    @property
    def latency_ms(self) -> float:
        return self.latency_s * 1e3

    @property
    def energy_uj(self) -> float:
        return self.energy_j * 1e6


def ideal_chunks(n: int, p: int) -> float:
    """Load-balance speedup of splitting n units across p workers."""
    if n < 1 or p < 1:
        raise ConfigError("chunk model needs n, p >= 1")
    return n / math.ceil(n / p)


def column_speedup(columns: int, p: int, eff: float = 1.0) -> float:
    return eff * ideal_chunks(columns, p)


def channel_speedup(out_channels: int, p: int, eff: float = 1.0) -> float:
    return eff * ideal_chunks(out_channels, p)


def choose_parallelization(layer, out_shape, p: int) -> str:
    """Pick the work split with the higher modeled speedup.

    Convs compare splitting output columns against splitting output
    channels (ties go to columns). The head linear has a single output
    "column", which is the documented reason it does not parallelize.
    """
    if isinstance(layer, Conv):
        col = ideal_chunks(out_shape.width, p)
        chan = ideal_chunks(layer.out_ch, p)
        return "columns" if col >= chan else "output_channels"
    return "columns"


def _accel_utilization(in_ch: int, out_ch: int) -> float:
    occupancy = min(in_ch, ACCEL_ARRAY_CHANNELS) / ACCEL_ARRAY_CHANNELS
    alignment = out_ch / (ACCEL_ARRAY_CHANNELS * math.ceil(out_ch / ACCEL_ARRAY_CHANNELS))
    return occupancy * alignment


def layer_cycles(layer, out_shape, macs: int, profile: BackendProfile, name: str = "layer") -> LayerCost:
    """Cycle cost of one layer on one backend.

    Requant and flatten are fused (zero cycles). Pools carry overhead
    only. On the accelerator, unsupported layers are costed on the
    fallback profile instead.
    """
    if isinstance(layer, (Requant, Flatten)):
        return LayerCost(name, type(layer).__name__.lower(), 0, 0.0, 0.0, "fused")
    if isinstance(layer, MaxPool):
        if profile.kind == "accelerator" and profile.fallback is not None:
            sub = layer_cycles(layer, out_shape, macs, profile.fallback, name)
            return replace(sub, scheme="fallback")
        return LayerCost(name, "pool", 0, float(profile.overhead_cycles), 0.0, "overhead")

    if profile.kind == "single_core":
        cycles = macs / profile.base_eff + profile.overhead_cycles
        scheme = "columns"
    elif profile.kind == "multi_core":
        scheme = choose_parallelization(layer, out_shape, profile.cores)
        if isinstance(layer, Conv):
            n = out_shape.width if scheme == "columns" else layer.out_ch
        else:
            n = 1  # linear: one output column
        speedup = max(1.0, profile.parallel_eff * ideal_chunks(n, profile.cores))
        cycles = macs / (profile.base_eff * speedup) + profile.overhead_cycles
    elif profile.kind == "accelerator":
        supported = isinstance(layer, Linear) or (isinstance(layer, Conv) and layer.kernel in ACCEL_KERNELS)
        if not supported:
            if profile.fallback is None:
                raise ConfigError(f"{name}: accelerator profile lacks a fallback backend")
            sub = layer_cycles(layer, out_shape, macs, profile.fallback, name)
            return replace(sub, scheme="fallback")
        if isinstance(layer, Conv):
            util = _accel_utilization(layer.in_ch, layer.out_ch)
        else:
            util = _accel_utilization(layer.in_features, layer.out_features)
        cycles = macs / (profile.base_eff * util) + profile.overhead_cycles
        scheme = "array"
    else:
        raise ConfigError(f"unknown backend kind {profile.kind!r}")
    eff = macs / cycles if cycles > 0 else 0.0
    return LayerCost(name, "conv" if isinstance(layer, Conv) else "linear", macs, cycles, eff, scheme)


def network_cycles(graph: ModelGraph, profile: BackendProfile) -> tuple[float, list[LayerCost]]:
    from .graph import macs_by_layer

    rows = []
    macs = macs_by_layer(graph)
    for name, layer, (_, outp) in graph.layer_items():
        rows.append(layer_cycles(layer, outp, macs[name], profile, name))
    return sum(r.cycles for r in rows), rows


def predict(
    graph: ModelGraph,
    profile: BackendProfile,
    op: OperatingPoint,
    power_model: PowerModel | None = None,
) -> CostReport:
    pm = power_model or profile.power
    if pm is None:
        raise ConfigError(f"no power model for backend {profile.kind}")
    total, rows = network_cycles(graph, profile)
    latency = total / op.freq_hz
    power = pm.power_w(op)
    if profile.peak_mac_per_cycle > 0:
        for r in rows:
            if r.eff > profile.peak_mac_per_cycle * (1 + 1e-9):
                raise CalibrationError(f"{r.name}: modeled {r.eff:.2f} MAC/cycle exceeds backend peak")
    return CostReport(
        backend=profile.kind,
        op_point=op,
        layers=tuple(rows),
        total_cycles=total,
        latency_s=latency,
        power_w=power,
        energy_j=power * latency,
    )


def fit_power_model(points: list[tuple[OperatingPoint, float]]) -> PowerModel:
    """Least-squares fit of P = c_dyn * f * V^2 + a * V to (op, watts) points."""
    import numpy as np

    if len(points) < 2:
        raise CalibrationError("power fit needs at least two measurements")
    a = np.array([[op.freq_hz * op.voltage**2, op.voltage] for op, _ in points])
    b = np.array([w for _, w in points])
    sol, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < 2:
        raise CalibrationError("degenerate power fit: measurements do not separate f*V^2 from V")
    c_dyn, leak = (float(v) for v in sol)
    if c_dyn < 0 or leak < 0:
        raise CalibrationError(f"power fit produced negative coefficients ({c_dyn:.3e}, {leak:.3e})")
    return PowerModel(c_dyn=c_dyn, leak_a=leak)


def fit_single_point_power(op: OperatingPoint, watts: float, shared_leak_a: float) -> PowerModel:
    """One measured point plus a leakage term borrowed from a richer fit."""
    c = (watts - shared_leak_a * op.voltage) / (op.freq_hz * op.voltage**2)
    if c < 0:
        raise CalibrationError("single-point power fit gives negative dynamic coefficient")
    return PowerModel(c_dyn=c, leak_a=shared_leak_a)


def calibrate_parallel_eff(graph: ModelGraph, single: BackendProfile, multi: BackendProfile, target_speedup: float) -> float:
    """Bisect the parallel-efficiency factor so that single-core cycles over
    multi-core cycles equals the measured overall speedup."""
    single_cycles, _ = network_cycles(graph, single)

    def ratio(eff: float) -> float:
        total, _ = network_cycles(graph, replace(multi, parallel_eff=eff))
        return single_cycles / total

    lo, hi = 1e-6, 1.0
    if ratio(hi) < target_speedup:
        raise CalibrationError(f"target speedup {target_speedup} unreachable even at efficiency 1.0")
    for _ in range(200):
        mid = (lo + hi) / 2
        if ratio(mid) < target_speedup:
            lo = mid
        else:
            hi = mid
    return hi


def calibrate_accel_peak(graph: ModelGraph, accel: BackendProfile, target_avg: float) -> float:
    """Closed-form peak MAC/cycle making the network's average hit the target."""
    from .graph import macs_by_layer

    macs = macs_by_layer(graph)
    total_macs = sum(macs.values())
    fixed = 0.0  # overheads plus fallback-layer cycles
    weighted = 0.0  # sum of macs/util over accelerator-run layers
    for name, layer, (_, outp) in graph.layer_items():
        row = layer_cycles(layer, outp, macs[name], accel, name)
        if row.scheme == "array":
            if isinstance(layer, Conv):
                util = _accel_utilization(layer.in_ch, layer.out_ch)
            else:
                util = _accel_utilization(layer.in_features, layer.out_features)
            weighted += macs[name] / util
            fixed += accel.overhead_cycles
        else:
            fixed += row.cycles
    denom = total_macs / target_avg - fixed
    if denom <= 0:
        raise CalibrationError(f"average of {target_avg} MAC/cycle unreachable: overheads dominate")
    return weighted / denom


def min_voltage(freq_hz: float) -> float:
    """Lowest operable voltage at a frequency: linear between the two
    measured corners, snapped up to the 50 mV grid, floored at 0.65 V."""
    f1, v1, f2, v2 = 150e6, 0.65, 370e6, 0.8
    v = v1 + (freq_hz - f1) * (v2 - v1) / (f2 - f1)
    v = max(v, MIN_VOLTAGE)
    snapped = math.ceil(round(v / 0.05, 9) - 1e-9) * 0.05
    return round(max(snapped, MIN_VOLTAGE), 10)


def operating_point(freq_hz: float, voltage: float | None = None) -> OperatingPoint:
    return OperatingPoint(freq_hz=freq_hz, voltage=voltage if voltage is not None else min_voltage(freq_hz))


def pareto(points: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Non-dominated subset of (latency, energy) points, sorted by latency.

    A point is dominated if another is <= in both coordinates and < in at
    least one; exact duplicates survive together.
    """
    ordered = sorted(points, key=lambda p: (p[0], p[1]))
    kept: list[tuple[float, float]] = []
    best_energy = math.inf
    best_latency = math.inf
    for lat, en in ordered:
        if en < best_energy:
            kept.append((lat, en))
            best_energy, best_latency = en, lat
        elif en == best_energy and lat == best_latency:
            kept.append((lat, en))  # duplicate of a kept point
    return kept
