"""Memory-hierarchy tile planning and tile-by-tile execution.

The target is a three-level hierarchy: a small fast scratchpad (L1) that
compute reads from, a mid-level SRAM (L2) for whole feature maps and,
when they fit, the weights, and a bulk level (L3) behind it. A layer is
executed as a grid of uniform output tiles (remainders at the edges);
every tile's working set — input slab with halo, its slice of weights
plus per-channel requant constants, and the output block — must fit the
L1 budget (halved when double buffering is on).

Planning minimizes bytes moved into L1. For a conv the output is written
once and the weight slices are re-fetched once per spatial tile, so

    in      = n_ctiles * Cin * sum_clipped_rows * sum_clipped_cols
    weights = n_h * n_w * (k^2 * Cin * Cout + CONSTS_PER_CHANNEL * Cout)
    out     = H * W * Cout

with the input cost separable across the two spatial axes. For a fixed
spatial tile the best channel tile is simply the largest feasible one
(input re-fetch count drops, nothing else moves), which reduces the
search to an O(H*W) scan with a closed form for the channel count.

tiled_execute() replays a plan tile by tile, counting the bytes it
actually touches; the counts must equal the plan and the result must be
bit-identical to the monolithic executor, which the test suite enforces.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, TilingError
from .execute import conv2d_int, linear_int, maxpool_int, requant_apply
from .graph import Conv, Flatten, Linear, MaxPool, ModelGraph, Requant, TensorShape

# Per-output-channel constants staged with a conv's weight slice:
# int32 bias + int32 requant multiplier + int64 requant addend.
CONSTS_PER_CHANNEL = 16
BYTES_PER_BIAS = 4


@dataclass(frozen=True)
class MemoryHierarchy:
    l1: int = 131_072
    l2: int = 1_572_864
    l3: int = 2_097_152
    double_buffering: bool = False

    def __post_init__(self):
        if not (0 < self.l1 < self.l2 <= self.l3):
            raise TilingError(f"hierarchy must satisfy 0 < L1 < L2 <= L3, got {self.l1}/{self.l2}/{self.l3}")

    @property
    def l1_budget(self) -> int:
        return self.l1 // 2 if self.double_buffering else self.l1


@dataclass(frozen=True)
class LayerPlan:
    name: str
    kind: str
    tile: tuple[int, ...]  # conv/pool: (t_c, t_h, t_w); linear: (t_out,); else ()
    n_tiles: int
    buffer_bytes: int  # worst per-tile L1 working set
    in_bytes: int
    weight_bytes: int
    out_bytes: int
    w_tile_bytes: int = 0  # weight slice staged per tile

    @property
    def total_bytes(self) -> int:
        return self.in_bytes + self.weight_bytes + self.out_bytes


@dataclass(frozen=True)
class NetworkPlan:
    plans: tuple[LayerPlan, ...]
    hierarchy: MemoryHierarchy
    weight_store_bytes: int
    activation_peak_bytes: int
    weights_level: str  # "l2" when resident, "l3" when streamed

    @property
    def total_bytes(self) -> int:
        return sum(p.total_bytes for p in self.plans)

    def by_name(self) -> dict[str, LayerPlan]:
        return {p.name: p for p in self.plans}


def _tile_starts(total: int, t: int) -> list[tuple[int, int]]:
    return [(s, min(s + t, total)) for s in range(0, total, t)]


def _clipped_span_sum(total: int, t: int, halo: int) -> int:
    """Sum over row tiles of the input rows each needs (halo clipped)."""
    acc = 0
    for s, e in _tile_starts(total, t):
        acc += min(e - 1 + halo, total - 1) - max(s - halo, 0) + 1
    return acc


def plan_conv(layer: Conv, in_shape: TensorShape, out_shape: TensorShape, hier: MemoryHierarchy, name: str) -> LayerPlan:
    budget = hier.l1_budget
    cin, h, w = in_shape.channels, in_shape.height, in_shape.width
    cout = layer.out_ch
    k = layer.kernel
    halo = k // 2
    w_per_ch = k * k * cin + CONSTS_PER_CHANNEL
    out_total = out_shape.numel
    weights_total_per_sweep = w_per_ch * cout

    row_sum = {t: _clipped_span_sum(h, t, halo) for t in range(1, h + 1)}
    col_sum = {t: _clipped_span_sum(w, t, halo) for t in range(1, w + 1)}

    best = None
    for t_h in range(1, h + 1):
        n_h = -(-h // t_h)
        in_rows = min(t_h + 2 * halo, h)
        for t_w in range(1, w + 1):
            n_w = -(-w // t_w)
            in_cols = min(t_w + 2 * halo, w)
            in_tile = cin * in_rows * in_cols
            # largest channel tile whose slab+weights+output still fits
            t_c = (budget - in_tile) // (w_per_ch + t_h * t_w)
            if t_c < 1:
                continue
            t_c = min(t_c, cout)
            n_c = -(-cout // t_c)
            in_total = n_c * cin * row_sum[t_h] * col_sum[t_w]
            w_total = n_h * n_w * weights_total_per_sweep
            cost = in_total + w_total + out_total
            buf = in_tile + t_c * w_per_ch + t_c * t_h * t_w
            key = (cost, -(t_c * t_h * t_w), n_c * n_h * n_w, t_h, t_w)
            if best is None or key < best[0]:
                best = (key, (t_c, t_h, t_w), n_c * n_h * n_w, buf, in_total, w_total)
    if best is None:
        min_buf = cin * min(1 + 2 * halo, h) * min(1 + 2 * halo, w) + w_per_ch + 1
        raise TilingError(f"{name}: smallest conv tile needs {min_buf} B > L1 budget {budget} B")
    key, tile, n_tiles, buf, in_total, w_total = best
    return LayerPlan(name, "conv", tile, n_tiles, buf, in_total, w_total, out_total, tile[0] * w_per_ch)


def plan_pool(in_shape: TensorShape, out_shape: TensorShape, hier: MemoryHierarchy, name: str) -> LayerPlan:
    budget = hier.l1_budget
    cout, ho, wo = out_shape.channels, out_shape.height, out_shape.width
    out_total = out_shape.numel
    best = None
    for t_h in range(1, ho + 1):
        for t_w in range(1, wo + 1):
            t_c = budget // (5 * t_h * t_w)  # 4 input bytes + 1 output byte per element
            if t_c < 1:
                continue
            t_c = min(t_c, cout)
            n = (-(-ho // t_h)) * (-(-wo // t_w)) * (-(-cout // t_c))
            cost = 5 * out_total  # every output element moves 4 in + 1 out
            key = (cost, -(t_c * t_h * t_w), n, t_h, t_w)
            if best is None or key < best[0]:
                best = (key, (t_c, t_h, t_w), n, 5 * t_c * t_h * t_w)
    if best is None:
        raise TilingError(f"{name}: smallest pool tile needs 5 B > L1 budget {budget} B")
    key, tile, n_tiles, buf = best
    return LayerPlan(name, "pool", tile, n_tiles, buf, 4 * out_total, 0, out_total)


def plan_linear(layer: Linear, hier: MemoryHierarchy, name: str) -> LayerPlan:
    budget = hier.l1_budget
    n_in, n_out = layer.in_features, layer.out_features
    per_out = n_in + BYTES_PER_BIAS  # one int8 weight row + its bias
    best = None
    for t_o in range(n_out, 0, -1):
        buf = n_in + t_o * per_out + 4 * t_o
        if buf <= budget:
            n_t = -(-n_out // t_o)
            best = ((t_o,), n_t, buf, n_t * n_in, n_out * per_out, 4 * n_out)
            break
    if best is None:
        raise TilingError(f"{name}: smallest linear tile needs {n_in + per_out + 4} B > L1 budget {budget} B")
    tile, n_t, buf, in_b, w_b, out_b = best
    return LayerPlan(name, "linear", tile, n_t, buf, in_b, w_b, out_b, tile[0] * per_out)


def plan_layer(layer, in_shape, out_shape, hier: MemoryHierarchy, name: str = "layer") -> LayerPlan:
    """Plan one layer. Requant rides along with its conv; flatten is free."""
    if isinstance(layer, Conv):
        return plan_conv(layer, in_shape, out_shape, hier, name)
    if isinstance(layer, MaxPool):
        return plan_pool(in_shape, out_shape, hier, name)
    if isinstance(layer, Linear):
        return plan_linear(layer, hier, name)
    if isinstance(layer, (Requant, Flatten)):
        return LayerPlan(name, "requant" if isinstance(layer, Requant) else "flatten", (), 0, 0, 0, 0, 0)
    raise TilingError(f"{name}: cannot plan layer type {type(layer).__name__}")


def weight_store_bytes(graph: ModelGraph) -> int:
    """Bytes to hold the integerized parameters: int8 weights, int32
    biases, and per-conv-channel requant constants (mult + addend)."""
    total = 0
    for _, layer, _ in graph.layer_items():
        if isinstance(layer, Conv):
            total += layer.kernel**2 * layer.in_ch * layer.out_ch
            total += layer.out_ch * (BYTES_PER_BIAS + 12)
        elif isinstance(layer, Linear):
            total += layer.in_features * layer.out_features
            total += layer.out_features * BYTES_PER_BIAS
    return total


def _activation_peak(graph: ModelGraph) -> int:
    """Worst per-layer live in+out footprint, int8 maps and int32 head."""
    peak = 0
    for _, layer, (inp, outp) in graph.layer_items():
        if isinstance(layer, (Requant, Flatten)):
            live = outp.numel  # in-place rescale / view
        elif isinstance(layer, Linear):
            live = inp.numel + 4 * outp.numel
        else:
            live = inp.numel + outp.numel
        peak = max(peak, live)
    return peak


def plan_network(graph: ModelGraph, hier: MemoryHierarchy | None = None) -> NetworkPlan:
    hier = hier or MemoryHierarchy()
    store = weight_store_bytes(graph)
    act_peak = _activation_peak(graph)
    if store > hier.l3:
        raise CapacityError(
            f"weight store {store} B exceeds L3 ({hier.l3} B); provide a larger backing level"
        )
    plans = []
    for name, layer, (inp, outp) in graph.layer_items():
        plans.append(plan_layer(layer, inp, outp, hier, name))

    if store + act_peak <= hier.l2:
        level = "l2"
    else:
        level = "l3"
        # Streaming weights means L2 holds a layer's live maps plus one
        # weight tile (weightless layers still need their maps to fit).
        for plan, (name, layer, (inp, outp)) in zip(plans, graph.layer_items()):
            if isinstance(layer, (Requant, Flatten)):
                continue
            bytes_out = 4 * outp.numel if plan.kind == "linear" else outp.numel
            need = inp.numel + bytes_out + plan.w_tile_bytes
            if need > hier.l2:
                raise CapacityError(f"{name}: streamed working set {need} B exceeds L2 ({hier.l2} B)")
    return NetworkPlan(
        plans=tuple(plans),
        hierarchy=hier,
        weight_store_bytes=store,
        activation_peak_bytes=act_peak,
        weights_level=level,
    )


def _conv_tiled(x, wq, rq, plan: LayerPlan, halo: int):
    t_c, t_h, t_w = plan.tile
    cin, h, w = x.shape
    cout = wq.shape[0]
    out = np.empty((cout, h, w), dtype=np.int8)
    moved = 0
    w_per_ch = wq.shape[1] * wq.shape[2] * wq.shape[3] + CONSTS_PER_CHANNEL
    for c0, c1 in _tile_starts(cout, t_c):
        sub_rq = type(rq)(
            mult=rq.mult[c0:c1],
            add=rq.add[c0:c1],
            shift=rq.shift,
            clip_lo=rq.clip_lo,
            clip_hi=rq.clip_hi,
        )
        for r0, r1 in _tile_starts(h, t_h):
            ra, rb = max(r0 - halo, 0), min(r1 + halo, h)
            for q0, q1 in _tile_starts(w, t_w):
                qa, qb = max(q0 - halo, 0), min(q1 + halo, w)
                slab = x[:, ra:rb, qa:qb]
                acc = conv2d_int(slab, wq[c0:c1])
                block = requant_apply(acc[:, r0 - ra : r1 - ra, q0 - qa : q1 - qa], sub_rq)
                out[c0:c1, r0:r1, q0:q1] = block
                moved += slab.size + (c1 - c0) * w_per_ch + block.size
    return out, moved


def _pool_tiled(x, plan: LayerPlan):
    t_c, t_h, t_w = plan.tile
    c, h, w = x.shape
    ho, wo = h // 2, w // 2
    out = np.empty((c, ho, wo), dtype=np.int8)
    moved = 0
    for c0, c1 in _tile_starts(c, t_c):
        for r0, r1 in _tile_starts(ho, t_h):
            for q0, q1 in _tile_starts(wo, t_w):
                slab = x[c0:c1, 2 * r0 : 2 * r1, 2 * q0 : 2 * q1]
                block = maxpool_int(np.ascontiguousarray(slab))
                out[c0:c1, r0:r1, q0:q1] = block
                moved += slab.size + block.size
    return out, moved


def _linear_tiled(x, wq, bias, plan: LayerPlan):
    (t_o,) = plan.tile
    n_out = wq.shape[0]
    out = np.empty(n_out, dtype=np.int32)
    moved = 0
    for o0, o1 in _tile_starts(n_out, t_o):
        out[o0:o1] = linear_int(x, wq[o0:o1], bias[o0:o1])
        moved += x.size + (o1 - o0) * (wq.shape[1] + BYTES_PER_BIAS) + 4 * (o1 - o0)
    return out, moved


def tiled_execute(qgraph, image: np.ndarray, plan: NetworkPlan | None = None, hier: MemoryHierarchy | None = None):
    """Run a QuantizedGraph tile by tile per the plan.

    Returns (output int32 vector, per-layer moved-bytes dict). The output
    matches execute.run() exactly and the byte counts match the plan.
    """
    graph = qgraph.graph
    if plan is None:
        plan = plan_network(graph, hier)
    by_name = plan.by_name()
    moved: dict[str, int] = {}
    x = image
    items = list(graph.layer_items())
    i = 0
    while i < len(items):
        name, layer, _ = items[i]
        if isinstance(layer, Conv):
            rq_name, rq_layer, _ = items[i + 1]
            if not isinstance(rq_layer, Requant):
                raise TilingError(f"{name}: conv without a trailing requant stage")
            x, m = _conv_tiled(x, qgraph.weights[name], qgraph.requant[rq_name], by_name[name], layer.kernel // 2)
            moved[name] = m
            moved[rq_name] = 0
            i += 2
            continue
        if isinstance(layer, MaxPool):
            x, m = _pool_tiled(x, by_name[name])
            moved[name] = m
        elif isinstance(layer, Flatten):
            x = x.reshape(-1)
            moved[name] = 0
        elif isinstance(layer, Linear):
            x, m = _linear_tiled(x, qgraph.weights[name], qgraph.biases[name], by_name[name])
            moved[name] = m
        else:
            raise TilingError(f"{name}: unexpected layer {type(layer).__name__}")
        i += 1
    return x, moved
