"""Post-training 8-bit integerization with dyadic requantization.

The flow is the classic PTQ recipe: run the float network over a small
calibration batch recording per-tensor extrema, derive symmetric scales
(zero point fixed at 0), quantize weights per output channel (convs) or
per tensor (the head linear), then rewrite every conv's scale chain

    ratio[c] = input_scale * weight_scale[c] / output_scale

as an integer multiplier and a shared arithmetic right shift via
dyadic_approx. The merged ReLU becomes the requant clip [0, 127].

Bias handling: the float bias is first expressed on the accumulator
lattice, bias_q[c] = round(bias / (input_scale * weight_scale[c])), and
then folded into the requant addend as add[c] = bias_q[c] * mult[c], so
(acc * mult + add) >> shift equals ((acc + bias_q) * mult) >> shift
exactly. The addend is stored as int64: at shifts near 31 the folded
value does not generally fit 32 bits, and exactness wins over width.
integerize() verifies the 64-bit intermediate cannot overflow for the
worst-case accumulator of each layer.

fake_quant_reference executes the same lattice arithmetic but carries
activations as real values (q * scale) through float kernels, recovering
the integers by rounding before each requant step. For the supported
shapes the float error is orders of magnitude below 0.5 accumulator
steps, so the integer path and the reference agree element-exactly; the
test suite leans on that as the executor's end-to-end oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError
from .execute import conv2d_float, linear_float, linear_int, maxpool_float
from .graph import Conv, Flatten, Linear, MaxPool, ModelGraph, Requant

INT32_MAX = 2**31 - 1
QMIN, QMAX = -127, 127  # symmetric 8-bit lattice


def round_half_away(x: np.ndarray | float) -> np.ndarray | float:
    """Round half away from zero (np.round ties to even, which we avoid)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class AffineScale:
    scale: float
    zero_point: int = 0  # always 0 for the symmetric scheme

    def __post_init__(self):
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise CalibrationError(f"scale must be positive and finite, got {self.scale}")
        if self.zero_point != 0:
            raise CalibrationError("only zero_point=0 is supported")


@dataclass
class RequantParams:
    mult: np.ndarray  # int32, per channel, all > 0
    add: np.ndarray  # int64, per channel (folded bias, pre-multiplied)
    shift: int  # shared arithmetic right shift, 0..31
    clip_lo: int
    clip_hi: int

    def __post_init__(self):
        if not 0 <= self.shift <= 31:
            raise CalibrationError(f"shift {self.shift} outside 0..31")
        if self.mult.size and (self.mult.min() <= 0 or self.mult.max() > INT32_MAX):
            raise CalibrationError("requant multipliers must be in 1..2^31-1")

    @property
    def effective_add(self) -> np.ndarray:
        """The accumulator-domain addend encoded by add (= folded bias)."""
        return self.add // self.mult.astype(np.int64)


@dataclass
class QuantizedGraph:
    graph: ModelGraph
    weights: dict[str, np.ndarray]  # int8 per conv/linear
    biases: dict[str, np.ndarray]  # int32 accumulator-domain biases
    requant: dict[str, RequantParams]  # per requant layer
    io_scales: dict[str, AffineScale]  # "input" and "output"


@dataclass
class Calibration:
    input_scale: float
    activation_scales: dict[str, float]  # keyed by requant layer name
    weight_scales: dict[str, np.ndarray]  # conv: per out channel; fc: shape (1,)


def generate_weights(graph: ModelGraph, seed: int) -> dict[str, dict[str, np.ndarray]]:
    """Seeded He-style float weights for engine testing without training."""
    rng = np.random.default_rng(seed)
    out: dict[str, dict[str, np.ndarray]] = {}
    for name, layer, _ in graph.layer_items():
        if isinstance(layer, Conv):
            fan_in = layer.kernel**2 * layer.in_ch
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(layer.out_ch, layer.in_ch, layer.kernel, layer.kernel))
            b = rng.uniform(-0.5, 0.5, size=layer.out_ch)
        elif isinstance(layer, Linear):
            fan_in = layer.in_features
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(layer.out_features, layer.in_features))
            b = rng.uniform(-0.5, 0.5, size=layer.out_features)
        else:
            continue
        out[name] = {"weight": w, "bias": b}
    return out


def float_forward(
    graph: ModelGraph,
    weights: dict[str, dict[str, np.ndarray]],
    x: np.ndarray,
    observe: dict[str, float] | None = None,
) -> np.ndarray:
    """Reference float execution; optionally records per-tensor max-abs.

    Requant layers act as the activation stage (ReLU when merged).
    Observation points are the network input and each requant output,
    which is exactly the set of tensors that need activation scales.
    """
    x = np.asarray(x, dtype=np.float64)
    if observe is not None:
        observe["__input__"] = max(observe.get("__input__", 0.0), float(np.abs(x).max()))
    for name, layer, _ in graph.layer_items():
        if isinstance(layer, Conv):
            x = conv2d_float(x, weights[name]["weight"], weights[name]["bias"])
        elif isinstance(layer, Requant):
            if layer.relu:
                x = np.maximum(x, 0.0)
            if observe is not None:
                observe[name] = max(observe.get(name, 0.0), float(np.abs(x).max()))
        elif isinstance(layer, MaxPool):
            x = maxpool_float(x)
        elif isinstance(layer, Flatten):
            x = x.reshape(-1)
        elif isinstance(layer, Linear):
            x = linear_float(x, weights[name]["weight"], weights[name]["bias"])
    return x


def _scale_from_maxabs(maxabs: float) -> float:
    # Degenerate-range rule: all-zero tensors get scale 1.0.
    return maxabs / 127.0 if maxabs > 0 else 1.0


def calibrate(
    graph: ModelGraph,
    weights: dict[str, dict[str, np.ndarray]],
    inputs: list[np.ndarray],
) -> Calibration:
    """Min-max calibration over a batch of float input tensors."""
    if not inputs:
        raise CalibrationError("calibration requires at least one input")
    expect = graph.input_shape.as_tuple()
    observed: dict[str, float] = {}
    for x in inputs:
        if tuple(x.shape) != expect:
            raise CalibrationError(f"calibration input shape {x.shape} != {expect}")
        float_forward(graph, weights, x, observe=observed)

    act_scales = {
        name: _scale_from_maxabs(observed[name])
        for name, layer, _ in graph.layer_items()
        if isinstance(layer, Requant)
    }
    w_scales: dict[str, np.ndarray] = {}
    for name, layer, _ in graph.layer_items():
        if isinstance(layer, Conv):
            maxabs = np.abs(weights[name]["weight"]).reshape(layer.out_ch, -1).max(axis=1)
            w_scales[name] = np.where(maxabs > 0, maxabs / 127.0, 1.0)
        elif isinstance(layer, Linear):
            maxabs = float(np.abs(weights[name]["weight"]).max())
            w_scales[name] = np.array([_scale_from_maxabs(maxabs)])
    return Calibration(
        input_scale=_scale_from_maxabs(observed["__input__"]),
        activation_scales=act_scales,
        weight_scales=w_scales,
    )


def dyadic_approx(ratio: float) -> tuple[int, int]:
    """Encode a positive real ratio as (mult, shift): ratio ~= mult / 2^shift.

    shift is the largest value <= 31 for which the rounded multiplier still
    fits in int32; this maximizes precision. For ratios in [2^-9, 1] the
    relative error is bounded by 2^-23 (0.5 ulp at shift 31).
    """
    if not (0 < ratio < 2**31):
        raise ValueError(f"ratio must be in (0, 2^31), got {ratio}")
    for shift in range(31, -1, -1):
        mult = int(round_half_away(ratio * (1 << shift)))
        if mult <= INT32_MAX:
            return max(mult, 1), shift
    raise ValueError(f"ratio {ratio} not representable")  # pragma: no cover


def quantize_weight(w: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Symmetric per-channel weight quantization to int8 in [-127, 127]."""
    s = scale.reshape((-1,) + (1,) * (w.ndim - 1))
    q = round_half_away(w / s)
    return np.clip(q, QMIN, QMAX).astype(np.int8)


def quantize_input(x: np.ndarray, scale: float) -> np.ndarray:
    q = round_half_away(np.asarray(x, dtype=np.float64) / scale)
    return np.clip(q, QMIN, QMAX).astype(np.int8)


def dequantize_output(out: np.ndarray, scale: AffineScale) -> np.ndarray:
    return out.astype(np.float64) * scale.scale


def _scale_chain(graph: ModelGraph, calib: Calibration):
    """Yield (conv_name, rq_name, s_in, s_out) for each conv/requant pair,
    plus the linear's input scale as the final element."""
    cur = calib.input_scale
    names = graph.names
    pairs = []
    fc_in_scale = None
    for i, (name, layer, _) in enumerate(graph.layer_items()):
        if isinstance(layer, Conv):
            rq_name = names[i + 1]
            s_out = calib.activation_scales[rq_name]
            pairs.append((name, rq_name, cur, s_out))
            cur = s_out
        elif isinstance(layer, Linear):
            fc_in_scale = cur
    return pairs, fc_in_scale


def integerize(
    graph: ModelGraph,
    weights: dict[str, dict[str, np.ndarray]],
    calib: Calibration,
) -> QuantizedGraph:
    """Rewrite a calibrated float graph as an integer-only QuantizedGraph.

    The head linear stays a 32-bit accumulator; its output scale
    (input_scale * weight_scale) is published in io_scales["output"].
    """
    q_w: dict[str, np.ndarray] = {}
    q_b: dict[str, np.ndarray] = {}
    rq: dict[str, RequantParams] = {}

    pairs, fc_in_scale = _scale_chain(graph, calib)
    layer_by_name = dict(zip(graph.names, graph.layers))

    for conv_name, rq_name, s_in, s_out in pairs:
        layer: Conv = layer_by_name[conv_name]
        s_w = calib.weight_scales[conv_name]
        wq = quantize_weight(weights[conv_name]["weight"], s_w)
        acc_scale = s_in * s_w  # per-channel accumulator step
        bias_q = round_half_away(weights[conv_name]["bias"] / acc_scale)
        if np.abs(bias_q).max(initial=0) > 2**30:
            raise CalibrationError(f"{conv_name}: integer bias exceeds safe range")
        ratios = acc_scale / s_out
        encoded = [dyadic_approx(float(r)) for r in ratios]
        shift = min(sh for _, sh in encoded)
        mult = np.array(
            [max(1, int(round_half_away(float(r) * (1 << shift)))) for r in ratios],
            dtype=np.int32,
        )
        add = bias_q.astype(np.int64) * mult.astype(np.int64)
        # Guard the 64-bit requant intermediate against overflow for the
        # worst accumulator this layer can produce.
        acc_bound = np.abs(wq.astype(np.int64)).reshape(layer.out_ch, -1).sum(axis=1) * 128
        worst = (acc_bound * mult.astype(np.int64) + np.abs(add)).max(initial=0)
        if worst >= 2**62:
            raise CalibrationError(f"{conv_name}: requant intermediate could overflow")
        relu = layer_by_name[rq_name].relu
        rq[rq_name] = RequantParams(
            mult=mult,
            add=add,
            shift=shift,
            clip_lo=0 if relu else -128,
            clip_hi=127,
        )
        q_w[conv_name] = wq
        q_b[conv_name] = bias_q.astype(np.int32)

    # Head linear: per-tensor weight scale, bias on the accumulator lattice.
    fc_name = graph.names[-1]
    fc: Linear = layer_by_name[fc_name]
    s_w_fc = float(calib.weight_scales[fc_name][0])
    q_w[fc_name] = quantize_weight(weights[fc_name]["weight"], np.array([s_w_fc]))
    out_scale = fc_in_scale * s_w_fc
    bias_q = round_half_away(weights[fc_name]["bias"] / out_scale)
    if np.abs(bias_q).max(initial=0) > 2**30:
        raise CalibrationError("fc: integer bias exceeds safe range")
    q_b[fc_name] = bias_q.astype(np.int32)

    return QuantizedGraph(
        graph=graph,
        weights=q_w,
        biases=q_b,
        requant=rq,
        io_scales={
            "input": AffineScale(calib.input_scale),
            "output": AffineScale(out_scale),
        },
    )


def fake_quant_reference(
    graph: ModelGraph,
    weights: dict[str, dict[str, np.ndarray]],
    calib: Calibration,
    x: np.ndarray,
) -> np.ndarray:
    """Float execution on the quantized lattice; exact mirror of the int path.

    Activations travel as real values q*scale through float kernels; each
    requant recovers the integer accumulator by rounding and applies the
    same dyadic transform integerize() emits. Returns the real-valued head
    output (int32 accumulator times the published output scale).
    """
    qg = integerize(graph, weights, calib)
    s_in = calib.input_scale
    x_fq = quantize_input(x, s_in).astype(np.float64) * s_in

    cur_scale = s_in
    t = x_fq
    pairs, fc_in_scale = _scale_chain(graph, calib)
    conv_out_scale = {conv: (sin, sout) for conv, _, sin, sout in pairs}

    for name, layer, _ in graph.layer_items():
        if isinstance(layer, Conv):
            w_fq = qg.weights[name].astype(np.float64) * calib.weight_scales[name].reshape(-1, 1, 1, 1)
            t = conv2d_float(t, w_fq)  # bias lives in the requant addend
            cur_scale = conv_out_scale[name]
        elif isinstance(layer, Requant):
            s_in_c, s_out = cur_scale
            acc_step = s_in_c * calib.weight_scales[graph.names[graph.names.index(name) - 1]]
            acc_q = np.rint(t / acc_step.reshape(-1, 1, 1)).astype(np.int64)
            p = qg.requant[name]
            v = (acc_q * p.mult.astype(np.int64)[:, None, None] + p.add[:, None, None]) >> p.shift
            q = np.clip(v, p.clip_lo, p.clip_hi)
            t = q.astype(np.float64) * s_out
            cur_scale = s_out
        elif isinstance(layer, MaxPool):
            t = maxpool_float(t)
        elif isinstance(layer, Flatten):
            t = t.reshape(-1)
        elif isinstance(layer, Linear):
            out_scale = qg.io_scales["output"].scale
            w_fq = qg.weights[name].astype(np.float64) * calib.weight_scales[name][0]
            t = linear_float(t, w_fq) + qg.biases[name].astype(np.float64) * out_scale
    return t
