"""Bit-exact integer kernels and the quantized-graph runner.

All activations are channel-major int8 arrays, accumulators are int32.
The conv/linear kernels widen to int64 internally and assert the int32
range on the way out; for the supported shapes (kernel <= 7, <= 128 input
channels, 8-bit operands) the worst-case accumulator 49*128*127*128 is
well under 2^31, so the assert is a guard against misuse, not a clamp.

Requantization uses an arithmetic right shift: the shifted value is
floor(v / 2^shift) for negative v as well. This is a documented choice;
together with the clip bounds it defines the integer lattice that the
fake-quant reference in `quantize` reproduces exactly.

The float helpers at the bottom are the reference semantics used for
calibration and for the quantization error analysis; they are not part of
the integer pipeline.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Conv, Flatten, Linear, MaxPool, ModelGraph, Requant

INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


def _check_int32_range(acc: np.ndarray, what: str) -> np.ndarray:
    if acc.size and (acc.max() > INT32_MAX or acc.min() < INT32_MIN):
        raise OverflowError(f"{what}: accumulator exceeds int32 range")
    return acc.astype(np.int32)


def conv2d_int(
    x: np.ndarray,
    w: np.ndarray,
    bias: np.ndarray | None = None,
    workers: int = 1,
) -> np.ndarray:
    """Stride-1 same-padding integer convolution.

    x: int8 (C_in, H, W); w: int8 (C_out, C_in, k, k) with odd k;
    bias: int32 (C_out,) or None. Returns int32 (C_out, H, W).
    """
    _check(x.dtype == np.int8 and x.ndim == 3, "conv input must be int8 (C,H,W)")
    _check(w.dtype == np.int8 and w.ndim == 4, "conv weights must be int8 (O,I,k,k)")
    cin, h, wid = x.shape
    cout, win, kh, kw = w.shape
    _check(win == cin, f"channel mismatch: input {cin}, weights expect {win}")
    _check(kh == kw and kh % 2 == 1, "kernel must be square with odd side")
    if bias is not None:
        _check(bias.dtype == np.int32 and bias.shape == (cout,), "bias must be int32 (C_out,)")
    if workers > 1:
        # Channel split used by the data-parallel runner; identical
        # results by construction, verified by tests.
        chunks = np.array_split(np.arange(cout), min(workers, cout))
        parts = [conv2d_int(x, w[idx], None if bias is None else bias[idx]) for idx in chunks]
        return np.concatenate(parts, axis=0)

    k = kh
    pad = k // 2
    xp = np.pad(x.astype(np.int64), ((0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    cols = windows.transpose(1, 2, 0, 3, 4).reshape(h * wid, cin * k * k)
    wmat = w.reshape(cout, cin * k * k).astype(np.int64)
    acc = cols @ wmat.T
    if bias is not None:
        acc = acc + bias.astype(np.int64)
    return _check_int32_range(acc, "conv2d_int").T.reshape(cout, h, wid)


def maxpool_int(x: np.ndarray) -> np.ndarray:
    """2x2 stride-2 max pool with floor division on odd sides (int8 in/out)."""
    _check(x.dtype == np.int8 and x.ndim == 3, "pool input must be int8 (C,H,W)")
    c, h, w = x.shape
    _check(h >= 2 and w >= 2, "pool input spatial dims must be >= 2")
    ho, wo = h // 2, w // 2
    return x[:, : ho * 2, : wo * 2].reshape(c, ho, 2, wo, 2).max(axis=(2, 4))


def requant_apply(acc: np.ndarray, params) -> np.ndarray:
    """Per-channel (acc*mult + add) >> shift, clipped; int32 in, int8 out.

    The multiply/add is taken in 64-bit; integerize() guarantees no int64
    overflow for the ranges it emits. The shift is arithmetic.
    """
    _check(acc.dtype == np.int32 and acc.ndim == 3, "requant input must be int32 (C,H,W)")
    c = acc.shape[0]
    _check(params.mult.shape == (c,) and params.add.shape == (c,), "requant channel mismatch")
    t = acc.astype(np.int64) * params.mult.astype(np.int64)[:, None, None]
    t = t + params.add.astype(np.int64)[:, None, None]
    t >>= params.shift
    return np.clip(t, params.clip_lo, params.clip_hi).astype(np.int8)


def linear_int(x: np.ndarray, w: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Fully connected layer: int8 (N,) x int8 (O,N) + int32 (O,) -> int32 (O,)."""
    _check(x.dtype == np.int8 and x.ndim == 1, "linear input must be int8 (N,)")
    _check(w.dtype == np.int8 and w.ndim == 2, "linear weights must be int8 (O,N)")
    _check(w.shape[1] == x.shape[0], f"linear shape mismatch {w.shape} vs {x.shape}")
    acc = w.astype(np.int64) @ x.astype(np.int64)
    if bias is not None:
        _check(bias.dtype == np.int32 and bias.shape == (w.shape[0],), "bad linear bias")
        acc = acc + bias.astype(np.int64)
    return _check_int32_range(acc, "linear_int")


@dataclass
class RunResult:
    output: np.ndarray  # int32 head accumulator
    snapshots: list[tuple[str, np.ndarray]] | None = None


def run(qgraph, image: np.ndarray, capture: bool = False, workers: int = 1) -> RunResult:
    """Execute a QuantizedGraph on an int8 input image.

    Conv biases ride in the requant addend (see quantize.integerize), so
    convs execute bias-free here. The trace, when captured, has one entry
    per graph layer including requant and flatten stages.
    """
    graph: ModelGraph = qgraph.graph
    expect = graph.input_shape.as_tuple()
    _check(image.dtype == np.int8, "input image must be int8")
    _check(image.shape == expect, f"input shape {image.shape} != {expect}")

    snaps: list[tuple[str, np.ndarray]] | None = [] if capture else None
    x: np.ndarray = image
    for name, layer, _ in graph.layer_items():
        if isinstance(layer, Conv):
            x = conv2d_int(x, qgraph.weights[name], None, workers=workers)
        elif isinstance(layer, Requant):
            x = requant_apply(x, qgraph.requant[name])
        elif isinstance(layer, MaxPool):
            x = maxpool_int(x)
        elif isinstance(layer, Flatten):
            x = x.reshape(-1)
        elif isinstance(layer, Linear):
            x = linear_int(x, qgraph.weights[name], qgraph.biases[name])
        else:  # pragma: no cover - exhaustive over LayerSpec
            raise TypeError(f"unknown layer {layer!r}")
        if snaps is not None:
            snaps.append((name, x.copy()))
    return RunResult(output=x, snapshots=snaps)


# --- float reference semantics (calibration / error analysis) ---------------


def conv2d_float(x: np.ndarray, w: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Same-padding float convolution mirroring conv2d_int's geometry."""
    cin, h, wid = x.shape
    cout, _, k, _ = w.shape
    pad = k // 2
    xp = np.pad(x.astype(np.float64), ((0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    cols = windows.transpose(1, 2, 0, 3, 4).reshape(h * wid, cin * k * k)
    acc = cols @ w.reshape(cout, -1).astype(np.float64).T
    if bias is not None:
        acc = acc + bias
    return acc.T.reshape(cout, h, wid)


def maxpool_float(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    ho, wo = h // 2, w // 2
    return x[:, : ho * 2, : wo * 2].reshape(c, ho, 2, wo, 2).max(axis=(2, 4))


def linear_float(x: np.ndarray, w: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    acc = w.astype(np.float64) @ x.astype(np.float64)
    return acc if bias is None else acc + bias
