"""Binary container for quantized weights and activation dumps.

Layout (all integers little-endian):

    magic   4 bytes  b"TYQW"
    version u16      currently 1
    count   u16      number of records
    record:
        name_len u16, name bytes (utf-8)
        dtype    u8   0=int8 1=int32 2=int32 3=int64 4=int32-scalars
        dims     4 x u32 (leading dims padded with 1)
        payload  prod(dims) * itemsize bytes

dtype doubles as a role tag: 0 carries weights, 1 biases, 2 requant
multipliers, 3 requant addends, 4 small scalar vectors (requant metadata
[shift, clip_lo, clip_hi] and dyadic-encoded io scales [mult, shift],
meaning scale = mult * 2^-shift). Activation dumps reuse the same record
framing with dtype 0 (int8 feature maps) or 1 (the int32 head output).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .quantize import AffineScale, QuantizedGraph, RequantParams, dyadic_approx

MAGIC = b"TYQW"
VERSION = 1

_DTYPES = {0: np.int8, 1: np.int32, 2: np.int32, 3: np.int64, 4: np.int32}


@dataclass(frozen=True)
class Record:
    name: str
    dtype: int
    array: np.ndarray


def _pad_dims(shape: tuple[int, ...]) -> tuple[int, int, int, int]:
    if len(shape) > 4:
        raise FormatError(f"rank {len(shape)} > 4 not storable")
    return (1,) * (4 - len(shape)) + tuple(shape)


def write_records(path: str, records: list[Record]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HH", VERSION, len(records)))
        for r in records:
            arr = np.ascontiguousarray(r.array, dtype=_DTYPES[r.dtype])
            name = r.name.encode("utf-8")
            f.write(struct.pack("<H", len(name)))
            f.write(name)
            f.write(struct.pack("<B", r.dtype))
            f.write(struct.pack("<4I", *_pad_dims(arr.shape)))
            f.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())


def read_records(path: str) -> list[Record]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise FormatError("bad magic: not a TYQW weights file")
    try:
        version, count = struct.unpack_from("<HH", blob, 4)
        if version != VERSION:
            raise FormatError(f"unsupported container version {version}")
        off = 8
        records = []
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            (dtype,) = struct.unpack_from("<B", blob, off)
            off += 1
            if dtype not in _DTYPES:
                raise FormatError(f"unknown dtype tag {dtype} in record {name!r}")
            dims = struct.unpack_from("<4I", blob, off)
            off += 16
            np_dt = np.dtype(_DTYPES[dtype]).newbyteorder("<")
            nbytes = int(np.prod(dims)) * np_dt.itemsize
            if off + nbytes > len(blob):
                raise FormatError(f"truncated payload in record {name!r}")
            arr = np.frombuffer(blob[off : off + nbytes], dtype=np_dt).reshape(dims)
            off += nbytes
            # Drop the padding dims. A genuine leading dim of 1 is not
            # distinguishable from padding; load_quantized() reshapes to
            # graph-derived shapes so nothing load-bearing relies on this.
            lead = 0
            for d in dims:
                if d == 1:
                    lead += 1
                else:
                    break
            arr = arr.reshape(dims[lead:]) if lead < 4 else arr.reshape((1,))
            records.append(Record(name, dtype, np.ascontiguousarray(arr, dtype=_DTYPES[dtype])))
        if off != len(blob):
            raise FormatError("trailing bytes after last record")
    except struct.error as e:
        raise FormatError(f"truncated weights file: {e}") from None
    return records


def _scale_record(name: str, scale: AffineScale) -> Record:
    mult, shift = dyadic_approx(scale.scale)
    return Record(name, 4, np.array([mult, shift], dtype=np.int32))


def _scale_from_record(r: Record) -> AffineScale:
    mult, shift = (int(v) for v in r.array)
    return AffineScale(mult * 2.0**-shift)


def save_quantized(path: str, qg: QuantizedGraph) -> None:
    records: list[Record] = []
    for name in qg.graph.names:
        if name in qg.weights:
            records.append(Record(f"{name}.weight", 0, qg.weights[name]))
            records.append(Record(f"{name}.bias", 1, qg.biases[name]))
        if name in qg.requant:
            p = qg.requant[name]
            records.append(Record(f"{name}.mult", 2, p.mult))
            records.append(Record(f"{name}.add", 3, p.add))
            records.append(
                Record(f"{name}.rqmeta", 4, np.array([p.shift, p.clip_lo, p.clip_hi], dtype=np.int32))
            )
    for key, sc in qg.io_scales.items():
        records.append(_scale_record(f"io.{key}", sc))
    write_records(path, records)


def load_quantized(path: str, graph) -> QuantizedGraph:
    """Rehydrate a QuantizedGraph; `graph` supplies the topology."""
    by_name = {r.name: r for r in read_records(path)}

    def need(key: str) -> Record:
        if key not in by_name:
            raise FormatError(f"weights file missing record {key!r}")
        return by_name[key]

    weights: dict[str, np.ndarray] = {}
    biases: dict[str, np.ndarray] = {}
    requant: dict[str, RequantParams] = {}
    from .graph import Conv, Linear, Requant  # local to avoid cycle at import

    for name, layer, _ in graph.layer_items():
        if isinstance(layer, Conv):
            wshape = (layer.out_ch, layer.in_ch, layer.kernel, layer.kernel)
            weights[name] = need(f"{name}.weight").array.reshape(wshape)
            biases[name] = need(f"{name}.bias").array.reshape(layer.out_ch)
        elif isinstance(layer, Linear):
            weights[name] = need(f"{name}.weight").array.reshape(layer.out_features, layer.in_features)
            biases[name] = need(f"{name}.bias").array.reshape(layer.out_features)
        elif isinstance(layer, Requant):
            shift, lo, hi = (int(v) for v in need(f"{name}.rqmeta").array)
            requant[name] = RequantParams(
                mult=need(f"{name}.mult").array.reshape(layer.channels),
                add=need(f"{name}.add").array.astype(np.int64).reshape(layer.channels),
                shift=shift,
                clip_lo=lo,
                clip_hi=hi,
            )
    io_scales = {
        "input": _scale_from_record(need("io.input")),
        "output": _scale_from_record(need("io.output")),
    }
    return QuantizedGraph(graph=graph, weights=weights, biases=biases, requant=requant, io_scales=io_scales)


def save_activations(path: str, snapshots: list[tuple[str, np.ndarray]]) -> None:
    records = []
    for name, arr in snapshots:
        tag = 0 if arr.dtype == np.int8 else 1
        records.append(Record(name, tag, arr))
    write_records(path, records)


def load_activations(path: str) -> list[tuple[str, np.ndarray]]:
    return [(r.name, r.array) for r in read_records(path)]
