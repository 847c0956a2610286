"""Graph construction and static accounting for the TY detector family.

A network is described by a NetworkConfig: square input resolution, class
count, first-layer kernel size and the detection grid, plus a backbone plan
(conv channel widths and the positions of the 2x2 max-pools). build_graph
expands the config into an explicit layer list with inferred shapes; the
accountants (count_params, count_macs, activation_memory) operate on that
graph and are the source of truth for every size/cost number downstream.

Conventions used throughout:
  - tensors are channel-major (C, H, W); flattened tensors are (N, 1, 1)
  - convolutions are stride-1 with zero same-padding and a bias term
  - every conv is immediately followed by a Requant placeholder; the
    quantizer fills it in, the float path reads it as the activation stage
  - max-pools are 2x2 stride 2 with floor division on odd sides
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError

# Default backbone: nine convs with a pool after convs 1, 2, 4, 7 and 9
# (1-based). Resolutions 88/112/224 reduce to 2/3/7 before the head.
DEFAULT_BACKBONE = (16, 16, 32, 32, 64, 64, 64, 128, 128)
DEFAULT_POOL_AFTER = (1, 2, 4, 7, 9)


@dataclass(frozen=True)
class TensorShape:
    channels: int
    height: int
    width: int

    def __post_init__(self):
        if min(self.channels, self.height, self.width) < 1:
            raise ConfigError(f"degenerate tensor shape {self!r}")

    @property
    def numel(self) -> int:
        return self.channels * self.height * self.width

    def byte_size(self, itemsize: int = 1) -> int:
        return self.numel * itemsize

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)


@dataclass(frozen=True)
class Conv:
    in_ch: int
    out_ch: int
    kernel: int
    relu: bool = True
    # stride is fixed at 1 and padding at "same"; kept explicit for reports
    stride: int = 1

    @property
    def params(self) -> int:
        return self.kernel * self.kernel * self.in_ch * self.out_ch + self.out_ch


@dataclass(frozen=True)
class Requant:
    channels: int
    relu: bool = True


@dataclass(frozen=True)
class MaxPool:
    kernel: int = 2
    stride: int = 2


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Linear:
    in_features: int
    out_features: int

    @property
    def params(self) -> int:
        return self.in_features * self.out_features + self.out_features


LayerSpec = Conv | Requant | MaxPool | Flatten | Linear


def output_vector_len(grid: int, boxes: int, classes: int) -> int:
    """Length of the detection head output: grid^2 * (5*boxes + classes)."""
    if min(grid, boxes, classes) < 1:
        raise ConfigError("grid, boxes and classes must all be >= 1")
    return grid * grid * (5 * boxes + classes)


@dataclass(frozen=True)
class NetworkConfig:
    resolution: int
    classes: int
    first_kernel: int = 3
    boxes: int = 2
    grid: int = 4
    backbone_channels: tuple[int, ...] = DEFAULT_BACKBONE
    pool_after: tuple[int, ...] = DEFAULT_POOL_AFTER
    in_channels: int = 3

    def __post_init__(self):
        if self.first_kernel not in (3, 7):
            raise ConfigError(f"first_kernel must be 3 or 7, got {self.first_kernel}")
        if min(self.classes, self.boxes, self.grid, self.in_channels) < 1:
            raise ConfigError("classes, boxes, grid and in_channels must be >= 1")
        if not self.backbone_channels:
            raise ConfigError("backbone_channels must not be empty")
        if any(c < 1 for c in self.backbone_channels):
            raise ConfigError("backbone channel widths must be >= 1")
        n = len(self.backbone_channels)
        for p in self.pool_after:
            if not 1 <= p <= n:
                raise ConfigError(f"pool_after index {p} outside 1..{n}")
        if len(set(self.pool_after)) != len(self.pool_after):
            raise ConfigError("pool_after indices must be unique")
        # Reject resolutions that pool a spatial side below 1.
        side = self.resolution
        pools = set(self.pool_after)
        for i in range(1, n + 1):
            if i in pools:
                if side < 2:
                    raise ConfigError(
                        f"resolution {self.resolution} pools to zero at backbone conv {i}"
                    )
                side //= 2

    @property
    def output_len(self) -> int:
        return output_vector_len(self.grid, self.boxes, self.classes)

    def spatial_chain(self) -> list[int]:
        """Spatial side after each backbone stage (index 0 = input side)."""
        side = self.resolution
        chain = [side]
        pools = set(self.pool_after)
        for i in range(1, len(self.backbone_channels) + 1):
            if i in pools:
                side //= 2
            chain.append(side)
        return chain


@dataclass
class ModelGraph:
    config: NetworkConfig
    names: list[str]
    layers: list[LayerSpec]
    shapes: list[tuple[TensorShape, TensorShape]]  # (input, output) per layer

    @property
    def input_shape(self) -> TensorShape:
        return self.shapes[0][0]

    @property
    def output_len(self) -> int:
        return self.shapes[-1][1].numel

    def layer_items(self):
        return zip(self.names, self.layers, self.shapes)

    def __len__(self) -> int:
        return len(self.layers)


def build_graph(config: NetworkConfig) -> ModelGraph:
    """Expand a NetworkConfig into the explicit layer list with shapes."""
    names: list[str] = []
    layers: list[LayerSpec] = []
    shapes: list[tuple[TensorShape, TensorShape]] = []

    def emit(name: str, layer: LayerSpec, inp: TensorShape, out: TensorShape):
        names.append(name)
        layers.append(layer)
        shapes.append((inp, out))

    side = config.resolution
    in_ch = config.in_channels
    pools = set(config.pool_after)
    pool_no = 0
    for i, out_ch in enumerate(config.backbone_channels, start=1):
        k = config.first_kernel if i == 1 else 3
        inp = TensorShape(in_ch, side, side)
        out = TensorShape(out_ch, side, side)
        emit(f"conv{i}", Conv(in_ch, out_ch, k), inp, out)
        emit(f"rq{i}", Requant(out_ch), out, out)
        if i in pools:
            pool_no += 1
            pooled = TensorShape(out_ch, side // 2, side // 2)
            emit(f"pool{pool_no}", MaxPool(), out, pooled)
            side //= 2
        in_ch = out_ch

    feat = TensorShape(in_ch, side, side)
    flat = TensorShape(feat.numel, 1, 1)
    emit("flatten", Flatten(), feat, flat)
    head = TensorShape(config.output_len, 1, 1)
    emit("fc", Linear(flat.channels, config.output_len), flat, head)
    return ModelGraph(config, names, layers, shapes)


def params_by_layer(graph: ModelGraph) -> dict[str, int]:
    out: dict[str, int] = {}
    for name, layer, _ in graph.layer_items():
        out[name] = layer.params if isinstance(layer, (Conv, Linear)) else 0
    return out


def count_params(graph: ModelGraph) -> int:
    """Learnable parameter count: conv/linear weights plus biases."""
    return sum(params_by_layer(graph).values())


def macs_by_layer(graph: ModelGraph) -> dict[str, int]:
    out: dict[str, int] = {}
    for name, layer, (inp, outp) in graph.layer_items():
        if isinstance(layer, Conv):
            out[name] = layer.kernel ** 2 * layer.in_ch * layer.out_ch * outp.height * outp.width
        elif isinstance(layer, Linear):
            out[name] = layer.in_features * layer.out_features
        else:
            out[name] = 0
    return out


def count_macs(graph: ModelGraph) -> int:
    """Multiply-accumulate count for one inference (bias adds not counted)."""
    return sum(macs_by_layer(graph).values())


def activation_memory(graph: ModelGraph) -> tuple[list[dict], int]:
    """Per-layer activation traffic at 1 byte/element and the peak.

    The per-layer figure is input + output bytes. Requant stages rescale
    in place (fused with their conv on target), so they count a single
    buffer; Flatten is a view and counts zero.
    """
    rows = []
    peak = 0
    for name, layer, (inp, outp) in graph.layer_items():
        if isinstance(layer, Requant):
            nbytes = outp.byte_size()
        elif isinstance(layer, Flatten):
            nbytes = 0
        else:
            nbytes = inp.byte_size() + outp.byte_size()
        rows.append({"name": name, "bytes": nbytes})
        peak = max(peak, nbytes)
    return rows, peak


def model_size_bytes(graph: ModelGraph) -> int:
    """Published model-size convention: one byte per 8-bit parameter."""
    return count_params(graph)


def layer_table(graph: ModelGraph) -> list[dict]:
    """Per-layer report rows used by the CLI and scripts."""
    params = params_by_layer(graph)
    macs = macs_by_layer(graph)
    rows = []
    for name, layer, (inp, outp) in graph.layer_items():
        rows.append(
            {
                "name": name,
                "kind": type(layer).__name__.lower(),
                "in_shape": list(inp.as_tuple()),
                "out_shape": list(outp.as_tuple()),
                "params": params[name],
                "macs": macs[name],
            }
        )
    return rows
