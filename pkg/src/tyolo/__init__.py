"""Detection-network deployment toolkit: graph construction, 8-bit
integerization, bit-exact execution, memory tiling, and cycle-accurate
latency/energy prediction for tiny single-shot detectors."""

from .errors import (
    CalibrationError,
    CapacityError,
    ConfigError,
    FormatError,
    TilingError,
    ToolError,
)
from .graph import (
    Conv,
    Flatten,
    Linear,
    MaxPool,
    ModelGraph,
    NetworkConfig,
    Requant,
    TensorShape,
    activation_memory,
    build_graph,
    count_macs,
    count_params,
    layer_table,
    macs_by_layer,
    model_size_bytes,
    output_vector_len,
    params_by_layer,
)
from .presets import (
    PRESET_NAMES,
    config_from_dict,
    config_to_dict,
    load_config,
    parse_preset,
    preset_name,
    save_config,
)
from .quantize import (
    AffineScale,
    Calibration,
    QuantizedGraph,
    RequantParams,
    calibrate,
    dequantize_output,
    dyadic_approx,
    fake_quant_reference,
    generate_weights,
    integerize,
    quantize_input,
    quantize_weight,
)
from .execute import run, RunResult
from .detect import (
    DetectionBox,
    GroundTruthBox,
    average_precision,
    decode,
    iou,
    mean_ap,
    nms,
)
from .tiling import (
    LayerPlan,
    MemoryHierarchy,
    NetworkPlan,
    plan_layer,
    plan_network,
    tiled_execute,
    weight_store_bytes,
)
from .perf import (
    BackendProfile,
    CostReport,
    OperatingPoint,
    PowerModel,
    min_voltage,
    operating_point,
    pareto,
    predict,
)
from .refdata import calibrated_profiles, find_record, records, resolve_backend
from .weights_io import load_quantized, save_quantized

__version__ = "0.1.0"

__all__ = [
    "AffineScale",
    "BackendProfile",
    "Calibration",
    "CalibrationError",
    "CapacityError",
    "ConfigError",
    "Conv",
    "CostReport",
    "DetectionBox",
    "Flatten",
    "FormatError",
    "GroundTruthBox",
    "LayerPlan",
    "Linear",
    "MaxPool",
    "MemoryHierarchy",
    "ModelGraph",
    "NetworkConfig",
    "NetworkPlan",
    "OperatingPoint",
    "PowerModel",
    "PRESET_NAMES",
    "QuantizedGraph",
    "Requant",
    "RequantParams",
    "RunResult",
    "TensorShape",
    "TilingError",
    "ToolError",
    "activation_memory",
    "average_precision",
    "build_graph",
    "calibrate",
    "calibrated_profiles",
    "config_from_dict",
    "config_to_dict",
    "count_macs",
    "count_params",
    "decode",
    "dequantize_output",
    "dyadic_approx",
    "fake_quant_reference",
    "find_record",
    "generate_weights",
    "integerize",
    "iou",
    "layer_table",
    "load_config",
    "load_quantized",
    "macs_by_layer",
    "mean_ap",
    "min_voltage",
    "model_size_bytes",
    "nms",
    "operating_point",
    "output_vector_len",
    "params_by_layer",
    "parse_preset",
    "pareto",
    "plan_layer",
    "plan_network",
    "predict",
    "preset_name",
    "quantize_input",
    "quantize_weight",
    "records",
    "resolve_backend",
    "run",
    "save_config",
    "save_quantized",
    "tiled_execute",
    "weight_store_bytes",
]
