import numpy as np
import pytest

from tyolo.graph import NetworkConfig, build_graph
from tyolo.quantize import calibrate, generate_weights, integerize


def random_small_config(rng: np.random.Generator) -> NetworkConfig:
    """A small random network in the same family shape: a conv backbone
    with interspersed pools and a dense head."""
    n_convs = int(rng.integers(1, 4))
    channels = tuple(int(rng.integers(1, 7)) for _ in range(n_convs))
    n_pools = int(rng.integers(0, n_convs + 1))
    pool_after = tuple(sorted(rng.choice(np.arange(1, n_convs + 1), size=n_pools, replace=False).tolist()))
    min_side = 2 ** len(pool_after)
    resolution = int(rng.integers(1, 4)) * min_side * 2 if pool_after else int(rng.integers(4, 13))
    return NetworkConfig(
        resolution=resolution,
        classes=int(rng.integers(1, 5)),
        first_kernel=int(rng.choice([3, 7])),
        boxes=int(rng.integers(1, 3)),
        grid=int(rng.integers(1, 3)),
        backbone_channels=channels,
        pool_after=pool_after,
        in_channels=int(rng.integers(1, 4)),
    )


def quantized_instance(config: NetworkConfig, seed: int):
    """Build + calibrate + integerize a network with seeded weights; returns
    (graph, float_weights, calibration, qgraph, int8 input)."""
    graph = build_graph(config)
    rng = np.random.default_rng(seed)
    weights = generate_weights(graph, seed)
    shape = graph.input_shape.as_tuple()
    calib_inputs = [rng.uniform(-128, 127, size=shape) for _ in range(2)]
    calib = calibrate(graph, weights, calib_inputs)
    qg = integerize(graph, weights, calib)
    x = rng.integers(-127, 128, size=shape).astype(np.int8)
    return graph, weights, calib, qg, x


@pytest.fixture(scope="session")
def ty88_quantized():
    """One shared quantized TY:3-3-88 instance for cross-module tests."""
    from tyolo.presets import parse_preset

    return quantized_instance(parse_preset("TY:3-3-88"), seed=11)
