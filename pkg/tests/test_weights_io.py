import numpy as np
import pytest

from tyolo.errors import FormatError
from tyolo.execute import run
from tyolo.graph import NetworkConfig
from tyolo.weights_io import (
    Record,
    load_activations,
    load_quantized,
    read_records,
    save_activations,
    save_quantized,
    write_records,
)

from conftest import quantized_instance


SMALL = NetworkConfig(resolution=8, classes=2, backbone_channels=(3, 5), pool_after=(1,), grid=2, boxes=1)


def _assert_qgraphs_equal(a, b):
    assert a.weights.keys() == b.weights.keys()
    for k in a.weights:
        assert np.array_equal(a.weights[k], b.weights[k])
        assert a.weights[k].dtype == b.weights[k].dtype
    assert a.biases.keys() == b.biases.keys()
    for k in a.biases:
        assert np.array_equal(a.biases[k], b.biases[k])
    assert a.requant.keys() == b.requant.keys()
    for k in a.requant:
        pa, pb = a.requant[k], b.requant[k]
        assert np.array_equal(pa.mult, pb.mult)
        assert np.array_equal(pa.add, pb.add)
        assert (pa.shift, pa.clip_lo, pa.clip_hi) == (pb.shift, pb.clip_lo, pb.clip_hi)


def test_container_round_trip(tmp_path):
    g, _, _, qg, x = quantized_instance(SMALL, seed=1)
    path = tmp_path / "w.tyqw"
    save_quantized(str(path), qg)
    loaded = load_quantized(str(path), g)
    _assert_qgraphs_equal(qg, loaded)
    # io scales survive the dyadic encoding well enough to reproduce runs
    assert np.array_equal(run(qg, x).output, run(loaded, x).output)


def test_container_round_trip_unit_channel(tmp_path):
    """out_channels == 1 exercises the leading-dimension padding in the
    container header; graph-driven reshape must restore exact shapes."""
    cfg = NetworkConfig(resolution=8, classes=1, backbone_channels=(1, 2), pool_after=(2,), grid=1, boxes=1, in_channels=1)
    g, _, _, qg, x = quantized_instance(cfg, seed=2)
    path = tmp_path / "w.tyqw"
    save_quantized(str(path), qg)
    loaded = load_quantized(str(path), g)
    _assert_qgraphs_equal(qg, loaded)
    assert loaded.weights["conv1"].shape == (1, 1, 3, 3)


def test_save_is_byte_deterministic(tmp_path):
    _, _, _, qg, _ = quantized_instance(SMALL, seed=3)
    p1, p2 = tmp_path / "a.tyqw", tmp_path / "b.tyqw"
    save_quantized(str(p1), qg)
    save_quantized(str(p2), qg)
    assert p1.read_bytes() == p2.read_bytes()


def test_truncated_file_rejected(tmp_path):
    g, _, _, qg, _ = quantized_instance(SMALL, seed=4)
    path = tmp_path / "w.tyqw"
    save_quantized(str(path), qg)
    blob = path.read_bytes()
    for cut in (2, 8, len(blob) // 2, len(blob) - 1):
        clipped = tmp_path / f"cut{cut}.tyqw"
        clipped.write_bytes(blob[:cut])
        with pytest.raises(FormatError):
            load_quantized(str(clipped), g)


def test_trailing_garbage_rejected(tmp_path):
    g, _, _, qg, _ = quantized_instance(SMALL, seed=5)
    path = tmp_path / "w.tyqw"
    save_quantized(str(path), qg)
    bad = tmp_path / "pad.tyqw"
    bad.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(FormatError):
        load_quantized(str(bad), g)


def test_bad_magic_and_version(tmp_path):
    g, _, _, qg, _ = quantized_instance(SMALL, seed=6)
    path = tmp_path / "w.tyqw"
    save_quantized(str(path), qg)
    blob = bytearray(path.read_bytes())
    wrong_magic = tmp_path / "magic.tyqw"
    wrong_magic.write_bytes(b"NOPE" + bytes(blob[4:]))
    with pytest.raises(FormatError):
        read_records(str(wrong_magic))
    blob[4] = 99  # version halfword, little-endian
    wrong_version = tmp_path / "ver.tyqw"
    wrong_version.write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        read_records(str(wrong_version))


def test_generic_record_round_trip(tmp_path):
    recs = [
        Record("alpha", 0, np.arange(-4, 4, dtype=np.int8).reshape(2, 4)),
        Record("beta", 1, np.array([[2**31 - 1, -5]], dtype=np.int32)),
        Record("gamma", 3, np.array([2**40, -(2**40)], dtype=np.int64)),
    ]
    path = tmp_path / "r.tyqw"
    write_records(str(path), recs)
    back = read_records(str(path))
    assert [r.name for r in back] == ["alpha", "beta", "gamma"]
    assert np.array_equal(back[0].array, recs[0].array)
    assert np.array_equal(back[1].array, recs[1].array.reshape(2))  # leading 1 dropped
    assert np.array_equal(back[2].array, recs[2].array)
    assert back[2].array.dtype == np.int64


def test_activation_dump_round_trip(tmp_path):
    _, _, _, qg, x = quantized_instance(SMALL, seed=7)
    res = run(qg, x, capture=True)
    path = tmp_path / "acts.tyqw"
    save_activations(str(path), res.snapshots)
    back = load_activations(str(path))
    assert [n for n, _ in back] == [n for n, _ in res.snapshots]
    for (_, a), (_, b) in zip(back, res.snapshots):
        assert np.array_equal(a, b.reshape(a.shape))
        assert a.dtype == b.dtype
