import csv
import json

import numpy as np
import pytest

from tyolo.cli import main
from tyolo.graph import NetworkConfig
from tyolo.images import write_pgm
from tyolo.presets import save_config

from oracles import pareto_ref


def run_cli(capsys, argv, expect=0):
    code = main(argv)
    captured = capsys.readouterr()
    assert code == expect, f"{argv}: exit {code}, stderr: {captured.err}"
    return captured


SMALL = NetworkConfig(
    resolution=8,
    classes=2,
    backbone_channels=(4, 6),
    pool_after=(1, 2),
    grid=2,
    boxes=1,
    in_channels=1,
)


@pytest.fixture
def small_config_path(tmp_path):
    path = tmp_path / "small.json"
    save_config(str(path), SMALL)
    return str(path)


# ------------------------------------------------------------------- model

def test_model_info_headline_numbers(capsys):
    cap = run_cli(capsys, ["model", "info", "--preset", "TY:3-3-88"])
    info = json.loads(cap.out)
    assert info["name"] == "TY:3-3-88"
    assert info["params"] == 437_152
    assert info["macs"] == 31_284_224
    assert info["output_len"] == 208
    assert info["weight_store_bytes"] == 445_936
    assert len(info["layers"]) == 25  # 9 conv + 9 requant + 5 pool + flatten + fc


def test_model_info_csv(capsys):
    cap = run_cli(capsys, ["model", "info", "--preset", "TY:3-3-88", "--format", "csv"])
    rows = list(csv.DictReader(cap.out.splitlines()))
    assert len(rows) == 25
    assert rows[0]["name"] == "conv1"
    assert rows[-1]["name"] == "fc"


def test_model_build_round_trip(tmp_path, capsys):
    cfg = tmp_path / "net.json"
    run_cli(capsys, ["model", "build", "--preset", "TY:10-3-112", "--out", str(cfg)])
    cap = run_cli(capsys, ["model", "info", "--config", str(cfg)])
    info = json.loads(cap.out)
    assert info["name"] == "TY:10-3-112"
    assert info["params"] == 699_408


def test_model_unknown_preset_exits_2(capsys):
    cap = run_cli(capsys, ["model", "info", "--preset", "TY:4-4-99"], expect=2)
    assert "error:" in cap.err


def test_model_missing_network_args(capsys):
    with pytest.raises(SystemExit):
        main(["model", "info"])
    capsys.readouterr()


# -------------------------------------------------------------------- perf

def test_perf_predict_accelerator_matches_record(capsys):
    cap = run_cli(
        capsys,
        ["perf", "predict", "--preset", "TY:3-3-88", "--backend", "ne", "--freq", "370e6"],
    )
    rep = json.loads(cap.out)
    assert rep["backend"] == "accelerator"
    assert rep["voltage"] == pytest.approx(0.8)
    assert rep["latency_ms"] == pytest.approx(2.12, rel=0.05)
    assert rep["energy_uj"] == pytest.approx(149, rel=0.05)
    assert rep["mac_per_cycle"] == pytest.approx(41.22, rel=1e-6)


def test_perf_csv_has_total_row(capsys):
    cap = run_cli(
        capsys,
        ["perf", "predict", "--preset", "TY:3-3-88", "--backend", "multi", "--freq", "370e6", "--format", "csv"],
    )
    rows = list(csv.DictReader(cap.out.splitlines()))
    assert rows[-1]["name"] == "TOTAL"
    assert int(rows[-1]["macs"]) == 31_284_224


def test_perf_unknown_backend_exits_2(capsys):
    cap = run_cli(
        capsys,
        ["perf", "predict", "--preset", "TY:3-3-88", "--backend", "tpu", "--freq", "370e6"],
        expect=2,
    )
    assert "unknown backend" in cap.err


# ---------------------------------------------------------------- quantize

def test_quantize_deterministic_container(tmp_path, small_config_path, capsys):
    argv = lambda out: [  # noqa: E731
        "quantize", "--config", small_config_path,
        "--seed", "3", "--calib-random", "2", "--out", out,
    ]
    a = json.loads(run_cli(capsys, argv(str(tmp_path / "a.tyqw"))).out)
    b = json.loads(run_cli(capsys, argv(str(tmp_path / "b.tyqw"))).out)
    assert a["sha256"] == b["sha256"]
    assert a["bytes"] == b["bytes"] > 0

    c = json.loads(
        run_cli(
            capsys,
            ["quantize", "--config", small_config_path, "--seed", "4", "--calib-random", "2", "--out", str(tmp_path / "c.tyqw")],
        ).out
    )
    assert c["sha256"] != a["sha256"]


def test_quantize_without_calibration_exits_2(tmp_path, small_config_path, capsys):
    cap = run_cli(
        capsys,
        ["quantize", "--config", small_config_path, "--out", str(tmp_path / "w.tyqw")],
        expect=2,
    )
    assert "no calibration inputs" in cap.err


def test_quantize_calib_dir(tmp_path, small_config_path, capsys):
    rng = np.random.default_rng(0)
    for i in range(2):
        write_pgm(str(tmp_path / f"cal{i}.pgm"), rng.integers(0, 256, size=(8, 8)).astype(np.uint8))
    cap = run_cli(
        capsys,
        ["quantize", "--config", small_config_path, "--calib-dir", str(tmp_path), "--out", str(tmp_path / "w.tyqw")],
    )
    assert json.loads(cap.out)["bytes"] > 0


# ------------------------------------------------------------------- infer

@pytest.fixture
def quantized_small(tmp_path, small_config_path, capsys):
    weights = tmp_path / "small.tyqw"
    run_cli(
        capsys,
        ["quantize", "--config", small_config_path, "--seed", "7", "--calib-random", "2", "--out", str(weights)],
    )
    img = tmp_path / "scene.pgm"
    rng = np.random.default_rng(1)
    write_pgm(str(img), rng.integers(0, 256, size=(16, 16)).astype(np.uint8))
    return small_config_path, str(weights), str(img)


def test_infer_writes_detections(tmp_path, quantized_small, capsys):
    cfg, weights, img = quantized_small
    boxes = tmp_path / "boxes.jsonl"
    acts = tmp_path / "acts.tyact"
    run_cli(
        capsys,
        [
            "infer", "--config", cfg, "--weights", weights, "--image", img,
            "--threshold=-1e9", "--out", str(boxes), "--dump-activations", str(acts),
        ],
    )
    lines = [json.loads(l) for l in boxes.read_text().splitlines()]
    assert lines, "with an always-true threshold some boxes must survive"
    for rec in lines:
        assert set(rec) == {"class_id", "score", "cx", "cy", "w", "h", "image_id"}
        assert rec["image_id"] == "scene"
        assert 0.0 <= rec["cx"] <= 1.0 and 0.0 <= rec["cy"] <= 1.0
    assert acts.exists() and acts.stat().st_size > 0

    # deterministic end to end
    boxes2 = tmp_path / "boxes2.jsonl"
    run_cli(
        capsys,
        ["infer", "--config", cfg, "--weights", weights, "--image", img, "--threshold=-1e9", "--out", str(boxes2)],
    )
    assert boxes.read_text() == boxes2.read_text()


def test_infer_threshold_filters_everything(quantized_small, capsys):
    cfg, weights, img = quantized_small
    cap = run_cli(
        capsys,
        ["infer", "--config", cfg, "--weights", weights, "--image", img, "--threshold", "1e9"],
    )
    assert cap.out.strip() == ""


def test_infer_truncated_image_exits_2(tmp_path, quantized_small, capsys):
    cfg, weights, img = quantized_small
    data = open(img, "rb").read()
    bad = tmp_path / "cut.pgm"
    bad.write_bytes(data[: len(data) // 2])
    cap = run_cli(
        capsys,
        ["infer", "--config", cfg, "--weights", weights, "--image", str(bad)],
        expect=2,
    )
    assert "error:" in cap.err


# -------------------------------------------------------------------- tile

def test_tile_json_report(capsys):
    cap = run_cli(capsys, ["tile", "--preset", "TY:3-3-88"])
    plan = json.loads(cap.out)
    assert plan["weights_level"] == "l2"
    assert plan["weight_store_bytes"] == 445_936
    assert plan["hierarchy"]["l1_budget"] == 131_072
    assert len(plan["layers"]) == 25
    for layer in plan["layers"]:
        assert layer["buffer_bytes"] <= 131_072


def test_tile_csv_and_double_buffer(capsys):
    cap = run_cli(capsys, ["tile", "--preset", "TY:3-3-88", "--format", "csv", "--double-buffer"])
    rows = list(csv.DictReader(cap.out.splitlines()))
    assert len(rows) == 25
    for row in rows:
        assert int(row["buffer_bytes"]) <= 131_072 // 2


def test_tile_infeasible_exits_2(capsys):
    cap = run_cli(capsys, ["tile", "--preset", "TY:3-3-88", "--l1", "1", "--l2", "2"], expect=2)
    assert "L1 budget" in cap.err


# ------------------------------------------------------------------ pareto

def test_pareto_filter_preserves_extras_and_is_idempotent(tmp_path, capsys):
    src = tmp_path / "points.csv"
    with open(src, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tag", "latency_ms", "energy_uj"])
        w.writerow(["a", "1.0", "5.0"])
        w.writerow(["dup", "1.0", "5.0"])
        w.writerow(["dominated", "2.0", "6.0"])
        w.writerow(["b", "2.0", "3.0"])
        w.writerow(["c", "0.5", "9.0"])
    out1 = tmp_path / "front.csv"
    run_cli(capsys, ["pareto", "--in", str(src), "--out", str(out1)])
    rows = list(csv.DictReader(out1.read_text().splitlines()))
    assert [r["tag"] for r in rows] == ["c", "a", "dup", "b"]
    pts = [(float(r["latency_ms"]), float(r["energy_uj"])) for r in rows]
    assert pts == pareto_ref(pts)

    out2 = tmp_path / "front2.csv"
    run_cli(capsys, ["pareto", "--in", str(out1), "--out", str(out2)])
    assert out1.read_text() == out2.read_text()


def test_pareto_sweep_voltage_knee_points(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    run_cli(
        capsys,
        [
            "pareto", "--preset", "TY:3-3-88", "--backend", "multi",
            "--freq-min", "150e6", "--freq-max", "370e6", "--freq-step", "20e6",
            "--out", str(out),
        ],
    )
    rows = list(csv.DictReader(out.read_text().splitlines()))
    # one survivor per voltage step: the fastest clock it can run
    assert [float(r["freq_mhz"]) for r in rows] == [370.0, 290.0, 210.0, 150.0]
    assert [float(r["voltage"]) for r in rows] == [0.8, 0.75, 0.7, 0.65]
    lats = [float(r["latency_ms"]) for r in rows]
    ens = [float(r["energy_uj"]) for r in rows]
    assert lats == sorted(lats)
    assert ens == sorted(ens, reverse=True)

    # a second pass over its own output changes nothing
    out2 = tmp_path / "sweep2.csv"
    run_cli(capsys, ["pareto", "--in", str(out), "--out", str(out2)])
    assert out.read_text() == out2.read_text()


def test_pareto_without_input_exits_2(capsys):
    cap = run_cli(capsys, ["pareto"], expect=2)
    assert "needs --in" in cap.err


def test_pareto_missing_columns_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n1,2\n")
    cap = run_cli(capsys, ["pareto", "--in", str(bad)], expect=2)
    assert "latency_ms" in cap.err


# ----------------------------------------------------------------- compare

def test_compare_all_green(capsys):
    cap = run_cli(capsys, ["compare", "all"])
    payload = json.loads(cap.out)
    assert payload["failures"] == 0
    assert payload["anomalies"] == 4
    assert payload["checks"] == len(payload["rows"])
    statuses = {r["status"] for r in payload["rows"]}
    assert statuses == {"ok", "anomaly"}


def test_compare_against_saved_report_is_exact(tmp_path, capsys):
    report = tmp_path / "report.json"
    run_cli(
        capsys,
        ["perf", "predict", "--preset", "TY:10-3-112", "--backend", "multi", "--freq", "370e6", "--out", str(report)],
    )
    cap = run_cli(capsys, ["compare", "--against", str(report)])
    payload = json.loads(cap.out)
    assert payload["failures"] == 0
    assert len(payload["rows"]) == 5
    for row in payload["rows"]:
        assert row["rel_err"] == 0.0


def test_compare_against_missing_file_exits_2(tmp_path, capsys):
    cap = run_cli(capsys, ["compare", "--against", str(tmp_path / "nope.json")], expect=2)
    assert "error:" in cap.err


def test_compare_csv_format(capsys):
    cap = run_cli(capsys, ["compare", "devices", "--format", "csv"])
    rows = list(csv.DictReader(cap.out.splitlines()))
    assert len(rows) == 2
    assert all(r["status"] == "ok" for r in rows)


# -------------------------------------------------------------------- eval

def _write_jsonl(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def test_eval_perfect_detections(tmp_path, capsys):
    gts = [
        {"image_id": "im0", "class_id": 0, "cx": 0.3, "cy": 0.3, "w": 0.2, "h": 0.2},
        {"image_id": "im0", "class_id": 1, "cx": 0.7, "cy": 0.7, "w": 0.2, "h": 0.2},
    ]
    dets = [dict(g, score=0.9) for g in gts]
    _write_jsonl(tmp_path / "gt.jsonl", gts)
    _write_jsonl(tmp_path / "det.jsonl", dets)
    cap = run_cli(
        capsys,
        ["eval", "--detections", str(tmp_path / "det.jsonl"), "--ground-truth", str(tmp_path / "gt.jsonl"),
         "--method", "interp_all"],
    )
    payload = json.loads(cap.out)
    assert payload["map"] == pytest.approx(1.0, abs=1e-12)
    assert payload["per_class"] == {"0": 1.0, "1": 1.0}

    # no detections at all -> zero AP everywhere, but a valid run
    _write_jsonl(tmp_path / "none.jsonl", [])
    cap = run_cli(
        capsys,
        ["eval", "--detections", str(tmp_path / "none.jsonl"), "--ground-truth", str(tmp_path / "gt.jsonl")],
    )
    assert json.loads(cap.out)["map"] == 0.0


def test_eval_empty_ground_truth_exits_2(tmp_path, capsys):
    _write_jsonl(tmp_path / "gt.jsonl", [])
    _write_jsonl(tmp_path / "det.jsonl", [{"image_id": "a", "class_id": 0, "score": 0.5, "cx": 0.5, "cy": 0.5, "w": 0.1, "h": 0.1}])
    cap = run_cli(
        capsys,
        ["eval", "--detections", str(tmp_path / "det.jsonl"), "--ground-truth", str(tmp_path / "gt.jsonl")],
        expect=2,
    )
    assert "error:" in cap.err


# ------------------------------------------------------------- environment

def test_dataset_dir_override(tmp_path, monkeypatch, capsys):
    bad = tmp_path / "data"
    bad.mkdir()
    (bad / "measurements.json").write_text('{"version": 99}')
    monkeypatch.setenv("TY_DATA_DIR", str(bad))
    cap = run_cli(capsys, ["compare", "params"], expect=2)
    assert "unsupported dataset version" in cap.err
    monkeypatch.delenv("TY_DATA_DIR")
    run_cli(capsys, ["compare", "params"])
