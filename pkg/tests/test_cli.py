import json
from pathlib import Path

import numpy as np
import pytest

from gatenav.cli import cli_main

LEMNISCATE_CONFIG = {
    "seed": 3,
    "simulate": {
        "trajectory": {"kind": "lemniscate", "duration": 4.0, "period": 5.0,
                       "semi_axis_a": 6.0, "semi_axis_b": 4.0},
        "corruption": {"pixel_noise_sigma": 1.0, "detection_rate_hz": 25.0,
                       "imu_rate_hz": 400.0},
        "gates": {"count": 6},
    },
}


def write_config(tmp_path, doc=LEMNISCATE_CONFIG):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return str(path)


def test_simulate_deterministic(tmp_path):
    cfg = write_config(tmp_path)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert cli_main(["--config", cfg, "--output-dir", str(out_a),
                     "simulate"]) == 0
    assert cli_main(["--config", cfg, "--output-dir", str(out_b),
                     "simulate"]) == 0
    for name in ("imu.jsonl", "detections.jsonl", "truth.csv", "map.json"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_full_pipeline(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "run"
    assert cli_main(["--config", cfg, "--output-dir", str(out),
                     "simulate"]) == 0
    assert cli_main([
        "--config", cfg, "--output-dir", str(out), "run-vins",
        "--imu", str(out / "imu.jsonl"),
        "--detections", str(out / "detections.jsonl"),
        "--map", str(out / "map.json"),
        "--init-from", str(out / "truth.csv")]) == 0
    assert (out / "vins.csv").exists()
    assert (out / "vins_report.jsonl").exists()

    assert cli_main([
        "--config", cfg, "--output-dir", str(out), "run-fgo",
        "--imu", str(out / "imu.jsonl"),
        "--detections", str(out / "detections.jsonl"),
        "--map", str(out / "map.json"),
        "--vins", str(out / "vins.csv"),
        "--vins-bias", str(out / "vins_bias.jsonl")]) == 0
    assert (out / "fgo.csv").exists()
    ext_doc = json.loads((out / "fgo_extrinsics.json").read_text())
    assert len(ext_doc["q_bc"]) == 4

    vins_out = tmp_path / "eval_vins"
    fgo_out = tmp_path / "eval_fgo"
    assert cli_main(["--output-dir", str(vins_out), "evaluate",
                     "--estimate", str(out / "vins.csv"),
                     "--reference", str(out / "truth.csv")]) == 0
    assert cli_main(["--output-dir", str(fgo_out), "evaluate",
                     "--estimate", str(out / "fgo.csv"),
                     "--reference", str(out / "truth.csv")]) == 0

    m_vins = json.loads((vins_out / "metrics.json").read_text())
    m_fgo = json.loads((fgo_out / "metrics.json").read_text())
    assert "e_t" in m_vins and "e_t" in m_fgo
    assert m_vins["e_t"] < 0.5   # filter tracks
    assert m_fgo["e_t"] < m_vins["e_t"]  # smoother refines


def test_run_vins_missing_map_exits_1(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "x"
    assert cli_main(["--config", cfg, "--output-dir", str(out),
                     "simulate"]) == 0
    code = cli_main([
        "--config", cfg, "--output-dir", str(out), "run-vins",
        "--imu", str(out / "imu.jsonl"),
        "--detections", str(out / "detections.jsonl"),
        "--map", str(out / "nope.json")])
    assert code == 1


def test_simulate_without_trajectory_section_exits_1(tmp_path):
    cfg = write_config(tmp_path, {"seed": 1})
    assert cli_main(["--config", cfg, "--output-dir",
                     str(tmp_path / "y"), "simulate"]) == 1


def test_usage_error_exits_nonzero(capsys):
    assert cli_main(["frobnicate"]) == 1


def test_sweep_minimal(tmp_path):
    doc = dict(LEMNISCATE_CONFIG)
    doc["simulate"] = dict(doc["simulate"])
    doc["simulate"]["trajectory"] = {"kind": "ellipse", "duration": 3.0,
                                     "period": 4.0}
    doc["simulate"]["corruption"] = {"pixel_noise_sigma": 1.0,
                                     "dropout_prob": 0.3,
                                     "detection_rate_hz": 20.0,
                                     "imu_rate_hz": 400.0}
    cfg = write_config(tmp_path, doc)
    out = tmp_path / "sweep"
    assert cli_main(["--config", cfg, "--output-dir", str(out), "--seed", "2",
                     "sweep", "--kind", "min-corners", "--seeds", "1"]) == 0
    doc_out = json.loads((out / "sweep_min-corners.json").read_text())
    run = doc_out[str(2)]
    assert set(run) == {"2", "4", "6"}
    assert all("e_t" in run[k] for k in run)
