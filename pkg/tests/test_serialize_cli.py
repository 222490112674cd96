import json

import numpy as np
import pytest

from landaulab.cli import build_config, exp_structure, main
from landaulab.serialize import RunConfig, read_bin, read_csv, write_bin, write_csv, write_report


def test_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"gamma": 1.0, "bogus": 3}))
    with pytest.raises(ValueError, match="bogus"):
        RunConfig.load(p)


def test_config_hash_is_canonical():
    a = RunConfig(gamma=1.0, eps=(0.1, 0.2))
    b = RunConfig.from_dict({"eps": [0.1, 0.2], "gamma": 1.0})
    assert a.hash() == b.hash()
    assert a.hash() != RunConfig(gamma=0.0).hash()


def test_config_precedence(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"N": 10, "seed": 7}))
    cfg = build_config("check", str(p), seed=9)
    assert cfg.N == 10 and cfg.seed == 9 and cfg.V == 8.0 and cfg.experiment == "check"


def test_csv_roundtrip_and_header(tmp_path):
    cfg = RunConfig()
    x = 0.1 + 0.2
    write_csv(tmp_path / "a.csv", ["x", "flag"], [(x, True), (1e-300, False)], cfg)
    h, cols, data = read_csv(tmp_path / "a.csv")
    assert h == cfg.hash() and cols == ["x", "flag"]
    assert data[0, 0] == x  # 17 significant digits round-trip exactly
    with pytest.raises(ValueError):
        write_csv(tmp_path / "b.csv", ["x"], [(1, 2)], cfg)


def test_binary_dump_roundtrip(tmp_path):
    cfg = RunConfig()
    arr = np.arange(12, dtype=complex).reshape(3, 4) * (1 + 2j)
    write_bin(tmp_path / "a.bin", arr, cfg, {"what": "test"})
    raw = (tmp_path / "a.bin").read_bytes()
    assert raw[:4] == b"LLAB"
    back, header = read_bin(tmp_path / "a.bin")
    assert np.array_equal(back, arr)
    assert header["dtype"].startswith("<") and header["meta"]["what"] == "test"


def test_report_json(tmp_path):
    cfg = RunConfig()
    write_report(tmp_path / "r.json", {"x": np.float64(np.inf), "a": np.arange(3)}, cfg)
    body = json.loads((tmp_path / "r.json").read_text())
    assert body["config_sha256"] == cfg.hash() and body["a"] == [0, 1, 2] and body["x"] == "inf"


def test_fault_injection_is_detected():
    good = exp_structure(0.0, V=6.0, N=12, N_fine=None)
    bad = exp_structure(0.0, V=6.0, N=12, N_fine=None, corrupt_L=0.5)
    ratio = {v.name: v for v in good["verdicts"]}["kernel_ratio"]
    corrupt = {v.name: v for v in bad["verdicts"]}["kernel_ratio"]
    assert ratio.passed and not corrupt.passed


def test_cli_viscosity_writes_outputs(tmp_path):
    code = main(["viscosity", "--gammas", "0", "--out", str(tmp_path)])
    assert code == 0
    h, cols, data = read_csv(tmp_path / "viscosity.csv")
    assert cols[:3] == ["gamma", "nu1", "nu2"] and data.shape == (1, 5)
    assert json.loads((tmp_path / "viscosity_report.json").read_text())["passed"]


def test_hash_ignores_output_directory():
    cfg = RunConfig()
    assert cfg.updated(out="elsewhere").hash() == cfg.hash()
    assert cfg.updated(seed=1).hash() != cfg.hash()
