import json

import numpy as np
import pytest

from bwla.cli import main
from bwla.io import load_tensor, save_tensor
from bwla.kernel import full_inference
from bwla.io import load_layer
from bwla.synth import make_rng


def test_quantize_synth_creates_artifacts(tmp_path, capsys):
    out = tmp_path / "l.bwla"
    report = tmp_path / "r.json"
    traj = tmp_path / "t.csv"
    rc = main(["quantize", "--synth", "gaussian:32x36", "--seed", "7",
               "--okt-iters", "5", "--psp-iters", "3",
               "--out", str(out), "--report", str(report),
               "--trajectory", str(traj)])
    assert rc == 0
    assert out.exists() and report.exists() and traj.exists()
    rep = json.loads(report.read_text())
    assert rep["schema_version"] == 1
    assert rep["config"]["seed"] == 7
    header = traj.read_text().splitlines()[0]
    assert header == "phase,iteration,nll,regularizer,surrogate"


def test_infer_matches_library(tmp_path):
    out = tmp_path / "l.bwla"
    rc = main(["quantize", "--synth", "planted:16x24", "--seed", "3",
               "--okt-iters", "4", "--psp-iters", "2", "--out", str(out)])
    assert rc == 0
    x = make_rng(5).standard_normal(24)
    xfile = tmp_path / "x.tensor"
    save_tensor(xfile, x)
    yfile = tmp_path / "y.tensor"
    rc = main(["infer", str(out), str(xfile), "--out", str(yfile), "--act-bits", "6"])
    assert rc == 0
    layer, _ = load_layer(out)
    expected = full_inference(layer, x, act_bits=6)
    got = load_tensor(yfile)
    assert np.abs(got - expected).max() < 1e-4 * max(np.abs(expected).max(), 1.0)


def test_infer_batch(tmp_path):
    out = tmp_path / "l.bwla"
    main(["quantize", "--synth", "gaussian:8x12", "--okt-iters", "2",
          "--psp-iters", "1", "--out", str(out)])
    xs = make_rng(6).standard_normal((4, 12))
    xfile = tmp_path / "xs.tensor"
    save_tensor(xfile, xs)
    yfile = tmp_path / "ys.tensor"
    assert main(["infer", str(out), str(xfile), "--out", str(yfile)]) == 0
    assert load_tensor(yfile).shape == (4, 8)


def test_inspect(tmp_path, capsys):
    out = tmp_path / "l.bwla"
    main(["quantize", "--synth", "gaussian:8x12", "--okt-iters", "2",
          "--psp-iters", "1", "--out", str(out)])
    capsys.readouterr()
    assert main(["inspect", str(out)]) == 0
    text = capsys.readouterr().out
    assert "8x12" in text
    assert "sign payload" in text


def test_bench_csv(tmp_path, capsys):
    csv_path = tmp_path / "bench.csv"
    rc = main(["bench", "--shapes", "64x64", "--reps", "5", "--out", str(csv_path)])
    assert rc == 0
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "shape,variant,median_ns,p10_ns,p90_ns,bytes_touched"
    variants = {line.split(",")[1] for line in lines[1:]}
    assert "dense_f32" in variants and "packed_real" in variants


def test_config_file_with_overrides(tmp_path):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"okt_iters": 3, "psp_iters": 2, "lam_reg": 0.0}))
    out = tmp_path / "l.bwla"
    rc = main(["quantize", "--synth", "gaussian:8x12", "--config", str(cfg_file),
               "--seed", "9", "--out", str(out),
               "--report", str(tmp_path / "r.json")])
    assert rc == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["config"]["okt_iters"] == 3
    assert rep["config"]["seed"] == 9  # flag overrides


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["quantize"])  # missing required input and --out
    assert exc.value.code == 1


def test_runtime_error_exit_code(tmp_path, capsys):
    rc = main(["inspect", str(tmp_path / "missing.bwla")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err
