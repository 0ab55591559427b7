from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from dcca.cli import main
from dcca.io import load_signal, load_warp, save_signal
from dcca.signal import Signal


@pytest.fixture
def generated(tmp_path):
    out = tmp_path / "data"
    drift = json.dumps(dict(poly=[2e-5, 150.0]))
    code = main(["--threads", "1", "generate", "--family", "smp", "--seed", "3", "--duration", "5",
                 "--fs", "20", "--drift", drift, "--format", "csv", "--out", str(out)])
    assert code == 0
    return out


def test_generate_writes_manifest(generated):
    doc = json.loads((generated / "manifest.json").read_text())
    assert doc["dataset"] == "smp" and doc["records"][0]["s1"] == "s1.csv"
    assert doc["meta"]["drift"]["poly"] == [2e-5, 150.0]
    s2 = load_signal(generated / "s2.csv")
    assert s2.fs == pytest.approx(20.0) and s2.n_samples == 6000


def test_align_evaluate_apply_plot(generated, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("w_ms = 20000\nthreshold = 0.3\n")
    warp = tmp_path / "w.json"
    assert main(["--threads", "1", "align", "--s1", str(generated / "s1.csv"), "--s2", str(generated / "s2.csv"),
                 "--config", str(cfg), "--mode", "idcca", "--out", str(warp)]) == 0
    assert load_warp(warp).meta["mode"] == "idcca"
    res = tmp_path / "eval.csv"
    assert main(["evaluate", "--truth", str(generated / "truth.csv"), "--warp", str(warp), "--out", str(res)]) == 0
    with open(res) as fh:
        row = next(csv.DictReader(fh))
    assert float(row["mae_ms"]) < 50.0 and int(row["n_points"]) == 301
    applied = tmp_path / "s2w.csv"
    assert main(["apply", "--signal", str(generated / "s2.csv"), "--warp", str(warp), "--out", str(applied)]) == 0
    assert load_signal(applied).n_samples == 6000
    knots = tmp_path / "knots.csv"
    assert main(["plot-data", "--kind", "knots", "--warp", str(warp), "--out", str(knots)]) == 0
    assert "kind,index,t_ms,d_ms,score,label" in knots.read_text()


def test_bench_command(generated, tmp_path):
    out = tmp_path / "bench"
    cfg = tmp_path / "run.cfg"
    cfg.write_text("w_ms = 20000\n")
    assert main(["--threads", "1", "bench", "--manifest", str(generated / "manifest.json"),
                 "--methods", "idcca,plw", "--repeats", "2", "--config", str(cfg), "--out", str(out)]) == 0
    with open(out / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert json.loads((out / "report.json").read_text())["summary"]["smp/plw"]["runs"] == 2


def test_exit_codes(tmp_path, capsys):
    assert main(["align", "--s1", str(tmp_path / "missing.csv"), "--s2", str(tmp_path / "m2.csv"),
                 "--out", str(tmp_path / "w.json")]) == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("time_ms,a\n0,1\n10,2\n30,3\n")
    assert main(["align", "--s1", str(bad), "--s2", str(bad), "--out", str(tmp_path / "w.json")]) == 1
    assert "data row 3" in capsys.readouterr().err
    rng = np.random.default_rng(0)
    for name in ("n1.csv", "n2.csv"):
        save_signal(tmp_path / name, Signal(rng.normal(size=6000), 10.0))
    cfg = tmp_path / "strict.cfg"
    cfg.write_text("threshold = 0.8\n")
    assert main(["--threads", "1", "align", "--s1", str(tmp_path / "n1.csv"), "--s2", str(tmp_path / "n2.csv"),
                 "--config", str(cfg), "--out", str(tmp_path / "w.json")]) == 2
    assert "no correlated content" in capsys.readouterr().err
