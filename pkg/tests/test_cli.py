import json
import subprocess
import sys

import pytest

from kappagcn.cli import CliError, apply_overrides, parse_grid, parse_override, run


def test_synth_tree_writes_edge_list(tmp_path, capsys):
    assert run(["synth", "--kind", "tree", "--depth", "5", "--branching", "4", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "edges.tsv").read_text().splitlines()
    assert len(lines) == 1364
    assert json.loads(capsys.readouterr().out)["n"] == 1365


def test_curvature_of_tree_is_negative(tmp_path, capsys):
    run(["synth", "--kind", "tree", "--depth", "5", "--branching", "4", "--out", str(tmp_path)])
    capsys.readouterr()
    assert run(["curvature", "--edges", str(tmp_path / "edges.tsv"), "--iters", "1000", "--seed", "7"]) == 0
    assert json.loads(capsys.readouterr().out)["kappa_hat"] < 0


def test_missing_config(tmp_path, capsys):
    assert run(["distortion", "--config", str(tmp_path / "missing.json")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("E_CONFIG") and "config" in err


def test_bad_inputs_map_to_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("0\t1\nzz\n")
    assert run(["curvature", "--edges", str(bad)]) == 1
    assert capsys.readouterr().err.startswith("E_PARSE")
    assert run(["curvature", "--edges", str(tmp_path / "nope.tsv")]) == 1
    assert capsys.readouterr().err.startswith("E_IO")
    cfg = tmp_path / "c.json"
    cfg.write_text("[1, 2]")
    assert run(["distortion", "--config", str(cfg)]) == 1
    assert run(["distortion", "--out", str(tmp_path / "o"), "model.manifold=Q3"]) == 1
    assert "E_CONFIG" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        run(["frobnicate"])
    assert info.value.code == 2


def test_override_parsing():
    assert parse_override("model.epochs=5") == (["model", "epochs"], 5)
    assert parse_override("graph.kind=tree") == (["graph", "kind"], "tree")
    assert parse_override("model.hidden=[4,4]") == (["model", "hidden"], [4, 4])
    with pytest.raises(CliError):
        parse_override("epochs")
    cfg = apply_overrides({"model": {"lr": 0.1}}, ["model.epochs=3", "seed=2"])
    assert cfg == {"model": {"lr": 0.1, "epochs": 3}, "seed": 2}


def test_grid_parsing():
    assert parse_grid("-1:1:5") == pytest.approx([-1.0, -0.5, 0.0, 0.5, 1.0])
    assert parse_grid("0.5,-2") == [0.5, -2.0]
    with pytest.raises(CliError):
        parse_grid("a:b")


def test_distortion_outputs_are_reproducible(tmp_path, capsys):
    cfg = tmp_path / "d.json"
    cfg.write_text(json.dumps({"graph": {"kind": "tree", "depth": 2, "branching": 3}, "model": {"epochs": 15}}))
    for name in ("a", "b"):
        assert run(["distortion", "--config", str(cfg), "--out", str(tmp_path / name), "--seed", "3"]) == 0
    for f in ("metrics.json", "metrics_history.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    m = json.loads((tmp_path / "a" / "metrics.json").read_text())
    assert set(m) == {"config", "metrics", "kappas", "seed", "runtime_s"}
    assert m["seed"] == 3 and m["runtime_s"] is None
    assert "runtime_s" in json.loads((tmp_path / "a" / "timing.json").read_text())
    header = (tmp_path / "a" / "metrics_history.csv").read_text().splitlines()[0]
    assert header == "epoch,loss,metric,kappa_0"


def test_sweep_parallel_matches_serial(tmp_path, capsys):
    args = ["sweep", "--kappas=-1:1:3", "model.epochs=10", "graph.kind=tree", "graph.depth=2",
            "graph.branching=2"]
    assert run(args + ["--out", str(tmp_path / "s1")]) == 0
    assert run(args + ["--out", str(tmp_path / "s2"), "--jobs", "2"]) == 0
    for f in ("sweep.json", "sweep.csv"):
        assert (tmp_path / "s1" / f).read_bytes() == (tmp_path / "s2" / f).read_bytes()
    rows = json.loads((tmp_path / "s1" / "sweep.json").read_text())["rows"]
    assert [r["kappa"] for r in rows] == [-1.0, 0.0, 1.0]


def test_selftest_passes_and_reports_timing(tmp_path, capsys):
    assert run(["selftest", "--suites", "oracle,gyro", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "[oracle]" in out and "0 failed" in out
    assert set(json.loads((tmp_path / "timing.json").read_text())) == {"oracle", "gyro"}


def test_selftest_detects_injected_fault(capsys):
    assert run(["selftest", "--suites", "gyro", "--inject-fault"]) == 2
    captured = capsys.readouterr()
    assert "FAIL" in captured.out and captured.err.startswith("E_SELFTEST")
    assert run(["selftest", "--suites", "gyro"]) == 0  # the switch is reset afterwards


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "kappagcn", "distortion", "--config", str(tmp_path / "x.json")],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and "config" in proc.stderr
