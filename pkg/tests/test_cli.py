import json

import numpy as np
import pytest
import yaml

from eitchain import io
from eitchain.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main

SMALL = {
    "name": "tiny",
    "t_end": 300.0,
    "x_min": -512.0,
    "x_max": 512.0,
    "n_points": 1024,
    "diagnostics": ["restoration"],
    "lossless": False,
    "pulse": {"center_x0": -250.0, "sigma_t": 30.0},
    "layers": [{"x_start": 0.0, "x_end": 20.0, "coupling_D": 0.01, "gamma_e": 0.001}],
    "protocols": {"default": {"constant": 0.07}},
    "snapshot_times": [0.0, 300.0],
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return path


def test_run_writes_outputs(config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(config), "--engine", "both", "--out", str(out)]) == EXIT_OK
    names = {p.name for p in out.iterdir()}
    assert {"scenario.yaml", "summary.json", "mb_diagnostics.txt", "effective_diagnostics.txt"} <= names
    assert "mb_snapshot_0001.txt" in names and "effective_snapshot_0001.txt" in names
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["diagnostics"]) == {"mb", "effective"}
    snap = np.loadtxt(out / "mb_snapshot_0001.txt")
    assert snap.shape == (1024, len(io.MB_COLUMNS))
    header = io.read_header(out / "mb_snapshot_0001.txt")
    assert header["t"] == pytest.approx(300.0) and header["name"] == "tiny"
    assert "compare.final_profile_rel_l2" in capsys.readouterr().out


def test_run_is_deterministic(config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["run", str(config), "--out", str(out), "--format", "binary"]) == EXIT_OK
    assert (a / "mb_snapshot_0001.bin").read_bytes() == (b / "mb_snapshot_0001.bin").read_bytes()


def test_rerun_from_written_config(config, tmp_path):
    first = tmp_path / "first"
    assert main(["run", str(config), "--out", str(first)]) == EXIT_OK
    again = tmp_path / "again"
    assert main(["run", str(first / "scenario.yaml"), "--out", str(again)]) == EXIT_OK
    x = np.loadtxt(first / "mb_snapshot_0001.txt")
    y = np.loadtxt(again / "mb_snapshot_0001.txt")
    assert np.array_equal(x, y)


def test_run_chain_preset(tmp_path):
    out = tmp_path / "chain"
    assert main(["run", "sodium_single_layer", "--out", str(out)]) == EXIT_OK
    table = np.loadtxt(out / "chain_output.txt")
    assert table.shape[1] == 5


def test_config_errors_exit_one(tmp_path, capsys):
    assert main(["run", "no_such_preset", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump(dict(SMALL, n_points=1000)))
    assert main(["run", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["run", "storage_single_layer", "--engine", "effective", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_numerical_failure_exits_two(config, tmp_path, capsys):
    assert main(["run", str(config), "--dt", "50", "--out", str(tmp_path / "x")]) == EXIT_NUMERICAL
    assert "numerical failure" in capsys.readouterr().err


def test_numerical_failure_writes_last_state(tmp_path, capsys, monkeypatch):
    from eitchain import mb
    from eitchain.errors import NumericalFailure

    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(SMALL))

    def boom(self, state, *args, **kw):
        raise NumericalFailure("injected", snapshot=state)

    monkeypatch.setattr(mb.MBSolver, "run", boom)
    out = tmp_path / "fail"
    assert main(["run", str(cfg), "--out", str(out)]) == EXIT_NUMERICAL
    assert (out / "failure_snapshot.txt").exists()
    assert "last finite state" in capsys.readouterr().err
    assert io.read_header(out / "failure_snapshot.txt")["failure"] == "injected"


def test_bands(tmp_path, capsys):
    out = tmp_path / "bands.txt"
    assert main(["bands", "--omega-c", "0.04", "--gamma-e", "0.01", "--n-k", "11", "--out", str(out)]) == EXIT_OK
    assert np.loadtxt(out).shape == (11, 16)
    assert main(["bands", "--D", "-1", "--out", str(out)]) == EXIT_CONFIG


def test_scan_reports_widths(tmp_path, capsys):
    out = tmp_path / "scan.txt"
    assert main(["scan", "--length", "200", "--n-omega", "15", "--out", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "closed-form width" in text and "fitted width" in text
    assert np.loadtxt(out).shape == (15, 3)


def test_presets_listing(capsys):
    assert main(["presets"]) == EXIT_OK
    plain = capsys.readouterr().out
    assert "vacuum_defect" in plain and "assumed" not in plain
    assert main(["-v", "presets"]) == EXIT_OK
    assert "assumed" in capsys.readouterr().out


def test_validate(config, capsys):
    assert main(["validate", str(config)]) == EXIT_OK
    assert "tiny: ok" in capsys.readouterr().out
    assert main(["validate", "homogeneous_ramp"]) == EXIT_OK
    assert "margin" in capsys.readouterr().out
    assert main(["validate", str(config), "--dt", "50"]) == EXIT_NUMERICAL


def test_overrides(config, tmp_path):
    out = tmp_path / "o"
    args = ["run", str(config), "--engine", "effective", "--scheme", "upwind", "--smoothing", "2", "--out", str(out)]
    assert main(args) == EXIT_OK
    written = yaml.safe_load((out / "scenario.yaml").read_text())
    assert written["scheme"] == "upwind" and written["interface_smoothing"] == 2.0
