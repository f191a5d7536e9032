import json

import numpy as np
import pytest

from domdec.main import main
from domdec.utils.file_handler import FileHandler


def test_q_outside_unit_interval_is_a_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["worstcase", "three", "--q", "1.5"])
    assert info.value.code == 2


def test_generate_writes_csv(tmp_path):
    out = tmp_path / "mu.csv"
    assert main(["generate", "--side", "8", "--seed", "4", "--out", str(out)]) == 0
    pixels = FileHandler.read_csv_image(str(out))
    assert pixels.shape == (8, 8)
    assert pixels.sum() == pytest.approx(1.0)


def test_solve_generated_pair(tmp_path, capsys):
    report = tmp_path / "report.json"
    coupling = tmp_path / "coupling.tsv"
    png = tmp_path / "cells.png"
    code = main([
        "solve", "--side", "8", "--seed", "2", "--workers", "2",
        "--report", str(report), "--coupling", str(coupling), "--png", str(png),
    ])
    assert code == 0
    payload = json.loads(report.read_text())
    assert payload["side"] == 8
    assert payload["seed"] == 2
    assert payload["worker_count"] == 2
    rows, cols, masses = FileHandler.read_coupling(str(coupling))
    assert masses.sum() == pytest.approx(1.0, abs=1e-6)
    assert rows.max() < 64 and cols.max() < 64
    assert png.exists()
    assert "primal=" in capsys.readouterr().out


def test_solve_from_files(tmp_path):
    mu_path, nu_path = tmp_path / "mu.csv", tmp_path / "nu.csv"
    FileHandler.write_csv_image(str(mu_path), np.ones((8, 8)))
    FileHandler.write_csv_image(str(nu_path), np.arange(1.0, 65.0).reshape(8, 8))
    assert main(["solve", str(mu_path), str(nu_path)]) == 0


def test_missing_images(tmp_path):
    assert main(["solve"]) == 2
    assert main(["solve", str(tmp_path / "a.csv"), str(tmp_path / "b.csv")]) == 2


def test_single_three_cell_trace(tmp_path):
    code = main([
        "worstcase", "three", "--q", "0.3", "--eps", "4", "--sweeps", "20",
        "--out-dir", str(tmp_path),
    ])
    assert code == 0
    payload = json.loads((tmp_path / "trace_three-cell_eps4.json").read_text())
    assert len(payload["trace"]["deltas"]) == 21
    assert (tmp_path / "trace_three-cell_eps4.csv").exists()
