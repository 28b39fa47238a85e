import csv

import numpy as np
import pytest
import yaml

from modules.initial_geometry import arc_patch
from modules.output_writer import (ProbeRecord, emit_snapshot, sample_patches, snapshot_name,
                                   write_convergence_csv, write_metadata, write_probe_csv)


def _rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


def test_snapshot_of_arch_lies_on_circle(tmp_path):
    patch = arc_patch(1.0, 0.5 * np.pi, 4, 10)
    path = emit_snapshot([patch, patch], tmp_path / snapshot_name(0.0), samples_per_patch=7)
    rows = _rows(path)
    assert rows[0] == ["patch_id", "sample_index", "u", "x1", "x2", "x3"]
    assert len(rows) == 1 + 2 * 7
    assert rows[8][:2] == ["1", "0"]
    for row in rows[1:]:
        x = np.array([float(v) for v in row[3:]])
        assert np.linalg.norm(x) == pytest.approx(1.0, abs=1e-10)


def test_sample_count_validation():
    with pytest.raises(ValueError):
        sample_patches([arc_patch(1.0, 1.0, 2, 4)], 1)


def test_snapshot_name():
    assert snapshot_name(1.7525) == "snapshot_t001.75250.csv"
    assert snapshot_name(0.0) == "snapshot_t000.00000.csv"


def test_probe_columns_and_format(tmp_path):
    records = [ProbeRecord(0.0, 31.5, {"tip": np.zeros(3), "contraction": np.array([0.0])}, {"load": 0.0}, 0),
               ProbeRecord(0.5, 37.35, {"tip": np.array([1e-3, -2e-3, 0.25]), "contraction": np.array([1e-4])},
                           {"load": 0.1}, 3)]
    rows = _rows(write_probe_csv(records, tmp_path / "probes.csv"))
    assert rows[0] == ["time", "temperature", "tip_u1", "tip_u2", "tip_u3", "contraction", "factor_load",
                       "iterations"]
    assert rows[2][0] == "5.0000000000000000e-01"
    assert rows[2][4] == "2.5000000000000000e-01"
    assert rows[2][-1] == "3"


def test_convergence_csv_blank_rate(tmp_path):
    rows = _rows(write_convergence_csv([{"p": 2, "n": 10, "err_l2": 0.1, "rate": None},
                                        {"p": 2, "n": 18, "err_l2": 0.025, "rate": 2.0}],
                                       tmp_path / "convergence.csv"))
    assert rows[0] == ["p", "n", "err_l2", "rate"]
    assert rows[1][3] == ""
    assert float(rows[2][3]) == 2.0


def test_metadata_round_trips_numpy_values(tmp_path):
    path = write_metadata({"status": "ok", "steps": np.int64(5), "center": np.array([0.0, 1.0]),
                           "nested": {"tol": np.float64(1e-8)}}, tmp_path / "meta" / "metadata.yaml")
    data = yaml.safe_load(path.read_text(encoding="utf-8"))
    assert data == {"status": "ok", "steps": 5, "center": [0.0, 1.0], "nested": {"tol": 1e-8}}
