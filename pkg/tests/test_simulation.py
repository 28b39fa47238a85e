import csv

import numpy as np
import pytest
import yaml

from modules.errors import ConfigError
from modules.presets import preset
from modules.scenario_config import parse_mapping
from modules.simulation import (EXIT_OK, EXIT_SOLVER, _mirror_images, build_model, convergence_study,
                                observed_rates, probe_values, resolve_selector, run_scenario, time_grid,
                                with_discretization)


def _probe_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def test_build_model_for_arch(small_arch):
    model = build_model(parse_mapping(small_arch))
    solver = model.solver
    assert len(solver.patches) == 1
    assert model.named == {"start": 0, "end": 1}
    assert [c.label for c in solver.nodes[0].conditions] == ["clamp"]
    load = solver.nodes[1].conditions[0]
    assert np.allclose(load.moment(0.2), 0.2 / 5.0 * np.array([0.0, 25.0, 25.0]))
    assert model.assembly is None


def test_unknown_selector_is_config_error(small_arch):
    small_arch["boundary_conditions"][1]["node"] = "middle"
    with pytest.raises(ConfigError) as info:
        build_model(parse_mapping(small_arch))
    assert info.value.violations[0][0] == "boundary_conditions[1].node"


def test_time_grid_includes_snapshots(small_arch):
    config = parse_mapping(small_arch)
    assert np.allclose(time_grid(config, [0.125]), [0.0, 0.05, 0.1, 0.125, 0.15, 0.2])
    assert np.allclose(time_grid(config, until=0.1), [0.0, 0.05, 0.1])


def test_short_arch_run_writes_outputs(small_arch, tmp_path):
    result = run_scenario(parse_mapping(small_arch), tmp_path)
    assert result.status == EXIT_OK
    names = sorted(p.name for p in result.files)
    assert names == ["metadata.yaml", "probes.csv", "snapshot_t000.10000.csv", "snapshot_t000.20000.csv"]

    rows = _probe_rows(tmp_path / "probes.csv")
    assert len(rows) == 5
    assert float(rows[-1]["time"]) == pytest.approx(0.2)
    assert float(rows[0]["tip_u1"]) == 0.0
    tip = np.array([float(rows[-1][f"tip_u{i}"]) for i in (1, 2, 3)])
    assert np.linalg.norm(tip) > 0.0

    meta = yaml.safe_load((tmp_path / "metadata.yaml").read_text(encoding="utf-8"))
    assert meta["status"] == "ok"
    assert meta["scenario"] == "arch-90"
    assert meta["model"]["unknowns"] == 48
    assert "event_timing" in meta["design_defaults"]
    assert meta["geometry"]["builder"] == "arch"
    assert meta["geometry"]["radius"] == 1.0


def test_runs_are_byte_identical(small_arch, tmp_path):
    config = parse_mapping(small_arch)
    run_scenario(config, tmp_path / "a")
    run_scenario(parse_mapping(small_arch), tmp_path / "b")
    for name in ("probes.csv", "snapshot_t000.20000.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_solver_failure_keeps_last_good_state(small_arch, tmp_path):
    small_arch["solver"] = {"max_iter": 0, "max_bisections": 0}
    result = run_scenario(parse_mapping(small_arch), tmp_path)
    assert result.status == EXIT_SOLVER
    assert result.error
    assert (tmp_path / "last_good_snapshot_t000.00000.csv").exists()
    meta = yaml.safe_load((tmp_path / "metadata.yaml").read_text(encoding="utf-8"))
    assert meta["status"] == "failed"
    assert meta["last_good_time"] == 0.0
    assert meta["residual_history"]


def test_quarter_stent_model():
    config = parse_mapping(preset("stent-straight-quarter", crowns=2, p=3, n=6))
    model = build_model(config)
    solver = model.solver
    assert len(solver.patches) == 13
    assert model.assembly.symmetry == "quarter"

    symmetric = [n for n in solver.nodes if n.tags.get("symmetry_normals")]
    assert len(symmetric) == 4
    assert all(any(c.label == "symmetry" for c in n.conditions) for n in symmetric)

    anchor = resolve_selector({"crown": 0, "angle_deg": 0.0}, solver.nodes, model.named, model.assembly, "x")[0]
    held = [c for c in anchor.conditions if c.label == "anchor"]
    assert len(held) == 1 and not held[0].active and held[0].hold_on_activate

    interfaces = [n for n in solver.nodes if n.tags.get("interface")]
    assert all(any(c.release_on == "release" for c in n.conditions) for n in interfaces)
    values = probe_values(model, config)
    assert values["contraction"][0] == pytest.approx(0.0, abs=1e-12)
    assert np.array_equal(values["anchor"], np.zeros(3))


def test_bad_crown_selector():
    data = preset("stent-straight-quarter", crowns=2, p=3, n=6)
    data["boundary_conditions"][2]["node"] = {"crown": 0, "angle_deg": 7.5}
    with pytest.raises(ConfigError):
        build_model(parse_mapping(data))


def test_mirror_images():
    images = _mirror_images([np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])])
    assert len(images) == 4
    assert any(np.allclose(M, np.diag([1.0, -1.0, -1.0])) for M in images)


def test_observed_rates():
    rows = [{"p": 2, "n": 10, "err_l2": 1e-2}, {"p": 2, "n": 18, "err_l2": 1.25e-3},
            {"p": 3, "n": 10, "err_l2": float("nan")}, {"p": 3, "n": 17, "err_l2": 1e-4}]
    observed_rates(rows)
    assert rows[0]["rate"] is None
    assert rows[1]["rate"] == pytest.approx(3.0)
    assert rows[3]["rate"] is None


def test_convergence_reference_cell_is_exact(small_arch, tmp_path):
    config = parse_mapping(small_arch)
    result = convergence_study(config, [3], [8, 10], {"p": 3, "n": 10}, eval_time=0.1, grid_points=5,
                               h=0.05, workers=2, out_dir=tmp_path)
    assert [(r["p"], r["n"]) for r in result.rows] == [(3, 8), (3, 10)]
    assert result.errors(3)[1] == 0.0
    assert 0.0 < result.errors(3)[0] < 1.0
    assert (tmp_path / "convergence.csv").exists()


def test_with_discretization_ignores_none(small_arch):
    config = with_discretization(parse_mapping(small_arch), p=4, n=None)
    assert config.discretization["p"] == 4
    assert config.discretization["n"] == 8


@pytest.mark.slow
def test_cantilever_shape_fixity_and_recovery(tmp_path):
    result = run_scenario(parse_mapping(preset("cantilever-morph", h=5e-3)), tmp_path)
    assert result.status == EXIT_OK
    tips = {round(r.time, 6): np.asarray(r.probes["tip"]) for r in result.records}
    peak = max(np.linalg.norm(u) for u in tips.values())
    unloaded, before_heating = tips[1.0], tips[1.625]
    assert np.linalg.norm(unloaded) > 0.8 * peak
    # cold hold between unloading and reheating
    assert np.linalg.norm(before_heating - unloaded) < 0.01 * np.linalg.norm(unloaded)
    assert np.linalg.norm(tips[3.0]) < 0.05 * peak


@pytest.mark.slow
def test_arch_errors_decrease_with_refinement():
    data = preset("arch-90", p=4, n=10, h=0.05, total_time=0.5)
    result = convergence_study(parse_mapping(data), [3], [8, 12, 16], {"p": 6, "n": 40}, eval_time=0.5,
                               grid_points=9, h=0.05, workers=2)
    errors = result.errors(3)
    assert errors[0] > errors[1] > errors[2] > 0.0


@pytest.mark.slow
def test_quarter_stent_contracts_with_ramp(tmp_path):
    data = preset("stent-straight-quarter", crowns=2, p=3, n=8, total_time=0.05)
    data["output"]["snapshot_times"] = [0.05]
    result = run_scenario(parse_mapping(data), tmp_path)
    assert result.status == EXIT_OK
    contraction = result.records[-1].probes["contraction"][0]
    assert contraction == pytest.approx(0.05 * 15e-3, rel=1e-3)


@pytest.mark.slow
def test_quarter_stent_programming_and_recovery(tmp_path):
    delta_r = 15e-3
    data = preset("stent-straight-quarter", crowns=2, p=4, n=10, h=5e-3)
    result = run_scenario(parse_mapping(data), tmp_path)
    assert result.status == EXIT_OK, result.error
    times = [round(r.time, 6) for r in result.records]
    contraction = [float(r.probes["contraction"][0]) for r in result.records]
    by_time = dict(zip(times, contraction))

    assert by_time[1.0] == pytest.approx(delta_r, rel=1e-3)
    assert by_time[1.75] == pytest.approx(delta_r, rel=1e-3)
    # first step after the release switches the interfaces to free ends
    after_release = contraction[times.index(1.75) + 1]
    assert abs(after_release - by_time[1.75]) < 0.1 * delta_r
    assert by_time[2.0] > 0.8 * delta_r
    assert abs(contraction[-1]) < 0.05 * delta_r
    assert times[-1] == pytest.approx(3.25)


@pytest.mark.slow
def test_arch_convergence_rates_and_high_degree_accuracy():
    data = preset("arch-90", h=1e-2, total_time=3.0)
    p_list, n_list = [2, 3, 4, 5, 6, 7, 8], [10, 12, 16, 20, 24, 32]
    result = convergence_study(parse_mapping(data), p_list, n_list, {"p": 8, "n": 150}, eval_time=3.0,
                               grid_points=9, h=1e-2, workers=4)
    for p in p_list:
        errors = result.errors(p)
        assert np.all(np.isfinite(errors)), (p, errors)
        # below 1e-8 the Newton tolerance dominates
        resolved = [e for e in errors if e > 1e-8]
        assert all(a > b for a, b in zip(resolved[:-1], resolved[1:])), (p, errors)
        rates = [r["rate"] for r in result.rows if r["p"] == p and r["rate"] is not None]
        assert any(abs(rate - p) <= 0.5 for rate in rates), (p, rates)
    assert result.errors(8)[n_list.index(16)] <= 1e-5
