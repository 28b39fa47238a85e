import pytest
import yaml

from src.main import build_parser, main


@pytest.fixture
def app_config(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump({
        "scenario": "arch-90",
        "output": {"dir": str(tmp_path / "output")},
        "logging": {"level": "WARNING", "file": str(tmp_path / "logs" / "simulation.log")},
    }), encoding="utf-8")
    return str(path)


@pytest.fixture
def scenario_file(tmp_path, small_arch):
    path = tmp_path / "arch.yaml"
    path.write_text(yaml.safe_dump(small_arch), encoding="utf-8")
    return str(path)


def test_presets_list(capsys):
    assert main(["presets", "list"]) == 0
    out = capsys.readouterr().out
    for name in ("arch-90", "cantilever-morph", "stent-straight-quarter", "stent-curved-half"):
        assert name in out
    assert "[long-running]" in out


def test_check_preset(app_config):
    assert main(["--app-config", app_config, "check", "--config", "stent-curved-half"]) == 0


def test_check_missing_file(app_config, tmp_path):
    assert main(["--app-config", app_config, "check", "--config", str(tmp_path / "nope.yaml")]) == 2


def test_check_invalid_file(app_config, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("geometry: {builder: arch}\n", encoding="utf-8")
    assert main(["--app-config", app_config, "check", "--config", str(bad)]) == 2


@pytest.mark.parametrize("flag,value", [("--h", "-1"), ("--p", "1"), ("--n", "3"), ("--p", "20")])
def test_check_rejects_bad_overrides(app_config, flag, value):
    assert main(["--app-config", app_config, "check", "--config", "arch-90", flag, value]) == 2


def test_run_scenario_file(app_config, scenario_file, tmp_path):
    out = tmp_path / "run"
    assert main(["--app-config", app_config, "run", "--config", scenario_file, "--out", str(out)]) == 0
    assert (out / "probes.csv").exists()
    assert (out / "snapshot_t000.20000.csv").exists()


def test_run_default_output_dir(app_config, scenario_file, tmp_path):
    args = ["--app-config", app_config, "run", "--config", scenario_file, "--snapshot-times", "0.1"]
    assert main(args) == 0
    assert (tmp_path / "output" / "arch-90" / "snapshot_t000.10000.csv").exists()
    assert not (tmp_path / "output" / "arch-90" / "snapshot_t000.20000.csv").exists()


def test_run_solver_failure_exit_code(app_config, tmp_path, small_arch):
    small_arch["solver"] = {"max_iter": 0, "max_bisections": 0}
    path = tmp_path / "failing.yaml"
    path.write_text(yaml.safe_dump(small_arch), encoding="utf-8")
    assert main(["--app-config", app_config, "run", "--config", str(path), "--out", str(tmp_path / "f")]) == 3


def test_convergence_command(app_config, scenario_file, tmp_path):
    out = tmp_path / "conv"
    args = ["--app-config", app_config, "convergence", "--config", scenario_file, "--p-list", "3",
            "--n-list", "8,10", "--workers", "1", "--out", str(out)]
    assert main(args) == 0
    assert (out / "convergence.csv").read_text(encoding="utf-8").startswith("p,n,err_l2,rate")


def test_parser_lists():
    args = build_parser().parse_args(["convergence", "--p-list", "2,3", "--n-list", "10, 12"])
    assert args.p_list == [2, 3]
    assert args.n_list == [10, 12]
    assert args.workers == 4


def test_non_integer_count_is_config_exit(app_config, tmp_path, small_arch):
    small_arch["discretization"]["n"] = "ten"
    path = tmp_path / "counts.yaml"
    path.write_text(yaml.safe_dump(small_arch), encoding="utf-8")
    assert main(["--app-config", app_config, "check", "--config", str(path)]) == 2
