#!/usr/bin/env python3
"""
SMP Beam Simulator - Main Entry Point
Runs shape-memory polymer beam scenarios (built-in presets or YAML files),
convergence studies and configuration checks from the command line
"""

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

import dotenv
import yaml

from modules import __version__
from modules.collocation_solver import SolverSettings
from modules.errors import ConfigError, SolverError
from modules.presets import LONG_RUNNING, PRESET_TABLE, PRESETS
from modules.scenario_config import ScenarioConfig, parse_config, parse_mapping
from modules.simulation import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, convergence_study, run_scenario, with_discretization

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = {
    "logging": {"level": "INFO", "file": "logs/simulation.log"},
    "output": {"dir": "output"},
    "scenario": "arch-90",
}


class SMPBeamSimulator:
    """Main application class"""

    def __init__(self, config_path: str = "config.yaml"):
        self.config_path = config_path
        dotenv.load_dotenv()
        self.config = self._load_config()
        self._setup_logging()
        logger.info(f"SMP Beam Simulator {__version__} initialized")

    def _load_config(self) -> dict:
        """Load application configuration from YAML file"""
        config_path = Path(self.config_path)

        if not config_path.exists():
            for default_path in [project_root / "config.yaml", Path("config.yaml")]:
                if default_path.exists():
                    config_path = default_path
                    break

        if not config_path.exists():
            logger.warning(f"Config file not found: {self.config_path} (using defaults)")
            return dict(DEFAULT_CONFIG)

        with open(config_path, "r", encoding="utf-8") as f:
            config = yaml.safe_load(f) or {}

        for key, value in DEFAULT_CONFIG.items():
            config.setdefault(key, value)
        logger.info(f"Configuration loaded: {config_path}")
        return config

    def _setup_logging(self):
        """Setup logging configuration"""
        log_config = self.config.get("logging", {})
        level_name = os.environ.get("SMP_BEAM_LOG_LEVEL", log_config.get("level", "INFO"))
        log_level = getattr(logging, str(level_name).upper(), logging.INFO)
        log_format = log_config.get("format", "%(asctime)s - %(name)s - %(levelname)s - %(message)s")

        log_file = log_config.get("file", "logs/simulation.log")
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)

        logging.basicConfig(
            level=log_level,
            format=log_format,
            handlers=[
                logging.FileHandler(log_file),
                logging.StreamHandler(sys.stdout)
            ]
        )

    def output_dir(self, override: Optional[str], scenario: ScenarioConfig) -> Path:
        if override:
            return Path(override)
        base = os.environ.get("SMP_BEAM_OUTPUT_DIR") or self.config.get("output", {}).get("dir", "output")
        return Path(base) / scenario.name

    def load_scenario(self, path: Optional[str] = None, h: Optional[float] = None,
                      p: Optional[int] = None, n: Optional[int] = None) -> ScenarioConfig:
        """Scenario from a file, a preset name, or the `scenario` entry of config.yaml"""
        if path:
            if path in PRESETS:
                scenario = parse_config(path)
            else:
                file = Path(path)
                if not file.exists():
                    raise ConfigError([("--config", f"file not found: {path}")])
                scenario = parse_config(file.read_text(encoding="utf-8"))
        else:
            entry = self.config.get("scenario")
            scenario = parse_mapping(entry) if isinstance(entry, dict) else parse_config(str(entry))

        if "solver" not in scenario.source and self.config.get("solver"):
            scenario = replace(scenario, solver=SolverSettings.from_dict(self.config["solver"]))
        if h is not None and h <= 0.0:
            raise ConfigError([("--h", f"must be > 0, got {h}")])
        if p is not None and p < 2:
            raise ConfigError([("--p", f"must be >= 2, got {p}")])
        scenario = with_discretization(scenario, h=h, p=p, n=n)
        degree, count = scenario.discretization["p"], scenario.discretization["n"]
        if count < degree + 1:
            raise ConfigError([("--n" if n is not None else "--p",
                                f"need n >= p + 1 control points, got p={degree}, n={count}")])
        return scenario

    def run(self, args) -> int:
        scenario = self.load_scenario(args.config, args.h, args.p, args.n)
        out = self.output_dir(args.out, scenario)
        logger.info("=" * 50)
        logger.info(f"Running scenario '{scenario.name}' -> {out}")
        logger.info("=" * 50)
        result = run_scenario(scenario, out, args.snapshot_times)
        for path in result.files:
            logger.info(f"  📤 {path}")
        return result.status

    def convergence(self, args) -> int:
        scenario = self.load_scenario(args.config, args.h)
        study = scenario.convergence or {}
        p_list = args.p_list or study.get("p_list", [2, 3, 4, 5, 6, 7, 8])
        n_list = args.n_list or study.get("n_list", [10, 12, 16, 20, 24, 32])
        reference = study.get("reference", {"p": 8, "n": 150})
        h = args.h or study.get("h", scenario.discretization["h"])
        out = self.output_dir(args.out, scenario)
        result = convergence_study(scenario, p_list, n_list, reference,
                                   eval_time=float(study.get("eval_time", 3.0)),
                                   grid_points=int(study.get("grid_points", 9)), h=h,
                                   workers=args.workers, out_dir=out)
        for row in result.rows:
            rate = "" if row["rate"] is None else f"  rate={row['rate']:.2f}"
            logger.info(f"p={row['p']} n={row['n']:4d}  err={row['err_l2']:.3e}{rate}")
        return EXIT_OK

    def check(self, args) -> int:
        scenario = self.load_scenario(args.config, args.h, args.p, args.n)
        logger.info(f"✓ Scenario '{scenario.name}' is valid")
        return EXIT_OK

    @staticmethod
    def list_presets() -> int:
        for name, fn in PRESETS.items():
            tag = " [long-running]" if name in LONG_RUNNING else ""
            print(f"{name:24s} {(fn.__doc__ or '').strip()}{tag}")
            values = ", ".join(f"{k}={v}" for k, v in PRESET_TABLE[name].items())
            print(f"{'':24s} {values}")
        return EXIT_OK


def _floats(text: str) -> List[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> List[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smp-beam", description="Shape-memory polymer beam simulator")
    parser.add_argument("--app-config", default="config.yaml", help="application config (logging, output)")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_flags(p, discretization=True):
        p.add_argument("--config", help="scenario YAML file or preset name")
        p.add_argument("--out", help="output directory")
        p.add_argument("--h", type=float, help="time step override [s]")
        if discretization:
            p.add_argument("--p", type=int, help="spline degree override")
            p.add_argument("--n", type=int, help="control points per patch override")

    run = sub.add_parser("run", help="run a scenario")
    scenario_flags(run)
    run.add_argument("--snapshot-times", type=_floats, help="comma-separated snapshot times [s]")

    conv = sub.add_parser("convergence", help="spatial convergence study")
    scenario_flags(conv, discretization=False)
    conv.add_argument("--p-list", type=_ints, help="comma-separated degrees")
    conv.add_argument("--n-list", type=_ints, help="comma-separated control point counts")
    conv.add_argument("--workers", type=int, default=4, help="concurrent (p, n) cells")

    presets = sub.add_parser("presets", help="built-in scenarios")
    presets.add_argument("action", choices=["list"])

    check = sub.add_parser("check", help="validate a scenario without running it")
    scenario_flags(check)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        return SMPBeamSimulator.list_presets()

    app = SMPBeamSimulator(args.app_config)
    try:
        if args.command == "run":
            return app.run(args)
        if args.command == "convergence":
            return app.convergence(args)
        return app.check(args)
    except ConfigError as e:
        logger.error(f"✗ {e}")
        return EXIT_CONFIG
    except SolverError as e:
        logger.error(f"✗ Solver failure: {e}")
        return EXIT_SOLVER
    except Exception as e:
        logger.error(f"Error during {args.command}: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
