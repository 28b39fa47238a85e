"""Shared fixtures; puts the project root on sys.path like src/main.py does"""

import sys
from pathlib import Path

import numpy as np
import pytest

project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from modules.material import WLF_TABLE, builtin_material  # noqa: E402


@pytest.fixture
def pla():
    return builtin_material("PLA-vanManen", WLF_TABLE["row1"])


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def small_arch():
    """Coarse, short arch scenario mapping that runs in well under a second per step"""
    from modules.presets import arch_90

    data = arch_90(p=3, n=8, h=0.05, total_time=0.2)
    data["output"] = {"snapshot_times": [0.1, 0.2], "samples_per_patch": 11}
    data["convergence"].update({"reference": {"p": 3, "n": 10}, "eval_time": 0.1, "grid_points": 5, "h": 0.05})
    return data
