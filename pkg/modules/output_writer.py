"""
Output Writer Module
CSV emission of probe histories, deformed-geometry snapshots and convergence
tables, and YAML run metadata
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import yaml

from modules.splines import SplinePatch, curve_eval

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "{:.16e}"


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return FLOAT_FORMAT.format(float(value))


@dataclass
class ProbeRecord:
    """One accepted step: time, temperature, probe values and schedule factors"""

    time: float
    temperature: float
    probes: Dict[str, np.ndarray]
    factors: Dict[str, float] = field(default_factory=dict)
    iterations: int = 0

    def columns(self) -> List[str]:
        cols = ["time", "temperature"]
        for name, value in self.probes.items():
            value = np.atleast_1d(value)
            cols += [f"{name}_u{i + 1}" for i in range(len(value))] if len(value) > 1 else [name]
        cols += [f"factor_{name}" for name in self.factors]
        return cols + ["iterations"]

    def values(self) -> List:
        row = [self.time, self.temperature]
        for value in self.probes.values():
            row += list(np.atleast_1d(value))
        row += list(self.factors.values())
        return row + [self.iterations]


def write_probe_csv(records: Sequence[ProbeRecord], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        if records:
            writer.writerow(records[0].columns())
        for rec in records:
            writer.writerow([_fmt(v) for v in rec.values()])
    logger.info(f"📝 Wrote {len(records)} probe records to {path}")
    return path


def sample_patches(patches: Sequence[SplinePatch], samples_per_patch: int) -> List[List]:
    """Rows (patch_id, sample_index, u, x1, x2, x3) sampled uniformly in u"""
    if samples_per_patch < 2:
        raise ValueError(f"samples_per_patch must be >= 2, got {samples_per_patch}")
    rows = []
    for k, patch in enumerate(patches):
        for j, u in enumerate(np.linspace(0.0, 1.0, samples_per_patch)):
            x = curve_eval(patch, u, 0)[0]
            rows.append([k, j, u, x[0], x[1], x[2]])
    return rows


def emit_snapshot(patches: Sequence[SplinePatch], path: Path, samples_per_patch: int = 50) -> Path:
    """Polyline CSV of the current centroid curves of all patches"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = sample_patches(patches, samples_per_patch)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["patch_id", "sample_index", "u", "x1", "x2", "x3"])
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    logger.info(f"📤 Snapshot with {len(rows)} samples -> {path.name}")
    return path


def snapshot_name(t: float) -> str:
    return f"snapshot_t{t:09.5f}.csv"


def write_convergence_csv(rows: Sequence[Dict], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["p", "n", "err_l2", "rate"])
        for row in rows:
            rate = "" if row.get("rate") is None else _fmt(row["rate"])
            writer.writerow([row["p"], row["n"], _fmt(row["err_l2"]), rate])
    logger.info(f"📋 Convergence table ({len(rows)} rows) -> {path}")
    return path


def _plain(value):
    """numpy types to builtins so safe_dump can serialize them"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_metadata(metadata: Dict, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(_plain(metadata), f, sort_keys=False, allow_unicode=True)
    return path
