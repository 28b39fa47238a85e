"""
Scenario Config Module
YAML scenario schema (version 1): unit-tagged quantities, validation with
located error messages, and conversion to SI
"""

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml

from modules.collocation_solver import SolverSettings
from modules.errors import ConfigError
from modules.material import WLF_TABLE, MaxwellMaterial, WLFParams, builtin_material, material_from_table
from modules.schedule import PiecewiseLinear, Schedule, SwitchEvent

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

UNITS = {
    "length": {"m": 1.0, "cm": 1e-2, "mm": 1e-3},
    "stress": {"Pa": 1.0, "kPa": 1e3, "MPa": 1e6, "GPa": 1e9},
    "force": {"N": 1.0, "kN": 1e3, "mN": 1e-3},
    "moment": {"N*m": 1.0, "Nm": 1.0, "N*mm": 1e-3},
    "time": {"s": 1.0, "ms": 1e-3},
    "temperature": {"degC": 1.0, "C": 1.0},
    "temperature_difference": {"K": 1.0, "degC": 1.0, "C": 1.0},
    "angle": {"rad": 1.0, "deg": math.pi / 180.0},
    "none": {"": 1.0},
}

BLOCKS = {"geometry", "material", "section", "discretization", "schedule", "boundary_conditions"}
OPTIONAL_BLOCKS = {"schema_version", "name", "probes", "output", "solver", "convergence", "metadata"}

_STENT_KEYS = {"builder", "radius", "half_height", "spacing", "crowns", "wires", "bridge_angles",
               "odd_bridge_angles", "bridge_count", "symmetry"}
GEOMETRY_KEYS = {
    "arch": {"builder", "radius", "sweep", "reference"},
    "line": {"builder", "length", "direction", "origin", "reference"},
    "straight_stent": _STENT_KEYS,
    "curved_stent": _STENT_KEYS | {"bridge_height", "axis_radius", "axis_center", "axis_sweep"},
}
BC_TYPES = {"clamp", "fix", "load", "displacement", "rotation", "symmetry", "contraction", "distributed"}
BC_KEYS = {"type", "node", "patches", "translation", "rotation", "force", "moment", "displacement", "delta_r",
           "factor", "release_on", "activate_on", "clamp_rotations", "mode", "label"}
CONTRACTION_MODES = ("radial", "straighten")

_QUANTITY = re.compile(r"^\s*([-+0-9.eE]+)\s*([A-Za-z*]*)\s*$")


class _Collector:
    """Accumulates (location, message) pairs so every violation is reported at once"""

    def __init__(self):
        self.violations: List[Tuple[str, str]] = []

    def add(self, loc: str, msg: str):
        self.violations.append((loc, msg))

    def check(self):
        if self.violations:
            raise ConfigError(self.violations)


def parse_quantity(value: Any, dimension: str, loc: str, errors: _Collector, default: Any = None) -> Optional[float]:
    """Number in SI, or 'value unit' string converted to SI"""
    if value is None:
        if default is None:
            errors.add(loc, "required value missing")
        return default
    if isinstance(value, bool):
        errors.add(loc, f"expected a {dimension} quantity, got {value!r}")
        return default
    if isinstance(value, (int, float)):
        return float(value)
    match = _QUANTITY.match(str(value))
    if not match:
        errors.add(loc, f"cannot parse quantity {value!r}")
        return default
    number, unit = match.groups()
    table = UNITS[dimension]
    if unit not in table:
        allowed = ", ".join(u for u in table if u) or "no unit"
        errors.add(loc, f"unit '{unit}' is not a {dimension} unit (allowed: {allowed})")
        return default
    try:
        return float(number) * table[unit]
    except ValueError:
        errors.add(loc, f"cannot parse number {number!r}")
        return default


def parse_count(value: Any, loc: str, errors: _Collector, default: int, minimum: int = 0) -> int:
    """Integer count (plain int, integral float or digit string); falls back to default on error"""
    if value is None:
        return default
    if isinstance(value, bool):
        errors.add(loc, f"expected an integer, got {value!r}")
        return default
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    if isinstance(value, str) and re.fullmatch(r"\s*[+-]?\d+\s*", value):
        value = int(value)
    if not isinstance(value, int):
        errors.add(loc, f"expected an integer, got {value!r}")
        return default
    if value < minimum:
        errors.add(loc, f"must be >= {minimum}, got {value}")
    return value


def parse_vector(value: Any, dimension: str, loc: str, errors: _Collector) -> np.ndarray:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        errors.add(loc, "expected a list of 3 components")
        return np.zeros(3)
    return np.array([parse_quantity(v, dimension, f"{loc}[{i}]", errors, 0.0) for i, v in enumerate(value)])


def _points(value: Any, loc: str, errors: _Collector, dimension: str = "none") -> Optional[PiecewiseLinear]:
    if not isinstance(value, list) or not value:
        errors.add(loc, "expected a non-empty list of [time, value] pairs")
        return None
    pts = []
    for i, pair in enumerate(value):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            errors.add(f"{loc}[{i}]", "expected [time, value]")
            continue
        pts.append((parse_quantity(pair[0], "time", f"{loc}[{i}][0]", errors, 0.0),
                    parse_quantity(pair[1], dimension, f"{loc}[{i}][1]", errors, 0.0)))
    if any(b[0] < a[0] for a, b in zip(pts, pts[1:])):
        errors.add(loc, "breakpoint times must be nondecreasing")
        return None
    return PiecewiseLinear.from_points(pts) if pts else None


def _unknown_keys(block: dict, allowed: set, loc: str, errors: _Collector):
    for key in block:
        if key not in allowed:
            errors.add(f"{loc}.{key}", "unknown key")


def _positive(value: Optional[float], loc: str, errors: _Collector):
    if value is not None and value <= 0.0:
        errors.add(loc, f"must be > 0, got {value}")


@dataclass
class ScenarioConfig:
    """Validated scenario with every quantity in SI units"""

    name: str
    geometry: Dict[str, Any]
    material: MaxwellMaterial
    section: Dict[str, Any]
    discretization: Dict[str, Any]
    schedule: Schedule
    boundary_conditions: List[Dict[str, Any]]
    probes: List[Dict[str, Any]] = field(default_factory=list)
    output: Dict[str, Any] = field(default_factory=dict)
    solver: SolverSettings = field(default_factory=SolverSettings)
    convergence: Optional[Dict[str, Any]] = None
    metadata: Dict[str, Any] = field(default_factory=dict)
    source: Dict[str, Any] = field(default_factory=dict)


def _parse_geometry(block: dict, errors: _Collector) -> Dict[str, Any]:
    builder = block.get("builder")
    if builder not in GEOMETRY_KEYS:
        errors.add("geometry.builder", f"must be one of {sorted(GEOMETRY_KEYS)}, got {builder!r}")
        return {}
    _unknown_keys(block, GEOMETRY_KEYS[builder], "geometry", errors)
    geo: Dict[str, Any] = {"builder": builder}
    if builder == "arch":
        geo["radius"] = parse_quantity(block.get("radius"), "length", "geometry.radius", errors)
        geo["sweep"] = parse_quantity(block.get("sweep"), "angle", "geometry.sweep", errors)
        _positive(geo["radius"], "geometry.radius", errors)
        if geo["sweep"] is not None and not 0.0 < geo["sweep"] < math.pi:
            errors.add("geometry.sweep", "must lie in (0, 180 deg)")
    elif builder == "line":
        geo["length"] = parse_quantity(block.get("length"), "length", "geometry.length", errors)
        _positive(geo["length"], "geometry.length", errors)
        geo["direction"] = parse_vector(block.get("direction", [0, 1, 0]), "none", "geometry.direction", errors)
        geo["origin"] = parse_vector(block.get("origin", [0, 0, 0]), "length", "geometry.origin", errors)
        if np.linalg.norm(geo["direction"]) == 0.0:
            errors.add("geometry.direction", "must be nonzero")
    else:
        for key in ("radius", "half_height", "spacing"):
            geo[key] = parse_quantity(block.get(key), "length", f"geometry.{key}", errors)
            _positive(geo[key], f"geometry.{key}", errors)
        geo["crowns"] = parse_count(block.get("crowns"), "geometry.crowns", errors, 2, minimum=1)
        geo["wires"] = parse_count(block.get("wires"), "geometry.wires", errors, 12, minimum=2)
        if geo["wires"] % 2:
            errors.add("geometry.wires", "must be even")
        for key in ("bridge_angles", "odd_bridge_angles"):
            if key in block:
                geo[f"{key}_deg"] = [parse_quantity(a, "angle", f"geometry.{key}[{i}]", errors, 0.0)
                                     * 180.0 / math.pi for i, a in enumerate(block[key])]
        geo["bridge_count"] = parse_count(block.get("bridge_count"), "geometry.bridge_count", errors, 3, minimum=1)
        geo["symmetry"] = block.get("symmetry", "full")
        allowed = {"straight_stent": ("full", "quarter"), "curved_stent": ("full", "half")}[builder]
        if geo["symmetry"] not in allowed:
            errors.add("geometry.symmetry", f"must be one of {allowed}")
        if builder == "curved_stent":
            geo["axis_radius"] = parse_quantity(block.get("axis_radius"), "length", "geometry.axis_radius", errors)
            geo["axis_center"] = parse_vector(block.get("axis_center", [0, 0, 0]), "length",
                                              "geometry.axis_center", errors)
            geo["axis_sweep"] = parse_quantity(block.get("axis_sweep"), "angle", "geometry.axis_sweep", errors)
            if "bridge_height" in block:
                geo["bridge_height"] = parse_quantity(block["bridge_height"], "length",
                                                      "geometry.bridge_height", errors)
    if "reference" in block:
        geo["reference"] = parse_vector(block["reference"], "none", "geometry.reference", errors)
    return geo


def _parse_material(block: dict, errors: _Collector) -> Optional[MaxwellMaterial]:
    _unknown_keys(block, {"name", "wlf", "poisson", "E_inf", "branches", "elastic_only"}, "material", errors)
    wlf_spec = block.get("wlf", "row1")
    wlf = None
    if isinstance(wlf_spec, str):
        if wlf_spec not in WLF_TABLE:
            errors.add("material.wlf", f"unknown WLF row {wlf_spec!r} (available: {sorted(WLF_TABLE)})")
        else:
            wlf = WLF_TABLE[wlf_spec]
    elif isinstance(wlf_spec, dict):
        _unknown_keys(wlf_spec, {"C1", "C2", "T_G"}, "material.wlf", errors)
        c1 = parse_quantity(wlf_spec.get("C1"), "none", "material.wlf.C1", errors)
        c2 = parse_quantity(wlf_spec.get("C2"), "temperature_difference", "material.wlf.C2", errors)
        tg = parse_quantity(wlf_spec.get("T_G"), "temperature", "material.wlf.T_G", errors)
        _positive(c2, "material.wlf.C2", errors)
        if None not in (c1, c2, tg) and c2 > 0.0:
            wlf = WLFParams(c1, c2, tg)
    else:
        errors.add("material.wlf", "expected a row name or {C1, C2, T_G}")
    nu = parse_quantity(block.get("poisson", 0.33), "none", "material.poisson", errors, 0.33)
    if not -1.0 < nu < 0.5:
        errors.add("material.poisson", f"must lie in (-1, 0.5), got {nu}")
    if wlf is None:
        return None

    name = block.get("name", "PLA-vanManen")
    if "branches" in block:
        e_inf = parse_quantity(block.get("E_inf"), "stress", "material.E_inf", errors)
        table = []
        for i, row in enumerate(block["branches"]):
            if not isinstance(row, (list, tuple)) or len(row) != 2:
                errors.add(f"material.branches[{i}]", "expected [E, tau_G]")
                continue
            E = parse_quantity(row[0], "stress", f"material.branches[{i}][0]", errors, 0.0)
            tau = parse_quantity(row[1], "time", f"material.branches[{i}][1]", errors, 1.0)
            if E < 0.0:
                errors.add(f"material.branches[{i}][0]", "modulus must be >= 0")
            _positive(tau, f"material.branches[{i}][1]", errors)
            table.append((E / 1e6, tau))
        if e_inf is None or errors.violations:
            return None
        material = material_from_table(name, e_inf / 1e6, table, wlf, nu)
    else:
        if name != "PLA-vanManen":
            errors.add("material.name", f"unknown built-in material {name!r}")
            return None
        material = builtin_material(name, wlf, nu)
    if block.get("elastic_only", False):
        material = material.elastic_only()
    return material


def _parse_schedule(block: dict, total_time: Optional[float], errors: _Collector) -> Optional[Schedule]:
    _unknown_keys(block, {"temperature", "factors", "events"}, "schedule", errors)
    temperature = _points(block.get("temperature"), "schedule.temperature", errors, "temperature")
    factors = {}
    for name, pts in (block.get("factors") or {}).items():
        f = _points(pts, f"schedule.factors.{name}", errors)
        if f is not None:
            factors[name] = f
    events = []
    for i, ev in enumerate(block.get("events") or []):
        if not isinstance(ev, dict) or "name" not in ev or "time" not in ev:
            errors.add(f"schedule.events[{i}]", "expected {name, time}")
            continue
        events.append(SwitchEvent(parse_quantity(ev["time"], "time", f"schedule.events[{i}].time", errors, 0.0),
                                  str(ev["name"])))
    if temperature is None or total_time is None or total_time <= 0.0:
        return None
    return Schedule(total_time, temperature, factors, events)


def _parse_bcs(items: list, schedule: Optional[Schedule], errors: _Collector) -> List[Dict[str, Any]]:
    out = []
    events = {e.name for e in schedule.events} if schedule else set()
    factors = set(schedule.factors) if schedule else set()
    if not isinstance(items, list):
        errors.add("boundary_conditions", "expected a list")
        return out
    for i, bc in enumerate(items):
        loc = f"boundary_conditions[{i}]"
        if not isinstance(bc, dict):
            errors.add(loc, "expected a mapping")
            continue
        _unknown_keys(bc, BC_KEYS, loc, errors)
        kind = bc.get("type")
        if kind not in BC_TYPES:
            errors.add(f"{loc}.type", f"must be one of {sorted(BC_TYPES)}, got {kind!r}")
            continue
        spec: Dict[str, Any] = {"type": kind, "node": bc.get("node"), "label": bc.get("label", kind)}
        if kind != "distributed" and spec["node"] is None:
            errors.add(f"{loc}.node", "required node selector missing")
        for key in ("release_on", "activate_on"):
            if key in bc:
                if bc[key] not in events:
                    errors.add(f"{loc}.{key}", f"unknown schedule event {bc[key]!r}")
                spec[key] = bc[key]
        if "factor" in bc:
            if bc["factor"] not in factors:
                errors.add(f"{loc}.factor", f"unknown schedule factor {bc['factor']!r}")
            spec["factor"] = bc["factor"]
        if kind == "fix":
            for key in ("translation", "rotation"):
                dirs = bc.get(key, [])
                spec[key] = [parse_vector(d, "none", f"{loc}.{key}[{j}]", errors) for j, d in enumerate(dirs)]
        if kind in ("load", "distributed"):
            spec["force"] = parse_vector(bc.get("force", [0, 0, 0]), "force", f"{loc}.force", errors)
            spec["moment"] = parse_vector(bc.get("moment", [0, 0, 0]), "moment", f"{loc}.moment", errors)
            spec["patches"] = bc.get("patches", "all")
        if kind == "displacement":
            spec["displacement"] = parse_vector(bc.get("displacement"), "length", f"{loc}.displacement", errors)
        if kind == "rotation":
            spec["rotation"] = parse_vector(bc.get("rotation"), "angle", f"{loc}.rotation", errors)
        if kind == "contraction":
            spec["delta_r"] = parse_quantity(bc.get("delta_r"), "length", f"{loc}.delta_r", errors)
            _positive(spec["delta_r"], f"{loc}.delta_r", errors)
            spec["clamp_rotations"] = bool(bc.get("clamp_rotations", False))
            spec["mode"] = bc.get("mode", "radial")
            if spec["mode"] not in CONTRACTION_MODES:
                errors.add(f"{loc}.mode", f"must be one of {CONTRACTION_MODES}, got {spec['mode']!r}")
        out.append(spec)
    return out


def _parse_solver(block: Any, errors: _Collector) -> SolverSettings:
    if block is None:
        return SolverSettings()
    if not isinstance(block, dict):
        errors.add("solver", "expected a mapping")
        return SolverSettings()
    _unknown_keys(block, {"tol_r", "tol_d", "max_iter", "max_bisections", "equilibrate"}, "solver", errors)
    defaults = SolverSettings()
    tol_r = parse_quantity(block.get("tol_r"), "none", "solver.tol_r", errors, defaults.tol_r)
    tol_d = parse_quantity(block.get("tol_d"), "none", "solver.tol_d", errors, defaults.tol_d)
    _positive(tol_r, "solver.tol_r", errors)
    _positive(tol_d, "solver.tol_d", errors)
    return SolverSettings(tol_r=tol_r, tol_d=tol_d,
                          max_iter=parse_count(block.get("max_iter"), "solver.max_iter", errors, defaults.max_iter),
                          max_bisections=parse_count(block.get("max_bisections"), "solver.max_bisections", errors,
                                                     defaults.max_bisections),
                          equilibrate=bool(block.get("equilibrate", defaults.equilibrate)))


def parse_mapping(data: Any, name: str = "scenario") -> ScenarioConfig:
    """Validate a scenario mapping; raises ConfigError listing every violation"""
    errors = _Collector()
    if not isinstance(data, dict) or not data:
        raise ConfigError([("", f"missing required blocks: {', '.join(sorted(BLOCKS))}")])
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        errors.add("schema_version", f"unsupported version {version!r} (expected {SCHEMA_VERSION})")
    missing = sorted(BLOCKS - set(data))
    if missing:
        errors.add("", f"missing required blocks: {', '.join(missing)}")
    _unknown_keys(data, BLOCKS | OPTIONAL_BLOCKS, "scenario", errors)
    errors.check()

    geometry = _parse_geometry(data["geometry"] or {}, errors)
    material = _parse_material(data["material"] or {}, errors)

    sec = data["section"] or {}
    _unknown_keys(sec, {"diameter", "shear_correction", "patch_scale"}, "section", errors)
    section = {"diameter": parse_quantity(sec.get("diameter"), "length", "section.diameter", errors),
               "shear_correction": parse_quantity(sec.get("shear_correction", 1.0), "none",
                                                  "section.shear_correction", errors, 1.0),
               "patch_scale": dict(sec.get("patch_scale") or {})}
    _positive(section["diameter"], "section.diameter", errors)

    disc = data["discretization"] or {}
    _unknown_keys(disc, {"p", "n", "h", "total_time"}, "discretization", errors)
    discretization = {"p": parse_count(disc.get("p"), "discretization.p", errors, 6, minimum=2),
                      "n": parse_count(disc.get("n"), "discretization.n", errors, 20),
                      "h": parse_quantity(disc.get("h"), "time", "discretization.h", errors),
                      "total_time": parse_quantity(disc.get("total_time"), "time", "discretization.total_time", errors)}
    if discretization["n"] < discretization["p"] + 1:
        errors.add("discretization.n", "must be >= p + 1")
    _positive(discretization["h"], "discretization.h", errors)
    _positive(discretization["total_time"], "discretization.total_time", errors)

    schedule = _parse_schedule(data["schedule"] or {}, discretization["total_time"], errors)
    bcs = _parse_bcs(data["boundary_conditions"], schedule, errors)

    probes = []
    for i, probe in enumerate(data.get("probes") or []):
        if not isinstance(probe, dict) or "name" not in probe:
            errors.add(f"probes[{i}]", "expected a mapping with a name")
            continue
        _unknown_keys(probe, {"name", "node", "patch", "u", "type"}, f"probes[{i}]", errors)
        probes.append(dict(probe))

    out = dict(data.get("output") or {})
    _unknown_keys(out, {"dir", "snapshot_times", "samples_per_patch"}, "output", errors)
    output = {"dir": out.get("dir", "output"),
              "snapshot_times": [parse_quantity(t, "time", f"output.snapshot_times[{i}]", errors, 0.0)
                                 for i, t in enumerate(out.get("snapshot_times") or [])],
              "samples_per_patch": parse_count(out.get("samples_per_patch"), "output.samples_per_patch", errors, 50,
                                                   minimum=2)}

    solver = _parse_solver(data.get("solver"), errors)

    convergence = data.get("convergence")
    if convergence is not None:
        _unknown_keys(convergence, {"p_list", "n_list", "reference", "eval_time", "grid_points", "h"},
                      "convergence", errors)

    if schedule is not None and material is not None:
        try:
            schedule.check_temperature_range(material.wlf)
        except ValueError as exc:
            errors.add("schedule.temperature", str(exc))
    errors.check()

    config = ScenarioConfig(name=str(data.get("name", name)), geometry=geometry, material=material,
                            section=section, discretization=discretization, schedule=schedule,
                            boundary_conditions=bcs, probes=probes, output=output,
                            solver=solver,
                            convergence=convergence, metadata=dict(data.get("metadata") or {}), source=data)
    logger.info(f"✓ Scenario '{config.name}' validated ({geometry['builder']}, p={discretization['p']}, "
                f"n={discretization['n']}, h={discretization['h']})")
    return config


def parse_config(text: str) -> ScenarioConfig:
    """Parse a built-in preset name or YAML scenario text"""
    from modules.presets import PRESETS

    key = (text or "").strip()
    if key in PRESETS:
        return parse_mapping(PRESETS[key](), key)
    try:
        data = yaml.safe_load(text) if key else None
    except yaml.YAMLError as exc:
        raise ConfigError([("", f"YAML syntax error: {exc}")]) from exc
    if isinstance(data, dict) and "scenario" in data and isinstance(data["scenario"], str):
        return parse_config(data["scenario"])
    return parse_mapping(data)
