"""
Presets Module
Built-in scenarios: circular arch, cantilever morphing cycle, straight stent
radial morphing and curved stent straightening, as raw scenario mappings
"""

import logging
from typing import Any, Callable, Dict

logger = logging.getLogger(__name__)

# Reference parameter values of every preset, in SI units
PRESET_TABLE: Dict[str, Dict[str, Any]] = {
    "arch-90": {
        "radius": 1.0, "sweep_deg": 90.0, "diameter": 0.05, "moment": (0.0, 25.0, 25.0),
        "T_start": 31.5, "T_end": 90.0, "total_time": 5.0, "h": 1e-3, "wlf": "row1", "poisson": 0.33,
    },
    "cantilever-morph": {
        "length": 1.0, "diameter": 0.05, "force": (0.0, 0.0, 50.0), "moment": (0.0, 0.0, 10.0),
        "loaded_at": 0.5, "unloaded_at": 1.0, "recovery_from": 1.625, "total_time": 3.0, "h": 1e-3,
        "snapshots": (0.5, 1.5, 2.5),
    },
    "stent-straight-quarter": {
        "radius": 20e-3, "half_height": 5e-3, "spacing": 15e-3, "diameter": 0.6e-3, "crowns": 6, "wires": 12,
        "p": 6, "n": 20, "delta_r": 15e-3, "ramp_end": 1.0, "release": 1.75, "T_cold": 45.0,
        "total_time": 3.25, "h": 2.5e-3,
    },
    "stent-curved-half": {
        "radius": 20e-3, "half_height": 5e-3, "diameter": 0.6e-3, "crowns": 4, "wires": 12,
        "axis_radius": 100e-3, "axis_center": (0.0, 0.0, -5e-3), "axis_sweep_deg": 45.0,
        "p": 6, "n": 81, "delta_r": 5e-3, "ramp_end": 1.5, "release": 2.25, "T_cold": 45.0,
        "total_time": 4.0, "h": 1e-3,
    },
}

_MATERIAL = {"name": "PLA-vanManen", "wlf": "row1", "poisson": 0.33}


def arch_90(p: int = 6, n: int = 20, h: float = 1e-3, total_time: float = 5.0) -> Dict[str, Any]:
    """Clamped quarter-circle arch loaded by tip couples while heated from 31.5 to 90 degC"""
    return {
        "schema_version": 1,
        "name": "arch-90",
        "geometry": {"builder": "arch", "radius": "1 m", "sweep": "90 deg"},
        "material": dict(_MATERIAL),
        "section": {"diameter": "0.05 m"},
        "discretization": {"p": p, "n": n, "h": h, "total_time": total_time},
        "schedule": {
            "temperature": [[0.0, "31.5 degC"], [5.0, "90 degC"]],
            "factors": {"load": [[0.0, 0.0], [5.0, 1.0]]},
        },
        "boundary_conditions": [
            {"type": "clamp", "node": "start"},
            {"type": "load", "node": "end", "moment": [0.0, "25 N*m", "25 N*m"], "factor": "load"},
        ],
        "probes": [{"name": "tip", "node": "end"}],
        "output": {"snapshot_times": [1.0, 2.0, 3.0, 4.0, 5.0], "samples_per_patch": 50},
        "convergence": {
            "p_list": [2, 3, 4, 5, 6, 7, 8],
            "n_list": [10, 12, 16, 20, 24, 32],
            "reference": {"p": 8, "n": 150},
            "eval_time": 3.0,
            "grid_points": 9,
            "h": 1e-2,
        },
        "metadata": {
            "tip_couple": "25 N*m ramp applied to each of M2 and M3",
            "elements_for_rates": "n - p knot spans",
        },
    }


def cantilever_morph(p: int = 4, n: int = 20, h: float = 1e-3, total_time: float = 3.0) -> Dict[str, Any]:
    """Hot loading, cooling under load, unloading cold, reheating to recover"""
    return {
        "schema_version": 1,
        "name": "cantilever-morph",
        "geometry": {"builder": "line", "length": "1 m", "direction": [0, 1, 0]},
        "material": dict(_MATERIAL),
        "section": {"diameter": "0.05 m"},
        "discretization": {"p": p, "n": n, "h": h, "total_time": total_time},
        "schedule": {
            "temperature": [[0.0, "90 degC"], [0.5, "90 degC"], [0.875, "31.5 degC"], [1.625, "31.5 degC"],
                            [2.5, "90 degC"], [3.0, "90 degC"]],
            "factors": {"load": [[0.0, 0.0], [0.5, 1.0], [0.875, 1.0], [1.0, 0.0]]},
        },
        "boundary_conditions": [
            {"type": "clamp", "node": "start"},
            {"type": "load", "node": "end", "force": [0.0, 0.0, "50 N"], "moment": [0.0, 0.0, "10 N*m"],
             "factor": "load"},
        ],
        "probes": [{"name": "tip", "node": "end"}],
        "output": {"snapshot_times": [0.5, 1.5, 2.5], "samples_per_patch": 50},
        "metadata": {
            "tip_couple_axis": "M3 (about x3), giving out-of-plane bending combined with F3",
            "section_diameter": "0.05 m, same section as the arch",
            "discretization": "p=4, n=20 (assumed)",
        },
    }


def _stent_bcs(anchors):
    bcs = [
        {"type": "symmetry", "node": "symmetry"},
        {"type": "contraction", "node": "interfaces", "factor": "ramp", "release_on": "release"},
    ]
    for selector, direction in anchors:
        bcs.append({"type": "fix", "node": selector, "translation": [direction], "activate_on": "release",
                    "label": "anchor"})
    return bcs


def stent_straight_quarter(crowns: int = 6, p: int = 6, n: int = 20, h: float = 2.5e-3,
                           total_time: float = 3.25) -> Dict[str, Any]:
    """Quarter model of the straight device under radial contraction, release and reheating"""
    bcs = _stent_bcs([({"crown": 0, "angle_deg": 0.0}, [1, 0, 0])])
    bcs[1].update({"delta_r": "15 mm", "mode": "radial"})
    return {
        "schema_version": 1,
        "name": "stent-straight-quarter",
        "geometry": {
            "builder": "straight_stent", "radius": "20 mm", "half_height": "5 mm", "spacing": "15 mm",
            "crowns": crowns, "wires": 12, "bridge_angles": ["60 deg", "120 deg", "240 deg", "300 deg"],
            "symmetry": "quarter",
        },
        "material": dict(_MATERIAL),
        "section": {"diameter": "0.6 mm"},
        "discretization": {"p": p, "n": n, "h": h, "total_time": total_time},
        "schedule": {
            "temperature": [[0.0, "90 degC"], [1.0, "90 degC"], [1.75, "45 degC"], [2.0, "45 degC"],
                            [3.0, "90 degC"], [3.25, "90 degC"]],
            "factors": {"ramp": [[0.0, 0.0], [1.0, 1.0]]},
            "events": [{"name": "release", "time": 1.75}],
        },
        "boundary_conditions": bcs,
        "probes": [
            {"name": "contraction", "type": "radial_contraction"},
            {"name": "anchor", "node": {"crown": 0, "angle_deg": 0.0}},
        ],
        "output": {"snapshot_times": [0.0, 0.5, 1.75, 1.7525, 2.6, 3.25], "samples_per_patch": 20},
        "metadata": {
            "crown_phase": "h_c sin(n_w theta / 2), clocked by pi / n_w so a crest sits on the x2 axis",
            "odd_pair_bridges": "requested angles + 90 deg",
            "release_anchor": "crown 0 node at 0 deg held along x1 from the release on",
        },
    }


def stent_curved_half(crowns: int = 4, p: int = 6, n: int = 81, h: float = 1e-3,
                      total_time: float = 4.0) -> Dict[str, Any]:
    """Half model of the curved device: straightened and compacted, released, recovered"""
    bcs = _stent_bcs([({"crown": 0, "angle_deg": 0.0}, [0, 0, 1]),
                      ({"crown": 0, "angle_deg": 180.0}, [0, 0, 1]),
                      ({"crown": 0, "angle_deg": 90.0}, [1, 0, 0])])
    bcs[1].update({"delta_r": "5 mm", "mode": "straighten"})
    return {
        "schema_version": 1,
        "name": "stent-curved-half",
        "geometry": {
            "builder": "curved_stent", "radius": "20 mm", "half_height": "5 mm", "spacing": "26.18 mm",
            "crowns": crowns, "wires": 12, "bridge_angles": ["60 deg", "300 deg"],
            "odd_bridge_angles": ["30 deg", "330 deg"], "axis_radius": "100 mm",
            "axis_center": [0.0, 0.0, "-5 mm"], "axis_sweep": "45 deg", "symmetry": "half",
        },
        "material": dict(_MATERIAL),
        "section": {"diameter": "0.6 mm"},
        "discretization": {"p": p, "n": n, "h": h, "total_time": total_time},
        "schedule": {
            "temperature": [[0.0, "90 degC"], [1.5, "90 degC"], [2.25, "45 degC"], [2.5, "45 degC"],
                            [3.5, "90 degC"], [4.0, "90 degC"]],
            "factors": {"ramp": [[0.0, 0.0], [1.5, 1.0]]},
            "events": [{"name": "release", "time": 2.25}],
        },
        "boundary_conditions": bcs,
        "probes": [
            {"name": "contraction", "type": "radial_contraction"},
            {"name": "anchor", "node": {"crown": 0, "angle_deg": 90.0}},
        ],
        "output": {"snapshot_times": [0.0, 0.5, 1.5, 2.25, 3.0, 3.1, 3.4, 4.0], "samples_per_patch": 20},
        "metadata": {
            "temporary_radius_reduction": "5 mm (assumed)",
            "bridges": "sinusoidal, height h_c/2, at 60/300 deg (even pairs) and 30/330 deg (odd pairs)",
            "release_anchor": "crown 0 nodes at 0 and 180 deg held along x3, at 90 deg along x1",
        },
    }


PRESETS: Dict[str, Callable[..., Dict[str, Any]]] = {
    "arch-90": arch_90,
    "cantilever-morph": cantilever_morph,
    "stent-straight-quarter": stent_straight_quarter,
    "stent-curved-half": stent_curved_half,
}

LONG_RUNNING = {"stent-straight-quarter", "stent-curved-half"}


def preset(name: str, **overrides) -> Dict[str, Any]:
    """Raw scenario mapping of a built-in preset, with keyword overrides (crowns, p, n, h, total_time)"""
    if name not in PRESETS:
        raise KeyError(f"unknown preset '{name}' (available: {', '.join(PRESETS)})")
    logger.debug(f"Loading preset {name} {overrides or ''}")
    return PRESETS[name](**overrides)
