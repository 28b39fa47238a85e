"""
Simulation Module
Builds a collocation model from a validated scenario, runs the time loop
with probes and snapshots, and drives the spatial convergence study
"""

import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from modules import __version__
from modules.collocation_solver import CollocationSolver, Node, NodeCondition, PatchModel, l2_error
from modules.errors import ConfigError, GeometryError, SolverError, StepFailure
from modules.initial_geometry import InitialConfig, build_arch, build_line, frame_along_curve
from modules.material import SectionProperties, build_section_tensors
from modules.output_writer import (ProbeRecord, emit_snapshot, snapshot_name, write_convergence_csv,
                                   write_metadata, write_probe_csv)
from modules.scenario_config import ScenarioConfig
from modules.stent_builder import (StentAssembly, StentLayout, build_curved_stent, build_straight_stent,
                                   radial_targets, straightened_targets)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

# defaults in effect for every run; written to the run metadata
DESIGN_DEFAULTS = {
    "collocation_points": "Greville abscissae, end points replaced by boundary rows",
    "rotation_update": "R <- R exp(theta), control points additive",
    "initial_frame": "rotation-minimizing, d2 seeded from the reference direction",
    "time_integration": "trapezoidal, history vectors frozen within each step",
    "convergence_test": "inf-norm residual <= tol_r or inf-norm increment <= tol_d",
    "step_failure": "bisect the step up to max_bisections times, then abort",
    "neumann_sign": "R N = +n at u = 1, -n at u = 0",
    "joint_model": "rigid joints, first end of a node is the master",
    "event_timing": "conditions switch at the start of the step beginning at the event time",
    "activated_conditions": "hold the node displacement present at activation",
    "wlf_range_check": "every temperature breakpoint",
    "convergence_rates": "log(e1/e2) / log((n2 - p) / (n1 - p))",
    "stent_wires": "plain B-spline least-squares fits; arcs are exact rational patches",
}


@dataclass
class Model:
    """Solver plus the lookup tables needed to resolve selectors and probes"""

    solver: CollocationSolver
    configs: List[InitialConfig]
    assembly: Optional[StentAssembly] = None
    named: Dict[str, int] = field(default_factory=dict)
    initial_radii: Optional[np.ndarray] = None


@dataclass
class RunResult:
    status: int
    records: List[ProbeRecord]
    files: List[Path]
    error: Optional[str] = None


def _factor(config: ScenarioConfig, name: Optional[str]) -> Callable[[float], float]:
    if name is None:
        return lambda t: 1.0
    f = config.schedule.factors[name]
    return lambda t: f(t)


def _geometry(config: ScenarioConfig) -> Tuple[List[InitialConfig], List[str], Optional[StentAssembly]]:
    geo = config.geometry
    p, n = config.discretization["p"], config.discretization["n"]
    builder = geo["builder"]
    if builder == "arch":
        return [build_arch(geo["radius"], geo["sweep"], p, n, geo.get("reference"))], ["beam"], None
    if builder == "line":
        cfg = build_line(geo["length"], geo["direction"], p, n, geo["origin"], geo.get("reference"))
        return [cfg], ["beam"], None

    layout = StentLayout(radius=geo["radius"], half_height=geo["half_height"], spacing=geo["spacing"],
                         crowns=geo["crowns"], wires=geo["wires"],
                         bridge_angles_deg=geo.get("bridge_angles_deg"),
                         odd_bridge_angles_deg=geo.get("odd_bridge_angles_deg"),
                         bridge_count=geo["bridge_count"], bridge_height=geo.get("bridge_height"),
                         axis_radius=geo.get("axis_radius"), axis_center=geo.get("axis_center"),
                         axis_sweep=geo.get("axis_sweep"), degree=p, control_points=n)
    if builder == "straight_stent":
        assembly = build_straight_stent(layout, quarter=geo["symmetry"] == "quarter")
    else:
        assembly = build_curved_stent(layout, half=geo["symmetry"] == "half")
    configs = [frame_along_curve(patch) for patch in assembly.patches]
    return configs, list(assembly.roles), assembly


def _nodes(configs: List[InitialConfig], assembly: Optional[StentAssembly]) -> Tuple[List[Node], Dict[str, int]]:
    if assembly is None:
        ctrl = configs[0].patch.control_points
        nodes = [Node(0, [(0, 0)], ctrl[0].copy(), tags={"name": "start"}),
                 Node(1, [(0, 1)], ctrl[-1].copy(), tags={"name": "end"})]
        return nodes, {"start": 0, "end": 1}
    nodes = [Node(a.id, list(a.ends), a.position.copy(),
                  tags={"crown": a.crown, "angle": a.angle, "interface": a.is_interface,
                        "symmetry_normals": list(a.symmetry_normals)})
             for a in assembly.nodes]
    return nodes, {}


def resolve_selector(selector: Any, nodes: List[Node], named: Dict[str, int],
                     assembly: Optional[StentAssembly], loc: str) -> List[Node]:
    """Node selector -> nodes; raises ConfigError when the selection is empty or unknown"""
    by_id = {node.id: node for node in nodes}
    if isinstance(selector, str):
        if selector in named:
            return [by_id[named[selector]]]
        if selector in ("interfaces", "symmetry") and assembly is not None:
            key = "interface" if selector == "interfaces" else "symmetry_normals"
            picked = [node for node in nodes if node.tags.get(key)]
            if picked:
                return picked
        raise ConfigError([(loc, f"node selector '{selector}' matches no node of this geometry")])
    if isinstance(selector, dict):
        if "id" in selector and selector["id"] in by_id:
            return [by_id[selector["id"]]]
        if {"crown", "angle_deg"} <= set(selector) and assembly is not None:
            try:
                found = assembly.find_node(int(selector["crown"]), float(selector["angle_deg"]))
            except GeometryError as exc:
                raise ConfigError([(loc, str(exc))]) from exc
            return [by_id[found.id]]
    raise ConfigError([(loc, f"invalid node selector {selector!r}")])


def _conditions(config: ScenarioConfig, nodes: List[Node], named: Dict[str, int],
                assembly: Optional[StentAssembly], patch_count: int) -> Dict[int, List]:
    """Attach node conditions; returns distributed loads per patch index"""
    distributed: Dict[int, List] = {}
    for i, bc in enumerate(config.boundary_conditions):
        loc = f"boundary_conditions[{i}]"
        kind = bc["type"]
        f = _factor(config, bc.get("factor"))
        switches = {"release_on": bc.get("release_on"), "activate_on": bc.get("activate_on"),
                    "hold_on_activate": bc.get("activate_on") is not None, "label": bc["label"]}

        if kind == "distributed":
            targets = range(patch_count) if bc["patches"] == "all" else bc["patches"]
            for k in targets:
                if not 0 <= int(k) < patch_count:
                    raise ConfigError([(f"{loc}.patches", f"patch {k} does not exist")])
                distributed.setdefault(int(k), []).append((f, bc["force"], bc["moment"]))
            continue

        selected = resolve_selector(bc["node"], nodes, named, assembly, f"{loc}.node")
        if kind == "contraction":
            if assembly is None:
                raise ConfigError([(f"{loc}.type", "contraction needs a stent geometry")])
            if bc["mode"] == "radial":
                targets = radial_targets(assembly, bc["delta_r"])
            else:
                if not assembly.layout.curved:
                    raise ConfigError([(f"{loc}.mode", "straighten needs a curved stent")])
                targets = straightened_targets(assembly, bc["delta_r"])
        for node in selected:
            if kind == "clamp":
                cond = NodeCondition.clamp(**switches)
            elif kind == "fix":
                cond = NodeCondition(np.array(bc["translation"]).reshape(-1, 3),
                                     fixed_rotation=np.array(bc["rotation"]).reshape(-1, 3), **switches)
            elif kind == "load":
                cond = NodeCondition(force=lambda t, v=bc["force"], f=f: f(t) * v,
                                     moment=lambda t, v=bc["moment"], f=f: f(t) * v, **switches)
            elif kind == "displacement":
                cond = NodeCondition(np.eye(3), displacement=lambda t, v=bc["displacement"], f=f: f(t) * v,
                                     **switches)
            elif kind == "rotation":
                cond = NodeCondition(fixed_rotation=np.eye(3), rotation=lambda t, v=bc["rotation"], f=f: f(t) * v,
                                     **switches)
            elif kind == "symmetry":
                for normal in node.tags.get("symmetry_normals", []):
                    node.conditions.append(NodeCondition.symmetry(normal, label=bc["label"]))
                continue
            else:
                if node.id not in targets:
                    raise ConfigError([(f"{loc}.node", f"node {node.id} has no contraction target")])
                cond = NodeCondition(np.eye(3), displacement=lambda t, v=targets[node.id], f=f: f(t) * v,
                                     fixed_rotation=np.eye(3) if bc["clamp_rotations"] else np.zeros((0, 3)),
                                     **switches)
            node.conditions.append(cond)
    return distributed


def _summed(loads: List, which: int) -> Optional[Callable[[float], np.ndarray]]:
    if not loads:
        return None
    return lambda t: sum(f(t) * vectors[which] for f, *vectors in loads)


def build_model(config: ScenarioConfig) -> Model:
    """Geometry, stiffness, nodes and conditions of a scenario, ready to step"""
    configs, roles, assembly = _geometry(config)
    nodes, named = _nodes(configs, assembly)
    distributed = _conditions(config, nodes, named, assembly, len(configs))

    section = SectionProperties.circular(config.section["diameter"], config.section["shear_correction"])
    tensors = build_section_tensors(config.material, section)
    scales = config.section["patch_scale"]
    models = []
    for k, (cfg, role) in enumerate(zip(configs, roles)):
        loads = distributed.get(k, [])
        models.append(PatchModel(cfg, tensors.scaled(float(scales.get(role, 1.0))), cfg.patch.name,
                                 _summed(loads, 0), _summed(loads, 1)))
    solver = CollocationSolver(models, nodes, config.material, config.schedule, config.solver)
    model = Model(solver, configs, assembly, named)
    if assembly is not None:
        model.initial_radii = _node_radii(model)
    return model


# ------------------------------------------------------------------ probes

def _mirror_images(normals: Sequence[np.ndarray]) -> List[np.ndarray]:
    reflections = [np.eye(3) - 2.0 * np.outer(n, n) / (n @ n) for n in normals]
    images = []
    for r in range(len(reflections) + 1):
        for combo in itertools.combinations(reflections, r):
            M = np.eye(3)
            for S in combo:
                M = S @ M
            images.append(M)
    return images


def _symmetry_normals(assembly: StentAssembly) -> List[np.ndarray]:
    if assembly.symmetry == "quarter":
        return [np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])]
    if assembly.symmetry == "half":
        return [np.array([0.0, 1.0, 0.0])]
    return []


def _interface_nodes(model: Model) -> List[Node]:
    return [node for node in model.solver.nodes if node.tags.get("interface") and node.tags.get("crown") is not None]


def _node_radii(model: Model) -> np.ndarray:
    """Distance of each crown interface node from its crown's current axis.

    The axis passes through the centroid of the crown nodes completed by
    their mirror images and points along the direction of least spread.
    """
    nodes = _interface_nodes(model)
    positions = np.array([model.solver.node_displacement(n) + n.position for n in nodes])
    crowns = np.array([n.tags["crown"] for n in nodes])
    images = _mirror_images(_symmetry_normals(model.assembly))
    radii = np.zeros(len(nodes))
    for crown in np.unique(crowns):
        mask = crowns == crown
        pts = positions[mask]
        cloud = np.vstack([pts @ M.T for M in images])
        center = cloud.mean(axis=0)
        _, vecs = np.linalg.eigh(np.cov((cloud - center).T))
        axis = vecs[:, 0]
        rel = pts - center
        radii[mask] = np.linalg.norm(rel - np.outer(rel @ axis, axis), axis=1)
    return radii


def probe_values(model: Model, config: ScenarioConfig) -> Dict[str, np.ndarray]:
    solver = model.solver
    values = {}
    for i, probe in enumerate(config.probes):
        kind = probe.get("type", "node")
        if kind == "radial_contraction":
            if model.assembly is None:
                raise ConfigError([(f"probes[{i}].type", "radial_contraction needs a stent geometry")])
            values[probe["name"]] = np.array([float(np.mean(model.initial_radii - _node_radii(model)))])
        elif "patch" in probe:
            values[probe["name"]] = solver.displacement(int(probe["patch"]), float(probe.get("u", 1.0)))
        else:
            node = resolve_selector(probe["node"], solver.nodes, model.named, model.assembly,
                                    f"probes[{i}].node")[0]
            values[probe["name"]] = solver.node_displacement(node).copy()
    return values


def _record(model: Model, config: ScenarioConfig, iterations: int = 0) -> ProbeRecord:
    t = model.solver.time
    return ProbeRecord(t, config.schedule.temperature(t), probe_values(model, config),
                       {name: f(t) for name, f in config.schedule.factors.items()}, iterations)


# ------------------------------------------------------------------ running

def time_grid(config: ScenarioConfig, extra: Sequence[float] = (), until: Optional[float] = None) -> np.ndarray:
    h = config.discretization["h"]
    grid = config.schedule.time_grid(h)
    end = config.schedule.total_time if until is None else until
    points = [t for t in extra if 0.0 < t < end]
    grid = np.unique(np.concatenate([grid[grid <= end + 1e-12], points, [end]]))
    keep = np.concatenate([[True], np.diff(grid) > 1e-9 * h])
    return grid[keep]


def _metadata(config: ScenarioConfig, model: Optional[Model], status: str, **extra) -> Dict[str, Any]:
    material = config.material
    meta = {
        "scenario": config.name,
        "version": __version__,
        "status": status,
        "geometry": dict(config.geometry),
        "discretization": dict(config.discretization),
        "solver": asdict(config.solver),
        "material": {"name": material.name, "E_inf": material.E_inf, "branches": len(material.branches),
                     "poisson": material.nu, "wlf": asdict(material.wlf)},
        "section": {"diameter": config.section["diameter"],
                    "shear_correction": config.section["shear_correction"]},
        "design_defaults": dict(DESIGN_DEFAULTS),
        "scenario_decisions": dict(config.metadata),
    }
    if model is not None:
        meta["model"] = {"patches": len(model.solver.patches), "nodes": len(model.solver.nodes),
                         "unknowns": model.solver.size}
    meta.update(extra)
    return meta


def run_scenario(config: ScenarioConfig, out_dir: Optional[Path] = None,
                 snapshot_times: Optional[Sequence[float]] = None) -> RunResult:
    """Run a scenario to its end time; writes probes.csv, snapshots and metadata.yaml"""
    out = Path(out_dir or config.output["dir"])
    out.mkdir(parents=True, exist_ok=True)
    snaps = sorted(config.output["snapshot_times"] if snapshot_times is None else snapshot_times)
    samples = config.output["samples_per_patch"]
    started = time.time()

    logger.info(f"🔄 Building model for scenario '{config.name}'")
    model = build_model(config)
    solver = model.solver
    grid = time_grid(config, snaps)
    files: List[Path] = []
    records = [_record(model, config)]

    def snapshot_due(t):
        return any(abs(t - s) <= 1e-9 for s in snaps)

    if snapshot_due(0.0):
        files.append(emit_snapshot([solver.current_patch(k) for k in range(len(solver.patches))],
                                   out / snapshot_name(0.0), samples))
    steps = newton = 0
    try:
        for t_next in grid[1:]:
            step_records = solver.advance_step(float(t_next))
            steps += len(step_records)
            newton += sum(r.iterations for r in step_records)
            records.append(_record(model, config, step_records[-1].iterations))
            if snapshot_due(t_next):
                files.append(emit_snapshot([solver.current_patch(k) for k in range(len(solver.patches))],
                                           out / snapshot_name(float(t_next)), samples))
    except SolverError as exc:
        logger.error(f"✗ Scenario '{config.name}' failed at t={solver.time:.5f}: {exc}")
        files.append(emit_snapshot([solver.current_patch(k) for k in range(len(solver.patches))],
                                   out / f"last_good_{snapshot_name(solver.time)}", samples))
        files.append(write_probe_csv(records, out / "probes.csv"))
        history = exc.residual_history if isinstance(exc, StepFailure) else []
        files.append(write_metadata(_metadata(config, model, "failed", error=str(exc),
                                              last_good_time=solver.time, residual_history=history,
                                              steps=steps, newton_iterations=newton),
                                    out / "metadata.yaml"))
        return RunResult(EXIT_SOLVER, records, files, str(exc))

    files.append(write_probe_csv(records, out / "probes.csv"))
    files.append(write_metadata(_metadata(config, model, "ok", steps=steps, newton_iterations=newton,
                                          interface_imbalance=solver.interface_imbalance(),
                                          wall_time_s=round(time.time() - started, 3)),
                                out / "metadata.yaml"))
    logger.info(f"✓ Scenario '{config.name}' finished: {steps} steps, {newton} Newton iterations")
    return RunResult(EXIT_OK, records, files)


# -------------------------------------------------------------- convergence

def with_discretization(config: ScenarioConfig, **changes) -> ScenarioConfig:
    disc = dict(config.discretization)
    disc.update({k: v for k, v in changes.items() if v is not None})
    return replace(config, discretization=disc)


def sample_displacements(model: Model, grid_points: int) -> np.ndarray:
    u = np.linspace(0.0, 1.0, grid_points)
    return np.array([[model.solver.displacement(k, x) for x in u] for k in range(len(model.solver.patches))])


def displacement_at(config: ScenarioConfig, eval_time: float, grid_points: int) -> np.ndarray:
    """Displacement of every patch on a uniform parameter grid at eval_time"""
    model = build_model(config)
    for t_next in time_grid(config, until=eval_time)[1:]:
        model.solver.advance_step(float(t_next))
    return sample_displacements(model, grid_points)


@dataclass
class ConvergenceResult:
    rows: List[Dict[str, Any]]
    reference: Dict[str, int]
    eval_time: float

    def errors(self, p: int) -> List[float]:
        return [r["err_l2"] for r in self.rows if r["p"] == p]


def observed_rates(rows: List[Dict[str, Any]]):
    """Fill row['rate'] from successive n of the same p"""
    for p in sorted({r["p"] for r in rows}):
        prev = None
        for row in sorted((r for r in rows if r["p"] == p), key=lambda r: r["n"]):
            row["rate"] = None
            if prev is not None and np.isfinite(row["err_l2"]) and np.isfinite(prev["err_l2"]) \
                    and row["err_l2"] > 0.0 and prev["err_l2"] > 0.0:
                row["rate"] = float(np.log(prev["err_l2"] / row["err_l2"])
                                    / np.log((row["n"] - p) / (prev["n"] - p)))
            prev = row


def convergence_study(config: ScenarioConfig, p_list: Sequence[int], n_list: Sequence[int],
                      reference: Dict[str, int], eval_time: float = 3.0, grid_points: int = 9,
                      h: Optional[float] = None, workers: int = 4,
                      out_dir: Optional[Path] = None) -> ConvergenceResult:
    """Relative L2 displacement error of each (p, n) against a fine reference run"""
    logger.info(f"📥 Reference run p={reference['p']}, n={reference['n']} at t={eval_time}")
    ref_config = with_discretization(config, p=reference["p"], n=reference["n"], h=h)
    ref = displacement_at(ref_config, eval_time, grid_points)

    cells = [(p, n) for p in p_list for n in n_list if n >= p + 1]
    rows: List[Dict[str, Any]] = []

    def run_cell(p, n):
        if p == reference["p"] and n == reference["n"]:
            return ref
        return displacement_at(with_discretization(config, p=p, n=n, h=h), eval_time, grid_points)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        futures = {executor.submit(run_cell, p, n): (p, n) for p, n in cells}
        for future in as_completed(futures):
            p, n = futures[future]
            try:
                err = l2_error(future.result(), ref)
                logger.info(f"  ✓ p={p} n={n}: err={err:.3e}")
            except SolverError as exc:
                logger.warning(f"  ✗ p={p} n={n}: {exc}")
                err = float("nan")
            rows.append({"p": p, "n": n, "err_l2": err})

    rows.sort(key=lambda r: (r["p"], r["n"]))
    observed_rates(rows)
    if out_dir is not None:
        out = Path(out_dir)
        write_convergence_csv(rows, out / "convergence.csv")
        write_metadata(_metadata(config, None, "ok", convergence={"reference": dict(reference),
                                                                  "eval_time": eval_time,
                                                                  "grid_points": grid_points, "h": h}),
                       out / "metadata.yaml")
    return ConvergenceResult(rows, dict(reference), eval_time)
