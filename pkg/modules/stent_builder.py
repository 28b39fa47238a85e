"""
Stent Builder Module
Parametric stent geometry: sinusoidal crowns split into wire patches,
straight or sinusoidal bridges, straight and curved device assemblies,
symmetry-reduced models and interface-node tables
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import KDTree

from modules.errors import GeometryError, InvalidArgumentError
from modules.initial_geometry import line_patch
from modules.splines import SplinePatch, curve_eval, fit_points

logger = logging.getLogger(__name__)

End = Tuple[int, int]

# local crown axes (x, y, z) -> global for the straight device: x -> e2, y -> e3, z -> e1
STRAIGHT_FRAME = np.array([[0.0, 0.0, 1.0],
                           [1.0, 0.0, 0.0],
                           [0.0, 1.0, 0.0]])


@dataclass
class StentLayout:
    """Crown/bridge parameters (SI units); the optional axis makes the device curved"""

    radius: float
    half_height: float
    spacing: float
    crowns: int
    wires: int = 12
    bridge_angles_deg: Optional[List[float]] = None
    odd_bridge_angles_deg: Optional[List[float]] = None
    bridge_count: int = 3
    bridge_height: Optional[float] = None
    axis_radius: Optional[float] = None
    axis_center: Optional[Sequence[float]] = None
    axis_sweep: Optional[float] = None
    degree: int = 6
    control_points: int = 20

    def __post_init__(self):
        for key in ("radius", "half_height", "spacing"):
            if getattr(self, key) <= 0.0:
                raise InvalidArgumentError(f"stent layout: {key} must be positive")
        if self.crowns < 1:
            raise InvalidArgumentError("stent layout: need at least one crown")
        if self.wires < 2 or self.wires % 2:
            raise InvalidArgumentError(f"stent layout: wire count must be even, got {self.wires}")
        if self.bridge_height is None:
            self.bridge_height = 0.5 * self.half_height
        if self.curved and (self.axis_radius <= 0.0 or not 0.0 < self.axis_sweep < np.pi):
            raise InvalidArgumentError("stent layout: curved axis needs radius > 0 and 0 < sweep < pi")

    @property
    def curved(self) -> bool:
        return self.axis_radius is not None

    @property
    def pair_angles(self) -> np.ndarray:
        """Requested bridge angles of the first crown pair, radians"""
        if self.bridge_angles_deg is not None:
            return np.radians(np.asarray(self.bridge_angles_deg, dtype=float))
        return 2.0 * np.pi * np.arange(self.bridge_count) / self.bridge_count

    def angles_for_pair(self, pair: int) -> np.ndarray:
        """Even pairs use pair_angles; odd pairs their own list or a quarter turn further"""
        if pair % 2 == 0:
            return self.pair_angles
        if self.odd_bridge_angles_deg is not None:
            return np.radians(np.asarray(self.odd_bridge_angles_deg, dtype=float))
        return self.pair_angles + 0.5 * np.pi


@dataclass
class AssemblyNode:
    id: int
    position: np.ndarray
    ends: List[End]
    crown: Optional[int] = None
    angle: float = 0.0
    axial: float = 0.0
    symmetry_normals: List[np.ndarray] = field(default_factory=list)

    @property
    def is_interface(self) -> bool:
        return len(self.ends) > 1 or bool(self.symmetry_normals)


@dataclass
class StentAssembly:
    layout: StentLayout
    patches: List[SplinePatch]
    roles: List[str]
    patch_crowns: List[Optional[int]]
    crown_frames: List[Tuple[np.ndarray, np.ndarray]]
    nodes: List[AssemblyNode] = field(default_factory=list)
    bridges: List[Tuple[int, int, float]] = field(default_factory=list)
    symmetry: str = "full"

    def interface_table(self) -> Dict[End, List[End]]:
        """Every patch end mapped to the other ends sharing its position"""
        table = {}
        for node in self.nodes:
            for end in node.ends:
                table[end] = [other for other in node.ends if other != end]
        return table

    def node_positions(self) -> np.ndarray:
        return np.array([n.position for n in self.nodes])

    def find_node(self, crown: int, angle_deg: float, tol_deg: float = 1e-6) -> AssemblyNode:
        target = np.radians(angle_deg) % (2.0 * np.pi)
        for node in self.nodes:
            diff = abs((node.angle - target + np.pi) % (2.0 * np.pi) - np.pi)
            if node.crown == crown and diff <= np.radians(tol_deg):
                return node
        raise GeometryError(f"no node on crown {crown} at {angle_deg} deg")


def crown_point(layout: StentLayout, theta: np.ndarray, clock: float = 0.0) -> np.ndarray:
    """Crown centroid [R cos t, R sin t, h_c sin(n_w (t + clock) / 2)] in crown-local coordinates.

    With clock = 0 the wave starts from a zero crossing at [R, 0, 0]; a
    clock of pi / n_w puts a crest there instead.
    """
    theta = np.asarray(theta, dtype=float)
    axial = layout.half_height * np.sin(0.5 * layout.wires * (theta + clock))
    return np.stack([layout.radius * np.cos(theta), layout.radius * np.sin(theta), axial], axis=-1)


def build_crown(layout: StentLayout, samples: Optional[int] = None, clock: float = 0.0) -> List[SplinePatch]:
    """Crown split into 2 * n_w patches, each running between a zero crossing and an extreme"""
    count = 2 * layout.wires
    breaks = np.pi * np.arange(count + 1) / layout.wires - clock
    samples = samples or max(4 * layout.control_points, 40)
    patches = []
    for q in range(count):
        theta = np.linspace(breaks[q], breaks[q + 1], samples)
        patch, _ = fit_points(crown_point(layout, theta, clock), layout.control_points, layout.degree,
                              f"wire{q}")
        patches.append(patch)
    # close the loop exactly
    patches[-1].control_points[-1] = patches[0].control_points[0]
    return patches


def _transform(patch: SplinePatch, rotation: np.ndarray, offset: np.ndarray, name: str) -> SplinePatch:
    moved = patch.with_control_points(patch.control_points @ rotation.T + offset)
    moved.name = name
    return moved


def _rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _crown_coordinates(position: np.ndarray, frame: Tuple[np.ndarray, np.ndarray]) -> Tuple[float, float, float]:
    center, axes = frame
    local = axes.T @ (position - center)
    return float(np.arctan2(local[1], local[0]) % (2.0 * np.pi)), float(local[2]), float(np.hypot(local[0], local[1]))


def _cluster_nodes(assembly: StentAssembly, tol: float):
    ends = [(k, e) for k in range(len(assembly.patches)) for e in (0, 1)]
    points = np.array([assembly.patches[k].control_points[0 if e == 0 else -1] for k, e in ends])
    parent = list(range(len(ends)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in sorted(KDTree(points).query_pairs(tol)):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups: Dict[int, List[int]] = {}
    for i in range(len(ends)):
        groups.setdefault(find(i), []).append(i)

    nodes = []
    for node_id, members in enumerate(sorted(groups.values(), key=min)):
        node_ends = [ends[i] for i in members]
        # snap coincident ends onto the first one
        anchor = points[members[0]]
        for k, e in node_ends:
            assembly.patches[k].control_points[0 if e == 0 else -1] = anchor
        crown = next((assembly.patch_crowns[k] for k, _ in node_ends
                      if assembly.roles[k] == "wire"), None)
        angle = axial = 0.0
        if crown is not None:
            angle, axial, _ = _crown_coordinates(anchor, assembly.crown_frames[crown])
        nodes.append(AssemblyNode(node_id, anchor.copy(), node_ends, crown, angle, axial))
    assembly.nodes = nodes


def _bridge_endpoints(assembly: StentAssembly, pair: int, angle: float) -> Tuple[AssemblyNode, AssemblyNode, float]:
    """Crest of crown `pair` facing the next crown and the matching trough of crown pair+1"""
    h = assembly.layout.half_height
    tol = 1e-9 * max(h, assembly.layout.radius)
    crests = [n for n in assembly.nodes if n.crown == pair and abs(n.axial - h) <= tol]
    troughs = [n for n in assembly.nodes if n.crown == pair + 1 and abs(n.axial + h) <= tol]

    def gap(a, b):
        return abs((a - b + np.pi) % (2.0 * np.pi) - np.pi)

    matches = []
    for crest in crests:
        partner = next((t for t in troughs if gap(t.angle, crest.angle) <= 1e-7), None)
        if partner is not None:
            matches.append((crest, partner))
    if not matches:
        raise GeometryError(f"crowns {pair} and {pair + 1}: no matching crest/trough pairs")
    target = angle % (2.0 * np.pi)
    crest, trough = min(matches, key=lambda m: (gap(m[0].angle, target), m[0].angle))
    return crest, trough, crest.angle


def _bridge_patch(assembly: StentAssembly, start: np.ndarray, end: np.ndarray, pair: int, name: str) -> SplinePatch:
    layout = assembly.layout
    if not layout.curved:
        return line_patch(start, end, layout.degree, layout.control_points, name)
    chord = end - start
    center = assembly.crown_frames[pair][0]
    radial = start - center
    radial = radial - (radial @ chord) / (chord @ chord) * chord
    radial /= np.linalg.norm(radial)
    xi = np.linspace(0.0, 1.0, max(4 * layout.control_points, 40))
    points = start + np.outer(xi, chord) + layout.bridge_height * np.outer(np.sin(2.0 * np.pi * xi), radial)
    points[0], points[-1] = start, end
    patch, _ = fit_points(points, layout.control_points, layout.degree, name)
    return patch


def _add_bridges(assembly: StentAssembly):
    layout = assembly.layout
    for pair in range(layout.crowns - 1):
        chosen = []
        for angle in layout.angles_for_pair(pair):
            crest, trough, actual = _bridge_endpoints(assembly, pair, angle)
            if all(abs(actual - a) > 1e-9 for a in chosen):
                chosen.append(actual)
                name = f"bridge{pair}_{len(chosen) - 1}"
                assembly.patches.append(_bridge_patch(assembly, crest.position, trough.position, pair, name))
                assembly.roles.append("bridge")
                assembly.patch_crowns.append(pair)
                assembly.bridges.append((len(assembly.patches) - 1, pair, actual))
    logger.info(f"Placed {len(assembly.bridges)} bridges: "
                + ", ".join(f"{p}->{p + 1}@{np.degrees(a):.0f}deg" for _, p, a in assembly.bridges))


def _assemble(layout: StentLayout, placements: List[Tuple[np.ndarray, np.ndarray, np.ndarray]]) -> StentAssembly:
    """placements: per crown (center, base frame, local pre-rotation)"""
    # crest at theta = 0: the x2 = 0 and x3 = 0 cuts then run through crests and troughs
    crown = build_crown(layout, clock=np.pi / layout.wires)
    assembly = StentAssembly(layout, [], [], [], [(c, F) for c, F, _ in placements])
    for k, (center, frame, pre) in enumerate(placements):
        for q, patch in enumerate(crown):
            assembly.patches.append(_transform(patch, frame @ pre, center, f"crown{k}_wire{q}"))
            assembly.roles.append("wire")
            assembly.patch_crowns.append(k)
    tol = 1e-9 * layout.radius
    _cluster_nodes(assembly, tol)
    _add_bridges(assembly)
    _cluster_nodes(assembly, tol)
    return assembly


def _straight_placements(layout: StentLayout):
    placements = []
    for k in range(layout.crowns):
        center = np.array([k * layout.spacing, 0.0, 0.0])
        # odd crowns twisted a quarter turn about the device axis
        twist = _rot_z(0.5 * np.pi) if k % 2 else np.eye(3)
        placements.append((center, STRAIGHT_FRAME, twist))
    return placements


def axis_frame(layout: StentLayout, psi: float) -> Tuple[np.ndarray, np.ndarray]:
    """Point of the circular device axis and the crown frame [normal, e2, tangent] there"""
    center = np.asarray(layout.axis_center, dtype=float)
    normal = np.array([np.cos(psi), 0.0, np.sin(psi)])
    tangent = np.array([-np.sin(psi), 0.0, np.cos(psi)])
    return center + layout.axis_radius * normal, np.column_stack([normal, [0.0, 1.0, 0.0], tangent])


def crown_axis_angles(layout: StentLayout) -> np.ndarray:
    if layout.crowns == 1:
        return np.zeros(1)
    return layout.axis_sweep * np.arange(layout.crowns) / (layout.crowns - 1)


def _curved_placements(layout: StentLayout):
    flip = np.diag([-1.0, 1.0, -1.0])
    placements = []
    for k, psi in enumerate(crown_axis_angles(layout)):
        center, frame = axis_frame(layout, psi)
        placements.append((center, frame, flip if k % 2 else np.eye(3)))
    return placements


def _inside(patch: SplinePatch, normals: Sequence[np.ndarray], tol: float) -> bool:
    for u in np.linspace(0.0, 1.0, 9):
        x = curve_eval(patch, u, 0)[0]
        if any(x @ nrm < -tol for nrm in normals):
            return False
    return True


def reduce_by_symmetry(full: StentAssembly, normals: Sequence[Sequence[float]], label: str) -> StentAssembly:
    """Keep the patches on the positive side of every symmetry plane through the origin"""
    normals = [np.asarray(n, dtype=float) / np.linalg.norm(n) for n in normals]
    tol = 1e-7 * full.layout.radius
    keep = [k for k, patch in enumerate(full.patches) if _inside(patch, normals, tol)]
    reduced = StentAssembly(full.layout,
                            [full.patches[k].with_control_points(full.patches[k].control_points) for k in keep],
                            [full.roles[k] for k in keep], [full.patch_crowns[k] for k in keep],
                            full.crown_frames, symmetry=label)
    reduced.bridges = [(keep.index(k), pair, angle) for k, pair, angle in full.bridges if k in keep]
    for new, old in enumerate(keep):
        reduced.patches[new].name = full.patches[old].name
    _cluster_nodes(reduced, 1e-9 * full.layout.radius)
    for node in reduced.nodes:
        node.symmetry_normals = [n for n in normals if abs(node.position @ n) <= tol]
    logger.info(f"Symmetry reduction '{label}': {len(keep)}/{len(full.patches)} patches, "
                f"{sum(bool(n.symmetry_normals) for n in reduced.nodes)} symmetry nodes")
    return reduced


def build_straight_stent(layout: StentLayout, quarter: bool = False) -> StentAssembly:
    if layout.curved:
        raise InvalidArgumentError("straight stent layout must not define a curved axis")
    assembly = _assemble(layout, _straight_placements(layout))
    logger.info(f"✓ Straight stent: {layout.crowns} crowns, {len(assembly.patches)} patches, "
                f"{len(assembly.nodes)} nodes")
    if quarter:
        return reduce_by_symmetry(assembly, [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], "quarter")
    return assembly


def build_curved_stent(layout: StentLayout, half: bool = False) -> StentAssembly:
    if not layout.curved:
        raise InvalidArgumentError("curved stent layout needs axis_radius, axis_center and axis_sweep")
    assembly = _assemble(layout, _curved_placements(layout))
    logger.info(f"✓ Curved stent: {layout.crowns} crowns on R_axis={layout.axis_radius} m, "
                f"{len(assembly.patches)} patches, {len(assembly.nodes)} nodes")
    if half:
        return reduce_by_symmetry(assembly, [[0.0, 1.0, 0.0]], "half")
    return assembly


def radial_targets(assembly: StentAssembly, delta_r: float) -> Dict[int, np.ndarray]:
    """Straight device: radial contraction -delta_r e_r at every interface node"""
    targets = {}
    for node in assembly.nodes:
        if node.is_interface:
            radial = np.array([0.0, node.position[1], node.position[2]])
            targets[node.id] = -delta_r * radial / np.linalg.norm(radial)
    return targets


def straightened_targets(assembly: StentAssembly, delta_r: float) -> Dict[int, np.ndarray]:
    """Curved device: crowns restacked along the axis tangent at psi = 0 with radius R - delta_r"""
    layout = assembly.layout
    origin, frame0 = axis_frame(layout, 0.0)
    psis = crown_axis_angles(layout)
    targets = {}
    for node in assembly.nodes:
        if not node.is_interface or node.crown is None:
            continue
        center, frame = assembly.crown_frames[node.crown]
        local = frame.T @ (node.position - center)
        rho = np.hypot(local[0], local[1])
        shrunk = np.array([local[0] * (rho - delta_r) / rho, local[1] * (rho - delta_r) / rho, local[2]])
        line_point = origin + layout.axis_radius * psis[node.crown] * frame0[:, 2]
        targets[node.id] = line_point + frame0 @ shrunk - node.position
    return targets
