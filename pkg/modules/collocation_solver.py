"""
Collocation Solver Module
Strong-form isogeometric collocation of the time-discretized beam equations,
SO(3)-consistent Newton iteration and time stepping with boundary-condition
switches
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import null_space, orth

from modules.errors import InvalidArgumentError, SolverError, StepFailure, UndefinedErrorNorm
from modules.initial_geometry import InitialConfig
from modules.material import (MaxwellMaterial, StiffnessTensors, ViscousHistory, effective_stiffness,
                              frozen_history_terms)
from modules.schedule import Schedule
from modules.so3 import dexp_right, dexp_right_directional, dexp_right_inv, exp_so3, hat, log_so3, orthonormalize
from modules.splines import SplinePatch, basis_eval, curve_eval

logger = logging.getLogger(__name__)

Vector = Callable[[float], np.ndarray]


def _t_apply(R: np.ndarray, v: np.ndarray) -> np.ndarray:
    """R^T v over leading axes"""
    return np.einsum("...ji,...j->...i", R, v)


def _apply(R: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", R, v)


def _dl(C: np.ndarray, A: np.ndarray) -> np.ndarray:
    """diag(C) @ A"""
    return C[..., :, None] * A


def _dr(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    """A @ diag(C)"""
    return A * C[..., None, :]


def _transpose(A: np.ndarray) -> np.ndarray:
    return np.swapaxes(A, -1, -2)


class PatchModel:
    """Fixed data of one patch: initial configuration, stiffness and collocation tables.

    tables[i] holds the active basis functions at collocation point i and
    their first and second arc-length derivatives; B stacks the same data as
    dense (n, n) operators acting on control-point arrays.
    """

    def __init__(self, config: InitialConfig, tensors: StiffnessTensors, name: str = "",
                 distributed_force: Optional[Vector] = None, distributed_moment: Optional[Vector] = None):
        self.config = config
        self.tensors = tensors
        self.name = name or config.patch.name
        self.distributed_force = distributed_force
        self.distributed_moment = distributed_moment

        patch = config.patch
        n, p = patch.n, patch.degree
        if p < 2:
            raise InvalidArgumentError(f"collocation of second-order equations needs p >= 2 (patch {self.name})")
        if config.n != n:
            raise InvalidArgumentError(f"patch {self.name}: {config.n} collocation points for {n} control points")
        self.n = n
        self.indices = np.zeros((n, p + 1), dtype=int)
        self.tables = np.zeros((n, 3, p + 1))
        self.B = np.zeros((3, n, n))
        for i, u in enumerate(config.params):
            idx, tab = basis_eval(patch, u, 2)
            J, J_u = config.jacobian[i], config.jacobian_u[i]
            tab_s = np.vstack([tab[0], tab[1] / J, tab[2] / J ** 2 - tab[1] * J_u / J ** 3])
            self.indices[i] = idx
            self.tables[i] = tab_s
            self.B[:, i, idx] = tab_s

        ctrl0 = patch.control_points
        c0_s = self.B[1] @ ctrl0
        c0_ss = self.B[2] @ ctrl0
        self.gamma0 = _t_apply(config.R0, c0_s)
        self.gamma0_s = _t_apply(config.R0, c0_ss) - np.cross(config.K0, self.gamma0)

    def end_index(self, end: int) -> int:
        return 0 if end == 0 else self.n - 1


@dataclass
class PatchState:
    """Current configuration of a patch at its collocation points"""

    ctrl: np.ndarray
    R: np.ndarray
    K: np.ndarray
    K_s: np.ndarray
    history: ViscousHistory
    c_s: np.ndarray = None
    c_ss: np.ndarray = None
    gamma_full: np.ndarray = None
    gamma: np.ndarray = None
    gamma_s: np.ndarray = None
    kappa: np.ndarray = None
    kappa_s: np.ndarray = None

    @classmethod
    def initial(cls, model: PatchModel, branches: int) -> "PatchState":
        cfg = model.config
        state = cls(cfg.patch.control_points.copy(), cfg.R0.copy(), cfg.K0.copy(), cfg.K0_s.copy(),
                    ViscousHistory.zeros(model.n, branches))
        compute_strains(state, model)
        return state

    def copy(self) -> "PatchState":
        out = PatchState(self.ctrl.copy(), self.R.copy(), self.K.copy(), self.K_s.copy(), self.history.copy())
        for key in ("c_s", "c_ss", "gamma_full", "gamma", "gamma_s", "kappa", "kappa_s"):
            setattr(out, key, np.array(getattr(self, key)))
        return out


def compute_strains(state: PatchState, model: PatchModel):
    """Gamma_N = R^T c_s - R_0^T c_0,s and K_M = K - K_0, with their s-derivatives"""
    cfg = model.config
    state.c_s = model.B[1] @ state.ctrl
    state.c_ss = model.B[2] @ state.ctrl
    state.gamma_full = _t_apply(state.R, state.c_s)
    state.gamma = state.gamma_full - model.gamma0
    state.gamma_s = _t_apply(state.R, state.c_ss) - np.cross(state.K, state.gamma_full) - model.gamma0_s
    state.kappa = state.K - cfg.K0
    state.kappa_s = state.K_s - cfg.K0_s


@dataclass
class PointData:
    """Everything the row assemblers need at a set of collocation points"""

    R: np.ndarray
    K: np.ndarray
    K_s: np.ndarray
    gamma_full: np.ndarray
    c_ss_material: np.ndarray
    N: np.ndarray
    M: np.ndarray
    N_s: np.ndarray
    M_s: np.ndarray
    C_N: np.ndarray
    C_M: np.ndarray
    force: np.ndarray
    moment: np.ndarray

    def at(self, i: int) -> "PointData":
        def pick(a):
            return a if a.ndim == 1 else a[i]
        return PointData(*(pick(getattr(self, f)) for f in self.__dataclass_fields__))


@dataclass
class RowBlocks:
    """Linearized rows: coefficient blocks on increment derivatives plus the residual"""

    residual: np.ndarray
    eta_ss: Optional[np.ndarray] = None
    eta_s: Optional[np.ndarray] = None
    theta_ss: Optional[np.ndarray] = None
    theta_s: Optional[np.ndarray] = None
    theta: Optional[np.ndarray] = None


def assemble_row_force(pd: PointData) -> RowBlocks:
    """Force balance F = K x N + N,s + R^T n_bar and its SO(3)-consistent linearization"""
    Rt = _transpose(pd.R)
    Gt = hat(pd.gamma_full)
    Kt = hat(pd.K)
    Nt = hat(pd.N)
    CG = _dl(pd.C_N, Gt)
    theta_s = CG - Nt
    theta = (-Nt @ Kt + Kt @ CG + _dl(pd.C_N, hat(pd.c_ss_material))
             + _dl(pd.C_N, hat(np.cross(pd.gamma_full, pd.K))) + hat(pd.force))
    eta_ss = _dl(pd.C_N, Rt)
    eta_s = (_dr(Kt, pd.C_N) - _dl(pd.C_N, Kt)) @ Rt
    residual = np.cross(pd.K, pd.N) + pd.N_s + pd.force
    return RowBlocks(residual, eta_ss=eta_ss, eta_s=eta_s, theta_s=theta_s, theta=theta)


def assemble_row_moment(pd: PointData) -> RowBlocks:
    """Moment balance T = K x M + M,s + Gamma x N + R^T m_bar and its linearization"""
    Rt = _transpose(pd.R)
    Gt = hat(pd.gamma_full)
    Kt = hat(pd.K)
    Nt = hat(pd.N)
    Mt = hat(pd.M)
    GN = _dr(Gt, pd.C_N) - Nt
    theta_ss = _dl(pd.C_M, np.broadcast_to(np.eye(3), Kt.shape))
    theta_s = -Mt + _dr(Kt, pd.C_M) + _dl(pd.C_M, Kt)
    theta = (-Mt @ Kt + _dr(Kt, pd.C_M) @ Kt + _dl(pd.C_M, hat(pd.K_s)) + GN @ Gt + hat(pd.moment))
    eta_s = GN @ Rt
    residual = np.cross(pd.K, pd.M) + pd.M_s + np.cross(pd.gamma_full, pd.N) + pd.moment
    return RowBlocks(residual, eta_s=eta_s, theta_ss=theta_ss, theta_s=theta_s, theta=theta)


@dataclass
class NeumannBlocks:
    force: RowBlocks
    moment: RowBlocks


def assemble_neumann_rows(pd: PointData, sign: float, force: np.ndarray, moment: np.ndarray) -> NeumannBlocks:
    """End rows sign * R N - n_bar_c and sign * R M - m_bar_c.

    sign is +1 at u = 1 and -1 at u = 0; the imposed end loads are dead
    spatial vectors.
    """
    Gt = hat(pd.gamma_full)
    Kt = hat(pd.K)
    Nt = hat(pd.N)
    Mt = hat(pd.M)
    force_rows = RowBlocks(sign * pd.R @ pd.N - force,
                           eta_s=sign * pd.R @ _dl(pd.C_N, pd.R.T),
                           theta=sign * pd.R @ (_dl(pd.C_N, Gt) - Nt))
    moment_rows = RowBlocks(sign * pd.R @ pd.M - moment,
                            theta_s=sign * pd.R @ np.diag(pd.C_M),
                            theta=sign * pd.R @ (-Mt + _dl(pd.C_M, Kt)))
    return NeumannBlocks(force_rows, moment_rows)


def l2_error(approx: np.ndarray, reference: np.ndarray) -> float:
    """Relative discrete L2 error of a sampled field"""
    approx = np.asarray(approx, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if approx.shape != reference.shape:
        raise InvalidArgumentError(f"grid mismatch: {approx.shape} vs {reference.shape}")
    ref_norm = np.linalg.norm(reference)
    if ref_norm == 0.0:
        raise UndefinedErrorNorm("reference field has zero norm")
    return float(np.linalg.norm(approx - reference) / ref_norm)


@dataclass
class NodeCondition:
    """One set of constraints and loads acting on a node.

    fixed_translation / fixed_rotation list spatial directions that are
    prescribed; the remaining directions carry force / moment balance.
    Conditions with `release_on` are dropped when that schedule event fires;
    conditions with `activate_on` only start acting then. With
    `hold_on_activate` the prescribed directions keep the displacement the node
    has at that instant.
    """

    fixed_translation: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    displacement: Optional[Vector] = None
    fixed_rotation: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    rotation: Optional[Vector] = None
    force: Optional[Vector] = None
    moment: Optional[Vector] = None
    release_on: Optional[str] = None
    activate_on: Optional[str] = None
    label: str = ""
    active: bool = True
    hold_on_activate: bool = False

    def __post_init__(self):
        self.fixed_translation = np.asarray(self.fixed_translation, dtype=float).reshape(-1, 3)
        self.fixed_rotation = np.asarray(self.fixed_rotation, dtype=float).reshape(-1, 3)
        if self.activate_on is not None:
            self.active = False

    @classmethod
    def clamp(cls, label: str = "clamp", **kwargs) -> "NodeCondition":
        return cls(np.eye(3), fixed_rotation=np.eye(3), label=label, **kwargs)

    @classmethod
    def symmetry(cls, normal: Sequence[float], label: str = "symmetry") -> "NodeCondition":
        normal = np.asarray(normal, dtype=float)
        normal = normal / np.linalg.norm(normal)
        return cls(normal[None, :], fixed_rotation=null_space(normal[None, :]).T, label=label)


@dataclass
class Node:
    """Coincident patch ends; the first end is the master of a joint"""

    id: int
    ends: List[Tuple[int, int]]
    position: np.ndarray
    conditions: List[NodeCondition] = field(default_factory=list)
    tags: Dict[str, object] = field(default_factory=dict)


@dataclass
class SolverSettings:
    tol_r: float = 1e-8
    tol_d: float = 1e-10
    max_iter: int = 25
    max_bisections: int = 4
    equilibrate: bool = True

    @classmethod
    def from_dict(cls, config: Optional[dict]) -> "SolverSettings":
        config = config or {}
        return cls(tol_r=float(config.get("tol_r", 1e-8)),
                   tol_d=float(config.get("tol_d", 1e-10)),
                   max_iter=int(config.get("max_iter", 25)),
                   max_bisections=int(config.get("max_bisections", 4)),
                   equilibrate=bool(config.get("equilibrate", True)))


@dataclass
class StepContext:
    """Data fixed during one Newton solve: target time, step size, tau^{n+1}"""

    t: float
    h: float
    temperature: float
    taus: np.ndarray


@dataclass
class StepRecord:
    time: float
    temperature: float
    iterations: int
    residual_history: List[float]


def _split_directions(vectors: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Orthonormal rows spanning the prescribed directions and their complement"""
    if len(vectors) == 0:
        return np.zeros((0, 3)), np.eye(3)
    fixed = orth(np.asarray(vectors).T, rcond=1e-10).T
    if len(fixed) == 3:
        return np.eye(3), np.zeros((0, 3))
    return fixed, null_space(fixed).T


class _Triplets:
    def __init__(self):
        self.rows: List[np.ndarray] = []
        self.cols: List[np.ndarray] = []
        self.vals: List[np.ndarray] = []

    def add(self, rows, cols, vals):
        rows, cols, vals = np.broadcast_arrays(rows, cols, vals)
        self.rows.append(rows.ravel())
        self.cols.append(cols.ravel())
        self.vals.append(vals.ravel())

    def block(self, rows: np.ndarray, col0: int, values: np.ndarray):
        """values has shape (len(rows), 3) and acts on columns col0..col0+2"""
        self.add(np.asarray(rows)[:, None], col0 + np.arange(3)[None, :], values)

    def matrix(self, size: int) -> sp.csc_matrix:
        return sp.coo_matrix((np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
                             shape=(size, size)).tocsc()


class CollocationSolver:
    """Multi-patch collocation model advanced in time by Newton iteration"""

    def __init__(self, patches: List[PatchModel], nodes: List[Node], material: MaxwellMaterial,
                 schedule: Schedule, settings: Optional[SolverSettings] = None):
        self.patches = patches
        self.material = material
        self.schedule = schedule
        self.settings = settings or SolverSettings()
        self.nodes = self._complete_nodes(nodes)
        self.offsets = np.concatenate([[0], np.cumsum([6 * m.n for m in patches])]).astype(int)
        self.size = int(self.offsets[-1])
        self.states = [PatchState.initial(m, len(material.branches)) for m in patches]
        self.time = 0.0
        self.applied_events = set()
        self.last_context: Optional[StepContext] = None
        self.last_residual_history: List[float] = []
        self._joint_frames = self._initial_joint_frames()
        logger.info(f"Collocation model: {len(patches)} patches, {len(self.nodes)} nodes, {self.size} unknowns")

    def _complete_nodes(self, nodes: List[Node]) -> List[Node]:
        seen = {}
        for node in nodes:
            for end in node.ends:
                if end in seen:
                    raise InvalidArgumentError(f"patch end {end} listed in nodes {seen[end]} and {node.id}")
                seen[end] = node.id
        out = list(nodes)
        next_id = max([n.id for n in nodes], default=-1) + 1
        for k, model in enumerate(self.patches):
            for end in (0, 1):
                if (k, end) not in seen:
                    ctrl = model.config.patch.control_points
                    out.append(Node(next_id, [(k, end)], (ctrl[0] if end == 0 else ctrl[-1]).copy()))
                    next_id += 1
        return out

    def _initial_joint_frames(self) -> Dict[Tuple[int, int], np.ndarray]:
        frames = {}
        for node in self.nodes:
            km, em = node.ends[0]
            R0m = self.patches[km].config.R0[self.patches[km].end_index(em)]
            for ks, es in node.ends[1:]:
                R0s = self.patches[ks].config.R0[self.patches[ks].end_index(es)]
                frames[(ks, es)] = R0m.T @ R0s
        return frames

    # ------------------------------------------------------------------ state

    def context(self, t: float, h: float) -> StepContext:
        T = self.schedule.temperature(t)
        return StepContext(t, h, T, self.material.relaxation_times(T))

    def current_patch(self, k: int) -> SplinePatch:
        return self.patches[k].config.patch.with_control_points(self.states[k].ctrl)

    def displacement(self, k: int, u: float) -> np.ndarray:
        return curve_eval(self.current_patch(k), u, 0)[0] - curve_eval(self.patches[k].config.patch, u, 0)[0]

    def node_displacement(self, node: Node) -> np.ndarray:
        k, end = node.ends[0]
        i = self.patches[k].end_index(end)
        return self.states[k].ctrl[i] - self.patches[k].config.patch.control_points[i]

    def snapshot(self):
        return self.time, [s.copy() for s in self.states]

    def restore(self, snap):
        self.time, states = snap
        self.states = [s.copy() for s in states]

    # ------------------------------------------------------------- assembly

    def _point_data(self, k: int, ctx: StepContext) -> PointData:
        model, state = self.patches[k], self.states[k]
        tensors, hist = model.tensors, state.history
        C_N, C_M = effective_stiffness(tensors, ctx.taus, ctx.h)
        N = C_N * state.gamma - frozen_history_terms(hist.psi_gamma, tensors.C_N_branches, ctx.taus, ctx.h)
        M = C_M * state.kappa - frozen_history_terms(hist.psi_kappa, tensors.C_M_branches, ctx.taus, ctx.h)
        N_s = C_N * state.gamma_s - frozen_history_terms(hist.psi_gamma_s, tensors.C_N_branches, ctx.taus, ctx.h)
        M_s = C_M * state.kappa_s - frozen_history_terms(hist.psi_kappa_s, tensors.C_M_branches, ctx.taus, ctx.h)
        force = np.zeros((model.n, 3))
        moment = np.zeros((model.n, 3))
        if model.distributed_force is not None:
            force = _t_apply(state.R, np.asarray(model.distributed_force(ctx.t), dtype=float))
        if model.distributed_moment is not None:
            moment = _t_apply(state.R, np.asarray(model.distributed_moment(ctx.t), dtype=float))
        return PointData(state.R, state.K, state.K_s, state.gamma_full, _t_apply(state.R, state.c_ss),
                         N, M, N_s, M_s, C_N, C_M, force, moment)

    def _field_rows(self, k: int, pd: PointData, trip: _Triplets, b: np.ndarray):
        model = self.patches[k]
        off = self.offsets[k]
        interior = np.arange(1, model.n - 1)
        if len(interior) == 0:
            return
        fb = assemble_row_force(pd)
        mb = assemble_row_moment(pd)
        tab = model.tables[interior]
        cols = off + 6 * model.indices[interior]

        def combine(blocks_and_orders):
            total = 0.0
            for block, order in blocks_and_orders:
                total = total + block[interior][:, None] * tab[:, order, :, None, None]
            return total

        F_eta = combine([(fb.eta_ss, 2), (fb.eta_s, 1)])
        F_theta = combine([(fb.theta_s, 1), (fb.theta, 0)])
        M_eta = combine([(mb.eta_s, 1)])
        M_theta = combine([(mb.theta_ss, 2), (mb.theta_s, 1), (mb.theta, 0)])

        r3 = np.arange(3)
        row_f = (off + 6 * interior)[:, None, None, None] + r3[None, None, :, None]
        row_m = row_f + 3
        col_eta = cols[:, :, None, None] + r3[None, None, None, :]
        col_theta = col_eta + 3
        trip.add(row_f, col_eta, F_eta)
        trip.add(row_f, col_theta, F_theta)
        trip.add(row_m, col_eta, M_eta)
        trip.add(row_m, col_theta, M_theta)
        b[(off + 6 * interior)[:, None] + r3] = fb.residual[interior]
        b[(off + 6 * interior + 3)[:, None] + r3] = mb.residual[interior]

    def _node_rows(self, node: Node, data: List[PointData], t: float, trip: _Triplets, b: np.ndarray):
        active = [c for c in node.conditions if c.active]
        km, em = node.ends[0]
        master = self.patches[km]
        im = master.end_index(em)
        row0 = self.offsets[km] + 6 * im
        col_m = self.offsets[km] + 6 * im

        target = node.position.copy()
        force = np.zeros(3)
        moment = np.zeros(3)
        rot = np.zeros(3)
        for cond in active:
            if cond.displacement is not None:
                target = target + np.asarray(cond.displacement(t), dtype=float)
            if cond.force is not None:
                force = force + np.asarray(cond.force(t), dtype=float)
            if cond.moment is not None:
                moment = moment + np.asarray(cond.moment(t), dtype=float)
            if cond.rotation is not None:
                rot = rot + np.asarray(cond.rotation(t), dtype=float)
        D, F = _split_directions(np.vstack([c.fixed_translation for c in active] or [np.zeros((0, 3))]))
        Dr, Fr = _split_directions(np.vstack([c.fixed_rotation for c in active] or [np.zeros((0, 3))]))

        # translational rows: prescribed directions, then force balance
        q = len(D)
        if q:
            rows = row0 + np.arange(q)
            trip.block(rows, col_m, D)
            b[rows] = D @ (self.states[km].ctrl[im] - target)
        # rotational rows
        qr = len(Dr)
        if qr:
            rows = row0 + 3 + np.arange(qr)
            R_end = self.states[km].R[im]
            R_target = exp_so3(rot) @ master.config.R0[im]
            phi = log_so3(R_end @ R_target.T)
            trip.block(rows, col_m + 3, Dr @ dexp_right_inv(-phi) @ R_end)
            b[rows] = Dr @ phi

        rows_f = row0 + q + np.arange(len(F))
        rows_m = row0 + 3 + qr + np.arange(len(Fr))
        total_f = -force
        total_m = -moment
        for k, end in node.ends:
            model = self.patches[k]
            i = model.end_index(end)
            sign = 1.0 if end == 1 else -1.0
            nb = assemble_neumann_rows(data[k].at(i), sign, np.zeros(3), np.zeros(3))
            total_f = total_f + nb.force.residual
            total_m = total_m + nb.moment.residual
            col_end = self.offsets[k] + 6 * i
            if len(F):
                trip.block(rows_f, col_end + 3, F @ nb.force.theta)
                for a, j in enumerate(model.indices[i]):
                    trip.block(rows_f, self.offsets[k] + 6 * j, model.tables[i, 1, a] * (F @ nb.force.eta_s))
            if len(Fr):
                trip.block(rows_m, col_end + 3, Fr @ nb.moment.theta)
                for a, j in enumerate(model.indices[i]):
                    trip.block(rows_m, self.offsets[k] + 6 * j + 3, model.tables[i, 1, a] * (Fr @ nb.moment.theta_s))
        if len(F):
            b[rows_f] = F @ total_f
        if len(Fr):
            b[rows_m] = Fr @ total_m

        # rigid-joint compatibility of every slave end with the master end
        R_m = self.states[km].R[im]
        for ks, es in node.ends[1:]:
            slave = self.patches[ks]
            js = slave.end_index(es)
            rows = self.offsets[ks] + 6 * js + np.arange(3)
            col_s = self.offsets[ks] + 6 * js
            trip.block(rows, col_s, np.eye(3))
            trip.block(rows, col_m, -np.eye(3))
            b[rows] = self.states[ks].ctrl[js] - self.states[km].ctrl[im]

            Q0 = self._joint_frames[(ks, es)]
            phi = log_so3(Q0.T @ R_m.T @ self.states[ks].R[js])
            trip.block(rows + 3, col_s + 3, dexp_right_inv(phi))
            trip.block(rows + 3, col_m + 3, -dexp_right_inv(-phi) @ Q0.T)
            b[rows + 3] = phi

    def assemble_system(self, ctx: StepContext) -> Tuple[sp.csc_matrix, np.ndarray]:
        """Square sparse Jacobian and residual vector at the current iterate"""
        trip = _Triplets()
        b = np.zeros(self.size)
        data = []
        for k in range(len(self.patches)):
            pd = self._point_data(k, ctx)
            data.append(pd)
            self._field_rows(k, pd, trip, b)
        for node in self.nodes:
            self._node_rows(node, data, ctx.t, trip, b)
        return trip.matrix(self.size), b

    def residual_vector(self, ctx: StepContext) -> np.ndarray:
        return self.assemble_system(ctx)[1]

    def _solve(self, A: sp.csc_matrix, b: np.ndarray) -> np.ndarray:
        rhs = -b
        col_scale = np.ones(self.size)
        if self.settings.equilibrate:
            row_max = np.asarray(abs(A).max(axis=1).toarray()).ravel()
            if np.any(row_max == 0.0):
                raise SolverError(f"collocation system has {int(np.sum(row_max == 0.0))} empty rows")
            A = sp.diags(1.0 / row_max) @ A
            rhs = rhs / row_max
            col_max = np.asarray(abs(A).max(axis=0).toarray()).ravel()
            if np.any(col_max == 0.0):
                raise SolverError(f"collocation system has {int(np.sum(col_max == 0.0))} empty columns")
            col_scale = 1.0 / col_max
            A = A @ sp.diags(col_scale)
        try:
            lu = spla.splu(sp.csc_matrix(A))
            y = lu.solve(rhs)
        except RuntimeError as exc:
            raise SolverError(f"singular collocation system: {exc}", self._condition_estimate(A)) from exc
        if not np.all(np.isfinite(y)):
            raise SolverError("non-finite increment from linear solve", self._condition_estimate(A))
        return col_scale * y

    def _condition_estimate(self, A) -> Optional[float]:
        if self.size > 3000:
            return None
        return float(np.linalg.cond(A.toarray()))

    # ---------------------------------------------------------------- update

    def apply_increment(self, delta: np.ndarray, scale: float = 1.0):
        """p <- p + d_eta (additive), R <- R exp(d_Theta) with consistent K and K,s"""
        for k, (model, state) in enumerate(zip(self.patches, self.states)):
            d = scale * delta[self.offsets[k]:self.offsets[k + 1]].reshape(model.n, 6)
            state.ctrl = state.ctrl + d[:, :3]
            theta_cp = d[:, 3:]
            th, th_s, th_ss = model.B[0] @ theta_cp, model.B[1] @ theta_cp, model.B[2] @ theta_cp
            for i in range(model.n):
                Q = exp_so3(th[i])
                T = dexp_right(th[i])
                w = T @ th_s[i]
                K_rot = Q.T @ state.K[i]
                state.K_s[i] = (-np.cross(w, K_rot) + Q.T @ state.K_s[i] + T @ th_ss[i]
                                + dexp_right_directional(th[i], th_s[i]) @ th_s[i])
                state.K[i] = K_rot + w
                state.R[i] = orthonormalize(state.R[i] @ Q)
            compute_strains(state, model)

    def _update_viscous(self, ctx: StepContext):
        for state in self.states:
            state.history.update(state.gamma, state.kappa, state.gamma_s, state.kappa_s, ctx.taus, ctx.h)

    def newton_solve(self, ctx: StepContext) -> int:
        """Newton iteration at fixed Psi; returns the number of iterations taken"""
        s = self.settings
        history: List[float] = []
        self.last_context = ctx
        for it in range(s.max_iter + 1):
            A, b = self.assemble_system(ctx)
            res = float(np.max(np.abs(b))) if len(b) else 0.0
            history.append(res)
            self.last_residual_history = history
            logger.debug(f"  t={ctx.t:.5f} iter {it}: |r|_inf = {res:.3e}")
            if not np.isfinite(res):
                raise StepFailure(f"non-finite residual at t={ctx.t:.5f}", history)
            if res <= s.tol_r:
                self._update_viscous(ctx)
                return it
            if it == s.max_iter:
                break
            delta = self._solve(A, b)
            self.apply_increment(delta)
            if float(np.max(np.abs(delta))) <= s.tol_d:
                self._update_viscous(ctx)
                history.append(float(np.max(np.abs(self.residual_vector(ctx)))))
                return it + 1
        raise StepFailure(f"Newton did not converge in {s.max_iter} iterations at t={ctx.t:.5f} "
                          f"(last |r| = {history[-1]:.3e})", history)

    # ---------------------------------------------------------- time stepping

    def apply_due_events(self, t: float):
        for event in self.schedule.events_due(t, self.applied_events):
            released = activated = 0
            for node in self.nodes:
                for cond in node.conditions:
                    if cond.release_on == event.name and cond.active:
                        cond.active = False
                        released += 1
                    if cond.activate_on == event.name and not cond.active:
                        cond.active = True
                        if cond.hold_on_activate:
                            held = self.node_displacement(node).copy()
                            cond.displacement = lambda t, d=held: d
                        activated += 1
            self.applied_events.add(event.name)
            logger.info(f"🔁 Event '{event.name}' at t={event.time:.4f} s: "
                        f"{released} conditions released, {activated} activated")

    def _single_step(self, h: float) -> StepRecord:
        t0 = self.time
        T0 = self.schedule.temperature(t0)
        taus0 = self.material.relaxation_times(T0)
        for state in self.states:
            state.history.freeze(state.gamma, state.kappa, state.gamma_s, state.kappa_s, taus0, h)
        ctx = self.context(t0 + h, h)
        iterations = self.newton_solve(ctx)
        self.time = t0 + h
        return StepRecord(self.time, ctx.temperature, iterations, list(self.last_residual_history))

    def _advance(self, h: float, depth: int) -> List[StepRecord]:
        self.apply_due_events(self.time)
        snap = self.snapshot()
        try:
            return [self._single_step(h)]
        except SolverError as exc:
            self.restore(snap)
            if depth >= self.settings.max_bisections:
                logger.error(f"✗ Step from t={self.time:.5f} failed after {depth} bisections: {exc}")
                raise StepFailure(f"step from t={self.time:.5f} failed after {depth} bisections: {exc}",
                                  getattr(exc, "residual_history", None)) from exc
            logger.warning(f"⚠️ Step from t={self.time:.5f} with h={h:.3e} failed, halving")
            records = self._advance(0.5 * h, depth + 1)
            records += self._advance(0.5 * h, depth + 1)
            return records

    def advance_step(self, t_next: float) -> List[StepRecord]:
        """Advance from the current time to t_next, bisecting on Newton failure"""
        h = t_next - self.time
        if h <= 0.0:
            raise InvalidArgumentError(f"t_next={t_next} is not after the current time {self.time}")
        records = self._advance(h, 0)
        self.time = t_next
        last = records[-1]
        logger.info(f"✓ t={last.time:.4f} s  T={last.temperature:.2f} degC  "
                    f"iters={last.iterations}  |r|={last.residual_history[-1]:.2e}")
        return records

    # ------------------------------------------------------------ diagnostics

    def resultants(self, k: int, ctx: Optional[StepContext] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Material stress resultants N, M at the collocation points of patch k"""
        ctx = ctx or self.last_context or self.context(self.time, 1.0)
        pd = self._point_data(k, ctx)
        return pd.N, pd.M

    def interface_imbalance(self) -> float:
        """Largest force/moment balance residual over the nodes"""
        ctx = self.last_context or self.context(self.time, 1.0)
        b = self.residual_vector(ctx)
        worst = 0.0
        for node in self.nodes:
            km, em = node.ends[0]
            row0 = self.offsets[km] + 6 * self.patches[km].end_index(em)
            worst = max(worst, float(np.max(np.abs(b[row0:row0 + 6]))))
        return worst
