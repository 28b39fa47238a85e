import numpy as np
import pytest

from modules.collocation_solver import (CollocationSolver, Node, NodeCondition, PatchModel, PatchState,
                                        SolverSettings, compute_strains, l2_error)
from modules.errors import InvalidArgumentError, StepFailure, UndefinedErrorNorm
from modules.initial_geometry import build_arch, build_line, frame_along_curve
from modules.material import MPA, MaxwellBranch, MaxwellMaterial, SectionProperties, build_section_tensors
from modules.schedule import PiecewiseLinear, Schedule, SwitchEvent
from modules.so3 import exp_so3
from modules.splines import SplinePatch

DIAMETER = 0.05
TIP_FORCE = np.array([0.0, 0.0, 1e-3])


def _solver(configs, material, nodes, temperature=70.0, events=(), settings=None):
    tensors = build_section_tensors(material, SectionProperties.circular(DIAMETER))
    patches = [PatchModel(cfg, tensors) for cfg in configs]
    schedule = Schedule(1.0, PiecewiseLinear.constant(temperature), {}, list(events))
    return CollocationSolver(patches, nodes, material, schedule, settings)


def _start(cfg):
    return cfg.patch.control_points[0].copy()


def _end(cfg):
    return cfg.patch.control_points[-1].copy()


def _cantilever(material, tip_conditions, p=4, n=10, **kwargs):
    cfg = build_line(1.0, [0.0, 1.0, 0.0], p, n)
    nodes = [Node(0, [(0, 0)], _start(cfg), [NodeCondition.clamp()]),
             Node(1, [(0, 1)], _end(cfg), tip_conditions)]
    return _solver([cfg], material, nodes, **kwargs)


def _tip_load(**kwargs):
    return NodeCondition(force=lambda t: TIP_FORCE, label="tip", **kwargs)


def _timoshenko_tip(material):
    section = SectionProperties.circular(DIAMETER)
    E = material.E_inf
    G = material.shear_modulus(E)
    return TIP_FORCE[2] / (3.0 * E * section.I1) + TIP_FORCE[2] / (section.kappa * G * section.area)


def _kinked_pair():
    first = build_line(0.5, [0.0, 1.0, 0.0], 3, 7)
    second = build_line(0.5, [1.0, 1.0, 0.5], 3, 7, origin=_end(first))
    nodes = [Node(0, [(0, 0)], _start(first), [NodeCondition.clamp()]),
             Node(1, [(0, 1), (1, 0)], _end(first)),
             Node(2, [(1, 1)], _end(second), [_tip_load()])]
    return [first, second], nodes


def _slope_ratio(solver, rng, ctx):
    solver.apply_increment(1e-2 * rng.normal(size=solver.size))
    A, b0 = solver.assemble_system(ctx)
    direction = rng.normal(size=solver.size)
    snap = solver.snapshot()
    errors = []
    for eps in (1e-3, 5e-4):
        solver.restore(snap)
        solver.apply_increment(direction, scale=eps)
        errors.append(np.linalg.norm(solver.residual_vector(ctx) - b0 - eps * (A @ direction)))
    return errors[0] / errors[1]


def test_initial_configuration_is_stress_free(pla):
    cfg = build_arch(1.0, 0.5 * np.pi, 3, 8)
    model = PatchModel(cfg, build_section_tensors(pla, SectionProperties.circular(DIAMETER)))
    state = PatchState.initial(model, len(pla.branches))
    for key in ("gamma", "gamma_s", "kappa", "kappa_s"):
        assert np.allclose(getattr(state, key), 0.0, atol=1e-12)


def test_unloaded_arch_needs_no_iterations(pla):
    cfg = build_arch(1.0, 0.5 * np.pi, 3, 8)
    solver = _solver([cfg], pla, [Node(0, [(0, 0)], _start(cfg), [NodeCondition.clamp()])])
    assert len(solver.nodes) == 2
    records = solver.advance_step(1e-3)
    assert records[0].iterations == 0
    assert solver.time == 1e-3


@pytest.mark.parametrize("seed", range(10))
def test_jacobian_is_consistent_on_arch(pla, seed):
    rng = np.random.default_rng(seed)
    cfg = build_arch(1.0, 0.5 * np.pi, 3, 8)
    nodes = [Node(0, [(0, 0)], _start(cfg), [NodeCondition.clamp(rotation=lambda t: np.array([0.1, 0.0, 0.2]))]),
             Node(1, [(0, 1)], _end(cfg), [NodeCondition(force=lambda t: np.array([1.0, 2.0, 3.0]),
                                                         moment=lambda t: np.array([0.0, 25.0, 25.0]))])]
    solver = _solver([cfg], pla, nodes, temperature=80.0)
    assert _slope_ratio(solver, rng, solver.context(0.5, 1e-3)) > 3.5


def test_jacobian_is_consistent_across_joint(pla, rng):
    configs, nodes = _kinked_pair()
    solver = _solver(configs, pla, nodes)
    assert _slope_ratio(solver, rng, solver.context(0.5, 1e-3)) > 3.5


def test_rigid_motion_is_stress_free(pla):
    cfg = build_arch(1.0, 0.5 * np.pi, 3, 8)
    solver = _solver([cfg], pla, [])
    Q = exp_so3(np.array([0.3, -0.7, 1.1]))
    state = solver.states[0]
    state.ctrl = state.ctrl @ Q.T + np.array([0.2, -0.1, 0.4])
    state.R = np.einsum("ij,njk->nik", Q, state.R)
    compute_strains(state, solver.patches[0])
    b = solver.residual_vector(solver.context(0.1, 1e-3))
    scale = solver.patches[0].tensors.C_N0.max()
    assert np.max(np.abs(b)) < 1e-8 * scale


def test_strains_are_objective(pla, rng):
    cfg = build_arch(1.0, 0.5 * np.pi, 3, 8)
    solver = _solver([cfg], pla, [])
    solver.apply_increment(1e-2 * rng.normal(size=solver.size))
    state = solver.states[0]
    gamma, kappa, gamma_s = state.gamma.copy(), state.kappa.copy(), state.gamma_s.copy()
    Q = exp_so3(np.array([-1.2, 0.4, 0.9]))
    state.ctrl = state.ctrl @ Q.T
    state.R = np.einsum("ij,njk->nik", Q, state.R)
    compute_strains(state, solver.patches[0])
    assert np.allclose(state.gamma, gamma, atol=1e-12)
    assert np.allclose(state.kappa, kappa, atol=1e-12)
    assert np.allclose(state.gamma_s, gamma_s, atol=1e-9)


def _loaded_arch(material, Q=np.eye(3)):
    cfg = build_arch(1.0, 0.5 * np.pi, 3, 8)
    if not np.array_equal(Q, np.eye(3)):
        patch = cfg.patch
        turned = SplinePatch(patch.degree, patch.knots, patch.control_points @ Q.T, patch.weights, patch.name)
        cfg = frame_along_curve(turned, Q @ cfg.reference)
    force, moment = Q @ np.array([1.0, 2.0, 3.0]), Q @ np.array([0.0, 2.5, 2.5])
    nodes = [Node(0, [(0, 0)], _start(cfg), [NodeCondition.clamp()]),
             Node(1, [(0, 1)], _end(cfg), [NodeCondition(force=lambda t: force, moment=lambda t: moment)])]
    return _solver([cfg], material, nodes)


def test_converged_solution_is_objective(pla):
    Q = exp_so3(np.array([0.4, -1.1, 0.7]))
    base, turned = _loaded_arch(pla), _loaded_arch(pla, Q)
    base.advance_step(1.0)
    turned.advance_step(1.0)

    assert np.allclose(turned.node_displacement(turned.nodes[1]), Q @ base.node_displacement(base.nodes[1]),
                       rtol=1e-7, atol=1e-10)
    for u in (0.25, 0.5, 0.75):
        assert np.allclose(turned.displacement(0, u), Q @ base.displacement(0, u), rtol=1e-7, atol=1e-10)
    N, M = base.resultants(0)
    N_turned, M_turned = turned.resultants(0)
    assert np.allclose(N_turned, N, rtol=1e-7, atol=1e-7 * np.abs(N).max())
    assert np.allclose(M_turned, M, rtol=1e-7, atol=1e-7 * np.abs(M).max())
    assert np.allclose(turned.states[0].gamma, base.states[0].gamma, atol=1e-10)
    assert np.allclose(turned.states[0].kappa, base.states[0].kappa, atol=1e-10)


def test_newton_residual_decays_quadratically(pla, rng):
    solver = _loaded_arch(pla)
    solver.advance_step(1.0)
    ctx = solver.last_context
    snap = solver.snapshot()
    direction = rng.normal(size=solver.size)
    first_updates = []
    for eps in (1e-3, 5e-4):
        solver.restore(snap)
        solver.apply_increment(direction, scale=eps)
        solver.newton_solve(ctx)
        history = solver.last_residual_history
        assert history[1] < 0.1 * history[0]
        first_updates.append(history[1])
    # halving the start error quarters the residual after one update
    assert first_updates[0] / first_updates[1] > 3.0


def _ramped_cantilever(material, times):
    ramp = NodeCondition(force=lambda t: t * np.array([0.0, 0.0, 1.0]), label="tip")
    solver = _cantilever(material, [ramp])
    for t in times:
        solver.advance_step(float(t))
    return solver.node_displacement(solver.nodes[1]).copy()


def test_elastic_response_is_step_size_independent(pla):
    elastic = pla.elastic_only()
    one_step = _ramped_cantilever(elastic, [1.0])
    eight_steps = _ramped_cantilever(elastic, np.linspace(0.125, 1.0, 8))
    assert one_step[2] > 0.0
    assert np.allclose(eight_steps, one_step, rtol=1e-7, atol=1e-14)


def test_load_path_converges_at_second_order_in_time(pla):
    branches = [MaxwellBranch(300.0 * MPA, 0.5), MaxwellBranch(200.0 * MPA, 2.0)]
    material = MaxwellMaterial("two-branch", 80.0 * MPA, branches, pla.wlf, pla.nu)

    def tip(steps):
        return _ramped_cantilever(material, np.arange(1, steps + 1) / steps)

    reference = tip(128)
    errors = [np.linalg.norm(tip(steps) - reference) for steps in (8, 16, 32)]
    rates = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(rates > 1.7) and np.all(rates < 2.3)


def test_elastic_cantilever_tip_deflection(pla):
    elastic = pla.elastic_only()
    solver = _cantilever(elastic, [_tip_load()])
    records = solver.advance_step(1.0)
    assert records[-1].iterations <= 5
    tip = solver.node_displacement(solver.nodes[1])
    assert tip[2] == pytest.approx(_timoshenko_tip(elastic), rel=5e-3)
    assert abs(tip[0]) < 1e-3 * tip[2]


def test_two_patch_cantilever_matches_single_patch(pla):
    elastic = pla.elastic_only()
    single = _cantilever(elastic, [_tip_load()])
    single.advance_step(1.0)

    first = build_line(0.5, [0.0, 1.0, 0.0], 4, 10)
    second = build_line(0.5, [0.0, 1.0, 0.0], 4, 10, origin=_end(first))
    nodes = [Node(0, [(0, 0)], _start(first), [NodeCondition.clamp()]),
             Node(1, [(0, 1), (1, 0)], _end(first)),
             Node(2, [(1, 1)], _end(second), [_tip_load()])]
    split = _solver([first, second], elastic, nodes)
    split.advance_step(1.0)

    tip_single = single.node_displacement(single.nodes[1])
    tip_split = split.node_displacement(split.nodes[2])
    assert tip_split[2] == pytest.approx(tip_single[2], rel=1e-3)
    assert split.interface_imbalance() < 1e-6
    assert np.allclose(split.states[0].ctrl[-1], split.states[1].ctrl[0])
    assert np.allclose(split.states[0].R[-1], split.states[1].R[0], atol=1e-10)


def test_release_and_hold_on_event(pla):
    elastic = pla.elastic_only()
    hold = NodeCondition(np.eye(3), activate_on="release", hold_on_activate=True, label="anchor")
    load = _tip_load(release_on="release")
    solver = _cantilever(elastic, [load, hold], events=[SwitchEvent(0.5, "release")])
    assert not hold.active

    solver.advance_step(0.5)
    held = solver.node_displacement(solver.nodes[1]).copy()
    assert held[2] > 0.0
    assert load.active

    solver.advance_step(1.0)
    assert hold.active and not load.active
    assert "release" in solver.applied_events
    assert np.allclose(hold.displacement(0.7), held)
    assert np.allclose(solver.node_displacement(solver.nodes[1]), held, atol=1e-12)


def test_step_failure_restores_state(pla):
    settings = SolverSettings(max_iter=0, max_bisections=0)
    solver = _cantilever(pla, [_tip_load()], settings=settings)
    before = solver.states[0].ctrl.copy()
    with pytest.raises(StepFailure) as info:
        solver.advance_step(0.1)
    assert info.value.residual_history
    assert solver.time == 0.0
    assert np.array_equal(solver.states[0].ctrl, before)


def test_advance_requires_later_time(pla):
    solver = _cantilever(pla, [_tip_load()])
    with pytest.raises(InvalidArgumentError):
        solver.advance_step(0.0)


def test_patch_end_in_two_nodes_is_rejected(pla):
    cfg = build_line(1.0, [0.0, 1.0, 0.0], 3, 6)
    nodes = [Node(0, [(0, 0)], _start(cfg)), Node(1, [(0, 0)], _start(cfg))]
    with pytest.raises(InvalidArgumentError):
        _solver([cfg], pla, nodes)


def test_symmetry_condition_directions():
    cond = NodeCondition.symmetry([0.0, 2.0, 0.0])
    assert np.allclose(cond.fixed_translation, [[0.0, 1.0, 0.0]])
    assert cond.fixed_rotation.shape == (2, 3)
    assert np.allclose(cond.fixed_rotation @ [0.0, 1.0, 0.0], 0.0)


def test_solver_settings_from_dict():
    settings = SolverSettings.from_dict({"tol_r": "1e-6", "max_iter": 7})
    assert settings.tol_r == 1e-6
    assert settings.max_iter == 7
    assert SolverSettings.from_dict(None) == SolverSettings()


def test_l2_error():
    ref = np.array([[3.0, 4.0, 0.0]])
    assert l2_error(ref, ref) == 0.0
    assert l2_error(np.zeros((1, 3)), ref) == pytest.approx(1.0)
    with pytest.raises(UndefinedErrorNorm):
        l2_error(ref, np.zeros((1, 3)))
    with pytest.raises(InvalidArgumentError):
        l2_error(np.zeros((2, 3)), ref)
