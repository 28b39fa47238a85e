"""
Initial Geometry Module
Initial configuration of a beam patch: centroid curve, rotation-minimizing
cross-section frame, initial curvature and arc-length Jacobian, plus the
builders for the circular arch and the straight cantilever
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from modules.errors import GeometryError, InvalidArgumentError
from modules.splines import (ParamDerivatives, SplinePatch, curve_eval, greville,
                             interpolate_at_greville, open_uniform_knots)

logger = logging.getLogger(__name__)

MIN_JACOBIAN = 1e-12
ODE_RTOL = 1e-12
ODE_ATOL = 1e-14


@dataclass
class CurveGeometry:
    """Unit tangent and its arc-length derivatives at one parameter value"""

    position: np.ndarray
    tangent: np.ndarray
    tangent_s: np.ndarray
    tangent_ss: np.ndarray
    jacobian: float
    jacobian_u: float


def curve_geometry(patch: SplinePatch, u: float) -> CurveGeometry:
    c = curve_eval(patch, u, 3)
    c_u, c_uu, c_uuu = c[1], c[2], c[3]
    J = float(np.linalg.norm(c_u))
    if J < MIN_JACOBIAN:
        raise GeometryError(f"degenerate tangent on patch {patch.name or '<unnamed>'} at u={u:.6f}")
    t = c_u / J
    J_u = float(t @ c_uu)
    P = np.eye(3) - np.outer(t, t)
    t_u = P @ c_uu / J
    t_uu = (-t_u * (t @ c_uu) - t * (t_u @ c_uu) + P @ c_uuu) / J - t_u * J_u / J
    t_s = t_u / J
    t_ss = t_uu / J ** 2 - t_u * J_u / J ** 3
    return CurveGeometry(c[0], t, t_s, t_ss, J, J_u)


@dataclass
class InitialConfig:
    """Initial configuration of one patch sampled at its collocation points"""

    patch: SplinePatch
    params: np.ndarray
    R0: np.ndarray
    K0: np.ndarray
    K0_s: np.ndarray
    jacobian: np.ndarray
    jacobian_u: np.ndarray
    reference: np.ndarray
    _segments: List = field(default_factory=list, repr=False)

    @property
    def n(self) -> int:
        return len(self.params)

    def director_at(self, u: float) -> np.ndarray:
        """Transported reference director d_2 at an arbitrary parameter"""
        for lo, hi, sol in self._segments:
            if lo - 1e-15 <= u <= hi + 1e-15:
                return sol(min(max(u, lo), hi))
        raise InvalidArgumentError(f"parameter u={u} outside [0, 1]")

    def frame_at(self, u: float) -> np.ndarray:
        """R_0(u) at an arbitrary parameter (columns d_1, d_2, d_3)"""
        geo = curve_geometry(self.patch, u)
        return _frame_from_director(geo.tangent, self.director_at(u))

    def to_arc_length(self, f: ParamDerivatives, index: int) -> ParamDerivatives:
        return arc_length_derivatives(f, self.jacobian[index], self.jacobian_u[index])


def _frame_from_director(t: np.ndarray, d: np.ndarray) -> np.ndarray:
    d2 = d - (d @ t) * t
    d2 /= np.linalg.norm(d2)
    d1 = np.cross(d2, t)
    return np.column_stack([d1, d2, t])


def default_reference(tangent: np.ndarray) -> np.ndarray:
    """Global axis least aligned with the tangent (lowest index on ties)"""
    return np.eye(3)[int(np.argmin(np.abs(tangent) + 1e-12 * np.arange(3)))]


def _rmf_rhs(patch: SplinePatch):
    def rhs(u, d):
        c = curve_eval(patch, u, 2)
        J = np.linalg.norm(c[1])
        t = c[1] / J
        t_u = (c[2] - (t @ c[2]) * t) / J
        return -(d @ t_u) * t
    return rhs


def frame_along_curve(patch: SplinePatch, reference: Optional[Sequence[float]] = None,
                      params: Optional[np.ndarray] = None) -> InitialConfig:
    """Rotation-minimizing frame with d_3 along the tangent.

    The seed frame at u=0 takes d_2 as the projection of `reference` on the
    normal plane, so d_1 is orthogonal to the reference direction. The
    director d_2 is transported with the rotation-minimizing ODE
    d' = -(d . t_u) t, integrated knot span by knot span.
    """
    params = greville(patch) if params is None else np.asarray(params, dtype=float)
    geo0 = curve_geometry(patch, 0.0)
    ref = default_reference(geo0.tangent) if reference is None else np.asarray(reference, dtype=float)
    d0 = ref - (ref @ geo0.tangent) * geo0.tangent
    if np.linalg.norm(d0) < 1e-8:
        raise GeometryError("reference direction is parallel to the initial tangent")
    d0 /= np.linalg.norm(d0)

    breaks = np.unique(patch.knots)
    segments = []
    rhs = _rmf_rhs(patch)
    state = d0
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        sol = solve_ivp(rhs, (lo, hi), state, method="DOP853", rtol=ODE_RTOL, atol=ODE_ATOL,
                        dense_output=True)
        if not sol.success:
            raise GeometryError(f"frame transport failed on [{lo}, {hi}]: {sol.message}")
        segments.append((lo, hi, sol.sol))
        state = sol.y[:, -1]

    n = len(params)
    R0 = np.zeros((n, 3, 3))
    K0 = np.zeros((n, 3))
    K0_s = np.zeros((n, 3))
    J = np.zeros(n)
    J_u = np.zeros(n)
    config = InitialConfig(patch, params, R0, K0, K0_s, J, J_u, ref, segments)
    for i, u in enumerate(params):
        geo = curve_geometry(patch, u)
        R = _frame_from_director(geo.tangent, config.director_at(u))
        R0[i] = R
        # Darboux vector of a twist-free frame is t x t_s
        K0[i] = R.T @ np.cross(geo.tangent, geo.tangent_s)
        K0_s[i] = R.T @ np.cross(geo.tangent, geo.tangent_ss)
        J[i] = geo.jacobian
        J_u[i] = geo.jacobian_u

    _check_no_flip(R0, patch.name)
    return config


def _check_no_flip(R0: np.ndarray, name: str):
    for i in range(1, len(R0)):
        cos_angle = 0.5 * (np.trace(R0[i - 1].T @ R0[i]) - 1.0)
        if cos_angle <= 0.0:
            raise GeometryError(f"frame flip between collocation points {i - 1} and {i} on {name}")


def arc_length_derivatives(f: ParamDerivatives, J: float, J_u: float) -> ParamDerivatives:
    """Chain rule from u to the arc length of the initial geometry"""
    if J <= 0.0:
        raise InvalidArgumentError(f"Jacobian must be positive, got {J}")
    d_u = np.asarray(f.d_u, dtype=float)
    d_uu = np.asarray(f.d_uu, dtype=float)
    d_s = d_u / J
    d_ss = d_uu / J ** 2 - d_u * J_u / J ** 3
    return ParamDerivatives(f.value, d_u, d_uu, d_s, d_ss)


def arc_patch(radius: float, sweep: float, p: int, n: int,
              center: Sequence[float] = (0.0, 0.0, 0.0), name: str = "arch") -> SplinePatch:
    """Exact circular arc in the x1-x2 plane starting at center + [radius, 0, 0].

    The quadratic rational Bezier arc is a polynomial in homogeneous
    coordinates, so it lies exactly in every open spline space of degree
    p >= 2; its coefficients are recovered by interpolation at the Greville
    points of the target space.
    """
    if radius <= 0.0:
        raise InvalidArgumentError(f"radius must be positive, got {radius}")
    if not 0.0 < sweep < np.pi:
        raise InvalidArgumentError("single-segment arc requires 0 < sweep < pi")
    if p < 2:
        raise InvalidArgumentError("exact arcs need p >= 2")
    half = 0.5 * sweep
    w1 = np.cos(half)
    P0 = np.array([radius, 0.0, 0.0])
    P1 = np.array([radius, radius * np.tan(half), 0.0])
    P2 = np.array([radius * np.cos(sweep), radius * np.sin(sweep), 0.0])
    H = np.array([np.append(P0, 1.0), np.append(w1 * P1, w1), np.append(P2, 1.0)])

    knots = open_uniform_knots(n, p)
    u = greville(knots, p)
    bern = np.column_stack([(1 - u) ** 2, 2 * u * (1 - u), u ** 2])
    Cw = interpolate_at_greville(bern @ H, knots, p)
    weights = Cw[:, 3]
    ctrl = Cw[:, :3] / weights[:, None] + np.asarray(center, dtype=float)
    return SplinePatch(p, knots, ctrl, weights, name)


def line_patch(start: Sequence[float], end: Sequence[float], p: int, n: int,
               name: str = "line") -> SplinePatch:
    """Straight patch with control points at the Greville points (constant Jacobian)"""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    knots = open_uniform_knots(n, p)
    u = greville(knots, p)
    ctrl = start + np.outer(u, end - start)
    ctrl[0], ctrl[-1] = start, end
    return SplinePatch(p, knots, ctrl, None, name)


def build_arch(radius: float, sweep: float, p: int, n: int,
               reference: Optional[Sequence[float]] = None) -> InitialConfig:
    patch = arc_patch(radius, sweep, p, n)
    logger.info(f"Built circular arch: R={radius} m, sweep={np.degrees(sweep):.1f} deg, p={p}, n={n}")
    return frame_along_curve(patch, reference)


def build_line(length: float, direction: Sequence[float], p: int, n: int,
               origin: Sequence[float] = (0.0, 0.0, 0.0),
               reference: Optional[Sequence[float]] = None) -> InitialConfig:
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    origin = np.asarray(origin, dtype=float)
    patch = line_patch(origin, origin + length * direction, p, n, "cantilever")
    logger.info(f"Built straight beam: L={length} m along {direction}, p={p}, n={n}")
    return frame_along_curve(patch, reference)
