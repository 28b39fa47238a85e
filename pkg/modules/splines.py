"""
Splines Module
B-spline / NURBS curve machinery: basis functions and derivatives,
Greville abscissae, knot insertion, interpolation and least-squares fitting
"""

import logging
from dataclasses import dataclass, field
from math import comb
from typing import Optional, Tuple

import numpy as np

from modules.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

PARAM_TOL = 1e-13
MAX_DERIVATIVE = 3


@dataclass
class SplinePatch:
    """Single NURBS curve patch on [0, 1]"""

    degree: int
    knots: np.ndarray
    control_points: np.ndarray
    weights: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        self.control_points = np.array(self.control_points, dtype=float).reshape(-1, 3)
        n = len(self.control_points)
        if self.weights is None:
            self.weights = np.ones(n)
        self.weights = np.asarray(self.weights, dtype=float)
        p = self.degree

        if p < 1:
            raise InvalidArgumentError(f"degree must be >= 1, got {p}")
        if n < p + 1:
            raise InvalidArgumentError(f"need at least p+1 = {p + 1} control points, got {n}")
        if len(self.knots) != n + p + 1:
            raise InvalidArgumentError(
                f"knot vector length {len(self.knots)} != n + p + 1 = {n + p + 1}")
        if np.any(np.diff(self.knots) < 0):
            raise InvalidArgumentError("knot vector must be nondecreasing")
        if not (np.allclose(self.knots[:p + 1], 0.0) and np.allclose(self.knots[-p - 1:], 1.0)):
            raise InvalidArgumentError("knot vector must be open on [0, 1]")
        if len(self.weights) != n or np.any(self.weights <= 0):
            raise InvalidArgumentError("weights must be strictly positive, one per control point")

    @property
    def n(self) -> int:
        return len(self.control_points)

    @property
    def is_rational(self) -> bool:
        return not np.allclose(self.weights, self.weights[0])

    def with_control_points(self, control_points: np.ndarray) -> "SplinePatch":
        return SplinePatch(self.degree, self.knots.copy(), np.array(control_points, dtype=float),
                           self.weights.copy(), self.name)


@dataclass
class ParamDerivatives:
    """Value and first/second derivatives of a field in u and in arc length s"""

    value: np.ndarray
    d_u: np.ndarray
    d_uu: np.ndarray
    d_s: np.ndarray = field(default=None)
    d_ss: np.ndarray = field(default=None)


def open_uniform_knots(n: int, p: int) -> np.ndarray:
    """Open knot vector on [0, 1] with n - p - 1 uniformly spaced interior knots"""
    if n < p + 1:
        raise InvalidArgumentError(f"need n >= p + 1 (n={n}, p={p})")
    interior = np.linspace(0.0, 1.0, n - p + 1)[1:-1]
    return np.concatenate([np.zeros(p + 1), interior, np.ones(p + 1)])


def _check_param(u: float) -> float:
    if not (-PARAM_TOL <= u <= 1.0 + PARAM_TOL):
        raise InvalidArgumentError(f"parameter u={u} outside [0, 1]")
    return min(max(float(u), 0.0), 1.0)


def find_span(knots: np.ndarray, p: int, u: float) -> int:
    n = len(knots) - p - 1
    if u >= knots[n]:
        return n - 1
    if u <= knots[p]:
        return p
    low, high = p, n
    mid = (low + high) // 2
    while u < knots[mid] or u >= knots[mid + 1]:
        if u < knots[mid]:
            high = mid
        else:
            low = mid
        mid = (low + high) // 2
    return mid


def basis_derivatives(knots: np.ndarray, p: int, u: float, max_deriv: int) -> Tuple[int, np.ndarray]:
    """Non-rational basis values and derivatives of the p+1 active functions.

    Returns (span, ders) with ders[k, j] the k-th derivative of N_{span-p+j, p}(u).
    """
    span = find_span(knots, p, u)
    ndu = np.zeros((p + 1, p + 1))
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = u - knots[span + 1 - j]
        right[j] = knots[span + j] - u
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((max_deriv + 1, p + 1))
    ders[0, :] = ndu[:, p]
    top = min(max_deriv, p)
    a = np.zeros((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, top + 1):
            d = 0.0
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1

    factor = p
    for k in range(1, top + 1):
        ders[k, :] *= factor
        factor *= (p - k)
    return span, ders


def basis_eval(patch: SplinePatch, u: float, max_deriv: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    """Rational basis R_{j,p}(u) and u-derivatives for the active functions.

    Returns (indices, table) with table[k, a] the k-th derivative of R_{indices[a]}.
    """
    if not 0 <= max_deriv <= MAX_DERIVATIVE:
        raise InvalidArgumentError(f"max_deriv must be in 0..{MAX_DERIVATIVE}")
    u = _check_param(u)
    p = patch.degree
    span, ders = basis_derivatives(patch.knots, p, u, max_deriv)
    indices = np.arange(span - p, span + 1)
    w = patch.weights[indices]

    A = ders * w
    W = A.sum(axis=1)
    table = np.zeros_like(A)
    for k in range(max_deriv + 1):
        v = A[k].copy()
        for i in range(1, k + 1):
            v -= comb(k, i) * W[i] * table[k - i]
        table[k] = v / W[0]
    return indices, table


def greville(patch_or_knots, p: Optional[int] = None) -> np.ndarray:
    """Greville abscissae: averages of p consecutive interior knots"""
    if isinstance(patch_or_knots, SplinePatch):
        knots, p = patch_or_knots.knots, patch_or_knots.degree
    else:
        knots = np.asarray(patch_or_knots, dtype=float)
    n = len(knots) - p - 1
    return np.array([knots[j + 1:j + p + 1].mean() for j in range(n)])


def curve_eval(patch: SplinePatch, u: float, max_deriv: int = 2) -> np.ndarray:
    """Position c(u) and its u-derivatives, shape (max_deriv + 1, 3)"""
    indices, table = basis_eval(patch, u, max_deriv)
    return table @ patch.control_points[indices]


def insert_knot(patch: SplinePatch, u: float) -> SplinePatch:
    """Boehm single knot insertion, performed on homogeneous control points"""
    u = _check_param(u)
    if u <= 0.0 or u >= 1.0:
        raise InvalidArgumentError("knot insertion requires an interior parameter")
    p, n = patch.degree, patch.n
    U = patch.knots
    k = find_span(U, p, u)
    Pw = np.hstack([patch.control_points * patch.weights[:, None], patch.weights[:, None]])

    Qw = np.zeros((n + 1, 4))
    for i in range(n + 1):
        if i <= k - p:
            Qw[i] = Pw[i]
        elif i >= k + 1:
            Qw[i] = Pw[i - 1]
        else:
            alpha = (u - U[i]) / (U[i + p] - U[i])
            Qw[i] = alpha * Pw[i] + (1.0 - alpha) * Pw[i - 1]

    new_knots = np.insert(U, k + 1, u)
    weights = Qw[:, 3]
    return SplinePatch(p, new_knots, Qw[:, :3] / weights[:, None], weights, patch.name)


def collocation_matrix(knots: np.ndarray, p: int, params: np.ndarray) -> np.ndarray:
    """Dense matrix of non-rational basis values N_j(params_i)"""
    n = len(knots) - p - 1
    B = np.zeros((len(params), n))
    for i, u in enumerate(params):
        span, ders = basis_derivatives(knots, p, _check_param(u), 0)
        B[i, span - p:span + 1] = ders[0]
    return B


def interpolate_at_greville(values: np.ndarray, knots: np.ndarray, p: int) -> np.ndarray:
    """B-spline coefficients reproducing `values` sampled at the Greville points"""
    B = collocation_matrix(knots, p, greville(knots, p))
    return np.linalg.solve(B, np.asarray(values, dtype=float))


def chord_length_params(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    total = seg.sum()
    if total <= 0.0:
        raise InvalidArgumentError("cannot parametrize coincident points")
    return np.concatenate([[0.0], np.cumsum(seg) / total])


def fit_points(points: np.ndarray, n: int, p: int, name: str = "") -> Tuple[SplinePatch, float]:
    """Least-squares B-spline fit with exact end interpolation.

    The end control points are pinned to the first and last sample so that
    patches built from shared samples meet exactly; interior control points
    solve the chord-length parametrized least-squares problem.
    """
    points = np.asarray(points, dtype=float)
    if len(points) < n:
        raise InvalidArgumentError(f"need at least {n} samples to fit {n} control points")
    params = chord_length_params(points)
    knots = open_uniform_knots(n, p)
    B = collocation_matrix(knots, p, params)

    ctrl = np.zeros((n, 3))
    ctrl[0], ctrl[-1] = points[0], points[-1]
    rhs = points - np.outer(B[:, 0], ctrl[0]) - np.outer(B[:, -1], ctrl[-1])
    ctrl[1:-1], *_ = np.linalg.lstsq(B[:, 1:-1], rhs, rcond=None)

    residual = float(np.max(np.linalg.norm(B @ ctrl - points, axis=1)))
    logger.info(f"Fitted patch {name or '<unnamed>'}: p={p}, n={n}, max residual {residual:.3e} m")
    return SplinePatch(p, knots, ctrl, None, name), residual
