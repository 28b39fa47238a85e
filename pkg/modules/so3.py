"""
SO(3) Module
Finite-rotation kernels: skew/axial maps, exponential and logarithm,
right tangent operator of the exponential map and its directional derivative
"""

import logging
from typing import Sequence

import numpy as np
from scipy.linalg import polar
from scipy.spatial.transform import Rotation as ScipyRotation

from modules.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

# Below this angle the closed forms are replaced by Taylor branches
SMALL_ANGLE = 1e-6
# The derivative coefficients lose digits much earlier than exp/dexp do
SMALL_ANGLE_DERIVATIVE = 5e-2

ORTHONORMALITY_DRIFT = 1e-10


def hat(v: Sequence[float]) -> np.ndarray:
    """Skew-symmetric matrix with hat(v) @ h == cross(v, h); accepts (..., 3)"""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def axial(A: np.ndarray) -> np.ndarray:
    """Axial vector of a skew-symmetric matrix"""
    A = np.asarray(A, dtype=float)
    if A.shape != (3, 3):
        raise InvalidArgumentError(f"axial expects a 3x3 matrix, got shape {A.shape}")
    asym = np.linalg.norm(A + A.T)
    if asym > 1e-10 * np.linalg.norm(A):
        raise InvalidArgumentError(f"matrix is not skew-symmetric (|A + A^T| = {asym:.3e})")
    return np.array([A[2, 1], A[0, 2], A[1, 0]])


def _exp_coefficients(phi: float):
    if phi < SMALL_ANGLE:
        phi2 = phi * phi
        a = 1.0 - phi2 / 6.0 + phi2 * phi2 / 120.0
        b = 0.5 - phi2 / 24.0 + phi2 * phi2 / 720.0
    else:
        a = np.sin(phi) / phi
        b = 2.0 * np.sin(0.5 * phi) ** 2 / (phi * phi)
    return a, b


def exp_so3(theta: Sequence[float]) -> np.ndarray:
    """Rodrigues formula for exp(hat(theta))"""
    theta = np.asarray(theta, dtype=float)
    phi = float(np.linalg.norm(theta))
    a, b = _exp_coefficients(phi)
    W = hat(theta)
    return np.eye(3) + a * W + b * (W @ W)


def _dexp_coefficients(phi: float):
    if phi < SMALL_ANGLE:
        phi2 = phi * phi
        a = 0.5 - phi2 / 24.0 + phi2 * phi2 / 720.0
        b = 1.0 / 6.0 - phi2 / 120.0 + phi2 * phi2 / 5040.0
    else:
        a = 2.0 * np.sin(0.5 * phi) ** 2 / (phi * phi)
        b = (phi - np.sin(phi)) / phi ** 3
    return a, b


def dexp_right(theta: Sequence[float]) -> np.ndarray:
    """Right tangent T(theta): axial(exp(-W) d/ds exp(W)) = T(theta) theta_s"""
    theta = np.asarray(theta, dtype=float)
    phi = float(np.linalg.norm(theta))
    a, b = _dexp_coefficients(phi)
    W = hat(theta)
    return np.eye(3) - a * W + b * (W @ W)


def dexp_right_directional(theta: Sequence[float], v: Sequence[float]) -> np.ndarray:
    """d/de T(theta + e v) at e = 0"""
    theta = np.asarray(theta, dtype=float)
    v = np.asarray(v, dtype=float)
    phi = float(np.linalg.norm(theta))
    a, b = _dexp_coefficients(phi)
    if phi < SMALL_ANGLE_DERIVATIVE:
        phi2 = phi * phi
        da = -1.0 / 12.0 + phi2 / 180.0 - phi2 * phi2 / 6720.0
        db = -1.0 / 60.0 + phi2 / 1260.0 - phi2 * phi2 / 60480.0
    else:
        s, c = np.sin(phi), np.cos(phi)
        da = (phi * s - 2.0 + 2.0 * c) / phi ** 4
        db = (3.0 * s - 2.0 * phi - phi * c) / phi ** 5
    W = hat(theta)
    V = hat(v)
    tv = float(theta @ v)
    return -da * tv * W - a * V + db * tv * (W @ W) + b * (V @ W + W @ V)


def dexp_right_inv(theta: Sequence[float]) -> np.ndarray:
    """Inverse of dexp_right"""
    theta = np.asarray(theta, dtype=float)
    phi = float(np.linalg.norm(theta))
    if phi < SMALL_ANGLE_DERIVATIVE:
        phi2 = phi * phi
        c = 1.0 / 12.0 + phi2 / 720.0 + phi2 * phi2 / 30240.0
    else:
        c = 1.0 / phi ** 2 - (1.0 + np.cos(phi)) / (2.0 * phi * np.sin(phi))
    W = hat(theta)
    return np.eye(3) + 0.5 * W + c * (W @ W)


def log_so3(R: np.ndarray) -> np.ndarray:
    """Rotation vector of R (principal branch, angle in [0, pi])"""
    return ScipyRotation.from_matrix(np.asarray(R, dtype=float)).as_rotvec()


def is_rotation(R: np.ndarray, tol: float = 1e-12) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    return bool(np.allclose(R.T @ R, np.eye(3), rtol=0.0, atol=tol)
                and abs(np.linalg.det(R) - 1.0) <= tol)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Polar projection onto SO(3), applied only when drift is measurable"""
    R = np.asarray(R, dtype=float)
    drift = np.linalg.norm(R.T @ R - np.eye(3))
    if drift <= ORTHONORMALITY_DRIFT:
        return R
    logger.debug(f"Re-orthonormalizing rotation (drift {drift:.2e})")
    U, _ = polar(R)
    return U
