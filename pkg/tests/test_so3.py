import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from modules.errors import InvalidArgumentError
from modules.so3 import (axial, dexp_right, dexp_right_directional, dexp_right_inv, exp_so3, hat, is_rotation,
                         log_so3, orthonormalize)


def test_hat_is_cross_product(rng):
    v, w = rng.normal(size=3), rng.normal(size=3)
    assert np.allclose(hat(v) @ w, np.cross(v, w))
    assert np.allclose(axial(hat(v)), v)


def test_hat_vectorized(rng):
    v = rng.normal(size=(5, 3))
    H = hat(v)
    assert H.shape == (5, 3, 3)
    assert np.allclose(H[3], hat(v[3]))


def test_axial_rejects_non_skew():
    with pytest.raises(InvalidArgumentError):
        axial(np.eye(3))
    with pytest.raises(InvalidArgumentError):
        axial(np.zeros((2, 2)))


@pytest.mark.parametrize("scale", [0.0, 1e-9, 1e-4, 0.3, 2.0, 3.1])
def test_exp_matches_scipy(rng, scale):
    theta = scale * rng.normal(size=3) / np.sqrt(3.0)
    R = exp_so3(theta)
    assert is_rotation(R)
    assert np.allclose(R, Rotation.from_rotvec(theta).as_matrix(), atol=1e-14)


@pytest.mark.parametrize("scale", [1e-3, 0.7, 2.5])
def test_log_inverts_exp(rng, scale):
    theta = rng.normal(size=3)
    theta *= scale / np.linalg.norm(theta)
    assert np.allclose(log_so3(exp_so3(theta)), theta, atol=1e-12)


@pytest.mark.parametrize("scale", [1e-8, 1e-2, 0.4, 1.5, 3.0])
def test_dexp_right_is_right_trivialized_derivative(rng, scale):
    theta = scale * rng.normal(size=3)
    v = rng.normal(size=3)
    eps = 1e-6
    dR = (exp_so3(theta + eps * v) - exp_so3(theta - eps * v)) / (2.0 * eps)
    omega = exp_so3(theta).T @ dR
    assert np.allclose(0.5 * (omega - omega.T), hat(dexp_right(theta) @ v), atol=1e-8)


@pytest.mark.parametrize("scale", [0.0, 1e-7, 1e-3, 0.04, 0.06, 1.0, 1.5])
def test_dexp_right_inverse(rng, scale):
    theta = scale * rng.normal(size=3)
    assert np.allclose(dexp_right_inv(theta) @ dexp_right(theta), np.eye(3), atol=1e-12)


@pytest.mark.parametrize("scale", [1e-6, 1e-2, 0.049, 0.051, 0.8, 2.0])
def test_dexp_right_directional(rng, scale):
    theta = scale * rng.normal(size=3)
    v = rng.normal(size=3)
    eps = 1e-6
    fd = (dexp_right(theta + eps * v) - dexp_right(theta - eps * v)) / (2.0 * eps)
    assert np.allclose(dexp_right_directional(theta, v), fd, atol=1e-8)


def test_orthonormalize_projects_drifted_matrix(rng):
    R = exp_so3(rng.normal(size=3))
    drifted = R + 1e-6 * rng.normal(size=(3, 3))
    fixed = orthonormalize(drifted)
    assert is_rotation(fixed)
    assert np.allclose(fixed, R, atol=1e-5)
    assert orthonormalize(R) is R
