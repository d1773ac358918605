"""Small fixed-size linear algebra and quaternion kinematics.

Quaternions are scalar-first ``(w, x, y, z)``. Angular velocities are spatial
(expressed in the inertial frame) everywhere in the package.
"""

from __future__ import annotations

import numpy as np

UNIT_TOL = 1e-6


class NonUnitQuaternion(ValueError):
    """Raised when a quaternion is too far from unit norm to be a rotation."""


class ZeroNormal(ValueError):
    """Raised when a direction vector has (numerically) zero length."""


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ u == cross(v, u)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise NonUnitQuaternion("zero quaternion cannot be normalized")
    return q / n


def quat_mul(p, q) -> np.ndarray:
    """Hamilton product ``p ⊗ q``."""
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ])


def quat_to_rotation(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if abs(np.linalg.norm(q) - 1.0) > UNIT_TOL:
        raise NonUnitQuaternion(f"|q| = {np.linalg.norm(q):.3e} is not unit")
    w, x, y, z = q
    return np.array([
        [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    s = np.sin(0.5 * angle)
    return np.array([np.cos(0.5 * angle), *(s * axis)])


def kinematic_map(q, omega) -> np.ndarray:
    """Quaternion rate ``½ (0, ω) ⊗ q`` for a spatial angular velocity."""
    return 0.5 * quat_mul(np.array([0.0, *omega]), q)


def rate_matrix(q) -> np.ndarray:
    """4x3 matrix E(q) with ``(0, ω) ⊗ q == E(q) @ ω``."""
    w, x, y, z = q
    return np.array([
        [-x, -y, -z],
        [w, z, -y],
        [-z, w, x],
        [y, -x, w],
    ])


def integrate_orientation(q, omega, h: float) -> np.ndarray:
    """One backward-Euler orientation update followed by renormalization."""
    return quat_normalize(np.asarray(q, dtype=float) + h * kinematic_map(q, omega))


def rotation_derivatives(q) -> np.ndarray:
    """Partial derivatives dR/dq_k of the rotation matrix, shape (4, 3, 3)."""
    w, x, y, z = q
    return 2.0 * np.array([
        [[w, -z, y], [z, w, -x], [-y, x, w]],
        [[x, y, z], [y, -x, -w], [z, w, -x]],
        [[-y, x, w], [x, y, z], [-w, z, -y]],
        [[-z, -w, x], [w, -z, y], [x, y, z]],
    ])


def tangent_basis(n) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic right-handed tangents ``(t, o)`` for a unit normal.

    The coordinate axis with the smallest ``|n_k|`` (last one on ties) is
    crossed with ``n``; for ``n = e_z`` this yields ``t = e_x, o = e_y``.
    """
    n = np.asarray(n, dtype=float)
    if np.linalg.norm(n) < 1e-9:
        raise ZeroNormal("normal has zero length")
    k = tangent_axis(n)
    e = np.zeros(3)
    e[k] = 1.0
    t = np.cross(e, n)
    t /= np.linalg.norm(t)
    return t, np.cross(n, t)


def tangent_axis(n) -> int:
    a = np.abs(np.asarray(n, dtype=float))
    return int(2 - np.argmin(a[::-1]))
