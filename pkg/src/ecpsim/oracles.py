"""Closed-form single-step solutions for pure sliding and pure spinning on a plane.

These are independent of the MNCP machinery and serve as per-step ground truth.
The ground is the plane ``z = plane_height`` with normal +Z; impulses are
``AppliedImpulse`` values excluding gravity.

The contact point offsets come from the moment balance of a non-rotating body:
with ``r = a − q`` and ``A = (p_t, p_o, p_n)``, ``r × A + p_τ = 0`` gives
``r_x = −(p_t H − p_yτ)/p_n`` and ``r_y = −(p_o H + p_xτ)/p_n``, so a body sliding
under friction alone presses hardest ahead of its centre of mass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contact import FrictionParams
from .stepper import AppliedImpulse

COMPAT_TOL = 1e-9


class StickingRegime(ValueError):
    """Friction can absorb the whole motion: the sliding closed forms do not apply."""


class IncompatibleImpulse(ValueError):
    """Applied moments are inconsistent with pure translation or pure rotation."""


@dataclass(frozen=True)
class SurfaceTranslationSolution:
    p_n: float
    p_t: float
    p_o: float
    p_r: float
    v_next: np.ndarray
    a2: np.ndarray
    sigma_prime: float
    sigma_next: float


@dataclass(frozen=True)
class SurfaceRotationSolution:
    p_n: float
    p_r: float
    w_next: float
    v_next: np.ndarray
    a2_delta: np.ndarray
    sigma_prime: float


@dataclass(frozen=True)
class LineContactCoords:
    L: float
    D: float
    H: float = float("nan")


@dataclass(frozen=True)
class LineTranslationSolution:
    """Impulses and velocities in the frame turned by θ_z (``starred``) and in world axes."""

    starred: SurfaceTranslationSolution
    world: SurfaceTranslationSolution
    theta_z: float


@dataclass(frozen=True)
class LineRotationSolution:
    p_n: float
    p_r: float
    w_next: float
    v_next: np.ndarray
    coords: LineContactCoords
    sigma_prime: float


def _isotropic(fp: FrictionParams):
    if not np.isclose(fp.e_t, fp.e_o, rtol=1e-12, atol=0.0):
        raise ValueError("closed forms need equal tangential semi-axes (e_t = e_o)")


def surface_translation_step(mass: float, beta: float, h: float, fp: FrictionParams, velocity,
                             impulse: AppliedImpulse | None = None, position=(0.0, 0.0, 0.5),
                             plane_height: float = 0.0, tol: float = COMPAT_TOL) -> SurfaceTranslationSolution:
    """One step of a body sliding flat on the ground without rotating."""
    _isotropic(fp)
    p = impulse or AppliedImpulse()
    vx, vy = float(velocity[0]), float(velocity[1])
    p_n = mass * beta * h - p.p_z
    ux, uy = vx + p.p_x / mass, vy + p.p_y / mass
    sigma_p = float(np.sqrt(fp.e_t**2 * ux**2 + fp.e_o**2 * uy**2))
    if p_n <= 0.0:
        raise StickingRegime("applied lift cancels the normal impulse")
    if mass * sigma_p - fp.e_t**2 * fp.mu * p_n < 0.0 or sigma_p == 0.0:
        raise StickingRegime(f"friction {fp.e_t**2 * fp.mu * p_n:.3e} exceeds momentum {mass * sigma_p:.3e}")
    compat = p.p_zt * sigma_p - fp.e_o * p.p_yt * uy - fp.e_t * p.p_xt * ux
    if abs(compat) > tol:
        raise IncompatibleImpulse(f"applied moments leave residual {compat:.3e}")
    p_t = -fp.e_t**2 * fp.mu * p_n * (p.p_x + mass * vx) / (mass * sigma_p)
    p_o = -fp.e_o**2 * fp.mu * p_n * (p.p_y + mass * vy) / (mass * sigma_p)
    v_next = np.array([(p_t + p.p_x) / mass + vx, (p_o + p.p_y) / mass + vy, 0.0])
    q = np.asarray(position, dtype=float)
    height = q[2] - plane_height
    centre = q[:2] + h * v_next[:2]
    a2 = np.array([
        centre[0] - (p_t * height - p.p_yt) / p_n,
        centre[1] - (p_o * height + p.p_xt) / p_n,
        plane_height,
    ])
    return SurfaceTranslationSolution(p_n, p_t, p_o, 0.0, v_next, a2, sigma_p, fp.e_t * float(np.hypot(*v_next[:2])))


def surface_rotation_step(mass: float, beta: float, h: float, inertia_z: float, fp: FrictionParams,
                          w_z: float, impulse: AppliedImpulse | None = None, velocity=(0.0, 0.0),
                          tol: float = COMPAT_TOL) -> SurfaceRotationSolution:
    """One step of a body spinning flat about the ground normal without sliding."""
    p = impulse or AppliedImpulse()
    p_n = mass * beta * h - p.p_z
    if p_n <= 0.0:
        raise StickingRegime("applied lift cancels the normal impulse")
    spin = w_z + p.p_zt / inertia_z
    sigma_p = fp.e_r * abs(spin)
    if sigma_p == 0.0 or inertia_z * sigma_p - fp.e_r**2 * fp.mu * p_n < 0.0:
        raise StickingRegime("friction moment absorbs the spin")
    vx, vy = float(velocity[0]), float(velocity[1])
    compat = p.p_xt * (vy + p.p_y / mass) - p.p_yt * (vx + p.p_x / mass)
    if abs(compat) > tol:
        raise IncompatibleImpulse(f"applied moments leave residual {compat:.3e}")
    p_r = -fp.e_r**2 * fp.mu * p_n * (p.p_zt + inertia_z * w_z) / (inertia_z * sigma_p)
    w_next = (p_r + p.p_zt) / inertia_z + w_z
    v_next = -w_next * np.array([p.p_xt, p.p_yt]) / p_n
    return SurfaceRotationSolution(p_n, p_r, w_next, v_next, np.zeros(2), sigma_p)


def heading_rotation(theta_z: float) -> np.ndarray:
    """Rotation about +Z by ``theta_z``; its transpose maps world vectors to the turned frame."""
    c, s = np.cos(theta_z), np.sin(theta_z)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _turn(impulse: AppliedImpulse, R: np.ndarray) -> AppliedImpulse:
    v = impulse.vector()
    return AppliedImpulse.from_vector(np.concatenate([R @ v[:3], R @ v[3:]]))


def line_translation_step(mass: float, beta: float, h: float, fp: FrictionParams, velocity,
                          theta_z: float, impulse: AppliedImpulse | None = None, position=(0.0, 0.0, 1.0),
                          plane_height: float = 0.0, tol: float = COMPAT_TOL) -> LineTranslationSolution:
    """Sliding line contact solved in the frame turned by ``theta_z`` and mapped back."""
    R1 = heading_rotation(theta_z)
    p = impulse or AppliedImpulse()
    v_star = R1.T @ np.array([velocity[0], velocity[1], 0.0])
    q = np.asarray(position, dtype=float)
    star = surface_translation_step(
        mass, beta, h, fp, v_star[:2], _turn(p, R1.T), R1.T @ q, plane_height, tol,
    )
    world = SurfaceTranslationSolution(
        star.p_n, *(R1 @ np.array([star.p_t, star.p_o, 0.0]))[:2], star.p_r,
        R1 @ star.v_next, R1 @ star.a2, star.sigma_prime, star.sigma_next,
    )
    return LineTranslationSolution(star, world, theta_z)


def line_rotation_step(mass: float, beta: float, h: float, inertia_z: float, fp: FrictionParams,
                       w_z: float, theta_z: float, coords: LineContactCoords,
                       impulse: AppliedImpulse | None = None, velocity=(0.0, 0.0),
                       tol: float = COMPAT_TOL) -> LineRotationSolution:
    """Spinning line contact: the contact point keeps its line coordinates."""
    R1 = heading_rotation(theta_z)
    p = impulse or AppliedImpulse()
    v_star = R1.T @ np.array([velocity[0], velocity[1], 0.0])
    spin = surface_rotation_step(mass, beta, h, inertia_z, fp, w_z, _turn(p, R1.T), v_star[:2], tol)
    v_world = (R1 @ np.array([*spin.v_next, 0.0]))[:2]
    return LineRotationSolution(spin.p_n, spin.p_r, spin.w_next, v_world, coords, spin.sigma_prime)


def line_coords(a, q, theta_z: float) -> LineContactCoords:
    """Contact point relative to the centre of mass, along (L) and across (D) the heading."""
    dx, dy = float(a[0] - q[0]), float(a[1] - q[1])
    c, s = np.cos(theta_z), np.sin(theta_z)
    height = float(q[2] - a[2]) if len(a) > 2 and len(q) > 2 else float("nan")
    return LineContactCoords(c * dx + s * dy, s * dx - c * dy, height)
