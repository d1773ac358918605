"""Rigid-body mass properties, state and generalized inertia."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .algebra import quat_normalize, quat_to_rotation, skew
from .geometry import ConvexGeometry


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    orientation: np.ndarray

    def rotation(self) -> np.ndarray:
        return quat_to_rotation(self.orientation)


@dataclass(frozen=True)
class State:
    position: np.ndarray
    orientation: np.ndarray
    linear_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "orientation", quat_normalize(self.orientation))
        object.__setattr__(self, "linear_velocity", np.asarray(self.linear_velocity, dtype=float))
        object.__setattr__(self, "angular_velocity", np.asarray(self.angular_velocity, dtype=float))

    @property
    def pose(self) -> Pose:
        return Pose(self.position, self.orientation)

    @property
    def nu(self) -> np.ndarray:
        """Generalized velocity [v; ω]."""
        return np.concatenate([self.linear_velocity, self.angular_velocity])

    def with_nu(self, nu) -> "State":
        return replace(self, linear_velocity=np.array(nu[:3]), angular_velocity=np.array(nu[3:]))


@dataclass(frozen=True)
class RigidBody:
    """A body with mass properties. ``fixed`` bodies are immovable environment."""

    name: str
    geometry: ConvexGeometry
    mass: float = 0.0
    body_inertia: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    fixed: bool = False

    def __post_init__(self):
        inertia = np.asarray(self.body_inertia, dtype=float)
        object.__setattr__(self, "body_inertia", inertia)
        if self.fixed:
            return
        if not self.mass > 0:
            raise ValueError(f"body {self.name!r}: mass must be positive")
        if not np.allclose(inertia, inertia.T) or np.linalg.eigvalsh(inertia).min() <= 0:
            raise ValueError(f"body {self.name!r}: inertia must be symmetric positive definite")


def cuboid_inertia(mass: float, size) -> np.ndarray:
    a, b, c = size
    return mass / 12.0 * np.diag([b * b + c * c, a * a + c * c, a * a + b * b])


def cylinder_inertia(mass: float, radius: float, length: float) -> np.ndarray:
    """Solid cylinder with its axis along body Y."""
    transverse = mass * (3 * radius**2 + length**2) / 12.0
    return np.diag([transverse, 0.5 * mass * radius**2, transverse])


def world_inertia(body: RigidBody, orientation) -> np.ndarray:
    R = quat_to_rotation(orientation)
    inertia = R @ body.body_inertia @ R.T
    return 0.5 * (inertia + inertia.T)


def generalized_mass(body: RigidBody, orientation) -> np.ndarray:
    M = np.zeros((6, 6))
    M[:3, :3] = body.mass * np.eye(3)
    M[3:, 3:] = world_inertia(body, orientation)
    return M


def coriolis_moment(inertia_world, omega) -> np.ndarray:
    """Gyroscopic moment ``−ω × (I ω)``."""
    omega = np.asarray(omega, dtype=float)
    return -np.cross(omega, inertia_world @ omega)


def coriolis_jacobian(inertia_world, omega) -> np.ndarray:
    """d/dω of ``−ω × (I ω)``."""
    omega = np.asarray(omega, dtype=float)
    return -(skew(omega) @ inertia_world - skew(inertia_world @ omega))
