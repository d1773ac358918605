"""Convex bodies as intersections of smooth convex inequalities.

Every constraint is a (possibly degenerate) quadric in body coordinates,

    f(y) = ½ yᵀ Q y + bᵀ y + c ≤ 0,

which covers half-spaces (Q = 0) and the lateral surface of a cylinder
(Q = diag(2, 0, 2)). World-frame evaluation goes through ``y = Rᵀ(x − p)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, nnls

from .algebra import quat_to_rotation

ACTIVE_TOL = 1e-6


class NotOnBoundary(ValueError):
    pass


@dataclass(frozen=True)
class SmoothConstraint:
    name: str
    Q: np.ndarray
    b: np.ndarray
    c: float

    @property
    def affine(self) -> bool:
        return not np.any(self.Q)


@dataclass(frozen=True)
class ConvexGeometry:
    """Ordered constraint list plus a body-frame bounding box (None if unbounded)."""

    kind: str
    constraints: tuple[SmoothConstraint, ...]
    half_extents: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.constraints)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stacked (Q, b, c) with shapes (k, 3, 3), (k, 3), (k,)."""
        Q = np.array([s.Q for s in self.constraints], dtype=float).reshape(-1, 3, 3)
        b = np.array([s.b for s in self.constraints], dtype=float).reshape(-1, 3)
        c = np.array([s.c for s in self.constraints], dtype=float)
        return Q, b, c

    @property
    def bounded(self) -> bool:
        return self.half_extents is not None


def _affine(name: str, normal, offset: float) -> SmoothConstraint:
    return SmoothConstraint(name, np.zeros((3, 3)), np.asarray(normal, dtype=float), -float(offset))


def halfspace(normal=(0.0, 0.0, 1.0), offset: float = 0.0) -> ConvexGeometry:
    """Points with ``n·x ≤ offset``; the normal is normalized."""
    n = np.asarray(normal, dtype=float)
    norm = np.linalg.norm(n)
    n = n / norm
    return ConvexGeometry(
        "halfspace", (_affine("plane", n, offset / norm),),
        params={"normal": n.tolist(), "offset": offset / norm},
    )


def cuboid(size) -> ConvexGeometry:
    """Axis-aligned box centered on the body origin. Faces: +x, −x, +y, −y, +z, −z."""
    half = 0.5 * np.asarray(size, dtype=float)
    faces = []
    for axis, label in enumerate("xyz"):
        for sign, s in ((1.0, "+"), (-1.0, "-")):
            n = np.zeros(3)
            n[axis] = sign
            faces.append(_affine(f"{s}{label}", n, half[axis]))
    return ConvexGeometry("cuboid", tuple(faces), half, params={"size": (2 * half).tolist()})


def cylinder(radius: float, length: float) -> ConvexGeometry:
    """Solid cylinder with its axis along body Y: lateral quadric plus two caps."""
    lateral = SmoothConstraint("lateral", np.diag([2.0, 0.0, 2.0]), np.zeros(3), -radius**2)
    caps = (
        _affine("+cap", [0.0, 1.0, 0.0], 0.5 * length),
        _affine("-cap", [0.0, -1.0, 0.0], 0.5 * length),
    )
    return ConvexGeometry(
        "cylinder", (lateral, *caps), np.array([radius, 0.5 * length, radius]),
        params={"radius": radius, "length": length},
    )


def sphere(radius: float) -> ConvexGeometry:
    s = SmoothConstraint("sphere", 2.0 * np.eye(3), np.zeros(3), -radius**2)
    return ConvexGeometry("sphere", (s,), np.full(3, radius), params={"radius": radius})


def _frame(pose) -> tuple[np.ndarray, np.ndarray]:
    return np.asarray(pose.position, dtype=float), quat_to_rotation(pose.orientation)


def to_body(pose, x) -> np.ndarray:
    p, R = _frame(pose)
    return R.T @ (np.asarray(x, dtype=float) - p)


def eval_constraints(geom: ConvexGeometry, pose, x) -> np.ndarray:
    Q, b, c = geom.arrays()
    y = to_body(pose, x)
    return 0.5 * np.einsum("i,kij,j->k", y, Q, y) + b @ y + c


def eval_gradients(geom: ConvexGeometry, pose, x) -> np.ndarray:
    """World-frame gradients, one row per constraint."""
    _, R = _frame(pose)
    Q, b, _ = geom.arrays()
    y = to_body(pose, x)
    return (Q @ y + b) @ R.T


def max_violation(geom: ConvexGeometry, pose, x) -> float:
    return float(np.max(eval_constraints(geom, pose, x)))


def normal_cone_contains(geom: ConvexGeometry, pose, x, direction, tol: float = ACTIVE_TOL) -> bool:
    """Whether ``direction`` is a conic combination of active constraint gradients at ``x``."""
    values = eval_constraints(geom, pose, x)
    if abs(values.max()) > tol:
        raise NotOnBoundary(f"max constraint value {values.max():.3e} exceeds {tol:.1e}")
    active = np.flatnonzero(np.abs(values) <= tol)
    grads = eval_gradients(geom, pose, x)[active]
    direction = np.asarray(direction, dtype=float)
    _, residual = nnls(grads.T, direction)
    return residual <= tol * max(1.0, np.linalg.norm(direction))


def boundary_probes(geom: ConvexGeometry, pose, density: int = 12) -> np.ndarray:
    """World-frame sample points on the boundary of a bounded geometry."""
    _, R = _frame(pose)
    p = np.asarray(pose.position, dtype=float)
    if geom.kind == "cuboid":
        grid = np.linspace(-1.0, 1.0, density)
        pts = []
        for axis in range(3):
            others = [a for a in range(3) if a != axis]
            u, v = np.meshgrid(grid, grid)
            for sign in (-1.0, 1.0):
                face = np.zeros((u.size, 3))
                face[:, axis] = sign
                face[:, others[0]] = u.ravel()
                face[:, others[1]] = v.ravel()
                pts.append(face)
        local = np.vstack(pts) * geom.half_extents
    elif geom.kind == "cylinder":
        r, half = geom.params["radius"], 0.5 * geom.params["length"]
        ang = np.linspace(0.0, 2 * np.pi, 4 * density, endpoint=False)
        ys = np.linspace(-half, half, density)
        A, Y = np.meshgrid(ang, ys)
        lateral = np.column_stack([r * np.cos(A.ravel()), Y.ravel(), r * np.sin(A.ravel())])
        rad = np.linspace(0.0, r, density // 2 + 1)
        A2, R2 = np.meshgrid(ang, rad)
        caps = [
            np.column_stack([R2.ravel() * np.cos(A2.ravel()), np.full(A2.size, s * half), R2.ravel() * np.sin(A2.ravel())])
            for s in (-1.0, 1.0)
        ]
        local = np.vstack([lateral, *caps])
    elif geom.kind == "sphere":
        r = geom.params["radius"]
        th, ph = np.meshgrid(np.linspace(0, np.pi, density), np.linspace(0, 2 * np.pi, 2 * density))
        local = r * np.column_stack([np.sin(th.ravel()) * np.cos(ph.ravel()), np.sin(th.ravel()) * np.sin(ph.ravel()), np.cos(th.ravel())])
    else:
        raise ValueError(f"no boundary probes for unbounded geometry {geom.kind!r}")
    return local @ R.T + p


def _inside_samples(geom: ConvexGeometry, pose, density: int) -> np.ndarray:
    g = np.linspace(-1.0, 1.0, density)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    local = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()]) * geom.half_extents
    Q, b, c = geom.arrays()
    vals = 0.5 * np.einsum("ni,kij,nj->nk", local, Q, local) + local @ b.T + c
    local = local[vals.max(axis=1) <= 1e-12]
    _, R = _frame(pose)
    return local @ R.T + np.asarray(pose.position, dtype=float)


def _inside_constraint(geom, pose, offset):
    return {
        "type": "ineq",
        "fun": lambda z: -eval_constraints(geom, pose, z[offset:offset + 3]),
        "jac": lambda z: _pad(-eval_gradients(geom, pose, z[offset:offset + 3]), offset, z.size),
    }


def _pad(block: np.ndarray, offset: int, n: int) -> np.ndarray:
    out = np.zeros((block.shape[0], n))
    out[:, offset:offset + 3] = block
    return out


def closest_points_oracle(geom_f, pose_f, geom_g, pose_g, grid_density: int = 11):
    """Brute-force closest points (a1 ∈ F, a2 ∈ G) by grid sampling plus SLSQP polish.

    At least one body must be bounded; an unbounded body must be a half-space.
    """
    if not geom_f.bounded and not geom_g.bounded:
        raise ValueError("at least one body must be bounded")
    if not geom_g.bounded or not geom_f.bounded:
        swap = not geom_f.bounded
        body, bpose, plane, ppose = (geom_g, pose_g, geom_f, pose_f) if swap else (geom_f, pose_f, geom_g, pose_g)
        pts = _inside_samples(body, bpose, grid_density)
        signed = np.array([eval_constraints(plane, ppose, x)[0] for x in pts])
        x0 = pts[np.argmin(signed)]
        res = minimize(
            lambda z: eval_constraints(plane, ppose, z)[0], x0,
            jac=lambda z: eval_gradients(plane, ppose, z)[0],
            constraints=[_inside_constraint(body, bpose, 0)], method="SLSQP",
            options={"ftol": 1e-14, "maxiter": 200},
        )
        near = res.x if res.success else x0
        gap = eval_constraints(plane, ppose, near)[0]
        normal = eval_gradients(plane, ppose, near)[0]
        normal = normal / np.linalg.norm(normal)
        foot = near - max(gap, 0.0) * normal
        a1, a2 = (foot, near) if swap else (near, foot)
        return a1, a2, max(float(gap), 0.0)

    pf = _inside_samples(geom_f, pose_f, grid_density)
    pg = _inside_samples(geom_g, pose_g, grid_density)
    d2 = ((pf[:, None, :] - pg[None, :, :]) ** 2).sum(axis=2)
    i, j = np.unravel_index(np.argmin(d2), d2.shape)
    z0 = np.concatenate([pf[i], pg[j]])
    res = minimize(
        lambda z: float(np.sum((z[:3] - z[3:]) ** 2)), z0,
        jac=lambda z: np.concatenate([2 * (z[:3] - z[3:]), -2 * (z[:3] - z[3:])]),
        constraints=[_inside_constraint(geom_f, pose_f, 0), _inside_constraint(geom_g, pose_g, 3)],
        method="SLSQP", options={"ftol": 1e-15, "maxiter": 300},
    )
    z = res.x if res.success else z0
    return z[:3], z[3:], float(np.linalg.norm(z[:3] - z[3:]))


def bounding_radius(geom: ConvexGeometry) -> float:
    """Radius of the smallest origin-centred ball containing a bounded geometry."""
    if geom.kind == "cylinder":
        return float(np.hypot(geom.params["radius"], 0.5 * geom.params["length"]))
    if geom.kind == "sphere":
        return float(geom.params["radius"])
    if geom.kind == "cuboid":
        return float(np.linalg.norm(geom.half_extents))
    raise ValueError(f"no bounding radius for {geom.kind!r}")


def plane_in_world(geom: ConvexGeometry, pose) -> tuple[np.ndarray, float]:
    """World normal and offset ``(n, d)`` of a half-space ``n·x ≤ d``."""
    c, R = _frame(pose)
    n = R @ np.asarray(geom.params["normal"], dtype=float)
    return n, float(geom.params["offset"] + n @ c)


def support_point(geom: ConvexGeometry, pose, direction) -> np.ndarray:
    """World point of a bounded geometry extremal along ``direction``."""
    _, R = _frame(pose)
    d = R.T @ np.asarray(direction, dtype=float)
    if geom.kind == "cuboid":
        local = np.where(d >= 0, 1.0, -1.0) * geom.half_extents
    elif geom.kind == "cylinder":
        r, half = geom.params["radius"], 0.5 * geom.params["length"]
        radial = np.array([d[0], 0.0, d[2]])
        norm = np.linalg.norm(radial)
        local = np.array([0.0, half if d[1] >= 0 else -half, 0.0])
        if norm > 0:
            local += r * radial / norm
    elif geom.kind == "sphere":
        local = geom.params["radius"] * d / np.linalg.norm(d)
    else:
        raise ValueError(f"no support point for unbounded geometry {geom.kind!r}")
    return R @ local + np.asarray(pose.position, dtype=float)
