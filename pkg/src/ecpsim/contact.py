"""Contact frames, wrench bases and the equivalent-contact-point KKT residuals."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .algebra import tangent_basis
from .geometry import ConvexGeometry, eval_constraints, eval_gradients

ENVIRONMENT = -1


class DegenerateNormal(ValueError):
    pass


@dataclass(frozen=True)
class FrictionParams:
    mu: float
    e_t: float = 1.0
    e_o: float = 1.0
    e_r: float = 1.0

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("friction coefficient must be nonnegative")
        if min(self.e_t, self.e_o, self.e_r) <= 0:
            raise ValueError("ellipsoid semi-axes must be positive")


@dataclass(frozen=True)
class ContactPair:
    """Contact between moving body ``body_f`` and ``body_g`` (any body, usually fixed)."""

    body_f: int
    body_g: int
    friction: FrictionParams

    def __post_init__(self):
        if self.body_f == self.body_g:
            raise ValueError("a contact pair needs two distinct bodies")


@dataclass
class ContactUnknowns:
    a1: np.ndarray
    a2: np.ndarray
    l_f: np.ndarray
    l_g: np.ndarray
    p_n: float = 0.0
    p_t: float = 0.0
    p_o: float = 0.0
    p_r: float = 0.0
    sigma: float = 0.0
    k1: int = 0
    extra: dict = field(default_factory=dict)

    def copy(self) -> "ContactUnknowns":
        return ContactUnknowns(
            self.a1.copy(), self.a2.copy(), self.l_f.copy(), self.l_g.copy(),
            self.p_n, self.p_t, self.p_o, self.p_r, self.sigma, self.k1, dict(self.extra),
        )

    def effective_multipliers(self) -> np.ndarray:
        """F-side multipliers as they enter the normal-cone equation: 1 for k1."""
        eff = self.l_f.copy()
        eff[self.k1] = 1.0
        return eff


@dataclass(frozen=True)
class ContactFrame:
    n: np.ndarray
    t: np.ndarray
    o: np.ndarray
    origin: np.ndarray


def contact_frame(grad_g_combo, origin) -> ContactFrame:
    """Frame whose normal follows ``Σ l_j ∇g_j``, pointing out of G into F."""
    combo = np.asarray(grad_g_combo, dtype=float)
    norm = np.linalg.norm(combo)
    if norm < 1e-9:
        raise DegenerateNormal("normal combination vanishes")
    n = combo / norm
    t, o = tangent_basis(n)
    return ContactFrame(n, t, o, np.asarray(origin, dtype=float))


def wrench_bases(r, frame: ContactFrame) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    r = np.asarray(r, dtype=float)
    w_n = np.concatenate([frame.n, np.cross(r, frame.n)])
    w_t = np.concatenate([frame.t, np.cross(r, frame.t)])
    w_o = np.concatenate([frame.o, np.cross(r, frame.o)])
    w_r = np.concatenate([np.zeros(3), frame.n])
    return w_n, w_t, w_o, w_r


def select_k1(geom: ConvexGeometry, pose, a1, toward=None, tol: float = 1e-6) -> int:
    """Pick the F-constraint that anchors the normal-cone equation.

    Candidates are constraints within ``tol`` of the largest value at ``a1``.
    Among them the one whose gradient points most along ``toward`` wins
    (lowest index on ties, and when no direction is given).
    """
    values = eval_constraints(geom, pose, a1)
    candidates = np.flatnonzero(values >= values.max() - tol)
    if toward is None or len(candidates) == 1:
        return int(candidates[0])
    grads = eval_gradients(geom, pose, a1)[candidates]
    score = grads @ np.asarray(toward, dtype=float) / np.linalg.norm(grads, axis=1)
    best = np.flatnonzero(score >= score.max() - 1e-9)
    return int(candidates[best[0]])


def kkt_residuals(geom_f, pose_f, geom_g, pose_g, u: ContactUnknowns):
    """Equality residuals (6,) and complementarity pairs ``[(var, func), ...]``."""
    grads_f = eval_gradients(geom_f, pose_f, u.a1)
    grads_g = eval_gradients(geom_g, pose_g, u.a2)
    weights = u.l_f.copy()
    weights[u.k1] = 1.0
    f_combo = weights @ grads_f
    eq = np.concatenate([u.a1 - u.a2 + u.l_f[u.k1] * f_combo, f_combo + u.l_g @ grads_g])
    pairs = [(float(l), -float(v)) for l, v in zip(u.l_f, eval_constraints(geom_f, pose_f, u.a1))]
    pairs += [(float(l), -float(v)) for l, v in zip(u.l_g, eval_constraints(geom_g, pose_g, u.a2))]
    pairs.append((float(u.p_n), float(eval_constraints(geom_f, pose_f, u.a2).max())))
    return eq, pairs
