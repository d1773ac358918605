"""Ellipsoidal friction law at the equivalent contact point."""

from __future__ import annotations

import numpy as np

from .contact import FrictionParams


def slip_velocities(nu, bases) -> tuple[float, float, float]:
    """Tangential slip and spin ``(W_tᵀν, W_oᵀν, W_rᵀν)``; ``bases`` is (W_n, W_t, W_o, W_r)."""
    nu = np.asarray(nu, dtype=float)
    _, w_t, w_o, w_r = bases
    return float(w_t @ nu), float(w_o @ nu), float(w_r @ nu)


def dissipation(v_t, v_o, v_r, p_t, p_o, p_r) -> float:
    return -(v_t * p_t + v_o * p_o + v_r * p_r)


def ellipsoid_slack(p_n, p_t, p_o, p_r, fp: FrictionParams) -> float:
    return (fp.mu * p_n) ** 2 - (p_t / fp.e_t) ** 2 - (p_o / fp.e_o) ** 2 - (p_r / fp.e_r) ** 2


def fritz_john_residuals(v_t, v_o, v_r, p_n, p_t, p_o, p_r, sigma, fp: FrictionParams):
    """The three stationarity equalities and the slack ζ paired with σ."""
    k = fp.mu * p_n
    eq = np.array([
        fp.e_t**2 * k * v_t + p_t * sigma,
        fp.e_o**2 * k * v_o + p_o * sigma,
        fp.e_r**2 * k * v_r + p_r * sigma,
    ])
    return eq, ellipsoid_slack(p_n, p_t, p_o, p_r, fp)


def max_dissipation_impulse(v_t, v_o, v_r, p_n, fp: FrictionParams) -> np.ndarray:
    """Closed-form maximizer of the dissipation over the ellipsoid (zero slip → zero)."""
    e2 = np.array([fp.e_t, fp.e_o, fp.e_r]) ** 2
    v = np.array([v_t, v_o, v_r])
    scale = np.sqrt(np.sum(e2 * v * v))
    if scale == 0.0:
        return np.zeros(3)
    return -fp.mu * p_n * e2 * v / scale


def sample_ellipsoid(rng: np.random.Generator, count: int, p_n: float, fp: FrictionParams) -> np.ndarray:
    """Uniform samples inside the friction ellipsoid of size ``μ p_n``."""
    d = rng.normal(size=(count, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    radius = rng.uniform(size=(count, 1)) ** (1.0 / 3.0)
    return fp.mu * p_n * radius * d * np.array([fp.e_t, fp.e_o, fp.e_r])
