"""Mixed nonlinear complementarity problems and a semismooth Newton solver.

A problem has unknowns ``z = [z_u; z_v]`` and asks for ``F_eq(z) = 0`` together
with ``0 ≤ z_v ⟂ F_comp(z) ≥ 0``. Complementarity pairs are folded into
equations with the Fischer–Burmeister function and the stacked system is
driven to zero by Newton steps with an Armijo line search on ½‖Φ‖².
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

TIKHONOV = 1e-10
ARMIJO = 1e-4
MIN_STEP = 1e-12


class NotConverged(RuntimeError):
    """Solver gave up; carries the best iterate and the report."""

    def __init__(self, message: str, z: np.ndarray, report: "SolveReport"):
        super().__init__(message)
        self.z = z
        self.report = report


class SingularSystem(RuntimeError):
    pass


def fb(a, b):
    """Fischer–Burmeister function ``√(a²+b²) − a − b``."""
    return np.hypot(a, b) - a - b


def fb_partials(a, b) -> tuple[np.ndarray, np.ndarray]:
    """An element of the generalized gradient of ``fb`` with respect to (a, b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    r = np.hypot(a, b)
    smooth = r > 1e-14
    safe = np.where(smooth, r, 1.0)
    da = np.where(smooth, a / safe, np.sqrt(0.5)) - 1.0
    db = np.where(smooth, b / safe, np.sqrt(0.5)) - 1.0
    return da, db


@dataclass
class MixedNCP:
    """``residual(z) -> (F_eq, F_comp)``; ``jacobian(z)`` returns the stacked
    (n_eq + n_comp) × n derivative of ``[F_eq; F_comp]``. Without an analytic
    Jacobian, forward differences are used.

    ``free_rows`` lists complementarity rows to be treated as plain equations
    ``F_comp[i] = 0`` with the matching ``z_v[i]`` left sign-free."""

    n_eq: int
    n_comp: int
    residual: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None
    names: list[str] | None = None
    free_rows: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.n_eq + self.n_comp

    def merit_vector(self, z) -> np.ndarray:
        f_eq, f_comp = self.residual(z)
        phi = fb(z[self.n_eq:], f_comp)
        if self.free_rows is not None:
            phi[self.free_rows] = f_comp[self.free_rows]
        return np.concatenate([f_eq, phi])

    def raw_jacobian(self, z) -> np.ndarray:
        if self.jacobian is not None:
            return self.jacobian(z)
        return fd_jacobian(self, z)

    def merit_jacobian(self, z) -> np.ndarray:
        """Generalized Jacobian of the Fischer–Burmeister system."""
        J = np.array(self.raw_jacobian(z), dtype=float)
        _, f_comp = self.residual(z)
        da, db = fb_partials(z[self.n_eq:], f_comp)
        if self.free_rows is not None:
            da[self.free_rows] = 0.0
            db[self.free_rows] = 1.0
        comp = db[:, None] * J[self.n_eq:]
        comp[np.arange(self.n_comp), self.n_eq + np.arange(self.n_comp)] += da
        J[self.n_eq:] = comp
        return J


def fd_jacobian(problem: MixedNCP, z) -> np.ndarray:
    """Forward-difference Jacobian of ``[F_eq; F_comp]`` with step ``1e-7 (1 + |z_k|)``."""
    z = np.asarray(z, dtype=float)
    base = np.concatenate(problem.residual(z))
    J = np.empty((base.size, z.size))
    for k in range(z.size):
        step = 1e-7 * (1.0 + abs(z[k]))
        zk = z.copy()
        zk[k] += step
        J[:, k] = (np.concatenate(problem.residual(zk)) - base) / step
    return J


def residual_norm(problem: MixedNCP, z) -> float:
    return float(np.linalg.norm(problem.merit_vector(np.asarray(z, dtype=float))))


@dataclass
class SolveOptions:
    tolerance: float = 1e-8
    max_iterations: int = 200
    backtrack: float = 0.5
    restarts: int = 5
    perturbation: float = 1e-3
    seed: int = 0
    polish_steps: int = 2
    stall_window: int = 25
    stall_ratio: float = 0.5


@dataclass
class SolveReport:
    converged: bool = False
    iterations: int = 0
    residual: float = np.inf
    restarts: int = 0
    merit_history: list[float] = field(default_factory=list)
    attempt_starts: list[int] = field(default_factory=list)  # merit_history index where each attempt begins

    def attempts(self) -> list[list[float]]:
        bounds = [*self.attempt_starts, len(self.merit_history)]
        return [self.merit_history[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def _direction(J: np.ndarray, phi: np.ndarray) -> np.ndarray:
    try:
        d = np.linalg.solve(J, -phi)
        if np.all(np.isfinite(d)) and np.linalg.norm(J @ d + phi) <= 1e-6 * (1.0 + np.linalg.norm(phi)):
            return d
    except np.linalg.LinAlgError:
        pass
    JtJ = J.T @ J
    reg = TIKHONOV * max(1.0, np.abs(JtJ).max())
    d = np.linalg.solve(JtJ + reg * np.eye(J.shape[1]), -J.T @ phi)
    if not np.all(np.isfinite(d)):
        raise SingularSystem("Newton system is singular beyond regularization")
    return d


def _levenberg(J: np.ndarray, phi: np.ndarray, damping: float) -> np.ndarray:
    return np.linalg.solve(J.T @ J + damping * np.eye(J.shape[1]), -J.T @ phi)


def _line_search(problem, z, theta, slope, d, opts) -> tuple[np.ndarray, np.ndarray, float] | None:
    t = 1.0
    while t >= MIN_STEP:
        trial = z + t * d
        phi = problem.merit_vector(trial)
        value = 0.5 * phi @ phi
        if np.isfinite(value) and value <= theta + ARMIJO * t * slope:
            return trial, phi, value
        t *= opts.backtrack
    return None


def _newton(problem: MixedNCP, z: np.ndarray, opts: SolveOptions, report: SolveReport):
    phi = problem.merit_vector(z)
    theta = 0.5 * phi @ phi
    report.merit_history.append(theta)
    local = [theta]
    for _ in range(opts.max_iterations):
        if np.sqrt(2 * theta) <= opts.tolerance:
            return z, phi, True
        report.iterations += 1
        J = problem.merit_jacobian(z)
        grad = J.T @ phi
        step = None
        d = _direction(J, phi)
        slope = grad @ d
        if slope < 0:
            step = _line_search(problem, z, theta, slope, d, opts)
        damping = max(np.sqrt(2 * theta), 1e-8)
        while step is None and damping < 1e12:
            d = _levenberg(J, phi, damping)
            step = _line_search(problem, z, theta, grad @ d, d, opts)
            damping *= 100.0
        if step is None:
            return z, phi, False
        z, phi, theta = step
        report.merit_history.append(theta)
        local.append(theta)
        window = opts.stall_window
        if window and len(local) > window and theta > opts.stall_ratio * local[-window - 1]:
            break
    return z, phi, np.sqrt(2 * theta) <= opts.tolerance


def _polish(problem: MixedNCP, z, phi, opts: SolveOptions, report: SolveReport):
    theta = 0.5 * phi @ phi
    for _ in range(opts.polish_steps):
        if theta == 0.0:
            break
        try:
            trial = z + _direction(problem.merit_jacobian(z), phi)
        except SingularSystem:
            break
        trial_phi = problem.merit_vector(trial)
        trial_theta = 0.5 * trial_phi @ trial_phi
        if not trial_theta < theta:
            break
        z, phi, theta = trial, trial_phi, trial_theta
        report.merit_history.append(theta)
    return z, phi


def solve(problem: MixedNCP, z0, opts: SolveOptions | None = None):
    """Solve the MNCP from ``z0``; returns ``(z, report)`` or raises NotConverged."""
    opts = opts or SolveOptions()
    z = np.array(z0, dtype=float)
    if z.shape != (problem.size,) or not np.all(np.isfinite(z)):
        raise ValueError("initial point must be a finite vector of the problem size")
    rng = np.random.default_rng(opts.seed)
    report = SolveReport()
    best_z, best_norm = z.copy(), np.inf
    start = z.copy()
    for attempt in range(opts.restarts + 1):
        report.restarts = attempt
        report.attempt_starts.append(len(report.merit_history))
        z, phi, ok = _newton(problem, start, opts, report)
        norm = float(np.linalg.norm(phi))
        if norm < best_norm:
            best_z, best_norm = z.copy(), norm
        if ok:
            z, phi = _polish(problem, z, phi, opts, report)
            report.converged = True
            report.residual = float(np.linalg.norm(phi))
            return z, report
        start = best_z.copy()
        zv = start[problem.n_eq:]
        zv += opts.perturbation * np.maximum(1.0, np.abs(zv)) * rng.uniform(-1.0, 1.0, zv.size)
    report.residual = best_norm
    if log.isEnabledFor(logging.INFO):
        names = problem.names or [f"z[{k}]" for k in range(problem.size)]
        breakdown = ", ".join(f"{n}={v:.2e}" for n, v in zip(names, problem.merit_vector(best_z)) if abs(v) > opts.tolerance)
        log.info("MNCP not converged (|Φ| = %.3e); residual rows: %s", best_norm, breakdown)
    raise NotConverged(f"MNCP did not converge: |Φ| = {best_norm:.3e}", best_z, report)
