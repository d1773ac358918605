"""Small worlds and an independent finite-difference Jacobian for the tests."""

import numpy as np

from ecpsim.scenarios import from_document


def cube_on_ground(position=(0, 0, 0.5), orientation=(1, 0, 0, 0), velocity=(0, 0, 0), spin=(0, 0, 0),
                   mu=0.12, duration=0.1, schedule=None):
    doc = {
        "name": "cube",
        "duration": duration,
        "bodies": [
            {"name": "cube", "shape": {"kind": "cuboid", "size": [1, 1, 1]}, "mass": 1.0,
             "position": list(position), "orientation": list(orientation),
             "linear_velocity": list(velocity), "angular_velocity": list(spin)},
            {"name": "ground", "shape": {"kind": "halfspace"}, "fixed": True},
        ],
        "contacts": [{"body_f": "cube", "body_g": "ground", "friction": {"mu": mu}}],
    }
    if schedule:
        doc["schedule"] = schedule
    return from_document(doc)


def richardson_jacobian(problem, z, steps=(3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5)):
    """Five-point differences of ``[F_eq; F_comp]`` at several step sizes; per entry, keep the
    estimate whose neighbour in the step sequence agrees best (so neither truncation near
    kinks nor roundoff on tiny entries dominates)."""
    z = np.asarray(z, dtype=float)

    def f(x):
        return np.concatenate(problem.residual(x))

    J = np.empty((problem.size, z.size))
    for k in range(z.size):
        est = []
        for rel in steps:
            e = np.zeros(z.size)
            e[k] = rel * (1.0 + abs(z[k]))
            est.append((-f(z + 2 * e) + 8 * f(z + e) - 8 * f(z - e) + f(z - 2 * e)) / (12 * e[k]))
        est = np.array(est)
        best = np.argmin(np.abs(np.diff(est, axis=0)), axis=0)
        J[:, k] = est[best, np.arange(problem.size)]
    return J
