import os
import subprocess
import sys

import numpy as np
import pytest

from ecpsim import BACKEND, _core
from ecpsim.scenarios import builtin, iterate
from ecpsim.stepper import build_context, pack

compiled = pytest.mark.skipif(_core.compiled_evaluate is None, reason="compiled kernel not built")


def sample_problems():
    out = []
    for name, steps in (("scenario1", 3), ("scenario2", 3), ("scenario3", 50), ("scenario4", 60)):
        config = builtin(name)
        world = config.world()
        for rec in iterate(config, steps=steps):
            pass
        k1 = [u.k1 for u in rec.result.contacts]
        ctx = build_context(world, rec.before, rec.impulses or None, config.params(), k1)
        out.append((ctx, pack(world, rec.result.nus, rec.result.contacts)))
    return out


def test_backend_is_reported():
    assert BACKEND in ("compiled", "python")


@compiled
def test_compiled_kernel_matches_python(rng):
    for ctx, z0 in sample_problems():
        for _ in range(5):
            z = z0 + 0.01 * rng.normal(size=z0.size)
            F1, J1 = _core.python_evaluate(ctx, z)
            F2, J2 = _core.compiled_evaluate(ctx, z)
            assert np.allclose(F1, F2, rtol=1e-12, atol=1e-13)
            assert np.allclose(J1, J2, rtol=1e-12, atol=1e-13)


def test_pure_python_fallback_runs():
    code = ("import ecpsim; from ecpsim.scenarios import builtin, iterate;"
            "r = list(iterate(builtin('scenario1'), steps=2));"
            "print(ecpsim.BACKEND, round(r[0].result.contacts[0].p_t, 9))")
    env = dict(os.environ, ECPSIM_PURE_PYTHON="1")
    done = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert done.stdout.split() == ["python", "-0.009408"]
