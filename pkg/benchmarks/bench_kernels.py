"""Compare the compiled and pure-Python step kernels.

    python3 benchmarks/bench_kernels.py [--calls 300] [--scenarios]

Kernel timings use step problems taken from the built-in scenarios; with
``--scenarios`` whole runs are also timed under each backend (in subprocesses,
since the backend is fixed at import).
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from ecpsim import _core
from ecpsim.scenarios import builtin, iterate
from ecpsim.stepper import build_context, pack


def sample_problems(name: str, steps: int = 60, every: int = 20):
    cfg = builtin(name)
    world = cfg.world()
    out = []
    for rec in iterate(cfg, steps=steps):
        if rec.step % every == 0:
            k1 = [u.k1 for u in rec.result.contacts]
            ctx = build_context(world, rec.before, rec.impulses or None, cfg.params(), k1)
            out.append((ctx, pack(world, rec.result.nus, rec.result.contacts)))
    return out


def time_kernel(fn, problems, calls: int) -> float:
    start = time.perf_counter()
    for i in range(calls):
        ctx, z = problems[i % len(problems)]
        fn(ctx, z)
    return (time.perf_counter() - start) / calls


def time_scenario(name: str, pure: bool) -> float:
    env = dict(os.environ, ECPSIM_PURE_PYTHON="1" if pure else "0")
    code = (
        "import time; from ecpsim.scenarios import builtin, iterate;"
        f"c = builtin({name!r}); t = time.perf_counter(); list(iterate(c)); print(time.perf_counter() - t)"
    )
    done = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(done.stdout.strip())


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--calls", type=int, default=300)
    parser.add_argument("--scenarios", action="store_true", help="also time full scenario runs")
    args = parser.parse_args(argv)

    if _core.compiled_evaluate is None:
        print("compiled kernel not available; build it with `pip install -e . --no-build-isolation`")
        return 1
    print(f"{'scenario':<10} {'unknowns':>8} {'python µs':>10} {'compiled µs':>12} {'speedup':>8}")
    for name in ("scenario1", "scenario2", "scenario3", "scenario4"):
        problems = sample_problems(name)
        for ctx, z in problems:
            F1, J1 = _core.python_evaluate(ctx, z)
            F2, J2 = _core.compiled_evaluate(ctx, z)
            assert np.allclose(F1, F2, rtol=1e-12, atol=1e-12) and np.allclose(J1, J2, rtol=1e-12, atol=1e-12)
        py = time_kernel(_core.python_evaluate, problems, args.calls)
        cc = time_kernel(_core.compiled_evaluate, problems, args.calls)
        print(f"{name:<10} {problems[0][1].size:>8} {py * 1e6:>10.1f} {cc * 1e6:>12.1f} {py / cc:>8.1f}")
    if args.scenarios:
        print(f"\n{'scenario':<10} {'python s':>9} {'compiled s':>11}")
        for name in ("scenario1", "scenario2", "scenario3", "scenario4"):
            print(f"{name:<10} {time_scenario(name, True):>9.2f} {time_scenario(name, False):>11.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
