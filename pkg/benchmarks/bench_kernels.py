"""Compare the stencil matvec backends (compiled vs numpy fallback) on the
demo-hall flow operator, and time the solvers end to end with each.

Run:  python benchmarks/bench_kernels.py
"""

import json
import os
import subprocess
import sys
import time

import numpy as np


def solver_wall_time():
    from dcpa.grid import build_grid
    from dcpa.scenario import default_scenario
    from dcpa.scene import builtin_demo_scene
    from dcpa.solver import solve_flow, solve_temperature

    scene = builtin_demo_scene()
    grid = build_grid(scene, 0.5)
    scenario = default_scenario(scene)
    t0 = time.perf_counter()
    flow = solve_flow(grid, scenario)
    solve_temperature(grid, scenario, flow)
    return time.perf_counter() - t0


def main():
    from dcpa import kernels
    from dcpa.cli import bench_kernels

    print(f"active backend: {kernels.BACKEND}")
    results = bench_kernels(repeats=200)
    print(json.dumps(results, indent=2, sort_keys=True))

    print(f"\nfull demo solve ({kernels.BACKEND}): {solver_wall_time():.2f} s")
    if kernels.BACKEND == "cython":
        # re-run this script with the fallback forced, in a child process
        env = dict(os.environ, DCPA_FORCE_NUMPY_KERNELS="1")
        out = subprocess.run(
            [sys.executable, "-c",
             "import benchmarks.bench_kernels as b; print(b.solver_wall_time())"],
            env=env, capture_output=True, text=True, cwd=os.path.dirname(
                os.path.dirname(os.path.abspath(__file__))))
        if out.returncode == 0:
            print(f"full demo solve (numpy fallback): {float(out.stdout):.2f} s")
        else:
            print("fallback run failed:", out.stderr.strip()[-200:])


if __name__ == "__main__":
    main()
