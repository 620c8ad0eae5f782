"""Time the compiled kernels against the pure-Python twins.

Runs each hot kernel on representative problem sizes, then a short
end-to-end design construction, under both backends. The pure backend is
exercised in a subprocess with MMDESIGN_PURE_PYTHON=1 so that each process
imports exactly one backend.

Usage: python benchmarks/bench_backends.py [--repeats 5] [--num-points 40]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def _bench_once(num_points: int, repeats: int) -> dict:
    import numpy as np

    from mmdesign import numerics
    from mmdesign.model import DesignSpace, ModelSpec, build_regressors
    from mmdesign.optimizer import OptimizerConfig, sequential_minimax

    rng = np.random.default_rng(0)
    space = DesignSpace.grid(-1.0, 1.0, num_points)
    model = ModelSpec.polynomial(3)
    f = build_regressors(space, model)
    w = rng.dirichlet(np.ones(num_points))
    m = f.T @ (w[:, None] * f)
    m = 0.5 * (m + m.T)
    big = rng.standard_normal((60, 60))
    big = big @ big.T + 60.0 * np.eye(60)
    b = rng.standard_normal(60)

    def clock(fn, *args) -> float:
        best = float("inf")
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn(*args)
            best = min(best, time.perf_counter() - t0)
        return best

    timings = {
        "mgs_qr": clock(numerics.orthonormal_basis, f),
        "jacobi_eigh_4": clock(numerics.sym_eigen, m),
        "jacobi_eigh_60": clock(numerics.sym_eigen, big),
        "solve_spd_60": clock(numerics.solve_spd, big, b),
    }

    config = OptimizerConfig(nu=0.5, max_iters=200, tol_rel=1e-300)
    t0 = time.perf_counter()
    sequential_minimax(space, model, config)
    timings["sequential_minimax_200"] = time.perf_counter() - t0
    return {"backend": numerics.backend_name(), "seconds": timings}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--num-points", type=int, default=40)
    parser.add_argument("--emit-json", action="store_true",
                        help=argparse.SUPPRESS)
    args = parser.parse_args(argv)

    if args.emit_json:
        print(json.dumps(_bench_once(args.num_points, args.repeats)))
        return 0

    results = []
    for pure in ("0", "1"):
        env = dict(os.environ, MMDESIGN_PURE_PYTHON=pure)
        out = subprocess.run(
            [sys.executable, os.path.abspath(__file__),
             "--repeats", str(args.repeats),
             "--num-points", str(args.num_points), "--emit-json"],
            env=env, capture_output=True, text=True, check=True,
        )
        results.append(json.loads(out.stdout))

    names = list(results[0]["seconds"])
    width = max(len(n) for n in names)
    header = f"{'kernel':<{width}}  {results[0]['backend']:>12}  {results[1]['backend']:>12}  speedup"
    print(header)
    print("-" * len(header))
    for name in names:
        fast = results[0]["seconds"][name]
        slow = results[1]["seconds"][name]
        ratio = slow / fast if fast > 0 else float("inf")
        print(f"{name:<{width}}  {fast:12.6f}  {slow:12.6f}  {ratio:7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
