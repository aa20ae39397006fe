"""Benchmark the compiled fitting kernels against the pure-Python fallback.

Two levels: raw kernel calls on simulation-shaped problems, and an end-to-end
grid run in a subprocess per backend (the backend is chosen at import, so each
end-to-end timing needs a fresh interpreter with NCC_SIM_BACKEND set).

Usage:
    python benchmarks/bench_backends.py
    python benchmarks/bench_backends.py --kernel-calls 500 --reps 300
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np
from scipy.special import expit

from ncc_sim.kernels import _fallback

try:
    from ncc_sim.kernels import _core
except ImportError:
    _core = None


def canonical_problems(seed=7):
    """One OLS and one logistic problem shaped like a default-trial fit:
    750 rows, intercept + two arm indicators + period indicator."""
    rng = np.random.default_rng(seed)
    n = 750
    arm = np.r_[np.zeros(125), np.ones(125), np.zeros(125), np.ones(125), np.full(250, 2)]
    period = np.r_[np.ones(250), np.full(500, 2)]
    X = np.column_stack([np.ones(n), arm == 1, arm == 2, period == 2]).astype(np.float64)
    eta = 0.2 * X[:, 2] + 0.1 * X[:, 3]
    y_cont = eta + rng.standard_normal(n)
    y_bin = (rng.random(n) < expit(eta)).astype(np.float64)
    return X, y_cont, y_bin


def time_call(fn, *args, calls=200):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(calls):
        fn(*args)
    return (time.perf_counter() - t0) / calls


def bench_kernels(calls):
    X, y_cont, y_bin = canonical_problems()
    impls = [("python", _fallback)] + ([("compiled", _core)] if _core is not None else [])
    print(f"kernel timings over {calls} calls (750 x 4 problem):")
    rows = {}
    for name, impl in impls:
        t_ols = time_call(impl.ols_qr, X, y_cont, calls=calls)
        t_log = time_call(impl.logistic_irls, X, y_bin, calls=calls)
        rows[name] = (t_ols, t_log)
        print(f"  {name:9s} ols_qr {t_ols * 1e6:8.1f} us   logistic_irls {t_log * 1e6:8.1f} us")
    if "compiled" in rows:
        py, comp = rows["python"], rows["compiled"]
        print(f"  speedup   ols_qr {py[0] / comp[0]:8.1f} x    logistic_irls {py[1] / comp[1]:8.1f} x")
    else:
        print("  compiled extension not built; python backend only")


END_TO_END = """
import json, sys, time
from ncc_sim import kernels
from ncc_sim.montecarlo import grid_from_config, run_grid

doc = json.loads(sys.stdin.read())
t0 = time.perf_counter()
run_grid(grid_from_config(doc))
elapsed = time.perf_counter() - t0
print(json.dumps({"backend": kernels.BACKEND, "seconds": elapsed}))
"""


def bench_end_to_end(reps):
    doc = {
        "name": "bench",
        "endpoint": "continuous",
        "replicates": reps,
        "master_seed": 99,
        "models": [{"kind": "alltc_step"}, {"kind": "alltci_step"}, {"kind": "separate"}],
        "scenario": {
            "control_mean": 0.0,
            "effects": [0.25, 0.25],
            "pattern": "step",
            "trend_strength": [0.1, 0.1, 0.1],
        },
    }
    backends = ["python"] + (["compiled"] if _core is not None else [])
    print(f"end-to-end run_grid timings ({reps} replicates, 3 models, default design):")
    seconds = {}
    for backend in backends:
        env = dict(os.environ, NCC_SIM_BACKEND=backend)
        proc = subprocess.run(
            [sys.executable, "-c", END_TO_END],
            input=json.dumps(doc),
            capture_output=True,
            text=True,
            env=env,
        )
        if proc.returncode != 0:
            print(f"  {backend:9s} failed:\n{proc.stderr}")
            continue
        result = json.loads(proc.stdout)
        assert result["backend"] == backend
        seconds[backend] = result["seconds"]
        per_rep = result["seconds"] / reps * 1e3
        print(f"  {backend:9s} {result['seconds']:7.2f} s   ({per_rep:.2f} ms/replicate)")
    if len(seconds) == 2:
        print(f"  speedup   {seconds['python'] / seconds['compiled']:7.1f} x")


def main(argv=None):
    parser = argparse.ArgumentParser(description="compare fitting-kernel backends")
    parser.add_argument("--kernel-calls", type=int, default=200, help="calls per kernel timing")
    parser.add_argument("--reps", type=int, default=300, help="replicates for the end-to-end run")
    parser.add_argument("--skip-end-to-end", action="store_true", help="time kernels only")
    args = parser.parse_args(argv)
    bench_kernels(args.kernel_calls)
    if not args.skip_end_to_end:
        bench_end_to_end(args.reps)
    return 0


if __name__ == "__main__":
    sys.exit(main())
