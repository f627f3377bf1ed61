"""Compiled vs pure-numpy kernel timing.

Runs the same workload in two child processes, one with ISMPC_DISABLE_JIT=1,
and prints seconds per call for the practical closed loop and the sliding
motion.  Usage: python benchmarks/bench_kernels.py [--T 5] [--repeat 3]
"""

import argparse
import json
import os
import subprocess
import sys
import time


def worker(T, repeat):
    import numpy as np

    from ismpc.bench import random_stable_plant
    from ismpc.palm import PartitionSpec
    from ismpc.sim import SimConfig, simulate_practical, simulate_sliding_motion
    from ismpc.synthesis import design_controller

    system = random_stable_plant(0)
    theta = np.zeros(system.dim)
    theta[0] = 1.0
    design, model = design_controller(system, PartitionSpec(theta, [0.0, 1.2, -1.2]))
    config = SimConfig(h=1e-3, T=T)
    x0 = np.full(system.n, 0.8)
    xbar0 = np.concatenate([x0, np.zeros(system.m)])
    jobs = {
        "practical": lambda: simulate_practical(system, design, config, x0),
        "sliding_motion": lambda: simulate_sliding_motion(model, design, config, xbar0, "random_bounded"),
    }
    out = {}
    for name, job in jobs.items():
        job()  # compile or warm up
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            job()
            best = min(best, time.perf_counter() - t0)
        out[name] = best
    print(json.dumps(out))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=float, default=5.0, help="simulated seconds per call")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        worker(args.T, args.repeat)
        return
    results = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, ISMPC_DISABLE_JIT=flag)
        cmd = [sys.executable, __file__, "--worker", "--T", str(args.T), "--repeat", str(args.repeat)]
        res = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        results[label] = json.loads(res.stdout.strip().splitlines()[-1])
    steps = int(args.T / 1e-3)
    print(f"{'kernel':<16}{'numba (s)':>12}{'numpy (s)':>12}{'speedup':>10}   ({steps} RK4 steps)")
    for name in results["numba"]:
        a, b = results["numba"][name], results["numpy"][name]
        print(f"{name:<16}{a:>12.4f}{b:>12.4f}{b / a:>10.1f}")


if __name__ == "__main__":
    main()
