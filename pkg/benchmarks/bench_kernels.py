"""Compare the numba kernels with the pure-numpy fallback.

Each backend runs in a fresh interpreter so ``ARTIFACT_NO_NUMBA`` selects it
exactly as a user would.  Kernels are warmed up before timing, so numba's
compile time is reported separately.

    python3 benchmarks/bench_kernels.py [--m 50] [--repeat 3]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
from artifact.controller import ControllerConfig, run_closed_loop
from artifact.kernels import default_mode
from artifact.model import builtin_example
from artifact.solver import ControlSignal, integrate

m, repeat = int(sys.argv[1]), int(sys.argv[2])
model, w0, _ = builtin_example()
cfg = ControllerConfig(0.25, 0.2)
t = time.perf_counter()
run_closed_loop(model, w0, cfg, 0.5, m=m)
warmup = time.perf_counter() - t

def best(fn):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)

ramp = ControlSignal([0.0, 5.0], [1.0, 0.0])
open_loop = best(lambda: integrate(model, w0, ramp, (0.0, 5.0), m=m))
closed_loop = best(lambda: run_closed_loop(model, w0, cfg, 5.0, m=m))
print(json.dumps({"mode": default_mode(), "warmup": warmup, "open_loop": open_loop, "closed_loop": closed_loop}))
"""


def run_backend(no_numba: bool, m: int, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("ARTIFACT_NO_NUMBA", None)
    if no_numba:
        env["ARTIFACT_NO_NUMBA"] = "1"
    out = subprocess.run(
        [sys.executable, "-c", WORKER, str(m), str(repeat)], env=env, check=True, capture_output=True, text=True
    )
    return json.loads(out.stdout.strip().splitlines()[-1])


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--m", type=int, default=50)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    rows = [run_backend(False, args.m, args.repeat), run_backend(True, args.m, args.repeat)]
    print(f"m={args.m}, best of {args.repeat}")
    print(f"{'backend':<8} {'warmup [s]':>11} {'open loop [s]':>14} {'closed loop [s]':>16}")
    for r in rows:
        print(f"{r['mode']:<8} {r['warmup']:>11.2f} {r['open_loop']:>14.4f} {r['closed_loop']:>16.3f}")
    if rows[0]["mode"] == "numba":
        print(f"speed-up open loop {rows[1]['open_loop'] / rows[0]['open_loop']:.1f}x, "
              f"closed loop {rows[1]['closed_loop'] / rows[0]['closed_loop']:.1f}x")


if __name__ == "__main__":
    main()
