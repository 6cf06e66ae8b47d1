"""Time the numba kernels against the plain-numpy fallback.

Each backend runs in its own interpreter because the switch is read at import
time.  Usage::

    python benchmarks/bench_kernels.py [--n 200] [--p 200] [--repeat 3]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from hdcqr._accel import backend_name
from hdcqr.cqr import fit_sequential_cqr
from hdcqr.data import build_grid, default_grid_size
from hdcqr.fuse import append_and_estimate
from hdcqr.select import fit_lhdcqr
from hdcqr.simgen import gen_example1

n, p, repeat = (int(a) for a in sys.argv[1:4])
ds, truth = gen_example1(n, p, 1)
grid = build_grid(0.1, 0.8, default_grid_size(n, p))
support = np.array((0,) + truth.support)
cases = {
    "oracle_fit": lambda: fit_sequential_cqr(ds, grid, support=support),
    "penalized_fit": lambda: fit_lhdcqr(ds, grid, 0.5 * np.sqrt(np.log(p) / n)),
    "append_and_estimate": lambda: append_and_estimate(ds, grid, support),
}
out = {"backend": backend_name()}
for name, fn in cases.items():
    t0 = time.perf_counter()
    fn()  # warm-up, includes JIT compilation or cache load
    first = time.perf_counter() - t0
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    out[name] = {"first": first, "best": min(times)}
print(json.dumps(out))
"""


def run(disable, n, p, repeat):
    env = dict(os.environ, HDCQR_DISABLE_NUMBA="1" if disable else "0")
    proc = subprocess.run([sys.executable, "-c", WORKER, str(n), str(p), str(repeat)],
                          env=env, check=True, capture_output=True, text=True)
    return json.loads(proc.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--p", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    fast = run(False, args.n, args.p, args.repeat)
    slow = run(True, args.n, args.p, args.repeat)
    print(f"n={args.n} p={args.p} best of {args.repeat}")
    print(f"{'case':<22}{fast['backend']:>12}{slow['backend']:>12}{'speedup':>10}")
    for case in ("oracle_fit", "penalized_fit", "append_and_estimate"):
        a, b = fast[case]["best"], slow[case]["best"]
        print(f"{case:<22}{a:>11.3f}s{b:>11.3f}s{b / a:>9.1f}x")


if __name__ == "__main__":
    main()
