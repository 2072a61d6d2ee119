"""Compare the compiled kernels with the plain-numpy fallback.

Each backend runs in its own interpreter because the backend is fixed at
import time by ``RCPSIM_DISABLE_NUMBA``.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from rcpsim import backend
from rcpsim import _kernels as K
from rcpsim.graphical import Lattice, build_harris
from rcpsim.reachability import SeedSet, propagate
from rcpsim.renewal import HazardField, ShiftedPareto, sample_train_by_thinning

repeat = int(sys.argv[1])
law = ShiftedPareto(1.5, 1.0)
system = build_harris(Lattice.interval(-100, 100), (0.0, 100.0), law, 2.0, 12345)
field = HazardField.for_law(law, 7)
sites = np.arange(system.lattice.n_sites)


def timed(fn):
    fn()  # warm-up (includes compilation for the numba backend)
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


res = {
    "backend": backend(),
    "sweep": timed(lambda: propagate(system, 2.0, SeedSet.point(0, 0.0))),
    "thinning": timed(lambda: sample_train_by_thinning(law, 0.0, 2.0e4, field)),
    "gap_scan": timed(lambda: K.first_gap_block(system.mark_ptr, system.marks, sites, 0.5, 199)),
    "arrows": int(system.arrow_time.size),
}
print(json.dumps(res))
"""


def run(disable: bool, repeat: int) -> dict:
    env = dict(os.environ, RCPSIM_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    fast = run(False, args.repeat)
    slow = run(True, args.repeat)
    print(f"{'kernel':<10} {fast['backend']:>12} {slow['backend']:>12} {'speedup':>9}")
    for key in ("sweep", "thinning", "gap_scan"):
        print(f"{key:<10} {fast[key]:>11.4f}s {slow[key]:>11.4f}s {slow[key] / fast[key]:>8.1f}x")
    print(f"(sweep over {fast['arrows']} arrows; best of {args.repeat})")


if __name__ == "__main__":
    main()
