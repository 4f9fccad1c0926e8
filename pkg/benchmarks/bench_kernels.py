"""Time the hot kernels with numba and with the plain-numpy fallback.

    python benchmarks/bench_kernels.py [--replicas N]

Each path runs in its own interpreter because the kernel path is chosen at
import time from METABRANCH_DISABLE_NUMBA.  The fallback gets fewer
replicas and its time is scaled per replica.
"""
import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
from metabranch import MovementSpec, Params, SimplifiedState, StreamKey, simulate_batch
from metabranch._jit import USING_NUMBA
from metabranch.verify import coupled_batch

n = int(sys.argv[1])
bm = MovementSpec.brownian(1, 1.0)
mixed = Params(mu_S=1.0, mu_B=1.0, nu={1: 0.5, 2: 0.5}, q={0: 0.3, 1: 0.4, 2: 0.3},
               delta_M=0.3, delta_S=0.2, L=3, movement=bm)
x = SimplifiedState(1, 0, [[0.0]])
cases = {
    "simulate_batch": lambda m: simulate_batch(x, mixed, 1.0, m, StreamKey(1)),
    "coupled_batch": lambda m: coupled_batch(mixed, 1.0, m, StreamKey(2)),
}
out = {"numba": USING_NUMBA}
for name, fn in cases.items():
    fn(10)  # compile or warm up
    t0 = time.perf_counter()
    fn(n)
    out[name] = (time.perf_counter() - t0) / n
print(json.dumps(out))
"""


def run(disable: bool, n: int) -> dict:
    env = dict(os.environ)
    env.pop("METABRANCH_DISABLE_NUMBA", None)
    if disable:
        env["METABRANCH_DISABLE_NUMBA"] = "1"
    r = subprocess.run([sys.executable, "-c", WORKER, str(n)], env=env, capture_output=True, text=True, check=True)
    return json.loads(r.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--replicas", type=int, default=100_000, help="replicas for the numba path")
    args = ap.parse_args()
    fast = run(False, args.replicas)
    slow = run(True, max(args.replicas // 100, 100))
    print(f"{'kernel':<16} {'numba us/rep':>14} {'fallback us/rep':>16} {'speedup':>9}")
    for name in ("simulate_batch", "coupled_batch"):
        a, b = fast[name] * 1e6, slow[name] * 1e6
        print(f"{name:<16} {a:>14.2f} {b:>16.2f} {b / a:>8.1f}x")
    if not fast["numba"]:
        print("note: numba unavailable, both columns use the fallback")


if __name__ == "__main__":
    main()
