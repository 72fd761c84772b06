"""Compiled vs pure-Python integration kernel.

Each backend runs in its own interpreter (the backend is fixed at import
through ``DPRA_KERNEL``).  Usage::

    python benchmarks/bench_kernel.py [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys
import time

WORKLOAD = r"""
import json, sys, time
from dpra import kernel, simulator as sim
from dpra.model import model_from_dict

tank = model_from_dict({
    "name": "tank", "mission_time": 50.0,
    "components": [{"name": "valve", "states": ["OPEN", "SHUT"], "transitions": []}],
    "continuous_vars": [{"name": "level", "initial": 10.0, "derivative": [
        {"when": "valve == OPEN", "rate": "-0.2 * sqrt(max(level, 0.0)) - 0.01 * t"},
        {"when": "default", "rate": "0.0"}]}],
    "end_states": [{"name": "EMPTY", "predicate": "level <= 0.5", "severity": "fail"},
                   {"name": "OK", "predicate": "true", "severity": "ok", "at": "mission_end"}],
    "initial": {"components": {"valve": "OPEN"}},
})
repeat = int(sys.argv[1])
best = float("inf")
for _ in range(repeat):
    t0 = time.perf_counter()
    for seed in range(20):
        s = sim.init(tank, seed=seed)
        sim.run(s)
    best = min(best, time.perf_counter() - t0)
print(json.dumps({"backend": kernel.BACKEND, "seconds": best}))
"""


def run(backend: str, repeat: int) -> dict:
    env = dict(os.environ, DPRA_KERNEL=backend)
    out = subprocess.run([sys.executable, "-c", WORKLOAD, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    py = run("python", args.repeat)
    try:
        c = run("compiled", args.repeat)
    except subprocess.CalledProcessError:
        print("compiled kernel not built; run `pip install -e . --no-build-isolation` first")
        print(f"python   {py['seconds'] * 1e3:9.1f} ms")
        return 1
    print("20 tank-drain stories (RK4, h=0.01), best of", args.repeat)
    print(f"python   {py['seconds'] * 1e3:9.1f} ms")
    print(f"compiled {c['seconds'] * 1e3:9.1f} ms")
    print(f"speed-up {py['seconds'] / c['seconds']:9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
