import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from dpra import kernel

HERE = Path(__file__).parent

SCRIPT = r"""
import json, sys
sys.path.insert(0, sys.argv[1])
from _gen import FUSE, TANK, LEVEL_HAZARD, build, random_demand_model
from dpra import kernel, simulator as sim
out = {"backend": kernel.BACKEND, "traces": []}
docs = [FUSE, TANK, LEVEL_HAZARD] + [random_demand_model(s, continuous=True) for s in range(5)]
for doc in docs:
    m = build(doc)
    for seed in range(3):
        s = sim.init(m, seed=seed)
        sim.run(s)
        out["traces"].append(sim.trace_to_json(s.trace))
print(json.dumps(out))
"""


def _run(backend):
    env = dict(os.environ, DPRA_KERNEL=backend)
    p = subprocess.run([sys.executable, "-c", SCRIPT, str(HERE)], env=env, capture_output=True,
                       text=True, check=True)
    return json.loads(p.stdout)


def test_backend_is_reported():
    assert kernel.BACKEND in ("compiled", "python")


@pytest.mark.skipif(kernel.BACKEND != "compiled", reason="compiled kernel not built")
def test_compiled_and_python_traces_identical():
    py = _run("python")
    c = _run("compiled")
    assert py["backend"] == "python" and c["backend"] == "compiled"
    assert py["traces"] == c["traces"]


def test_python_backend_can_be_forced():
    env = dict(os.environ, DPRA_KERNEL="python")
    p = subprocess.run([sys.executable, "-c", "from dpra import kernel; print(kernel.BACKEND)"],
                       env=env, capture_output=True, text=True, check=True)
    assert p.stdout.strip() == "python"


def _programs(*srcs):
    from dpra.expr import compile_expression, parse_expression
    ops, args, starts, ends, consts = [], [], [], [], []
    for src in srcs:
        code = compile_expression(parse_expression(src), {"t": 0, "x": 1}, {}, consts)
        starts.append(len(ops))
        for op, a in code:
            ops.append(op)
            args.append(consts[a] if op == 0 else float(a))
        ends.append(len(ops))
    return ops, args, starts, ends


BACKENDS = ["python"] + (["compiled"] if kernel.BACKEND == "compiled" else [])


@pytest.mark.parametrize("name", BACKENDS)
def test_integrate_stops_at_crossing(name):
    from dpra import _pykernel
    k = _pykernel if name == "python" else kernel.backend
    ops, args, starts, ends = _programs("-2", "x <= 0")
    env = [0.0, 10.0]
    if name == "compiled":
        import numpy as np
        env = np.array(env)
    t, mon, st = k.integrate(ops, args, starts, ends, [0], [1], [0], [1], [1], env, 10.0, 0.01, 1e-4)
    assert st == _pykernel.OK
    assert mon == 0
    assert abs(t - 5.0) <= 0.01
    assert abs(env[1]) <= 0.03


@pytest.mark.parametrize("name", BACKENDS)
def test_integrate_constant_no_crossing(name):
    from dpra import _pykernel
    k = _pykernel if name == "python" else kernel.backend
    ops, args, starts, ends = _programs("0", "x <= 0")
    env = [0.0, 3.0]
    if name == "compiled":
        import numpy as np
        env = np.array(env)
    t, mon, st = k.integrate(ops, args, starts, ends, [0], [1], [0], [1], [1], env, 4.0, 0.01, 1e-4)
    assert (t, mon, st) == (4.0, -1, _pykernel.OK)
    assert env[1] == 3.0


@pytest.mark.parametrize("name", BACKENDS)
def test_integrate_reports_division_by_zero(name):
    from dpra import _pykernel
    k = _pykernel if name == "python" else kernel.backend
    ops, args, starts, ends = _programs("1 / (x - 3)", "x <= 0")
    env = [0.0, 3.0]
    if name == "compiled":
        import numpy as np
        env = np.array(env)
    _, _, st = k.integrate(ops, args, starts, ends, [0], [1], [0], [1], [1], env, 1.0, 0.01, 1e-4)
    assert st == _pykernel.DIV_ZERO
