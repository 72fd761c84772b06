"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import bisect
import io
import json
import math
import random
import time
from contextlib import redirect_stdout

import pytest

from dpra import satellite
from dpra import simulator as sim
from dpra.cli import main
from dpra.planner import (DOWN, UP, Abstraction, completed, evaluate_tree, generate_plan,
                          initial_cursors, match_event, minimal_failure_sets, plan_from_dict)
from dpra.scheduler import ExplorationConfig, explore_guided, explore_systematic

from _gen import (FUSE, LEVEL_HAZARD, PUMP, PUMP_PLAN, TANK, brute_eval, brute_force,
                  brute_min_failure_sets, build, dfs_paths, level_hazard_cdf, random_demand_model,
                  random_fsm, random_tree)

pytestmark = pytest.mark.acceptance

CORPUS = range(200)
TRUE_MELT = 0.001


def test_criterion_01_exactness(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in CORPUS:
        doc = random_demand_model(seed)
        r = explore_systematic(build(doc), ExplorationConfig())
        want = brute_force(doc)
        for e, est in r.estimates.items():
            worst = max(worst, abs(est.estimate - want.get(e, 0.0)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and dt < 30
    verdict(1, ok, f"200 models, max |delta| {worst:.2e}, {dt:.1f} s")
    assert ok


def test_criterion_02_conservation(verdict):
    worst = 0.0
    monotone = True
    for seed in CORPUS:
        m = build(random_demand_model(seed))
        prev = None
        for p_lim in (1e-2, 1e-3, 0.0):          # decreasing threshold
            r = explore_systematic(m, ExplorationConfig(p_lim=p_lim))
            total = r.explored_mass + r.ledger.mass + r.unexplored_mass + r.depth_limited_mass
            worst = max(worst, abs(total - 1.0))
            if prev is not None and r.ledger.mass > prev + 1e-15:
                monotone = False
            prev = r.ledger.mass
    ok = worst <= 1e-9 and monotone
    verdict(2, ok, f"max |mass - 1| {worst:.2e}, truncation monotone: {monotone}")
    assert ok


def _within_3se(est):
    return abs(est.estimate - TRUE_MELT) <= 3 * est.std_error


def test_criterion_03_guided_unbiased(verdict):
    m, plan = build(PUMP), plan_from_dict(PUMP_PLAN)
    t0 = time.perf_counter()
    hits = 0
    for seed in range(100):
        r = explore_guided(m, plan, ExplorationConfig(mode="guided", n_sequences=10_000, seed=seed,
                                                      keep_traces=False))
        hits += _within_3se(r.estimates["MELT"])
    dt = time.perf_counter() - t0
    ok = hits >= 95 and dt < 60
    verdict(3, ok, f"{hits}/100 seeds within 3 SE, {dt:.1f} s")
    assert ok


def test_criterion_04_guidance_effect(verdict):
    m = build(PUMP)
    plan = plan_from_dict(PUMP_PLAN).scaled(100.0)
    more = covered = 0
    n = 10_000
    for seed in range(100):
        cfg = dict(mode="guided", n_sequences=n, seed=seed, keep_traces=False)
        g = explore_guided(m, plan, ExplorationConfig(**cfg))
        b = explore_guided(m, plan, ExplorationConfig(beta=0.0, **cfg))
        more += g.estimates["MELT"].n_stories > b.estimates["MELT"].n_stories
        covered += _within_3se(g.estimates["MELT"])
    ok = more == 100 and covered >= 95
    verdict(4, ok, f"MELT fraction higher in {more}/100 paired seeds; {covered}/100 within 3 SE")
    assert ok


def _realized(plan, ab, trace):
    cur = initial_cursors(plan)
    for ev in ab.abstract_trace(trace):
        cur, _ = match_event(plan, cur, ev)
    return completed(plan, cur)


def test_criterion_05_coverage(verdict):
    m = satellite.build_baseline()
    plan = satellite.build_plan("baseline")
    ab = Abstraction(plan, m)
    assert len(m.end_states) == 4
    exact = explore_systematic(m, ExplorationConfig(keep_traces=True))
    truth = [0.0] * len(plan.scenarios)
    for s in exact.stories:
        for i in _realized(plan, ab, s.trace):
            truth[i] += s.path_prob
    important = {i for i, p in enumerate(truth) if p >= 1e-4}
    r = explore_guided(m, plan, ExplorationConfig(mode="guided", n_sequences=5000, seed=2024))
    seen = set()
    for s in r.stories:
        seen.update(_realized(plan, ab, s.trace))
    missing = important - seen
    ok = bool(important) and not missing
    verdict(5, ok, f"{len(important - missing)}/{len(important)} scenarios with p >= 1e-4 "
                   f"realized in 5000 guided stories")
    assert ok


def test_criterion_06_sibling_order(verdict):
    bad = 0
    for seed in range(50):
        m = build(random_demand_model(seed, continuous=True))
        fwd = explore_systematic(m, ExplorationConfig(branch_order="forward"))
        rev = explore_systematic(m, ExplorationConfig(branch_order="reverse"))
        a = {s.choices: sim.trace_to_json(s.trace) for s in fwd.stories}
        b = {s.choices: sim.trace_to_json(s.trace) for s in rev.stories}
        bad += a != b
    ok = bad == 0
    verdict(6, ok, f"{50 - bad}/50 models give identical traces in either sibling order")
    assert ok


def test_criterion_07_planner_oracles(verdict):
    rng = random.Random(7)
    tree_bad = 0
    for _ in range(100):
        t, names = random_tree(rng, rng.randint(1, 12))
        for bits in range(2 ** len(names)):
            sv = {nm: (DOWN if bits >> i & 1 else UP) for i, nm in enumerate(names)}
            if (evaluate_tree(t, sv) == UP) != brute_eval(t, sv):
                tree_bad += 1
                break
        if minimal_failure_sets(t) != brute_min_failure_sets(t, names):
            tree_bad += 1
    fsm_bad = checked = 0
    while checked < 50:
        n = rng.randint(1, 8)
        f = random_fsm(rng, n)
        if f.check():
            continue
        checked += 1
        p = generate_plan(f, {}, n)
        want = sorted((ev, g) for g in f.goals for ev in dfs_paths(f, g, n))
        fsm_bad += [(s.events, s.target) for s in p.scenarios] != want
    ok = tree_bad == 0 and fsm_bad == 0
    verdict(7, ok, f"trees: {100 - tree_bad}/100 exact, FSMs: {50 - fsm_bad}/50 exact")
    assert ok


def test_criterion_08_continuous_coupling(verdict):
    tank = build(TANK)
    s = sim.init(tank)
    sim.run(s)
    tank_err = abs(s.clock - 5.0)

    fuse = build(FUSE)
    s = sim.init(fuse)
    sim.run(s)
    melt = [e.time for e in s.trace if e.kind == "transition"][0]
    fuse_err = abs(melt - 4.0)

    m = build(LEVEL_HAZARD)
    n = 100_000
    times = []
    for seed in range(n):
        st = sim.init(m, seed=seed)
        out = sim.run(st)
        times.append(st.clock if out.end_state == "FAIL" else math.inf)
    times.sort()
    worst_z = 0.0
    for t in (1.0, 3.0, 5.0, 6.0, 8.0, 10.0):
        F = level_hazard_cdf(t)
        emp = bisect.bisect_right(times, t) / n
        worst_z = max(worst_z, abs(emp - F) / math.sqrt(F * (1 - F) / n))
    ok = tank_err <= tank.step and fuse_err <= fuse.step and worst_z <= 3.0
    verdict(8, ok, f"tank |dt| {tank_err:.1e}, fuse |dt| {fuse_err:.1e}, "
                   f"level hazard worst z {worst_z:.2f} over 1e5 samples")
    assert ok


def test_criterion_09_case_study(verdict):
    t0 = time.perf_counter()
    r = satellite.run_case_study()
    d = r.degraded
    ordered = d["option_alarm"] < d["option_qc"] < d["baseline"]
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = main(["compare"])
    printed = "preferred=option_alarm" in buf.getvalue() and code == 0
    tie = satellite.run_case_study(guided_n=0, d_q=satellite.DEFAULT_D_A * satellite.DEFAULT_H)
    gap = abs(tie.degraded["option_alarm"] - tie.degraded["option_qc"])
    dt = time.perf_counter() - t0
    ok = ordered and printed and gap <= 1e-9 and dt < 300
    verdict(9, ok, f"P(degraded) alarm {d['option_alarm']:.4f} < qc {d['option_qc']:.4f} < "
                   f"baseline {d['baseline']:.4f}; compare prints preferred=option_alarm: {printed}; "
                   f"tie gap {gap:.1e}; {dt:.1f} s")
    assert ok


DATA_FILES = ["estimates.csv", "traces.csv", "ledger.json", "result.json"]


def test_criterion_10_rerun_from_manifest(verdict, model_files, tmp_path):
    model, plan = model_files
    runs = {
        "systematic": ["--plim", "0.0005"],
        "guided": ["--mode", "guided", "--plan", str(plan), "--n", "500", "--seed", "11"],
        "targeted": ["--mode", "targeted", "--plan", str(plan), "--n", "500", "--seed", "12",
                     "--target-event", "backup=FAILED"],
    }
    same = 0
    buf = io.StringIO()
    with redirect_stdout(buf):
        for name, extra in runs.items():
            a, b = tmp_path / f"{name}_a", tmp_path / f"{name}_b"
            assert main(["explore", str(model), "--out-dir", str(a)] + extra) == 0
            assert main(["explore", "--from-manifest", str(a / "manifest.json"),
                         "--out-dir", str(b)]) == 0
            man = json.loads((a / "manifest.json").read_text())
            same += all((a / f).read_bytes() == (b / f).read_bytes() for f in DATA_FILES) \
                and set(man["outputs"]) == set(DATA_FILES)
    ok = same == len(runs)
    verdict(10, ok, f"{same}/{len(runs)} reruns reproduce every data file byte-for-byte")
    assert ok
