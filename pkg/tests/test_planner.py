import copy
import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from dpra import satellite
from dpra import simulator as sim
from dpra.planner import (AND, AVAILABLE, DOWN, LOST, OR, UP, Abstraction, AbstractFSM,
                          FSMTransition, PlanError, PlanScenario, evaluate_tree,
                          functionality_status, generate_plan, initial_cursors, leaf, match_event,
                          minimal_failure_sets, plan_from_dict, plan_load, plan_store, plan_to_dict,
                          refine_plan, truth_table)
from dpra.scheduler import ExplorationConfig, explore_guided, explore_systematic

from _gen import (PUMP, PUMP_PLAN, brute_eval, brute_min_failure_sets, brute_paths, build,
                  random_fsm, random_tree)

a, b, c = leaf("a"), leaf("b"), leaf("c")


# ---------------------------------------------------------------------------
# trees

def test_and_all_up():
    assert evaluate_tree(AND("r", a, b), {"a": UP, "b": UP}) == UP


def test_or_is_redundancy():
    assert evaluate_tree(OR("r", a, b), {"a": DOWN, "b": UP}) == UP


def test_nested_tree():
    t = OR("r", AND("g", a, b), c)
    assert evaluate_tree(t, {"a": DOWN, "b": UP, "c": DOWN}) == DOWN


def test_missing_component_is_an_error():
    with pytest.raises(PlanError):
        evaluate_tree(AND("r", a, b), {"a": UP})


def test_minimal_failure_set_examples():
    fs = frozenset
    assert minimal_failure_sets(AND("r", a, b)) == {fs("a"), fs("b")}
    assert minimal_failure_sets(OR("r", a, b)) == {fs("ab")}
    assert minimal_failure_sets(OR("r", AND("g", a, b), c)) == {fs("ac"), fs("bc")}


def test_truth_table_matches_evaluate():
    t = OR("r", AND("g", a, b), c)
    rows = list(truth_table(t))
    assert len(rows) == 8
    for sv, val in rows:
        assert evaluate_tree(t, sv) == val


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 9))
def test_random_trees_against_brute_force(seed, n):
    rng = random.Random(seed)
    t, names = random_tree(rng, n)
    for bits in range(2 ** n):
        sv = {nm: (DOWN if bits >> i & 1 else UP) for i, nm in enumerate(names)}
        assert (evaluate_tree(t, sv) == UP) == brute_eval(t, sv)
    mfs = minimal_failure_sets(t)
    assert mfs == brute_min_failure_sets(t, names)


# ---------------------------------------------------------------------------
# functionalities

def test_all_up_all_available():
    cf = {"f": ["a"], "g": ["r"]}
    t = AND("r", a, b)
    st_ = functionality_status(cf, t, {"a": UP, "b": UP})
    assert set(st_.values()) == {AVAILABLE}


def test_redundant_antenna():
    t = AND("downlink_hw", leaf("transmitter"), OR("antennas", leaf("ant1"), leaf("ant2")))
    cf = {"downlink": ["downlink_hw"]}
    sv = {"transmitter": UP, "ant1": DOWN, "ant2": UP}
    assert functionality_status(cf, t, sv)["downlink"] == AVAILABLE
    sv["ant2"] = DOWN
    assert functionality_status(cf, t, sv)["downlink"] == LOST


def test_dangling_reference():
    with pytest.raises(PlanError):
        functionality_status({"f": ["nowhere"]}, AND("r", a), {"a": UP})


def test_satellite_software_down_loses_every_mode():
    plan = satellite.build_plan("baseline")
    comps = [lf.component for lf in plan.component_tree.leaves()]
    sv = {cname: UP for cname in comps}
    sv["software"] = DOWN
    st_ = functionality_status(plan.cf_matrix, plan.component_tree, sv, plan.functionality_tree)
    for mode in satellite.MODE_REQUIREMENTS:
        assert st_[mode.lower()] == LOST


def test_satellite_mode_requirements():
    plan = satellite.build_plan("baseline")
    assert set(plan.cf_matrix["downlink_data"]) == {"transmitter", "antenna", "computer", "BUS",
                                                    "software", "RCS"}
    assert set(plan.cf_matrix["standby"]) == {"software", "computer"}


# ---------------------------------------------------------------------------
# FSM and plan generation

def fsm(states, initial, goals, *trs):
    return AbstractFSM(tuple(states), initial, tuple(goals),
                       tuple(FSMTransition(s, t, e) for s, t, e in trs))


def test_two_state_fsm():
    p = generate_plan(fsm(["N", "F"], "N", ["F"], ("N", "F", "x:lost")), {}, 3)
    assert [s.events for s in p.scenarios] == [("x:lost",)]


def test_four_state_fsm_two_paths_to_fail():
    f = fsm(["Nominal", "Degraded", "Safe", "Fail"], "Nominal", ["Fail"],
            ("Nominal", "Degraded", "a:lost"), ("Degraded", "Safe", "b:lost"),
            ("Safe", "Fail", "c:lost"), ("Nominal", "Fail", "d:lost"))
    p = generate_plan(f, {}, 4)
    assert sorted(s.events for s in p.scenarios) == [("a:lost", "b:lost", "c:lost"), ("d:lost",)]
    assert all(s.target == "Fail" for s in p.scenarios)


def test_goal_equal_to_initial():
    p = generate_plan(fsm(["N", "F"], "N", ["N"], ("N", "F", "x:lost")), {}, 3)
    assert [s.events for s in p.scenarios] == [()]


def test_unreachable_goal_warns():
    p = generate_plan(fsm(["N", "F", "G"], "N", ["G"], ("N", "F", "x:lost")), {}, 3)
    assert p.scenarios == ()
    assert any("unreachable" in w for w in p.warnings)


def test_nondeterministic_labels_rejected():
    f = fsm(["N", "F", "G"], "N", ["F"], ("N", "F", "x:lost"), ("N", "G", "x:lost"))
    with pytest.raises(PlanError):
        generate_plan(f, {}, 3)


def test_plan_output_order_is_lexicographic():
    f = fsm(["N", "A", "F"], "N", ["F"], ("N", "F", "z:lost"), ("N", "A", "a:lost"),
            ("A", "F", "b:lost"))
    p = generate_plan(f, {}, 3)
    assert [s.events for s in p.scenarios] == [("a:lost", "b:lost"), ("z:lost",)]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 6), st.integers(1, 4))
def test_generate_plan_matches_brute_force(seed, n_states, max_len):
    f = random_fsm(random.Random(seed), n_states)
    if f.check():
        return
    p = generate_plan(f, {}, max_len)
    want = sorted((ev, g) for g in f.goals for ev in brute_paths(f, g, max_len))
    assert [(s.events, s.target) for s in p.scenarios] == want


# ---------------------------------------------------------------------------
# cursors

def _plan(*scen):
    f = fsm(["N", "D", "F"], "N", ["F", "D"], ("N", "D", "x:lost"), ("D", "F", "y:lost"),
            ("N", "F", "z:lost"))
    base = generate_plan(f, {}, 3)
    return base.with_scenarios([PlanScenario(e, t, w) for e, t, w in scen])


def test_match_event_no_match_is_neutral():
    p = _plan((("x:lost",), "D", 5.0))
    cur = initial_cursors(p)
    new, imp = match_event(p, cur, "q:lost")
    assert new == cur and imp == 1.0


def test_match_event_returns_importance():
    p = _plan((("x:lost",), "D", 5.0))
    new, imp = match_event(p, initial_cursors(p), "x:lost")
    assert imp == 5.0 and new == (1,)


def test_match_event_max_rule():
    p = _plan((("x:lost",), "D", 2.0), (("x:lost", "y:lost"), "F", 5.0))
    _, imp = match_event(p, initial_cursors(p), "x:lost")
    assert imp == 5.0


@given(st.floats(0.01, 100))
def test_importance_scale_covariance(scale):
    p = _plan((("x:lost",), "D", 2.0), (("x:lost", "y:lost"), "F", 5.0), (("z:lost",), "F", 3.0))
    q = p.scaled(scale)
    for ev in ("x:lost", "y:lost", "z:lost", "w:gained"):
        c1, i1 = match_event(p, initial_cursors(p), ev)
        c2, i2 = match_event(q, initial_cursors(q), ev)
        assert c1 == c2
        if c1 != initial_cursors(p):
            assert i2 == pytest.approx(i1 * scale)
        else:
            assert i1 == i2 == 1.0


# ---------------------------------------------------------------------------
# refinement

@pytest.fixture
def pump_model():
    return build(PUMP)


def _traces(model, r):
    return [(s.end_state, s.trace) for s in r.stories]


def test_refine_exact_realization_is_empty(pump_model, pump_plan):
    melt = sim.init(pump_model)
    sim.run(melt, choose=lambda bp: bp.branches[-1])
    ab = Abstraction(pump_plan, pump_model)
    rep = refine_plan(pump_plan, [("MELT", melt.trace)], ab)
    assert rep.empty


def test_refine_reports_unplanned_path(pump_model):
    doc = copy.deepcopy(PUMP_PLAN)
    doc["fsm"]["transitions"].append({"from": "Nominal", "to": "Melt", "event": "backup_cooling:lost"})
    doc["scenarios"] = [{"events": ["backup_cooling:lost"], "target": "Melt"}]
    plan = plan_from_dict(doc)
    melt = sim.init(pump_model)
    sim.run(melt, choose=lambda bp: bp.branches[-1])
    rep = refine_plan(plan, [("MELT", melt.trace)], Abstraction(plan, pump_model))
    assert len(rep.unseen) == 1
    end, events, count = rep.unseen[0]
    assert end == "MELT" and events == ("primary_cooling:lost", "backup_cooling:lost") and count == 1


def test_refine_lists_impossible_scenario(pump_model):
    doc = copy.deepcopy(PUMP_PLAN)
    # the backup is only demanded after the pump has failed
    doc["fsm"]["states"].append("BackupOut")
    doc["fsm"]["transitions"] += [
        {"from": "Nominal", "to": "BackupOut", "event": "backup_cooling:lost"},
        {"from": "BackupOut", "to": "Melt", "event": "primary_cooling:lost"}]
    doc["scenarios"].append({"events": ["backup_cooling:lost", "primary_cooling:lost"],
                             "target": "Melt"})
    plan = plan_from_dict(doc)
    r = explore_guided(pump_model, plan, ExplorationConfig(mode="guided", n_sequences=1000, seed=5))
    before = plan_to_dict(plan)
    rep = refine_plan(plan, _traces(pump_model, r), Abstraction(plan, pump_model))
    assert [s.events for s in rep.never_realized] == [("backup_cooling:lost",
                                                       "primary_cooling:lost")]
    assert plan_to_dict(plan) == before
    assert "never realized" in rep.summary()
    json.dumps(rep.to_dict())


def test_refine_needs_a_trace(pump_plan):
    with pytest.raises(PlanError):
        refine_plan(pump_plan, [])


# ---------------------------------------------------------------------------
# persistence

def test_plan_round_trip(tmp_path, pump_plan):
    path = tmp_path / "plan.json"
    plan_store(pump_plan, path)
    again = plan_load(path)
    assert again == pump_plan
    assert plan_to_dict(again) == plan_to_dict(pump_plan)


def test_missing_plan_file(tmp_path):
    with pytest.raises(PlanError):
        plan_load(tmp_path / "nope.json")


def test_plan_schema_mismatch():
    doc = copy.deepcopy(PUMP_PLAN)
    doc["scenarios"][0]["events"] = ["primary_cooling:broken"]
    with pytest.raises(PlanError, match="schema"):
        plan_from_dict(doc)


def test_scenario_must_reach_target():
    doc = copy.deepcopy(PUMP_PLAN)
    doc["scenarios"][0]["events"] = ["primary_cooling:lost"]
    with pytest.raises(PlanError):
        plan_from_dict(doc)


@pytest.mark.parametrize("design", satellite.DESIGNS)
def test_satellite_plan_covers_every_end_state(design):
    plan = plan_load(satellite.plan_path(design))
    targets = {plan.fsm.end_states[s.target] for s in plan.scenarios}
    assert targets == {"FAIL", "DEGRADED", "SAFE_RECOVERED"}


def test_satellite_plan_realized_in_guided_stories():
    """Every baseline scenario shows up in 5000 guided stories at the shipped seed."""
    m = satellite.build_baseline()
    plan = satellite.build_plan("baseline")
    cfg = satellite.compare_config()["guided"]
    r = explore_guided(m, plan, ExplorationConfig(mode="guided", n_sequences=cfg["n_sequences"],
                                                  seed=cfg["seed"]))
    rep = refine_plan(plan, _traces(m, r), Abstraction(plan, m))
    assert rep.never_realized == []


def test_satellite_fail_only_from_safe_or_collect():
    m = satellite.build_baseline()
    r = explore_systematic(m, ExplorationConfig(keep_traces=True))
    for s in r.stories:
        if s.end_state != "FAIL":
            continue
        mode = [e for e in s.trace if e.kind == "transition" and e.detail.startswith("mode.")]
        last_mode = mode[-1].detail.split("->")[1] if mode else "Receive_command"
        assert last_mode in ("Collect_data", "Fail")
