import pytest
from hypothesis import given, strategies as st

from dpra.planner import plan_from_dict
from dpra.risk import (ACCEPT, INDETERMINATE, REJECT, AcceptanceCriteria, DesignChangeRecord,
                       LifeCyclePhase, RiskError, RiskReport, Row, ToolCategory, assess,
                       check_acceptance, compare_designs)
from dpra.scheduler import ExplorationConfig, explore_guided, explore_systematic

from _gen import PUMP, PUMP_PLAN, build


@pytest.fixture(scope="module")
def exact():
    return explore_systematic(build(PUMP), ExplorationConfig())


def report(mode="systematic", **classes):
    """Hand-built report; class values are an estimate or (estimate, lo, hi)."""
    rows = {}
    for c, v in classes.items():
        est, lo, hi = v if isinstance(v, tuple) else (v, v, v)
        rows[c] = Row(c, c, est, lo, hi, 1)
    return RiskReport(mode, "m", list(rows.values()), rows, [], 0.0, 0.0, 0.0, 10)


# ---------------------------------------------------------------------------
# assess

def test_classes_and_rows(exact):
    rep = assess(exact)
    assert rep.classes["fail"].estimate == pytest.approx(0.001)
    assert rep.classes["ok"].estimate == pytest.approx(0.999)
    assert [r.name for r in rep.rows] == ["MELT", "OK"]


def test_worst_case_is_the_melt_path(exact):
    rep = assess(exact, k=1)
    w = rep.worst[0]
    assert w.end_state == "MELT"
    assert w.choices == (("pump.start", "FAILED"), ("backup.start", "FAILED"))
    assert w.path_prob == pytest.approx(0.001)


def test_top_k_beyond_available_warns(exact):
    rep = assess(exact, k=5)
    assert len(rep.worst) == 1
    assert any("top-5" in w for w in rep.warnings)


def test_render_and_csv(exact):
    rep = assess(exact)
    text = rep.render()
    assert "MELT" in text and "worst-case" in text
    assert rep.to_csv().splitlines()[0] == "kind,name,severity,estimate,ci_low,ci_high,n_stories"


def test_guided_report_has_intervals():
    m = build(PUMP)
    r = explore_guided(m, plan_from_dict(PUMP_PLAN),
                       ExplorationConfig(mode="guided", n_sequences=2000, seed=1))
    rep = assess(r, criteria=AcceptanceCriteria({"fail": 0.001, "ok": None}))
    f = rep.classes["fail"]
    assert f.ci_low < f.estimate < f.ci_high
    assert rep.classes["ok"].estimate + f.estimate == pytest.approx(1.0, abs=0.02)


# ---------------------------------------------------------------------------
# acceptance

def test_exact_acceptance_examples():
    crit = AcceptanceCriteria({"fail": 1e-3, "ok": None})
    assert check_acceptance(report(fail=5e-4, ok=0.9995), crit)["fail"] == ACCEPT
    assert check_acceptance(report(fail=2e-3, ok=0.998), crit)["fail"] == REJECT
    assert check_acceptance(report(fail=1e-3, ok=0.999), crit)["fail"] == ACCEPT


def test_statistical_acceptance():
    crit = AcceptanceCriteria({"fail": 1e-3})
    assert check_acceptance(report("guided", fail=(5e-4, 2e-4, 8e-4)), crit)["fail"] == ACCEPT
    assert check_acceptance(report("guided", fail=(3e-3, 2e-3, 4e-3)), crit)["fail"] == REJECT
    assert check_acceptance(report("guided", fail=(9e-4, 5e-4, 1.5e-3)), crit)["fail"] == INDETERMINATE


def test_missing_threshold_is_an_error():
    with pytest.raises(RiskError, match="no limit"):
        check_acceptance(report(fail=0.1, ok=0.9), AcceptanceCriteria({"fail": 0.5}))


def test_threshold_parsing():
    c = AcceptanceCriteria.from_dict({"fail": 1e-3, "ok": "no limit", "degraded": None})
    assert c.thresholds == {"fail": 1e-3, "ok": None, "degraded": None}
    with pytest.raises(RiskError):
        AcceptanceCriteria.from_dict({"fail": "lots"})
    with pytest.raises(RiskError):
        AcceptanceCriteria({"fail": 2.0})


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_acceptance_is_monotone_in_threshold(p, t1, t2):
    lo, hi = sorted((t1, t2))
    rep = report(fail=p)
    a = check_acceptance(rep, AcceptanceCriteria({"fail": lo}))["fail"]
    b = check_acceptance(rep, AcceptanceCriteria({"fail": hi}))["fail"]
    if a == ACCEPT:
        assert b == ACCEPT


# ---------------------------------------------------------------------------
# comparison

def test_lowest_criterion_wins():
    cmp = compare_designs({"a": report(fail=0.2, ok=0.8), "b": report(fail=0.1, ok=0.9)}, "fail")
    assert cmp.preferred == "b"
    assert cmp.deltas["a"]["fail"] == pytest.approx(0.1)
    assert "preferred=b" in cmp.render()


def test_secondary_breaks_ties():
    alts = {"a": report(fail=0.1, degraded=0.3, ok=0.6),
            "b": report(fail=0.1, degraded=0.2, ok=0.7)}
    assert compare_designs(alts, "fail", ["degraded"]).preferred == "b"


def test_full_tie_is_reported():
    alts = {"a": report(fail=0.1, ok=0.9), "b": report(fail=0.1 + 1e-13, ok=0.9 - 1e-13)}
    cmp = compare_designs(alts, "fail", ["ok"])
    assert cmp.is_tie and cmp.tied == ["a", "b"]
    assert cmp.verdict_line().startswith("preferred=tie")


@given(st.lists(st.floats(0, 1), min_size=2, max_size=5, unique=True))
def test_relabelling_alternatives_keeps_the_winner(vals):
    alts = {f"d{i}": report(fail=v) for i, v in enumerate(vals)}
    renamed = {f"z{len(vals) - i}": rep for i, rep in enumerate(alts.values())}
    names = dict(zip(alts, renamed))
    a = compare_designs(alts, "fail")
    b = compare_designs(renamed, "fail")
    assert (a.preferred is None) == (b.preferred is None)
    if a.preferred is not None:
        assert names[a.preferred] == b.preferred


def test_one_alternative_is_an_error():
    with pytest.raises(RiskError, match="two"):
        compare_designs({"a": report(fail=0.1)}, "fail")


def test_unknown_class():
    with pytest.raises(RiskError):
        compare_designs({"a": report(fail=0.1), "b": report(fail=0.2)}, "catastrophe")


def test_change_records():
    rec = DesignChangeRecord("add an alarm", "degradation", "alarms")
    assert rec.life_cycle_phase is LifeCyclePhase.degradation
    assert rec.tool_category is ToolCategory.alarms
    assert rec.to_dict() == {"description": "add an alarm", "life_cycle_phase": "degradation",
                             "tool_category": "alarms"}
    with pytest.raises(RiskError, match="life-cycle"):
        DesignChangeRecord("x", "midlife", "alarms")
    with pytest.raises(RiskError, match="tool category"):
        DesignChangeRecord("x", "failure", "duct_tape")
