import copy
import json

import pytest
from hypothesis import given, settings, strategies as st

from dpra.model import (Distribution, ModelError, ModelSyntaxError, load_model, model_from_dict,
                        model_schema, model_to_dict, parse_model, serialize_model, validate_model)
from dpra import satellite

from _gen import FUSE, PUMP, TANK, build, hazard_model, random_demand_model

MINIMAL = {
    "name": "one", "mission_time": 1.0,
    "components": [{"name": "valve", "states": ["OPEN", "SHUT"], "transitions": [
        {"name": "close", "kind": "demand", "source": "OPEN",
         "outcomes": [{"target": "SHUT", "p": 0.7}, {"target": "OPEN", "p": 0.3}]}]}],
    "continuous_vars": [],
    "end_states": [{"name": "OK", "predicate": "true", "severity": "ok", "at": "mission_end"}],
    "initial": {"components": {"valve": "OPEN"}},
}


def errors_of(doc):
    m = model_from_dict(doc, check=False)
    return [d for d in validate_model(m) if d.severity == "error"]


def warnings_of(doc):
    m = model_from_dict(doc, check=False)
    return [d for d in validate_model(m) if d.severity == "warning"]


def test_minimal_model():
    m = parse_model(json.dumps(MINIMAL))
    assert len(m.components) == 1
    assert m.step == 0.01


def test_probabilities_must_sum_to_one():
    doc = copy.deepcopy(MINIMAL)
    doc["components"][0]["transitions"][0]["outcomes"] = [
        {"target": "SHUT", "p": 0.5}, {"target": "OPEN", "p": 0.4}]
    with pytest.raises(ModelError, match="probabilities sum to 0.9"):
        parse_model(json.dumps(doc))


def test_probability_tolerance():
    doc = copy.deepcopy(MINIMAL)
    doc["components"][0]["transitions"][0]["outcomes"] = [
        {"target": "SHUT", "p": 0.1 + 0.2}, {"target": "OPEN", "p": 0.7 - 1e-10}]
    parse_model(json.dumps(doc))


def test_satellite_baseline_has_seven_modes():
    m = load_model(satellite.model_path("baseline"))
    modes = m.component("mode").states
    assert len(modes) == 7
    assert modes[0] == "Receive_command"


def test_valid_pump_has_no_diagnostics():
    assert validate_model(build(PUMP)) == []


def test_missing_default_clause():
    doc = copy.deepcopy(TANK)
    doc["continuous_vars"][0]["derivative"] = [{"when": "valve == OPEN", "rate": "-2"}]
    errs = errors_of(doc)
    assert len(errs) == 1
    assert "default" in errs[0].message


def test_default_clause_must_be_last():
    doc = copy.deepcopy(TANK)
    doc["continuous_vars"][0]["derivative"].reverse()
    assert errors_of(doc)


def test_overlapping_end_states_warn():
    doc = copy.deepcopy(TANK)
    doc["end_states"][:1] = [
        {"name": "LATE", "predicate": "t > 1", "severity": "degraded"},
        {"name": "LATER", "predicate": "t > 2", "severity": "fail"},
    ]
    ws = warnings_of(doc)
    assert any("may hold together" in w.message for w in ws)
    assert not errors_of(doc)


def test_disjoint_end_states_do_not_warn():
    doc = copy.deepcopy(TANK)
    doc["end_states"][:1] = [
        {"name": "LOW", "predicate": "x < 1", "severity": "degraded"},
        {"name": "HIGH", "predicate": "x > 20", "severity": "fail"},
    ]
    assert not warnings_of(doc)


def test_duplicate_identifier():
    doc = copy.deepcopy(PUMP)
    doc["components"][1]["name"] = "pump"
    with pytest.raises(ModelError, match="duplicate"):
        model_from_dict(doc)


def test_undeclared_reference():
    doc = copy.deepcopy(PUMP)
    doc["end_states"][0]["predicate"] = "pump == FAILED and valve == SHUT"
    with pytest.raises(ModelError, match="valve"):
        model_from_dict(doc)


def test_unknown_initial_state():
    doc = copy.deepcopy(PUMP)
    doc["initial"]["components"]["pump"] = "BROKEN"
    with pytest.raises(ModelError):
        model_from_dict(doc)


def test_mission_time_positive():
    doc = copy.deepcopy(PUMP)
    doc["mission_time"] = 0
    with pytest.raises(ModelError):
        model_from_dict(doc)


def test_catch_all_end_state_required():
    doc = copy.deepcopy(PUMP)
    doc["end_states"].pop()
    with pytest.raises(ModelError, match="end state"):
        model_from_dict(doc)


def test_bad_distribution_parameter():
    doc = hazard_model(rate=-1.0)
    with pytest.raises(ModelError):
        model_from_dict(doc)


def test_modifier_only_on_exponential():
    doc = hazard_model()
    doc["components"][0]["transitions"][0]["distribution"] = {"type": "weibull", "scale": 10, "shape": 2}
    with pytest.raises(ModelError, match="modifier"):
        model_from_dict(doc)


def test_negative_constant_modifier():
    with pytest.raises(ModelError):
        model_from_dict(hazard_model(modifier="-1"))


def test_json_syntax_error_has_line_and_column():
    with pytest.raises(ModelSyntaxError, match=r"line 2 column"):
        parse_model('{"name": "x",\n "mission_time": }')


def test_schema_violation_is_reported():
    doc = copy.deepcopy(PUMP)
    doc["components"][0]["transitions"][0]["kind"] = "magic"
    with pytest.raises(ModelSyntaxError):
        model_from_dict(doc)


def test_schema_is_valid_json_schema():
    import jsonschema
    jsonschema.Draft202012Validator.check_schema(model_schema())


@pytest.mark.parametrize("doc", [PUMP, TANK, FUSE, hazard_model(), MINIMAL])
def test_round_trip_fixtures(doc):
    m = build(doc)
    again = parse_model(serialize_model(m))
    assert again == m
    assert serialize_model(again) == serialize_model(m)
    assert again.fingerprint == m.fingerprint


@pytest.mark.parametrize("design", satellite.DESIGNS)
def test_satellite_models_validate(design):
    m = load_model(satellite.model_path(design))
    assert [d for d in validate_model(m) if d.severity == "error"] == []
    assert parse_model(serialize_model(m)) == m


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_round_trip_random_models(seed, continuous):
    doc = random_demand_model(seed, continuous=continuous)
    m = model_from_dict(doc)
    text = serialize_model(m)
    assert parse_model(text) == m
    assert serialize_model(parse_model(text)) == text
    assert model_to_dict(parse_model(text)) == model_to_dict(m)


def test_distribution_quantile_inverts_cdf():
    for d in (Distribution("exponential", rate=0.3), Distribution("weibull", scale=100, shape=2)):
        for q in (0.1, 0.5, 0.9):
            assert d.cdf(d.quantile(q)) == pytest.approx(q, rel=1e-12)
    f = Distribution("fixed", time=7.0)
    assert f.quantile(0.3) == 7.0 and f.cdf(7.0) == 1.0 and f.cdf(6.9) == 0.0
