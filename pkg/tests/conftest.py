import json

import pytest

from _gen import PUMP, PUMP_PLAN, TANK, build

ACCEPTANCE_LINES = []


@pytest.fixture
def pump():
    return build(PUMP)


@pytest.fixture
def pump_plan():
    from dpra.planner import plan_from_dict
    return plan_from_dict(json.loads(json.dumps(PUMP_PLAN)))


@pytest.fixture
def tank():
    return build(TANK)


@pytest.fixture
def model_files(tmp_path):
    """Pump model and plan written to disk."""
    m = tmp_path / "pump.json"
    p = tmp_path / "pump_plan.json"
    m.write_text(json.dumps(PUMP), encoding="utf-8")
    p.write_text(json.dumps(PUMP_PLAN), encoding="utf-8")
    return m, p


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def _record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
