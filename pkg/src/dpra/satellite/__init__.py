"""Earth-observation satellite case study.

Three designs share one mode cycle and one component set:

* ``baseline``: a software/hardware interaction fault in Downlink leaves
  degraded data that becomes corrupted after one hour (``degraded`` end state)
* ``option_alarm``: a ground alarm (DETECT -> ACTIVATED | NOT_ACTIVATED) and an
  operator (OBSERVE -> SEND_TO_SM | NO_SM) command Safe mode after a
  ground-link delay
* ``option_qc``: an onboard quality-control unit commands Safe mode at once

All probabilities are repository choices.  Stories end at the first
off-nominal outcome: a failure, degraded data, or a Safe-mode restart.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from ..model import SystemModel, model_from_dict, model_to_dict
from ..planner import Plan, generate_plan, plan_from_dict, plan_to_dict

MODES = ["Receive_command", "Collect_data", "Process_data", "Downlink_data", "Standby", "Safe", "Fail"]
CYCLE = [("Receive_command", 0.5), ("Collect_data", 1.0), ("Process_data", 0.5),
         ("Downlink_data", 0.5), ("Standby", 1.5)]
CYCLE_HOURS = sum(d for _, d in CYCLE)
N_CYCLES = 20
MISSION_TIME = N_CYCLES * CYCLE_HOURS

CRITICAL = ["computer", "RCS", "BUS", "software"]
HARDWARE = ["receiver", "transmitter", "antenna", "computer", "RCS", "BUS", "software", "memory"]

# components needed by each mode
MODE_REQUIREMENTS = {
    "Receive_command": ["receiver", "antenna", "computer", "RCS", "BUS", "software"],
    "Collect_data": ["RCS", "computer", "BUS", "software"],
    "Process_data": ["BUS", "computer", "software"],
    "Downlink_data": ["transmitter", "antenna", "computer", "BUS", "software", "RCS"],
    "Standby": ["software", "computer"],
    "Safe": ["transmitter", "antenna", "computer", "software"],
}

# per-demand failure probabilities and the mode whose entry makes the demand
DEMANDS = {
    "receiver": ("Receive_command", 1e-3),
    "computer": ("Collect_data", 5e-4),
    "RCS": ("Collect_data", 5e-4),
    "BUS": ("Collect_data", 5e-4),
    "software": ("Collect_data", 5e-4),
    "memory": ("Collect_data", 1e-3),
    "transmitter": ("Downlink_data", 1e-3),
    "antenna": ("Downlink_data", 1e-3),
}

P_DATA_FAULT = 0.05          # degraded data per Downlink entry
CORRUPTION_DELAY = 1.0       # hours until degraded data is unusable
P_COLLECT_PROBLEM = 0.01
P_RESTART = 0.95
GROUND_DELAY = 0.25          # hours from operator decision to Safe command

DEFAULT_D_A = 0.90           # alarm detection probability
DEFAULT_H = 0.98             # operator sends Safe-mode command
DEFAULT_D_Q = 0.80           # onboard quality-control detection probability

SEVERITIES = ["ok", "degraded", "safe_recovered", "fail"]
DESIGNS = ["baseline", "option_alarm", "option_qc"]


def _demand(name, source, trigger, ok_target, bad_target, p_bad):
    return {"name": name, "kind": "demand", "source": source, "trigger": trigger,
            "outcomes": [{"target": ok_target, "p": 1.0 - p_bad}, {"target": bad_target, "p": p_bad}]}


def _model_dict(design: str, d_a: float = DEFAULT_D_A, h: float = DEFAULT_H,
                d_q: float = DEFAULT_D_Q) -> dict:
    safe_request = ["collection == PROBLEM"]
    extra = []
    if design == "option_alarm":
        safe_request.append("ground == SAFE_CMD")
        extra = [
            {"name": "alarm", "states": ["DETECT", "ACTIVATED", "NOT_ACTIVATED"], "transitions": [
                _demand("check", "DETECT", "link == DEGRADED_DATA", "ACTIVATED", "NOT_ACTIVATED", 1.0 - d_a)]},
            {"name": "human", "states": ["OBSERVE", "SEND_TO_SM", "NO_SM"], "transitions": [
                _demand("decide", "OBSERVE", "alarm == ACTIVATED", "SEND_TO_SM", "NO_SM", 1.0 - h)]},
            {"name": "ground", "states": ["IDLE", "WAIT", "SAFE_CMD"], "transitions": [
                {"name": "uplink", "kind": "conditional", "source": "IDLE",
                 "guard": "human == SEND_TO_SM", "target": "WAIT"},
                {"name": "deliver", "kind": "timed", "source": "WAIT", "target": "SAFE_CMD",
                 "distribution": {"type": "fixed", "time": GROUND_DELAY}}]},
        ]
    elif design == "option_qc":
        safe_request.append("qc == DETECTED")
        extra = [
            {"name": "qc", "states": ["CHECK", "DETECTED", "MISSED"], "transitions": [
                _demand("inspect", "CHECK", "link == DEGRADED_DATA", "DETECTED", "MISSED", 1.0 - d_q)]},
        ]
    elif design != "baseline":
        raise ValueError(f"unknown design {design!r}")
    guard = " or ".join(safe_request)

    mode_tr = []
    for i, (m, dur) in enumerate(CYCLE):
        nxt = CYCLE[(i + 1) % len(CYCLE)][0]
        mode_tr.append({"name": f"{m}_done", "kind": "timed", "source": m, "target": nxt,
                        "distribution": {"type": "fixed", "time": dur}})
    for m, _ in CYCLE:
        mode_tr.append({"name": f"{m}_to_safe", "kind": "conditional", "source": m,
                        "guard": guard, "target": "Safe"})
    mode_tr.append({"name": "unrecoverable", "kind": "conditional", "source": "Safe",
                    "guard": "recovery == FAILED", "target": "Fail"})

    comps = [{"name": "mode", "states": MODES, "transitions": mode_tr}]
    for c in HARDWARE:
        when, p = DEMANDS[c]
        comps.append({"name": c, "states": ["UP", "DOWN"], "transitions": [
            _demand("demand", "UP", f"mode == {when}", "UP", "DOWN", p)]})
    comps.append({"name": "collection", "states": ["OK", "PROBLEM"], "transitions": [
        _demand("collect", "OK", "mode == Collect_data", "OK", "PROBLEM", P_COLLECT_PROBLEM)]})
    comps.append({"name": "link", "states": ["NOMINAL", "DEGRADED_DATA", "CORRUPTED"], "transitions": [
        _demand("interaction_fault", "NOMINAL", "mode == Downlink_data", "NOMINAL", "DEGRADED_DATA",
                P_DATA_FAULT),
        {"name": "corrupt", "kind": "timed", "source": "DEGRADED_DATA", "target": "CORRUPTED",
         "distribution": {"type": "fixed", "time": CORRUPTION_DELAY}},
        {"name": "resend", "kind": "conditional", "source": "DEGRADED_DATA", "guard": "mode == Safe",
         "target": "NOMINAL"}]})
    comps.append({"name": "recovery", "states": ["NONE", "RESTARTED", "FAILED"], "transitions": [
        _demand("restart", "NONE", "mode == Safe", "RESTARTED", "FAILED", 1.0 - P_RESTART)]})
    comps.extend(extra)

    fail_pred = " or ".join(["mode == Fail"] + [f"{c} == DOWN" for c in CRITICAL])
    noncritical = [c for c in HARDWARE if c not in CRITICAL]
    degraded_pred = " or ".join(["link == CORRUPTED"] + [f"{c} == DOWN" for c in noncritical])
    initial = {c["name"]: c["states"][0] for c in comps}
    return {
        "name": f"satellite_{design}",
        "description": f"earth-observation satellite, {design} design, {N_CYCLES} mode cycles",
        "mission_time": MISSION_TIME,
        "components": comps,
        "continuous_vars": [],
        "end_states": [
            {"name": "FAIL", "predicate": fail_pred, "severity": "fail"},
            {"name": "DEGRADED", "predicate": degraded_pred, "severity": "degraded"},
            {"name": "SAFE_RECOVERED", "predicate": "recovery == RESTARTED", "severity": "safe_recovered"},
            {"name": "OK", "predicate": "true", "severity": "ok", "at": "mission_end"},
        ],
        "initial": {"components": initial},
    }


def build_baseline() -> SystemModel:
    return model_from_dict(_model_dict("baseline"))


def build_option_alarm(d_a: float = DEFAULT_D_A, h: float = DEFAULT_H) -> SystemModel:
    return model_from_dict(_model_dict("option_alarm", d_a=d_a, h=h))


def build_option_qc(d_q: float = DEFAULT_D_Q) -> SystemModel:
    return model_from_dict(_model_dict("option_qc", d_q=d_q))


def build(design: str, **params) -> SystemModel:
    return {"baseline": build_baseline, "option_alarm": build_option_alarm,
            "option_qc": build_option_qc}[design](**params)


def _plan_dict(design: str, max_len: int = 4) -> dict:
    leaves = {c: {"component": c} for c in HARDWARE}
    children = [leaves[c] for c in HARDWARE]
    children.append({"component": "collection", "down": ["PROBLEM"]})
    children.append({"component": "link", "down": ["DEGRADED_DATA", "CORRUPTED"]})
    children.append({"component": "recovery", "down": ["FAILED"]})
    tree = {"name": "satellite", "gate": "AND", "children": children}
    cf = {m.lower(): list(req) for m, req in MODE_REQUIREMENTS.items()}
    cf["data_acquisition"] = ["collection"]
    cf["data_quality"] = ["link"]
    cf["restart"] = ["recovery"]
    ftree = {"name": "mission", "children": [
        {"name": "receive_command"},
        {"name": "collect_data", "children": [{"name": "data_acquisition"}]},
        {"name": "process_data"},
        {"name": "downlink_data", "children": [{"name": "data_quality"}]},
        {"name": "standby"},
        {"name": "safe", "children": [{"name": "restart"}]},
    ]}
    transitions = [
        {"from": "Nominal", "to": "Degraded", "event": "data_quality:lost"},
        {"from": "Nominal", "to": "Safe", "event": "data_acquisition:lost"},
        {"from": "Nominal", "to": "Fail", "event": "collect_data:lost"},
        {"from": "Safe", "to": "Fail", "event": "restart:lost"},
    ]
    if design != "baseline":
        # early detection sends degraded-data episodes to Safe mode
        transitions.insert(1, {"from": "Degraded", "to": "Safe", "event": "data_quality:gained"})
    fsm = {"states": ["Nominal", "Degraded", "Safe", "Fail"], "initial": "Nominal",
           "goals": ["Degraded", "Safe", "Fail"], "transitions": transitions,
           "end_states": {"Degraded": "DEGRADED", "Safe": "SAFE_RECOVERED", "Fail": "FAIL"}}
    base = plan_from_dict({"component_tree": tree, "functionality_tree": ftree, "cf_matrix": cf,
                           "fsm": fsm, "scenarios": []})
    plan = generate_plan(base.fsm, base.cf_matrix, max_len, base=base)
    doc = plan_to_dict(plan)
    doc["metadata"] = {"design": design, "max_len": max_len}
    return doc


def build_plan(design: str) -> Plan:
    return plan_from_dict(_plan_dict(design))


# ---------------------------------------------------------------------------
# shipped files

DATA_PACKAGE = "dpra.satellite"


def data_dir():
    return resources.files(DATA_PACKAGE).joinpath("data")


def model_path(design: str):
    return data_dir().joinpath(f"{design}.model.json")


def plan_path(design: str):
    return data_dir().joinpath(f"{design}.plan.json")


def compare_config_path():
    return data_dir().joinpath("compare.json")


def compare_config() -> dict:
    return {
        "criterion": "degraded",
        "secondary": ["fail", "safe_recovered"],
        "mode": "systematic",
        "p_lim": 0.0,
        "guided": {"n_sequences": 5000, "seed": 2024},
        "thresholds": {"ok": None, "degraded": 0.05, "safe_recovered": None, "fail": 0.01},
        "alternatives": [
            {"name": d, "model": f"{d}.model.json", "plan": f"{d}.plan.json"} for d in DESIGNS
        ],
        "changes": {
            "option_alarm": [{"description": "ground alarm with operator Safe-mode command",
                              "life_cycle_phase": "degradation", "tool_category": "alarms"}],
            "option_qc": [{"description": "onboard data quality-control unit",
                           "life_cycle_phase": "degradation", "tool_category": "controls"}],
        },
    }


def _dump(doc) -> str:
    return json.dumps(doc, indent=2) + "\n"


def shipped_files() -> dict:
    """File name -> exact contents of every shipped case-study file."""
    out = {}
    for d in DESIGNS:
        out[f"{d}.model.json"] = _dump(model_to_dict(model_from_dict(_model_dict(d))))
        out[f"{d}.plan.json"] = _dump(_plan_dict(d))
    out["compare.json"] = _dump(compare_config())
    return out


def write_data(directory) -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in shipped_files().items():
        (directory / name).write_text(text, encoding="utf-8")
        written.append(directory / name)
    return written


@dataclass
class CaseStudyResult:
    comparison: object                 # risk.DesignComparison
    systematic: dict                   # design -> ExplorationResult
    guided: dict                       # design -> ExplorationResult
    degraded: dict                     # design -> exact P(degraded)


def run_case_study(guided_n: int = 5000, seed: int = 2024, d_a: float = DEFAULT_D_A,
                   h: float = DEFAULT_H, d_q: float = DEFAULT_D_Q, workers: int = 1) -> CaseStudyResult:
    """Explore all three designs and compare them on the ``degraded`` class."""
    from ..risk import DesignChangeRecord, assess, compare_designs
    from ..scheduler import ExplorationConfig, explore_guided, explore_systematic

    models = {"baseline": build_baseline(), "option_alarm": build_option_alarm(d_a, h),
              "option_qc": build_option_qc(d_q)}
    sys_res, guided_res, reports = {}, {}, {}
    for name, m in models.items():
        sys_res[name] = explore_systematic(m, ExplorationConfig(mode="systematic", seed=seed,
                                                                keep_traces=False))
        reports[name] = assess(sys_res[name], k=5)
        if guided_n:
            guided_res[name] = explore_guided(
                m, build_plan(name),
                ExplorationConfig(mode="guided", n_sequences=guided_n, seed=seed, workers=workers,
                                  keep_traces=False))
    cfg = compare_config()
    changes = {n: [DesignChangeRecord(**c) for c in cs] for n, cs in cfg["changes"].items()}
    cmp_ = compare_designs(reports, cfg["criterion"], cfg["secondary"], changes)
    degraded = {n: r.estimates["DEGRADED"].estimate for n, r in sys_res.items()}
    return CaseStudyResult(cmp_, sys_res, guided_res, degraded)
