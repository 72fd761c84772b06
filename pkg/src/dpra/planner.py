"""Abstract knowledge model and plan generation.

* component tree: AND/OR success tree over model components (AND joins
  distinct required elements, OR joins redundancies)
* functionality tree plus component-functionality (CF) matrix
* abstract FSM whose transitions are labelled ``<functionality>:lost`` or
  ``<functionality>:gained``
* plans: ordered functionality-change scenarios with an importance weight

Components are binary at this level: a tree leaf names a component and the
states in which it counts as DOWN.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from itertools import product
from pathlib import Path

import jsonschema

UP, DOWN = "UP", "DOWN"
AVAILABLE, LOST = "available", "lost"


class PlanError(ValueError):
    pass


# ---------------------------------------------------------------------------
# component tree

@dataclass(frozen=True)
class TreeNode:
    name: str
    gate: str | None = None          # AND | OR for internal nodes
    children: tuple = ()
    component: str | None = None     # leaves only
    down: tuple = ("DOWN",)          # leaf states counted as DOWN

    @property
    def is_leaf(self) -> bool:
        return self.component is not None

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def leaves(self) -> list:
        return [n for n in self.walk() if n.is_leaf]

    def components(self) -> list:
        out = []
        for n in self.leaves():
            if n.component not in out:
                out.append(n.component)
        return out

    def find(self, name: str) -> "TreeNode":
        for n in self.walk():
            if n.name == name:
                return n
        raise PlanError(f"no component-tree node named {name!r}")


def leaf(component: str, down=("DOWN",), name: str | None = None) -> TreeNode:
    return TreeNode(name or component, component=component, down=tuple(down))


def AND(name: str, *children) -> TreeNode:
    return TreeNode(name, "AND", tuple(children))


def OR(name: str, *children) -> TreeNode:
    return TreeNode(name, "OR", tuple(children))


def evaluate_tree(t: TreeNode, sv: dict) -> str:
    """Success-tree value of *t* for component status vector *sv* (UP/DOWN)."""
    if t.is_leaf:
        try:
            v = sv[t.component]
        except KeyError:
            raise PlanError(f"status vector has no entry for component {t.component!r}") from None
        if v not in (UP, DOWN):
            raise PlanError(f"status of {t.component!r} must be UP or DOWN, got {v!r}")
        return v
    vals = [evaluate_tree(c, sv) for c in t.children]
    if t.gate == "AND":
        return UP if all(v == UP for v in vals) else DOWN
    return UP if any(v == UP for v in vals) else DOWN


def node_status(t: TreeNode, sv: dict, out: dict | None = None) -> dict:
    """UP/DOWN for every node of *t*, keyed by node name."""
    out = {} if out is None else out
    if t.is_leaf:
        out[t.name] = evaluate_tree(t, sv)
    else:
        vals = [node_status(c, sv, out)[c.name] for c in t.children]
        if t.gate == "AND":
            out[t.name] = UP if all(v == UP for v in vals) else DOWN
        else:
            out[t.name] = UP if any(v == UP for v in vals) else DOWN
    return out


def _minimize(family) -> set:
    ordered = sorted(set(family), key=len)
    kept = []
    for s in ordered:
        if not any(k <= s for k in kept):
            kept.append(s)
    return set(kept)


def minimal_failure_sets(t: TreeNode) -> set:
    """Minimal sets of components whose joint failure forces the root DOWN."""
    if t.is_leaf:
        return {frozenset([t.component])}
    fams = [minimal_failure_sets(c) for c in t.children]
    if t.gate == "AND":
        return _minimize(s for fam in fams for s in fam)
    combined = {frozenset()}
    for fam in fams:
        combined = _minimize(a | b for a in combined for b in fam)
    return combined


# ---------------------------------------------------------------------------
# functionalities

@dataclass(frozen=True)
class FuncNode:
    name: str
    children: tuple = ()

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def names(self) -> list:
        return [n.name for n in self.walk()]


def functionality_status(cf: dict, t: TreeNode, sv: dict, ftree: FuncNode | None = None) -> dict:
    """available/lost per functionality.

    A functionality is available iff every tree node it requires is UP and,
    when *ftree* is given, all its sub-functionalities are available.
    """
    nodes = node_status(t, sv)
    for f, reqs in cf.items():
        for r in reqs:
            if r not in nodes:
                raise PlanError(f"functionality {f!r} requires unknown node {r!r}")

    def own(f):
        return all(nodes[r] == UP for r in cf.get(f, ()))

    out = {}
    if ftree is not None:
        def visit(n):
            ok = own(n.name)
            for c in n.children:
                ok = visit(c) and ok
            out[n.name] = AVAILABLE if ok else LOST
            return ok
        visit(ftree)
    for f in cf:
        if f not in out:
            out[f] = AVAILABLE if own(f) else LOST
    return out


# ---------------------------------------------------------------------------
# FSM and plans

@dataclass(frozen=True)
class FSMTransition:
    source: str
    target: str
    event: str


@dataclass(frozen=True)
class AbstractFSM:
    states: tuple
    initial: str
    goals: tuple
    transitions: tuple
    end_states: dict = field(default_factory=dict, compare=False)   # goal -> model end state

    def check(self) -> list:
        errs = []
        st = set(self.states)
        if len(st) != len(self.states):
            errs.append("duplicate FSM state")
        if self.initial not in st:
            errs.append(f"initial state {self.initial!r} is not an FSM state")
        if not self.goals:
            errs.append("FSM needs at least one goal state")
        for g in self.goals:
            if g not in st:
                errs.append(f"goal {g!r} is not an FSM state")
        seen = set()
        for tr in self.transitions:
            if tr.source not in st or tr.target not in st:
                errs.append(f"transition {tr.source}->{tr.target} uses an unknown state")
            if (tr.source, tr.event) in seen:
                errs.append(f"state {tr.source!r} has two outgoing transitions labelled {tr.event!r}")
            seen.add((tr.source, tr.event))
            if parse_event(tr.event) is None:
                errs.append(f"bad event label {tr.event!r}")
        return errs

    def labels(self) -> list:
        out = []
        for tr in self.transitions:
            f = tr.event.split(":", 1)[0]
            if f not in out:
                out.append(f)
        return out

    def run(self, events) -> str | None:
        """FSM state after *events*, or None on a dead end."""
        cur = self.initial
        for ev in events:
            nxt = [tr.target for tr in self.transitions if tr.source == cur and tr.event == ev]
            if not nxt:
                return None
            cur = nxt[0]
        return cur


def parse_event(ev: str):
    if not isinstance(ev, str) or ev.count(":") != 1:
        return None
    f, kind = ev.split(":")
    if kind not in ("lost", "gained") or not f:
        return None
    return f, kind


@dataclass(frozen=True)
class PlanScenario:
    events: tuple
    target: str
    importance: float = 1.0


@dataclass(frozen=True)
class Plan:
    component_tree: TreeNode
    functionality_tree: FuncNode
    cf_matrix: dict
    fsm: AbstractFSM
    scenarios: tuple = ()
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def warnings(self) -> list:
        return list(self.metadata.get("warnings", []))

    def with_scenarios(self, scenarios, **meta) -> "Plan":
        md = dict(self.metadata)
        md.update(meta)
        return Plan(self.component_tree, self.functionality_tree, self.cf_matrix, self.fsm,
                    tuple(scenarios), md)

    def scaled(self, c: float) -> "Plan":
        return self.with_scenarios(PlanScenario(s.events, s.target, s.importance * c)
                                   for s in self.scenarios)

    def tracked_functionalities(self) -> list:
        return self.fsm.labels()


def simple_paths(fsm: AbstractFSM, goal: str, max_len: int) -> list:
    """Event sequences of all cycle-free paths from the initial state to *goal*."""
    out = []
    if goal == fsm.initial:
        return [()]
    outgoing = {}
    for tr in fsm.transitions:
        outgoing.setdefault(tr.source, []).append(tr)

    def dfs(state, visited, events):
        if len(events) >= max_len:
            return
        for tr in outgoing.get(state, ()):
            if tr.target in visited:
                continue
            ev = events + (tr.event,)
            if tr.target == goal:
                out.append(ev)
                continue
            dfs(tr.target, visited | {tr.target}, ev)

    dfs(fsm.initial, {fsm.initial}, ())
    return out


def generate_plan(fsm: AbstractFSM, cf: dict, max_len: int, base: Plan | None = None) -> Plan:
    """All simple label paths from the initial state to each goal, length <= *max_len*.

    Scenarios are sorted by (events, target).  Importances are carried over
    from scenarios of *base* with identical events and target; others get 1.
    """
    if max_len < 1:
        raise PlanError("max_len must be at least 1")
    errs = fsm.check()
    if errs:
        raise PlanError("; ".join(errs))
    known = {f for f in cf}
    if base is not None:
        known |= set(base.functionality_tree.names())
    warnings = []
    for f in fsm.labels():
        if known and f not in known:
            warnings.append(f"FSM label {f!r} is not a known functionality")
    weights = {}
    if base is not None:
        weights = {(s.events, s.target): s.importance for s in base.scenarios}
    scen = []
    for g in fsm.goals:
        paths = simple_paths(fsm, g, max_len)
        if not paths:
            warnings.append(f"goal {g!r} is unreachable within {max_len} transitions")
        for p in paths:
            scen.append(PlanScenario(p, g, weights.get((p, g), 1.0)))
    scen.sort(key=lambda s: (s.events, s.target))
    if base is not None:
        return base.with_scenarios(scen, warnings=warnings, max_len=max_len)
    return Plan(TreeNode("root", "AND", ()), FuncNode("root"), dict(cf), fsm, tuple(scen),
                {"warnings": warnings, "max_len": max_len})


def initial_cursors(plan: Plan) -> tuple:
    return (0,) * len(plan.scenarios)


def match_event(plan: Plan, cursors: tuple, ev: str):
    """Advance every scenario whose next expected event is *ev*.

    Returns ``(cursors, importance)``; importance is the largest importance
    among the advanced scenarios, or the neutral 1 when none matched.
    """
    best = None
    new = list(cursors)
    for i, s in enumerate(plan.scenarios):
        c = cursors[i]
        if c < len(s.events) and s.events[c] == ev:
            new[i] = c + 1
            if best is None or s.importance > best:
                best = s.importance
    return tuple(new), (1.0 if best is None else best)


def completed(plan: Plan, cursors: tuple) -> list:
    return [i for i, s in enumerate(plan.scenarios) if cursors[i] == len(s.events)]


# ---------------------------------------------------------------------------
# linking to a simulation model

class Abstraction:
    """Maps model component states to functionality events for one plan."""

    def __init__(self, plan: Plan, model):
        self.plan = plan
        self.model = model
        errs = check_plan_against_model(plan, model)
        if errs:
            raise PlanError("; ".join(errs))
        self.tracked = plan.tracked_functionalities()
        self.comp_names = [c.name for c in model.components]
        down = {}
        for lf in plan.component_tree.leaves():
            down.setdefault(lf.component, set()).update(lf.down)
        self.down_codes = []
        for c in model.components:
            ds = down.get(c.name, set())
            self.down_codes.append({i for i, s in enumerate(c.states) if s in ds})
        self.relevant = [i for i, c in enumerate(model.components) if c.name in down]
        self._memo = {}

    def status(self, codes) -> tuple:
        """Tuple of booleans (available) for the tracked functionalities."""
        key = tuple(codes[i] for i in self.relevant)
        hit = self._memo.get(key)
        if hit is None:
            sv = {}
            for i in self.relevant:
                sv[self.comp_names[i]] = DOWN if codes[i] in self.down_codes[i] else UP
            fs = functionality_status(self.plan.cf_matrix, self.plan.component_tree, sv,
                                      self.plan.functionality_tree)
            hit = tuple(fs.get(f, AVAILABLE) == AVAILABLE for f in self.tracked)
            if len(self._memo) < 100_000:
                self._memo[key] = hit
        return hit

    def events(self, before: tuple, after: tuple) -> list:
        out = []
        for f, a, b in zip(self.tracked, before, after):
            if a != b:
                out.append(f"{f}:{'gained' if b else 'lost'}")
        return out

    def abstract_trace(self, trace) -> list:
        """Functionality-change events along a simulator trace."""
        codes = [c.states.index(self.model.initial_components[c.name]) for c in self.model.components]
        idx = {n: i for i, n in enumerate(self.comp_names)}
        prev = self.status(codes)
        out = []
        for ev in trace:
            if ev.kind != "transition":
                continue
            label, change = ev.detail.rsplit(":", 1)
            comp = label.split(".", 1)[0]
            new_state = change.split("->", 1)[1]
            ci = idx[comp]
            codes[ci] = self.model.components[ci].states.index(new_state)
            cur = self.status(codes)
            out.extend(self.events(prev, cur))
            prev = cur
        return out


def check_plan_against_model(plan: Plan, model) -> list:
    errs = []
    comps = {c.name: set(c.states) for c in model.components}
    for lf in plan.component_tree.leaves():
        if lf.component not in comps:
            errs.append(f"component tree references undeclared component {lf.component!r}")
            continue
        for s in lf.down:
            if s not in comps[lf.component]:
                errs.append(f"{s!r} is not a state of component {lf.component!r}")
    ends = {e.name for e in model.end_states}
    for goal, es in plan.fsm.end_states.items():
        if es not in ends:
            errs.append(f"FSM goal {goal!r} maps to unknown end state {es!r}")
    return errs


# ---------------------------------------------------------------------------
# refinement

@dataclass
class RefinementReport:
    never_realized: list            # PlanScenario
    unseen: list                    # (end_state, events tuple, count)
    n_traces: int = 0

    @property
    def empty(self) -> bool:
        return not self.never_realized and not self.unseen

    def to_dict(self) -> dict:
        return {
            "n_traces": self.n_traces,
            "never_realized": [{"events": list(s.events), "target": s.target,
                                "importance": s.importance} for s in self.never_realized],
            "unseen": [{"end_state": e, "events": list(ev), "count": n} for e, ev, n in self.unseen],
        }

    def summary(self) -> str:
        lines = [f"{self.n_traces} traces analysed"]
        lines.append(f"never realized scenarios: {len(self.never_realized)}")
        for s in self.never_realized:
            lines.append(f"  -> {s.target}: {' '.join(s.events) or '(empty)'}")
        lines.append(f"unseen event sequences: {len(self.unseen)}")
        for e, ev, n in self.unseen:
            lines.append(f"  {e} x{n}: {' '.join(ev) or '(empty)'}")
        return "\n".join(lines)


def _prefix_related(a: tuple, b: tuple) -> bool:
    n = min(len(a), len(b))
    return a[:n] == b[:n]


def refine_plan(plan: Plan, traces, abstraction: Abstraction | None = None) -> RefinementReport:
    """Compare a plan with observed stories; never mutates *plan*.

    *traces* holds ``(end_state, trace)`` pairs, or ``(end_state, events)``
    pairs of already abstracted event lists when *abstraction* is None.
    """
    traces = list(traces)
    if not traces:
        raise PlanError("refine_plan needs at least one trace")
    done = [False] * len(plan.scenarios)
    unseen = {}
    for end_state, tr in traces:
        events = tuple(abstraction.abstract_trace(tr) if abstraction is not None else tr)
        cur = initial_cursors(plan)
        for ev in events:
            cur, _ = match_event(plan, cur, ev)
        for i in completed(plan, cur):
            done[i] = True
        if not any(_prefix_related(events, s.events) for s in plan.scenarios):
            key = (end_state, events)
            unseen[key] = unseen.get(key, 0) + 1
    never = [s for s, d in zip(plan.scenarios, done) if not d]
    return RefinementReport(never, [(e, ev, n) for (e, ev), n in sorted(unseen.items())],
                            len(traces))


# ---------------------------------------------------------------------------
# persistence

_SCHEMA = None


def plan_schema() -> dict:
    global _SCHEMA
    if _SCHEMA is None:
        _SCHEMA = json.loads(resources.files("dpra").joinpath("schemas/plan.schema.json")
                             .read_text("utf-8"))
    return _SCHEMA


def _tree_from(d) -> TreeNode:
    if "component" in d:
        return TreeNode(d.get("name", d["component"]), component=d["component"],
                        down=tuple(d.get("down", ["DOWN"])))
    return TreeNode(d["name"], d["gate"], tuple(_tree_from(c) for c in d["children"]))


def _tree_to(t: TreeNode) -> dict:
    if t.is_leaf:
        d = {"component": t.component}
        if t.name != t.component:
            d["name"] = t.name
        if tuple(t.down) != ("DOWN",):
            d["down"] = list(t.down)
        return d
    return {"name": t.name, "gate": t.gate, "children": [_tree_to(c) for c in t.children]}


def _func_from(d) -> FuncNode:
    return FuncNode(d["name"], tuple(_func_from(c) for c in d.get("children", [])))


def _func_to(f: FuncNode) -> dict:
    d = {"name": f.name}
    if f.children:
        d["children"] = [_func_to(c) for c in f.children]
    return d


def plan_from_dict(doc: dict) -> Plan:
    errors = list(jsonschema.Draft202012Validator(plan_schema()).iter_errors(doc))
    if errors:
        e = errors[0]
        where = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in e.absolute_path)
        raise PlanError(f"plan does not match the schema at {where}: {e.message}")
    fd = doc["fsm"]
    fsm = AbstractFSM(tuple(fd["states"]), fd["initial"], tuple(fd["goals"]),
                      tuple(FSMTransition(t["from"], t["to"], t["event"]) for t in fd["transitions"]),
                      dict(fd.get("end_states", {})))
    plan = Plan(_tree_from(doc["component_tree"]), _func_from(doc["functionality_tree"]),
                {k: tuple(v) for k, v in doc["cf_matrix"].items()}, fsm,
                tuple(PlanScenario(tuple(s["events"]), s["target"], float(s.get("importance", 1.0)))
                      for s in doc["scenarios"]),
                dict(doc.get("metadata", {})))
    errs = fsm.check()
    names = [n.name for n in plan.component_tree.walk()]
    if len(set(names)) != len(names):
        errs.append("component-tree node names must be unique")
    fnames = plan.functionality_tree.names()
    if len(set(fnames)) != len(fnames):
        errs.append("functionality names must be unique")
    for f, reqs in plan.cf_matrix.items():
        for r in reqs:
            if r not in names:
                errs.append(f"functionality {f!r} requires unknown node {r!r}")
    for s in plan.scenarios:
        if s.target not in fsm.goals:
            errs.append(f"scenario target {s.target!r} is not a goal state")
        elif fsm.run(s.events) != s.target:
            errs.append(f"scenario {' '.join(s.events)} does not drive the FSM to {s.target!r}")
    if errs:
        raise PlanError("; ".join(errs))
    return plan


def plan_to_dict(p: Plan) -> dict:
    fsm = {"states": list(p.fsm.states), "initial": p.fsm.initial, "goals": list(p.fsm.goals),
           "transitions": [{"from": t.source, "to": t.target, "event": t.event}
                           for t in p.fsm.transitions]}
    if p.fsm.end_states:
        fsm["end_states"] = dict(p.fsm.end_states)
    doc = {
        "component_tree": _tree_to(p.component_tree),
        "functionality_tree": _func_to(p.functionality_tree),
        "cf_matrix": {k: list(v) for k, v in p.cf_matrix.items()},
        "fsm": fsm,
        "scenarios": [{"events": list(s.events), "target": s.target, "importance": s.importance}
                      for s in p.scenarios],
    }
    if p.metadata:
        doc["metadata"] = p.metadata
    return doc


def plan_dumps(p: Plan) -> str:
    return json.dumps(plan_to_dict(p), indent=2) + "\n"


def plan_loads(text: str) -> Plan:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PlanError(f"plan file is not valid JSON (line {exc.lineno} column {exc.colno}): "
                        f"{exc.msg}") from None
    if not isinstance(doc, dict):
        raise PlanError("plan file must contain a JSON object")
    return plan_from_dict(doc)


def plan_store(p: Plan, path) -> None:
    Path(path).write_text(plan_dumps(p), encoding="utf-8")


def plan_load(path) -> Plan:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise PlanError(f"cannot read plan file {path}: {exc.strerror}") from None
    return plan_loads(text)


def truth_table(t: TreeNode):
    """Every status vector over the tree's components with the root value."""
    comps = t.components()
    for bits in product((UP, DOWN), repeat=len(comps)):
        sv = dict(zip(comps, bits))
        yield sv, evaluate_tree(t, sv)
