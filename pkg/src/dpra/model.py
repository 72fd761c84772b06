"""Declarative system models: data types, JSON parsing, validation.

A model file is a UTF-8 JSON document checked against
``schemas/model.schema.json``; expressions inside it are strings in the
grammar documented in :mod:`dpra.expr`.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from itertools import product
from pathlib import Path

import jsonschema

from .expr import (
    BoolLit, Binary, ExpressionError, ExprSyntaxError, FUNCTIONS, KEYWORDS, Name,
    Node, Num, Scope, Unary, check_expression, names_in, parse_expression, unparse,
)

PROB_TOL = 1e-9
DEFAULT_STEP = 0.01
RESERVED = {"t", "default"} | KEYWORDS | set(FUNCTIONS)


class ModelError(ValueError):
    """Raised when a model cannot be parsed or fails validation."""

    def __init__(self, message: str, diagnostics=()):
        self.diagnostics = list(diagnostics)
        super().__init__(message)


class ModelSyntaxError(ModelError):
    pass


@dataclass(frozen=True)
class Diagnostic:
    severity: str      # "error" | "warning"
    location: str
    message: str

    def __str__(self):
        return f"{self.severity}: {self.location}: {self.message}"


@dataclass(frozen=True)
class Expression:
    """A parsed expression together with its canonical text."""
    node: Node
    source: str = field(default="", compare=False)

    @classmethod
    def parse(cls, src: str) -> "Expression":
        node = parse_expression(src)
        return cls(node, unparse(node))

    @property
    def is_true(self) -> bool:
        return self.node == BoolLit(True)

    def __str__(self):
        return self.source or unparse(self.node)


def expr(src) -> Expression:
    return src if isinstance(src, Expression) else Expression.parse(src)


@dataclass(frozen=True)
class Distribution:
    type: str                  # exponential | weibull | fixed
    rate: float = 0.0          # exponential
    scale: float = 0.0         # weibull
    shape: float = 0.0         # weibull
    time: float = 0.0          # fixed

    def cdf(self, t: float) -> float:
        if t <= 0:
            return 0.0
        if self.type == "exponential":
            return -math.expm1(-self.rate * t)
        if self.type == "weibull":
            return -math.expm1(-((t / self.scale) ** self.shape))
        return 1.0 if t >= self.time else 0.0

    def quantile(self, q: float) -> float:
        """Inverse CDF for q in [0, 1)."""
        if self.type == "exponential":
            return -math.log1p(-q) / self.rate
        if self.type == "weibull":
            return self.scale * (-math.log1p(-q)) ** (1.0 / self.shape)
        return self.time

    def to_dict(self):
        if self.type == "exponential":
            return {"type": "exponential", "rate": self.rate}
        if self.type == "weibull":
            return {"type": "weibull", "scale": self.scale, "shape": self.shape}
        return {"type": "fixed", "time": self.time}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class Outcome:
    target: str
    p: float


@dataclass(frozen=True)
class TransitionSpec:
    name: str
    kind: str                                  # demand | timed | conditional
    source: str
    trigger: Expression | None = None          # demand
    outcomes: tuple = ()                       # demand
    target: str | None = None                  # timed, conditional
    distribution: Distribution | None = None   # timed
    rate_modifier: Expression | None = None    # timed
    branchable: bool = False                   # timed
    guard: Expression | None = None            # conditional

    @property
    def condition(self) -> Expression | None:
        """The boolean expression gating a demand or conditional transition."""
        return self.trigger if self.kind == "demand" else self.guard

    @property
    def targets(self) -> list:
        if self.kind == "demand":
            return [o.target for o in self.outcomes]
        return [self.target]


@dataclass(frozen=True)
class ComponentSpec:
    name: str
    states: tuple
    transitions: tuple = ()


@dataclass(frozen=True)
class DerivativeClause:
    when: Expression | None     # None is the mandatory trailing default
    rate: Expression


@dataclass(frozen=True)
class ContinuousVarSpec:
    name: str
    initial: float
    derivative: tuple


@dataclass(frozen=True)
class EndStateSpec:
    name: str
    predicate: Expression
    severity: str
    at: str = "any"             # "any": monitored throughout; "mission_end": only at mission end


@dataclass(frozen=True, eq=True)
class SystemModel:
    name: str
    components: tuple
    continuous_vars: tuple
    end_states: tuple
    initial_components: dict
    mission_time: float
    initial_vars: dict = field(default_factory=dict)
    step: float = DEFAULT_STEP
    description: str = ""

    def __hash__(self):
        return hash(self.fingerprint)

    @cached_property
    def fingerprint(self) -> str:
        return hashlib.sha256(serialize_model(self).encode()).hexdigest()

    def component(self, name: str) -> ComponentSpec:
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(name)

    def initial_value(self, var: ContinuousVarSpec) -> float:
        return float(self.initial_vars.get(var.name, var.initial))

    @property
    def severity_classes(self) -> list:
        seen = []
        for e in self.end_states:
            if e.severity not in seen:
                seen.append(e.severity)
        return seen

    def scope(self) -> Scope:
        return Scope(frozenset({"t"} | {v.name for v in self.continuous_vars}),
                     {c.name: set(c.states) for c in self.components})


# ---------------------------------------------------------------------------
# parsing / serialization

_SCHEMA = None


def model_schema() -> dict:
    global _SCHEMA
    if _SCHEMA is None:
        text = resources.files("dpra").joinpath("schemas/model.schema.json").read_text("utf-8")
        _SCHEMA = json.loads(text)
    return _SCHEMA


def _json_path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


class _Builder:
    """Turns a schema-valid JSON document into dataclasses, collecting expression errors."""

    def __init__(self):
        self.diagnostics = []

    def expr(self, src, where):
        try:
            return Expression.parse(src)
        except ExprSyntaxError as exc:
            self.diagnostics.append(Diagnostic("error", where, f"syntax error in {src!r}: {exc}"))
            return Expression(BoolLit(True), "true")

    def transition(self, d, where):
        kind = d["kind"]
        common = dict(name=d["name"], kind=kind, source=d["source"])
        if kind == "demand":
            return TransitionSpec(
                **common,
                trigger=self.expr(d.get("trigger", "true"), f"{where}.trigger"),
                outcomes=tuple(Outcome(o["target"], float(o["p"])) for o in d["outcomes"]))
        if kind == "timed":
            mod = d.get("rate_modifier")
            return TransitionSpec(
                **common, target=d["target"],
                distribution=Distribution.from_dict(d["distribution"]),
                rate_modifier=self.expr(mod, f"{where}.rate_modifier") if mod is not None else None,
                branchable=bool(d.get("branchable", False)))
        return TransitionSpec(**common, target=d["target"], guard=self.expr(d["guard"], f"{where}.guard"))

    def model(self, doc):
        comps = []
        for i, c in enumerate(doc["components"]):
            where = f"$.components[{i}]"
            comps.append(ComponentSpec(
                c["name"], tuple(c["states"]),
                tuple(self.transition(t, f"{where}.transitions[{j}]")
                      for j, t in enumerate(c.get("transitions", [])))))
        vars_ = []
        for i, v in enumerate(doc["continuous_vars"]):
            clauses = []
            for j, cl in enumerate(v["derivative"]):
                where = f"$.continuous_vars[{i}].derivative[{j}]"
                when = None if cl["when"].strip() == "default" else self.expr(cl["when"], f"{where}.when")
                clauses.append(DerivativeClause(when, self.expr(cl["rate"], f"{where}.rate")))
            vars_.append(ContinuousVarSpec(v["name"], float(v["initial"]), tuple(clauses)))
        ends = tuple(
            EndStateSpec(e["name"], self.expr(e["predicate"], f"$.end_states[{i}].predicate"),
                         e["severity"], e.get("at", "any"))
            for i, e in enumerate(doc["end_states"]))
        init = doc["initial"]
        return SystemModel(
            name=doc["name"], components=tuple(comps), continuous_vars=tuple(vars_),
            end_states=ends, initial_components=dict(init["components"]),
            initial_vars={k: float(v) for k, v in init.get("vars", {}).items()},
            mission_time=float(doc["mission_time"]), step=float(doc.get("step", DEFAULT_STEP)),
            description=doc.get("description", ""))


def model_from_dict(doc: dict, check: bool = True) -> SystemModel:
    errors = sorted(jsonschema.Draft202012Validator(model_schema()).iter_errors(doc),
                    key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        diags = [Diagnostic("error", _json_path(e.absolute_path), e.message) for e in errors]
        raise ModelSyntaxError(f"model does not match the schema: {diags[0]}", diags)
    b = _Builder()
    m = b.model(doc)
    if b.diagnostics:
        raise ModelSyntaxError(str(b.diagnostics[0]), b.diagnostics)
    if check:
        diags = validate_model(m)
        errs = [d for d in diags if d.severity == "error"]
        if errs:
            raise ModelError(str(errs[0]), diags)
    return m


def parse_model(text: str, check: bool = True) -> SystemModel:
    """Parse model-file contents.  Raises :class:`ModelError` on any error diagnostic."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        d = Diagnostic("error", f"line {exc.lineno} column {exc.colno}", exc.msg)
        raise ModelSyntaxError(f"syntax error at line {exc.lineno} column {exc.colno}: {exc.msg}",
                               [d]) from None
    if not isinstance(doc, dict):
        raise ModelSyntaxError("model file must contain a JSON object",
                               [Diagnostic("error", "$", "not an object")])
    return model_from_dict(doc, check=check)


def load_model(path, check: bool = True) -> SystemModel:
    return parse_model(Path(path).read_text(encoding="utf-8"), check=check)


def _transition_dict(t: TransitionSpec) -> dict:
    d = {"name": t.name, "kind": t.kind, "source": t.source}
    if t.kind == "demand":
        d["trigger"] = str(t.trigger)
        d["outcomes"] = [{"target": o.target, "p": o.p} for o in t.outcomes]
    elif t.kind == "timed":
        d["target"] = t.target
        d["distribution"] = t.distribution.to_dict()
        if t.rate_modifier is not None:
            d["rate_modifier"] = str(t.rate_modifier)
        if t.branchable:
            d["branchable"] = True
    else:
        d["guard"] = str(t.guard)
        d["target"] = t.target
    return d


def model_to_dict(m: SystemModel) -> dict:
    doc = {"name": m.name}
    if m.description:
        doc["description"] = m.description
    doc["mission_time"] = m.mission_time
    if m.step != DEFAULT_STEP:
        doc["step"] = m.step
    doc["components"] = [
        {"name": c.name, "states": list(c.states),
         "transitions": [_transition_dict(t) for t in c.transitions]}
        for c in m.components]
    doc["continuous_vars"] = [
        {"name": v.name, "initial": v.initial,
         "derivative": [{"when": "default" if cl.when is None else str(cl.when), "rate": str(cl.rate)}
                        for cl in v.derivative]}
        for v in m.continuous_vars]
    doc["end_states"] = []
    for e in m.end_states:
        d = {"name": e.name, "predicate": str(e.predicate), "severity": e.severity}
        if e.at != "any":
            d["at"] = e.at
        doc["end_states"].append(d)
    doc["initial"] = {"components": dict(m.initial_components)}
    if m.initial_vars:
        doc["initial"]["vars"] = dict(m.initial_vars)
    return doc


def serialize_model(m: SystemModel) -> str:
    return json.dumps(model_to_dict(m), indent=2) + "\n"


# ---------------------------------------------------------------------------
# validation

def validate_model(m: SystemModel) -> list:
    """Check every model invariant; returns a list of :class:`Diagnostic`."""
    out = []

    def err(where, msg):
        out.append(Diagnostic("error", where, msg))

    def warn(where, msg):
        out.append(Diagnostic("warning", where, msg))

    if not (m.mission_time > 0):
        err("$.mission_time", "mission_time must be positive")
    if not (m.step > 0):
        err("$.step", "integration step must be positive")

    seen = {}
    for kind, items in (("component", m.components), ("variable", m.continuous_vars)):
        for i, item in enumerate(items):
            where = f"$.{'components' if kind == 'component' else 'continuous_vars'}[{i}]"
            if item.name in RESERVED:
                err(where, f"{item.name!r} is a reserved word")
            if item.name in seen:
                err(where, f"duplicate identifier {item.name!r} (already a {seen[item.name]})")
            seen[item.name] = kind
    end_names = set()
    for i, e in enumerate(m.end_states):
        if e.name in end_names:
            err(f"$.end_states[{i}]", f"duplicate identifier {e.name!r}")
        end_names.add(e.name)

    scope = m.scope()
    comp_states = {c.name: set(c.states) for c in m.components}

    def check(e: Expression, where: str, want: str, only_components=False):
        try:
            got = check_expression(e.node, scope)
        except ExpressionError as exc:
            err(where, str(exc))
            return
        if got != want:
            err(where, f"expected a {'boolean' if want == 'bool' else 'numeric'} expression, got {e}")
        if only_components:
            bad = names_in(e.node) & set(scope.variables)
            if bad:
                err(where, f"derivative selectors may only test component states, not {sorted(bad)}")

    for i, c in enumerate(m.components):
        where = f"$.components[{i}]"
        if len(c.states) < 2:
            err(where, f"component {c.name!r} needs at least two states")
        if len(set(c.states)) != len(c.states):
            err(where, f"duplicate state in component {c.name!r}")
        tnames = set()
        for j, t in enumerate(c.transitions):
            tw = f"{where}.transitions[{j}]"
            if t.name in tnames:
                err(tw, f"duplicate transition name {t.name!r}")
            tnames.add(t.name)
            if t.source not in c.states:
                err(tw, f"source {t.source!r} is not a state of {c.name!r}")
            for tgt in t.targets:
                if tgt not in c.states:
                    err(tw, f"target {tgt!r} is not a state of {c.name!r}")
            if t.kind == "demand":
                ps = [o.p for o in t.outcomes]
                if any(not (0.0 <= p <= 1.0) for p in ps):
                    err(tw, "outcome probabilities must lie in [0, 1]")
                total = math.fsum(ps)
                if abs(total - 1.0) > PROB_TOL:
                    err(tw, f"probabilities sum to {total:.12g}")
                if not t.outcomes:
                    err(tw, "demand transition needs at least one outcome")
                check(t.trigger, f"{tw}.trigger", "bool")
            elif t.kind == "timed":
                d = t.distribution
                params = {"exponential": (d.rate,), "weibull": (d.scale, d.shape),
                          "fixed": (d.time,)}.get(d.type)
                if params is None:
                    err(tw, f"unknown distribution {d.type!r}")
                elif any(not (p > 0) or not math.isfinite(p) for p in params):
                    err(tw, "distribution parameters must be positive")
                if t.rate_modifier is not None:
                    if d.type != "exponential":
                        err(tw, "rate modifiers are supported on exponential distributions only")
                    if t.branchable:
                        err(tw, "a transition with a rate modifier cannot be branchable")
                    check(t.rate_modifier, f"{tw}.rate_modifier", "num")
                    node = t.rate_modifier.node
                    if isinstance(node, Num) and node.value < 0 or (
                            isinstance(node, Unary) and node.op == "-" and isinstance(node.operand, Num)
                            and node.operand.value > 0):
                        err(tw, "rate modifier must not be negative")
                if t.branchable and d.type == "fixed":
                    warn(tw, "fixed-time transitions are deterministic; 'branchable' has no effect")
            elif t.kind == "conditional":
                check(t.guard, f"{tw}.guard", "bool")
            else:
                err(tw, f"unknown transition kind {t.kind!r}")

    for i, v in enumerate(m.continuous_vars):
        where = f"$.continuous_vars[{i}]"
        if not math.isfinite(v.initial):
            err(where, "initial value must be finite")
        if not v.derivative or v.derivative[-1].when is not None:
            err(where, f"variable {v.name!r} needs a final 'default' derivative clause")
        for j, cl in enumerate(v.derivative):
            cw = f"{where}.derivative[{j}]"
            if cl.when is None and j != len(v.derivative) - 1:
                err(cw, "'default' clause must come last")
            if cl.when is not None:
                check(cl.when, f"{cw}.when", "bool", only_components=True)
            check(cl.rate, f"{cw}.rate", "num")

    for c, s in m.initial_components.items():
        if c not in comp_states:
            err("$.initial.components", f"unknown component {c!r}")
        elif s not in comp_states[c]:
            err("$.initial.components", f"initial state {s!r} is not a state of {c!r}")
    for c in comp_states:
        if c not in m.initial_components:
            err("$.initial.components", f"component {c!r} has no initial state")
    var_names = {v.name for v in m.continuous_vars}
    for name, val in m.initial_vars.items():
        if name not in var_names:
            err("$.initial.vars", f"unknown variable {name!r}")
        elif not math.isfinite(val):
            err("$.initial.vars", f"initial value of {name!r} must be finite")

    for i, e in enumerate(m.end_states):
        if e.at not in ("any", "mission_end"):
            err(f"$.end_states[{i}]", f"unknown monitoring mode {e.at!r}")
        check(e.predicate, f"$.end_states[{i}].predicate", "bool")
    if not any(e.at == "mission_end" and e.predicate.is_true for e in m.end_states):
        err("$.end_states", "no catch-all end state: add one with predicate 'true' and at='mission_end'")

    if not any(d.severity == "error" for d in out):
        monitored = [(i, e) for i, e in enumerate(m.end_states) if e.at == "any" and not e.predicate.is_true]
        for a in range(len(monitored)):
            for b in range(a + 1, len(monitored)):
                (i, ea), (j, eb) = monitored[a], monitored[b]
                if predicates_overlap(ea.predicate.node, eb.predicate.node, scope, m.mission_time):
                    warn(f"$.end_states[{j}]",
                         f"predicate of {eb.name!r} may hold together with {ea.name!r}; "
                         f"declaration order decides")
    return out


# ---------------------------------------------------------------------------
# interval analysis for end-state overlap

_FLIP = {"<": ">", "<=": ">=", ">": "<", ">=": "<=", "==": "==", "!=": "!="}
_NEG = {"<": ">=", "<=": ">", ">": "<=", ">=": "<", "==": "!=", "!=": "=="}
_MAX_TERMS = 64


class _Unanalyzable(Exception):
    pass


def _atom(node: Binary, scope: Scope, negate: bool):
    op = _NEG[node.op] if negate else node.op
    l, r = node.left, node.right
    for comp_side, state_side in ((l, r), (r, l)):
        if isinstance(comp_side, Name) and comp_side.id in scope.components:
            if op not in ("==", "!="):
                raise _Unanalyzable
            return ("state", comp_side.id, op, state_side.id)
    if isinstance(l, Name) and isinstance(r, Num):
        return ("num", l.id, op, r.value)
    if isinstance(l, Num) and isinstance(r, Name):
        return ("num", r.id, _FLIP[op], l.value)
    raise _Unanalyzable


def _dnf(node: Node, scope: Scope, negate=False):
    """Disjunctive normal form as a list of conjunctions (lists of atoms)."""
    if isinstance(node, BoolLit):
        return [[]] if node.value != negate else []
    if isinstance(node, Unary) and node.op == "not":
        return _dnf(node.operand, scope, not negate)
    if isinstance(node, Binary) and node.op in ("and", "or"):
        a, b = _dnf(node.left, scope, negate), _dnf(node.right, scope, negate)
        conj = (node.op == "and") != negate
        res = [x + y for x, y in product(a, b)] if conj else a + b
        if len(res) > _MAX_TERMS:
            raise _Unanalyzable
        return res
    if isinstance(node, Binary) and node.op in _NEG:
        return [[_atom(node, scope, negate)]]
    raise _Unanalyzable


def _satisfiable(atoms, mission_time) -> bool:
    lo, hi, excluded = {}, {}, {}
    eq, ne = {}, {}
    for kind, name, op, val in atoms:
        if kind == "state":
            if op == "==":
                if eq.get(name, val) != val:
                    return False
                eq[name] = val
            else:
                ne.setdefault(name, set()).add(val)
            continue
        if op == "!=":
            excluded.setdefault(name, set()).add(val)
            continue
        cur_lo = lo.get(name, (-math.inf, False))
        cur_hi = hi.get(name, (math.inf, False))
        if op in (">", ">="):
            cand = (val, op == ">")
            if cand[0] > cur_lo[0] or (cand[0] == cur_lo[0] and cand[1]):
                lo[name] = cand
        elif op in ("<", "<="):
            cand = (val, op == "<")
            if cand[0] < cur_hi[0] or (cand[0] == cur_hi[0] and cand[1]):
                hi[name] = cand
        else:
            for d in (lo, hi):
                pass
            if not (_within(val, cur_lo, cur_hi)):
                return False
            lo[name] = (val, False)
            hi[name] = (val, False)
    for name, val in eq.items():
        if val in ne.get(name, ()):
            return False
    names = set(lo) | set(hi) | set(excluded)
    for name in names:
        l = lo.get(name, (-math.inf, False))
        h = hi.get(name, (math.inf, False))
        if name == "t":
            if l[0] < 0 or (l[0] == 0 and not l[1]):
                l = (0.0, False)
            if h[0] > mission_time:
                h = (mission_time, False)
        if l[0] > h[0] or (l[0] == h[0] and (l[1] or h[1])):
            return False
        if l[0] == h[0] and l[0] in excluded.get(name, ()):
            return False
    return True


def _within(val, lo, hi):
    if val < lo[0] or (val == lo[0] and lo[1]):
        return False
    if val > hi[0] or (val == hi[0] and hi[1]):
        return False
    return True


def predicates_overlap(a: Node, b: Node, scope: Scope, mission_time: float = math.inf) -> bool:
    """True when both predicates provably hold somewhere at once.

    Only conjunction/disjunction/negation trees over ``var op constant`` and
    ``comp == STATE`` atoms are analysed; anything else returns False.
    """
    try:
        da, db = _dnf(a, scope), _dnf(b, scope)
    except _Unanalyzable:
        return False
    return any(_satisfiable(x + y, mission_time) for x in da for y in db)
