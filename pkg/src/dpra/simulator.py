"""Hybrid discrete/continuous execution of a :class:`~dpra.model.SystemModel`.

A story is advanced one discrete happening at a time with :func:`step`.
Between discrete events the continuous variables are integrated with
fixed-step RK4; any monitored predicate that changes truth value stops the
integration at the crossing, refined by bisection to ``h/100``.

Step order at a given clock value:

1. end states monitored throughout (declaration order) -> ``Ended``
2. pending timing decisions of branchable timed transitions (discretize mode)
3. guarded transitions (demand, conditional), declaration order
4. hazard accumulators that reached their threshold
5. due scheduled events (time, then declaration order)
6. at mission time, every end state in declaration order -> ``Ended``
7. otherwise integrate up to the next scheduled event or mission time

Demand and conditional transitions are edge triggered: they fire when their
condition is true, the transition is armed and the component sits in the
source state.  Firing disarms the transition; it re-arms once its condition
is observed false.

``step`` mutates the state it is given and returns it inside the outcome.
Use :func:`snapshot`/:func:`restore` (or :meth:`SimState.clone`) to keep a
copy.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import io
import json
import math
import pickle
import random
from dataclasses import dataclass

import numpy as np

from . import kernel
from .expr import (
    Binary, Call, ExpressionError, Num, compile_expression, compile_python, names_in,
)
from .model import PROB_TOL, Distribution, SystemModel

SNAPSHOT_MAGIC = b"DPRASNAP"
SNAPSHOT_VERSION = 1
MAX_INSTANT_STEPS = 1000
TIMING_QUANTILES = (0.25, 0.5, 0.75)


class SimulationError(RuntimeError):
    pass


class SnapshotError(ValueError):
    pass


class StaleBranchError(ValueError):
    pass


@dataclass(frozen=True)
class TraceEvent:
    time: float
    kind: str           # transition | threshold_crossing | branch_taken | end_state
    detail: str
    prob: float | None = None


@dataclass(frozen=True)
class Branch:
    index: int
    label: str
    probability: float
    serial: int


@dataclass(frozen=True)
class BranchPoint:
    at_time: float
    source: str
    kind: str           # demand | timing
    branches: tuple
    serial: int

    @property
    def probabilities(self):
        return [b.probability for b in self.branches]


class Advanced:
    __slots__ = ("state",)

    def __init__(self, state):
        self.state = state

    def __repr__(self):
        return f"Advanced(t={self.state.clock})"


class AtBranchPoint:
    __slots__ = ("state", "branch_point")

    def __init__(self, state, bp):
        self.state = state
        self.branch_point = bp

    def __repr__(self):
        return f"AtBranchPoint({self.branch_point.source}, t={self.state.clock})"


class Ended:
    __slots__ = ("state", "end_state")

    def __init__(self, state, end_state):
        self.state = state
        self.end_state = end_state

    def __repr__(self):
        return f"Ended({self.end_state}, t={self.state.clock})"


def sample_firing_time(dist: Distribution, u: float) -> float:
    """Firing time whose survival probability equals *u*."""
    if not (0.0 < u < 1.0):
        raise ValueError(f"u must lie in (0, 1), got {u!r}")
    if dist.type == "exponential":
        return -math.log(u) / dist.rate
    if dist.type == "weibull":
        return dist.scale * (-math.log(u)) ** (1.0 / dist.shape)
    if dist.type == "fixed":
        return dist.time
    raise ValueError(f"unknown distribution {dist.type!r}")


def accumulate_hazard(accumulated: float, rate: float, modifier: float, dt: float) -> float:
    """One explicit increment of an integrated hazard ``A += rate * modifier * dt``."""
    if modifier < 0:
        raise SimulationError(f"negative hazard-rate modifier {modifier!r}")
    return accumulated + rate * modifier * dt


# ---------------------------------------------------------------------------
# compiled model

class _Guarded:
    __slots__ = ("index", "comp", "name", "kind", "source", "cond", "prog", "continuous",
                 "outcomes", "label")


class _Timed:
    __slots__ = ("index", "comp", "name", "source", "target", "dist", "acc", "branchable",
                 "label")


class _End:
    __slots__ = ("name", "severity", "at", "fn", "prog", "continuous")


def _chain_if(clauses):
    """Fold ordered ``(when, rate)`` clauses into nested ``if`` calls."""
    node = clauses[-1].rate.node
    for cl in reversed(clauses[:-1]):
        node = Call("if", (cl.when.node, cl.rate.node, node))
    return node


class CompiledModel:
    """Slot layout, Python closures and kernel bytecode for one model.

    Environment layout: ``[t, vars..., (acc, threshold) per hazard..., comps...]``.
    Component slots hold the index of the current state as a float.
    """

    def __init__(self, model: SystemModel):
        self.model = model
        self.h = model.step
        self.tol = model.step / 100.0
        self.mission_time = model.mission_time
        self.var_names = [v.name for v in model.continuous_vars]
        slots = {"t": 0}
        for i, v in enumerate(model.continuous_vars):
            slots[v.name] = 1 + i
        nxt = 1 + len(model.continuous_vars)
        hazard_specs = [(ci, t) for ci, c in enumerate(model.components)
                        for t in c.transitions if t.kind == "timed" and t.rate_modifier is not None]
        self.acc_slots = []
        for _ in hazard_specs:
            self.acc_slots.append((nxt, nxt + 1))
            nxt += 2
        self.comp_names = [c.name for c in model.components]
        self.comp_slot = []
        for c in model.components:
            slots[c.name] = nxt
            self.comp_slot.append(nxt)
            nxt += 1
        self.size = nxt
        self.slots = slots
        self.state_names = [list(c.states) for c in model.components]
        self.states = {c.name: {s: i for i, s in enumerate(c.states)} for c in model.components}
        continuous = {"t"} | set(self.var_names)

        ops, args, starts, ends = [], [], [], []
        consts = []

        def program(node):
            code = compile_expression(node, slots, self.states, consts)
            starts.append(len(ops))
            for op, arg in code:
                ops.append(op)
                args.append(consts[arg] if op == 0 else float(arg))
            ends.append(len(ops))
            return len(starts) - 1

        self.var_progs = [program(_chain_if(v.derivative)) for v in model.continuous_vars]
        self.var_fns = [compile_python(_chain_if(v.derivative), slots, self.states)
                        for v in model.continuous_vars]

        self.guarded = []
        self.timed = []
        self.timed_by_state = [[[] for _ in c.states] for c in model.components]
        acc_index = 0
        for ci, c in enumerate(model.components):
            codes = self.states[c.name]
            for t in c.transitions:
                if t.kind in ("demand", "conditional"):
                    g = _Guarded()
                    g.index = len(self.guarded)
                    g.comp, g.name, g.kind = ci, t.name, t.kind
                    g.label = f"{c.name}.{t.name}"
                    g.source = codes[t.source]
                    cond = t.condition.node
                    g.cond = compile_python(cond, slots, self.states)
                    g.continuous = bool(names_in(cond) & continuous)
                    g.prog = program(cond) if g.continuous else -1
                    if t.kind == "demand":
                        g.outcomes = tuple((codes[o.target], o.target, o.p) for o in t.outcomes)
                    else:
                        g.outcomes = ((codes[t.target], t.target, 1.0),)
                    self.guarded.append(g)
                else:
                    tm = _Timed()
                    tm.index = len(self.timed)
                    tm.comp, tm.name = ci, t.name
                    tm.label = f"{c.name}.{t.name}"
                    tm.source, tm.target = codes[t.source], codes[t.target]
                    tm.dist = t.distribution
                    tm.branchable = t.branchable
                    tm.acc = -1
                    if t.rate_modifier is not None:
                        tm.acc = acc_index
                        acc_index += 1
                    self.timed.append(tm)
                    self.timed_by_state[ci][tm.source].append(tm.index)
        self.hazards = [tm for tm in self.timed if tm.acc >= 0]
        self.guarded_by_label = {g.label: g for g in self.guarded}
        self.timed_by_label = {tm.label: tm for tm in self.timed}
        self.hazard_progs = []
        self.hazard_mons = []
        for tm in self.hazards:
            spec = next(t for t in model.components[tm.comp].transitions if t.name == tm.name)
            rate_node = Binary("*", Num(tm.dist.rate), spec.rate_modifier.node)
            self.hazard_progs.append(program(rate_node))
            acc_slot, thr_slot = self.acc_slots[tm.acc]
            starts.append(len(ops))
            ops.extend([1, 1, 10])           # LOAD acc, LOAD thr, GE
            args.extend([float(acc_slot), float(thr_slot), 0.0])
            ends.append(len(ops))
            self.hazard_mons.append(len(starts) - 1)

        self.ends = []
        for e in model.end_states:
            x = _End()
            x.name, x.severity, x.at = e.name, e.severity, e.at
            x.fn = compile_python(e.predicate.node, slots, self.states)
            x.continuous = bool(names_in(e.predicate.node) & continuous)
            x.prog = program(e.predicate.node) if (x.continuous and e.at == "any") else -1
            self.ends.append(x)
        self.any_ends = [x for x in self.ends if x.at == "any"]

        self.ops = np.asarray(ops, dtype=np.int32)
        self.args = np.asarray(args, dtype=np.float64)
        self.starts = np.asarray(starts, dtype=np.intp)
        self.ends_arr = np.asarray(ends, dtype=np.intp)
        self.has_ode = bool(self.var_progs)
        self.cont_monitors = bool(any(x.prog >= 0 for x in self.ends)
                                  or any(g.continuous for g in self.guarded))

    def initial_env(self) -> list:
        m = self.model
        env = [0.0] * self.size
        for i, v in enumerate(m.continuous_vars):
            env[1 + i] = m.initial_value(v)
        for ci, c in enumerate(m.components):
            env[self.comp_slot[ci]] = float(self.states[c.name][m.initial_components[c.name]])
        return env


_COMPILED: dict = {}


def compiled(model: SystemModel) -> CompiledModel:
    key = model.fingerprint
    cm = _COMPILED.get(key)
    if cm is None:
        if len(_COMPILED) > 64:
            _COMPILED.clear()
        cm = _COMPILED[key] = CompiledModel(model)
    return cm


# ---------------------------------------------------------------------------
# state

class SimState:
    """Complete, self-contained simulation state of one story."""

    __slots__ = ("cm", "seed", "timed_mode", "env", "armed", "epoch", "active", "events",
                 "timing_queue", "rng", "trace", "pending", "serial", "end_state",
                 "path_prob", "instant", "last_clock")

    @property
    def clock(self) -> float:
        return self.env[0]

    @property
    def model(self) -> SystemModel:
        return self.cm.model

    @property
    def component_states(self) -> dict:
        cm = self.cm
        return {n: cm.state_names[i][int(self.env[cm.comp_slot[i]])]
                for i, n in enumerate(cm.comp_names)}

    @property
    def var_values(self) -> dict:
        return {n: self.env[1 + i] for i, n in enumerate(self.cm.var_names)}

    @property
    def accumulated_hazard(self) -> dict:
        return {tm.label: self.env[self.cm.acc_slots[tm.acc][0]]
                for tm in self.cm.hazards if self.active[tm.index]}

    @property
    def pending_events(self) -> list:
        """Live scheduled events as sorted ``(time, transition label)`` pairs."""
        out = []
        for t, order, epoch in sorted(self.events):
            if self.epoch[order] == epoch and self.active[order]:
                out.append((t, self.cm.timed[order].label))
        return out

    @property
    def ended(self) -> bool:
        return self.end_state is not None

    @property
    def branch_point(self):
        return self.pending

    def state_code(self, comp_index: int) -> int:
        return int(self.env[self.cm.comp_slot[comp_index]])

    def clone(self) -> "SimState":
        s = SimState.__new__(SimState)
        s.cm = self.cm
        s.seed = self.seed
        s.timed_mode = self.timed_mode
        s.env = list(self.env)
        s.armed = list(self.armed)
        s.epoch = list(self.epoch)
        s.active = list(self.active)
        s.events = list(self.events)
        s.timing_queue = list(self.timing_queue)
        if self.rng is None:
            s.rng = None
        else:
            s.rng = random.Random()
            s.rng.setstate(self.rng.getstate())
        s.trace = list(self.trace)
        s.pending = self.pending
        s.serial = self.serial
        s.end_state = self.end_state
        s.path_prob = self.path_prob
        s.instant = self.instant
        s.last_clock = self.last_clock
        return s

    def __getstate__(self):
        return {k: getattr(self, k) for k in self.__slots__ if k != "cm"}

    def __setstate__(self, d):
        for k, v in d.items():
            setattr(self, k, v)
        self.cm = None

    def __eq__(self, other):
        if not isinstance(other, SimState):
            return NotImplemented
        a, b = self.__getstate__(), other.__getstate__()
        ra, rb = a.pop("rng"), b.pop("rng")
        same_rng = (ra is None and rb is None) or (
            ra is not None and rb is not None and ra.getstate() == rb.getstate())
        return same_rng and a == b and self.cm.model == other.cm.model

    __hash__ = None


def init(model: SystemModel, seed: int = 0, timed_mode: str = "sample") -> SimState:
    """Fresh state at clock 0 with every initially enabled timed transition armed."""
    if timed_mode not in ("sample", "discretize"):
        raise ValueError(f"timed_mode must be 'sample' or 'discretize', not {timed_mode!r}")
    cm = compiled(model)
    s = SimState.__new__(SimState)
    s.cm = cm
    s.seed = int(seed)
    s.timed_mode = timed_mode
    s.env = cm.initial_env()
    s.armed = [True] * len(cm.guarded)
    s.epoch = [0] * len(cm.timed)
    s.active = [False] * len(cm.timed)
    s.events = []
    s.timing_queue = []
    s.rng = None
    s.trace = []
    s.pending = None
    s.serial = 0
    s.end_state = None
    s.path_prob = 1.0
    s.instant = 0
    s.last_clock = 0.0
    for ci in range(len(cm.comp_names)):
        for ti in cm.timed_by_state[ci][s.state_code(ci)]:
            _arm(s, ti)
    return s


def _rng(s: SimState) -> random.Random:
    if s.rng is None:
        digest = hashlib.blake2b(f"story-rng:{s.seed}".encode(), digest_size=8).digest()
        s.rng = random.Random(int.from_bytes(digest, "big"))
    return s.rng


def _uniform(s: SimState) -> float:
    r = _rng(s)
    while True:
        u = r.random()
        if u > 0.0:
            return u


def _arm(s: SimState, ti: int):
    cm = s.cm
    tm = cm.timed[ti]
    s.epoch[ti] += 1
    s.active[ti] = True
    clock = s.env[0]
    if tm.acc >= 0:
        acc_slot, thr_slot = cm.acc_slots[tm.acc]
        s.env[acc_slot] = 0.0
        if s.timed_mode == "sample":
            s.env[thr_slot] = -math.log(_uniform(s))
        else:
            s.env[thr_slot] = math.inf
            s.active[ti] = False
        return
    if tm.dist.type == "fixed":
        heapq.heappush(s.events, (clock + tm.dist.time, ti, s.epoch[ti]))
    elif s.timed_mode == "sample":
        heapq.heappush(s.events, (clock + sample_firing_time(tm.dist, _uniform(s)), ti, s.epoch[ti]))
    elif tm.branchable:
        s.timing_queue.append((ti, s.epoch[ti]))
    else:
        s.active[ti] = False


def _disarm(s: SimState, ti: int):
    s.active[ti] = False
    s.epoch[ti] += 1


def _set_state(s: SimState, ci: int, code: int, why: str):
    cm = s.cm
    slot = cm.comp_slot[ci]
    old = int(s.env[slot])
    if old == code:
        return
    for ti in cm.timed_by_state[ci][old]:
        _disarm(s, ti)
    s.env[slot] = float(code)
    names = cm.state_names[ci]
    s.trace.append(TraceEvent(s.env[0], "transition",
                              f"{why}:{names[old]}->{names[code]}"))
    for ti in cm.timed_by_state[ci][code]:
        _arm(s, ti)


def _end(s: SimState, name: str):
    s.end_state = name
    s.trace.append(TraceEvent(s.env[0], "end_state", name))
    return Ended(s, name)


def _new_bp(s: SimState, source: str, kind: str, options) -> BranchPoint:
    s.serial += 1
    bp = BranchPoint(s.env[0], source, kind,
                     tuple(Branch(i, lab, p, s.serial) for i, (lab, p) in enumerate(options)),
                     s.serial)
    s.pending = bp
    return bp


def _timing_options(s: SimState, tm):
    remaining = s.cm.mission_time - s.env[0]
    F = tm.dist.cdf(remaining)
    if F <= 0.0:
        return None
    opts = []
    for q in TIMING_QUANTILES:
        opts.append((f"fire@{s.env[0] + tm.dist.quantile(q * F)!r}", F / len(TIMING_QUANTILES)))
    opts.append(("no_fire", 1.0 - F))
    return opts


def step(s: SimState):
    """Advance *s* by one discrete happening (see module docstring for the order)."""
    if s.end_state is not None:
        raise SimulationError("story already ended")
    if s.pending is not None:
        raise SimulationError("a branch point is pending; call apply_branch first")
    cm = s.cm
    env = s.env
    if env[0] == s.last_clock:
        s.instant += 1
        if s.instant > MAX_INSTANT_STEPS:
            raise SimulationError(
                f"more than {MAX_INSTANT_STEPS} instantaneous transitions at t={env[0]!r}; "
                f"the model probably loops")
    else:
        s.instant = 0
        s.last_clock = env[0]

    try:
        for x in cm.any_ends:
            if x.fn(env):
                return _end(s, x.name)

        while s.timing_queue:
            ti, epoch = s.timing_queue.pop(0)
            if s.epoch[ti] != epoch or not s.active[ti]:
                continue
            tm = cm.timed[ti]
            opts = _timing_options(s, tm)
            if opts is None:
                s.active[ti] = False
                continue
            return AtBranchPoint(s, _new_bp(s, tm.label, "timing", opts))

        armed = s.armed
        fire = None
        for g in cm.guarded:
            if armed[g.index]:
                if fire is None and env[cm.comp_slot[g.comp]] == g.source and g.cond(env):
                    fire = g
            elif not g.cond(env):
                armed[g.index] = True
        if fire is not None:
            armed[fire.index] = False
            if len(fire.outcomes) == 1:
                code, _, _ = fire.outcomes[0]
                _set_state(s, fire.comp, code, fire.label)
                return Advanced(s)
            return AtBranchPoint(s, _new_bp(s, fire.label, "demand",
                                            [(name, p) for _, name, p in fire.outcomes]))
    except ExpressionError as exc:
        raise SimulationError(f"expression evaluation failed at t={env[0]!r}: {exc}") from None

    for tm in cm.hazards:
        if s.active[tm.index]:
            acc_slot, thr_slot = cm.acc_slots[tm.acc]
            if env[acc_slot] >= env[thr_slot]:
                _disarm(s, tm.index)
                _set_state(s, tm.comp, tm.target, tm.label)
                return Advanced(s)

    events = s.events
    while events and events[0][0] <= env[0]:
        _, ti, epoch = heapq.heappop(events)
        if s.epoch[ti] != epoch or not s.active[ti]:
            continue
        tm = cm.timed[ti]
        _disarm(s, ti)
        _set_state(s, tm.comp, tm.target, tm.label)
        return Advanced(s)

    if env[0] >= cm.mission_time:
        try:
            for x in cm.ends:
                if x.fn(env):
                    return _end(s, x.name)
        except ExpressionError as exc:
            raise SimulationError(f"expression evaluation failed at mission end: {exc}") from None
        raise SimulationError("no end state matched at mission end")

    until = cm.mission_time
    while events and (s.epoch[events[0][1]] != events[0][2] or not s.active[events[0][1]]):
        heapq.heappop(events)
    if events and events[0][0] < until:
        until = events[0][0]
    integrate(s, until)
    return Advanced(s)


def integrate(s: SimState, until: float):
    """Integrate *s* towards *until*, stopping at the first monitored crossing.

    Returns ``(s, crossing)`` where crossing is ``None`` or a short label of
    the monitor that stopped the integration.
    """
    cm = s.cm
    env = s.env
    if not (until > env[0]):
        raise ValueError(f"until ({until!r}) must exceed the clock ({env[0]!r})")
    active_h = [tm for tm in cm.hazards if s.active[tm.index]]
    mons, wants, labels = [], [], []
    for x in cm.ends:
        if x.prog >= 0:
            mons.append(x.prog)
            wants.append(1)
            labels.append(f"end:{x.name}")
    for g in cm.guarded:
        if not g.continuous:
            continue
        if s.armed[g.index]:
            if env[cm.comp_slot[g.comp]] == g.source:
                mons.append(g.prog)
                wants.append(1)
                labels.append(f"guard:{g.label}")
        else:
            mons.append(g.prog)
            wants.append(0)
            labels.append(f"rearm:{g.label}")
    for tm in active_h:
        mons.append(cm.hazard_mons[tm.acc])
        wants.append(1)
        labels.append(f"hazard:{tm.label}")

    if not cm.has_ode and not active_h and not mons:
        env[0] = until
        return s, None

    dprogs = list(cm.var_progs)
    slots = list(range(1, 1 + len(cm.var_progs)))
    nonneg = [0] * len(dprogs)
    for tm in active_h:
        dprogs.append(cm.hazard_progs[tm.acc])
        slots.append(cm.acc_slots[tm.acc][0])
        nonneg.append(1)
    arr = np.array(env, dtype=np.float64)
    t_stop, hit, status = kernel.integrate(
        cm.ops, cm.args, cm.starts, cm.ends_arr,
        np.asarray(dprogs, dtype=np.intp), np.asarray(slots, dtype=np.intp),
        np.asarray(nonneg, dtype=np.uint8), np.asarray(mons, dtype=np.intp),
        np.asarray(wants, dtype=np.uint8), arr, until, cm.h, cm.tol)
    if status:
        raise SimulationError(f"integration failed near t={t_stop!r}: "
                              f"{kernel.STATUS_MESSAGES.get(status, status)}")
    s.env = env = arr.tolist()
    env[0] = t_stop if hit >= 0 else until
    if hit >= 0:
        s.trace.append(TraceEvent(env[0], "threshold_crossing", labels[hit]))
        return s, labels[hit]
    return s, None


def apply_branch(s: SimState, branch: Branch) -> SimState:
    """Resolve the pending branch point of *s* with *branch*."""
    bp = s.pending
    if bp is None or branch.serial != bp.serial or not (0 <= branch.index < len(bp.branches)) \
            or bp.branches[branch.index] != branch:
        raise StaleBranchError("branch does not belong to the pending branch point")
    s.pending = None
    s.path_prob *= branch.probability
    s.trace.append(TraceEvent(s.env[0], "branch_taken", f"{bp.source}={branch.label}",
                              branch.probability))
    cm = s.cm
    if bp.kind == "demand":
        g = cm.guarded_by_label[bp.source]
        code = g.outcomes[branch.index][0]
        _set_state(s, g.comp, code, g.label)
    else:
        tm = cm.timed_by_label[bp.source]
        if branch.label == "no_fire":
            s.active[tm.index] = False
        else:
            when = float(branch.label.split("@", 1)[1])
            heapq.heappush(s.events, (when, tm.index, s.epoch[tm.index]))
    return s


def run(s: SimState, choose=None):
    """Run *s* to an end state.  ``choose(bp)`` picks a branch (default: first)."""
    while True:
        out = step(s)
        if isinstance(out, Ended):
            return out
        if isinstance(out, AtBranchPoint):
            bp = out.branch_point
            apply_branch(s, choose(bp) if choose else bp.branches[0])


# ---------------------------------------------------------------------------
# snapshots

def snapshot(s: SimState) -> bytes:
    payload = pickle.dumps(s, protocol=pickle.HIGHEST_PROTOCOL)
    digest = hashlib.blake2b(payload, digest_size=32).digest()
    fp = bytes.fromhex(s.cm.model.fingerprint)
    return SNAPSHOT_MAGIC + SNAPSHOT_VERSION.to_bytes(2, "big") + fp + digest + payload


def restore(blob: bytes, model: SystemModel) -> SimState:
    """Rebuild a state from :func:`snapshot` bytes; *model* must be the one it came from."""
    head = len(SNAPSHOT_MAGIC)
    if not isinstance(blob, (bytes, bytearray)) or len(blob) < head + 2 + 64 \
            or blob[:head] != SNAPSHOT_MAGIC:
        raise SnapshotError("not a snapshot")
    version = int.from_bytes(blob[head:head + 2], "big")
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"snapshot version {version} is not supported (expected {SNAPSHOT_VERSION})")
    fp = blob[head + 2:head + 34]
    digest = blob[head + 34:head + 66]
    payload = bytes(blob[head + 66:])
    if hashlib.blake2b(payload, digest_size=32).digest() != digest:
        raise SnapshotError("snapshot is corrupted (digest mismatch)")
    if fp != bytes.fromhex(model.fingerprint):
        raise SnapshotError("snapshot was taken from a different model")
    s = pickle.loads(payload)
    s.cm = compiled(model)
    return s


# ---------------------------------------------------------------------------
# traces

def trace_probability(trace) -> float:
    p = 1.0
    for ev in trace:
        if ev.kind == "branch_taken":
            p *= ev.prob
    return p


def trace_to_csv(trace, story=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["time", "kind", "detail", "prob"]
    w.writerow((["story"] if story is not None else []) + header)
    for ev in trace:
        row = [repr(ev.time), ev.kind, ev.detail, "" if ev.prob is None else repr(ev.prob)]
        w.writerow(([story] if story is not None else []) + row)
    return buf.getvalue()


def trace_to_json(trace) -> str:
    return json.dumps([{"time": ev.time, "kind": ev.kind, "detail": ev.detail, "prob": ev.prob}
                       for ev in trace], indent=2)


def trace_from_json(text: str) -> list:
    return [TraceEvent(d["time"], d["kind"], d["detail"], d["prob"]) for d in json.loads(text)]


def check_branch_point(bp: BranchPoint):
    total = math.fsum(b.probability for b in bp.branches)
    if len(bp.branches) < 2 or abs(total - 1.0) > PROB_TOL:
        raise SimulationError(f"malformed branch point at {bp.source}")


__all__ = [
    "SimState", "TraceEvent", "Branch", "BranchPoint", "Advanced", "AtBranchPoint", "Ended",
    "SimulationError", "SnapshotError", "StaleBranchError", "init", "step", "integrate",
    "apply_branch", "run", "snapshot", "restore", "sample_firing_time", "accumulate_hazard",
    "trace_probability", "trace_to_csv", "trace_to_json", "trace_from_json", "compiled",
    "CompiledModel",
]
