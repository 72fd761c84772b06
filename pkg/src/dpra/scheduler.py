"""Exploration strategies over a simulation model.

``systematic``
    Depth-first dynamic event tree.  Every branch point is snapshotted and
    its branches pushed on a stack; a path whose cumulative probability falls
    below ``p_lim`` is abandoned and its mass booked in the truncation ledger.

``guided``
    Randomized stories.  Branch ``b`` is taken with probability
    ``q_b ∝ p_b^α · I_b^β · H̃_b^γ`` where ``I_b`` is the plan importance of the
    functionality changes the branch causes and ``H̃_b`` the normalized
    entropy of end states seen below it.  Each story carries the likelihood
    ratio ``w = Π p_b / q_b`` so ``mean(w · 1[end = E])`` is unbiased.

``targeted``
    Guided, with importance multiplied by ``boost`` on branches that cause a
    target event or advance a plan scenario containing it.

Branch statistics only change at batch boundaries, and every story draws
from its own counter-derived random stream, so results do not depend on how
stories are distributed over worker processes.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from . import simulator as sim
from .model import SystemModel
from .planner import Abstraction, Plan, PlanError, initial_cursors, match_event

ENTROPY_FLOOR = 0.05
Z95 = 1.959963984540054
DEFAULT_BATCH = 128
CACHE_LIMIT = 200_000


class ExplorationError(ValueError):
    pass


@dataclass(frozen=True)
class ExplorationConfig:
    mode: str = "systematic"            # systematic | guided | targeted
    p_lim: float = 0.0
    n_sequences: int | None = None
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    seed: int = 0
    max_depth: int = 10_000
    batch_size: int = DEFAULT_BATCH
    boost: float = 10.0
    target_event: str | None = None
    branch_order: str = "forward"       # systematic sibling order: forward | reverse
    workers: int = 1
    keep_traces: bool = True

    def check(self):
        if self.mode not in ("systematic", "guided", "targeted"):
            raise ExplorationError(f"unknown mode {self.mode!r}")
        if not (0.0 <= self.p_lim < 1.0):
            raise ExplorationError("p_lim must lie in [0, 1)")
        if self.n_sequences is not None and self.n_sequences < 1:
            raise ExplorationError("n_sequences must be at least 1")
        if self.mode != "systematic" and self.n_sequences is None:
            raise ExplorationError(f"{self.mode} mode needs n_sequences")
        for w in (self.alpha, self.beta, self.gamma):
            if not (w >= 0.0) or math.isinf(w):
                raise ExplorationError("alpha, beta and gamma must be finite and >= 0")
        if self.max_depth < 1 or self.batch_size < 1 or self.workers < 1:
            raise ExplorationError("max_depth, batch_size and workers must be positive")
        if self.boost <= 0:
            raise ExplorationError("boost must be positive")
        if self.mode == "targeted" and not self.target_event:
            raise ExplorationError("targeted mode needs a target event")
        if self.branch_order not in ("forward", "reverse"):
            raise ExplorationError("branch_order must be 'forward' or 'reverse'")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class Story:
    index: int
    end_state: str | None          # None: abandoned at max_depth
    path_prob: float
    weight: float
    choices: tuple                 # (branch point source, branch label) pairs
    trace: tuple = ()
    hits_target: bool = False
    run_seed: int = 0


@dataclass
class TruncationLedger:
    mass: float = 0.0
    count: int = 0


@dataclass
class BranchStats:
    """Per-branch visit counts and end-state frequencies below each branch."""
    visits: dict = field(default_factory=dict)      # (source, index) -> int
    freq: dict = field(default_factory=dict)        # (source, index) -> {end_state: int}

    def record(self, keys, end_state):
        for k in keys:
            self.visits[k] = self.visits.get(k, 0) + 1
            row = self.freq.setdefault(k, {})
            row[end_state] = row.get(end_state, 0) + 1

    def merged(self, other: "BranchStats") -> "BranchStats":
        out = BranchStats(dict(self.visits), {k: dict(v) for k, v in self.freq.items()})
        for k, n in other.visits.items():
            out.visits[k] = out.visits.get(k, 0) + n
        for k, row in other.freq.items():
            dst = out.freq.setdefault(k, {})
            for e, n in row.items():
                dst[e] = dst.get(e, 0) + n
        return out

    def copy(self) -> "BranchStats":
        return self.merged(BranchStats())


def entropy_score(bs: BranchStats, branch, K: int, floor: float = ENTROPY_FLOOR) -> float:
    """Normalized entropy of the Dirichlet(1)-smoothed end-state frequencies under *branch*."""
    if K < 1:
        raise ValueError("K must be at least 1")
    if K == 1:
        return floor
    row = bs.freq.get(branch, {})
    n = sum(row.values())
    counts = list(row.values()) + [0] * max(0, K - len(row))
    total = n + K
    h = 0.0
    for c in counts:
        p = (c + 1) / total
        h -= p * math.log(p)
    return max(h / math.log(K), floor)


@dataclass(frozen=True)
class Estimate:
    estimate: float
    variance: float
    ci_low: float
    ci_high: float
    n_stories: int

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance)


@dataclass
class ExplorationResult:
    mode: str
    model_name: str
    model_fingerprint: str
    end_states: list
    severities: dict
    config: dict
    stories: list
    ledger: TruncationLedger
    stats: BranchStats
    n: int
    sums: dict                        # end_state -> [Σw, Σw²] (guided) / [Σp, 0] (systematic)
    unexplored_mass: float = 0.0
    unexplored_count: int = 0
    depth_limited_mass: float = 0.0
    depth_limited_count: int = 0
    rounds: int = 1
    notes: list = field(default_factory=list)
    target_stories: list = field(default_factory=list)

    @property
    def estimates(self) -> dict:
        out = {}
        counts = {}
        for s in self.stories:
            if s.end_state is not None:
                counts[s.end_state] = counts.get(s.end_state, 0) + 1
        for e in self.end_states:
            s1, s2 = self.sums.get(e, (0.0, 0.0))
            k = counts.get(e, 0)
            if self.mode == "systematic":
                out[e] = Estimate(s1, 0.0, s1, s1, k)
                continue
            n = self.n
            mean = s1 / n if n else 0.0
            var = max(0.0, (s2 - n * mean * mean) / (n - 1)) / n if n > 1 else 0.0
            half = Z95 * math.sqrt(var)
            out[e] = Estimate(mean, var, mean - half, mean + half, k)
        return out

    @property
    def explored_mass(self) -> float:
        return math.fsum(v[0] for v in self.sums.values()) if self.mode == "systematic" else 1.0

    def total_mass(self) -> float:
        return self.explored_mass + self.ledger.mass + self.unexplored_mass + self.depth_limited_mass

    def severity_of(self, end_state: str) -> str:
        return self.severities[end_state]


# ---------------------------------------------------------------------------
# helpers

def derive_seed(*parts) -> int:
    """Counter-based 64-bit seed derived from *parts*."""
    text = ":".join(str(p) for p in parts)
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "big")


def uniform(*parts) -> float:
    """Counter-based uniform draw in [0, 1) determined by *parts*."""
    text = ":".join(str(p) for p in parts)
    return (int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "big") >> 11) \
        * (1.0 / 9007199254740992.0)


def _advance(s):
    """Step until a branch point or an end state."""
    while True:
        out = sim.step(s)
        if not isinstance(out, sim.Advanced):
            return out


def _new_result(model: SystemModel, cfg: ExplorationConfig) -> ExplorationResult:
    return ExplorationResult(
        mode=cfg.mode, model_name=model.name, model_fingerprint=model.fingerprint,
        end_states=[e.name for e in model.end_states],
        severities={e.name: e.severity for e in model.end_states},
        config=cfg.to_dict(), stories=[], ledger=TruncationLedger(), stats=BranchStats(), n=0,
        sums={e.name: [0.0, 0.0] for e in model.end_states})


# ---------------------------------------------------------------------------
# systematic

def explore_systematic(model: SystemModel, cfg: ExplorationConfig) -> ExplorationResult:
    cfg.check()
    if cfg.mode != "systematic":
        raise ExplorationError("explore_systematic needs mode='systematic'")
    p_lim = cfg.p_lim
    rounds = 0
    while True:
        rounds += 1
        res = _systematic_round(model, cfg, p_lim)
        res.rounds = rounds
        if cfg.n_sequences is None or res.n >= cfg.n_sequences or res.ledger.count == 0 \
                or p_lim <= 0.0 or rounds >= 16:
            if cfg.n_sequences is not None and res.n < cfg.n_sequences:
                res.notes.append(f"only {res.n} sequences exist above the final threshold "
                                 f"{p_lim:g}; requested {cfg.n_sequences}")
            res.config = dict(res.config, p_lim_final=p_lim)
            return res
        p_lim /= 10.0


def _systematic_round(model, cfg, p_lim) -> ExplorationResult:
    res = _new_result(model, cfg)
    root = sim.init(model, cfg.seed, "discretize")
    stack = [(root, None, 1.0, 0, ())]
    idx = 0
    while stack:
        state, branch, prob, depth, choices = stack.pop()
        if branch is not None:
            state = sim.restore(state, model)
            sim.apply_branch(state, branch)
        out = _advance(state)
        if isinstance(out, sim.Ended):
            res.sums[out.end_state][0] += prob
            res.stories.append(Story(idx, out.end_state, prob, prob, choices,
                                     tuple(state.trace) if cfg.keep_traces else (),
                                     run_seed=cfg.seed))
            idx += 1
            res.n += 1
            if cfg.n_sequences is not None and res.n >= cfg.n_sequences and stack:
                res.unexplored_mass = math.fsum(e[2] for e in stack)
                res.unexplored_count = len(stack)
                res.notes.append(f"stopped after {res.n} sequences; "
                                 f"{len(stack)} frontier branches left unexplored")
                break
            continue
        bp = out.branch_point
        if depth + 1 > cfg.max_depth:
            res.depth_limited_mass += prob
            res.depth_limited_count += 1
            continue
        blob = sim.snapshot(state)
        children = []
        for b in bp.branches:
            if b.probability <= 0.0:
                continue
            p = prob * b.probability
            if p < p_lim:
                res.ledger.mass += p
                res.ledger.count += 1
                continue
            children.append((blob, b, p, depth + 1, choices + ((bp.source, b.label),)))
        if cfg.branch_order == "forward":
            children.reverse()
        stack.extend(children)
    if res.depth_limited_count:
        res.notes.append(f"{res.depth_limited_count} paths exceeded max_depth={cfg.max_depth} "
                         f"(mass {res.depth_limited_mass:.6g})")
    return res


# ---------------------------------------------------------------------------
# guided / targeted

class _Target:
    """Parsed target event: ``comp=STATE`` or ``functionality:lost|gained``."""

    def __init__(self, text: str, model: SystemModel, abstraction: Abstraction | None):
        self.text = text
        self.comp = self.state = self.event = None
        if "=" in text:
            comp, state = (x.strip() for x in text.split("=", 1))
            names = [c.name for c in model.components]
            if comp not in names:
                raise ExplorationError(f"target event names unknown component {comp!r}")
            c = model.component(comp)
            if state not in c.states:
                raise ExplorationError(f"target event: {state!r} is not a state of {comp!r}")
            self.comp = names.index(comp)
            self.state = c.states.index(state)
            reachable = model.initial_components[comp] == state or any(
                state in t.targets for t in c.transitions)
            self.statically_unreachable = not reachable
        else:
            parts = text.split(":")
            if len(parts) != 2 or parts[1] not in ("lost", "gained"):
                raise ExplorationError(
                    f"target event {text!r} must be 'component=STATE' or 'functionality:lost|gained'")
            if abstraction is None or parts[0] not in abstraction.tracked:
                raise ExplorationError(f"target event names unknown functionality {parts[0]!r}")
            self.event = text
            self.statically_unreachable = False

        self.events = {self.event} if self.event else set()
        if self.comp is not None and abstraction is not None:
            codes = [c.states.index(model.initial_components[c.name]) for c in model.components]
            before = abstraction.status(codes)
            codes[self.comp] = self.state
            self.events = set(abstraction.events(before, abstraction.status(codes)))

    def produced_by(self, comp: int, code: int, events) -> bool:
        if self.comp is not None:
            return comp == self.comp and code == self.state
        return self.event in events


class _Node:
    """Cached segment of a story between two branch points."""
    __slots__ = ("state", "bp", "end", "events", "children", "codes", "hit", "status",
                 "wcache", "wver")

    def __init__(self, state, out, events, codes, hit, status):
        self.state = state
        self.bp = out.branch_point if isinstance(out, sim.AtBranchPoint) else None
        self.end = out.end_state if isinstance(out, sim.Ended) else None
        self.events = events
        self.children = {}
        self.codes = codes
        self.hit = hit
        self.status = status
        self.wcache = {}
        self.wver = -1


class _GuidedRunner:
    def __init__(self, model, plan, cfg):
        self.model = model
        self.plan = plan
        self.cfg = cfg
        self.abstraction = Abstraction(plan, model) if plan is not None else None
        self.target = None
        if cfg.mode == "targeted":
            self.target = _Target(cfg.target_event, model, self.abstraction)
        self.K = len(model.end_states)
        cm = sim.compiled(model)
        self.comp_slot = cm.comp_slot
        self.cm = cm
        self.g_by_label = cm.guarded_by_label
        # stories only share a tree when the simulator never draws random numbers
        self.cacheable = not any(tm.dist.type != "fixed" for tm in cm.timed)
        self.root = None
        self.n_nodes = 0
        self.version = 0
        self.hcache = {}

    def codes_of(self, s):
        env = s.env
        return tuple(int(env[i]) for i in self.comp_slot)

    def _segment(self, s, prev_status, n_trace):
        """Advance *s* to the next branch point / end, collecting functionality events."""
        events = []
        hit = False
        status = prev_status
        tgt = self.target
        while True:
            out = sim.step(s)
            if self.abstraction is not None or tgt is not None:
                codes = self.codes_of(s)
                if self.abstraction is not None:
                    new = self.abstraction.status(codes)
                    if new != status:
                        events.extend(self.abstraction.events(status, new))
                        status = new
            if not isinstance(out, sim.Advanced):
                break
        if tgt is not None:
            if tgt.comp is not None:
                for ev in s.trace[n_trace:]:
                    if ev.kind == "transition" and self._trace_hits(ev):
                        hit = True
            else:
                hit = tgt.event in events
        return out, events, status, hit

    def _trace_hits(self, ev):
        tgt = self.target
        label, change = ev.detail.rsplit(":", 1)
        comp = label.split(".", 1)[0]
        c = self.model.components[tgt.comp]
        return comp == c.name and change.split("->", 1)[1] == c.states[tgt.state]

    def _start(self, seed):
        s = sim.init(self.model, seed, "sample")
        status = self.abstraction.status(self.codes_of(s)) if self.abstraction else ()
        out, events, status, hit = self._segment(s, status, 0)
        return _Node(s, out, tuple(events), self.codes_of(s), hit, status)

    def _child(self, node, bi, status):
        s = node.state.clone()
        n_trace = len(s.trace)
        sim.apply_branch(s, node.bp.branches[bi])
        out, events, status, hit = self._segment(s, status, n_trace)
        return _Node(s, out, tuple(events), self.codes_of(s), hit, status)

    def branch_importance(self, node, b, cursors, status):
        """Importance of branch *b* given plan cursors; boosted for targets."""
        bp = node.bp
        if self.abstraction is None:
            return 1.0
        events = ()
        comp = code = -1
        if bp.kind == "demand":
            g = self.g_by_label[bp.source]
            comp, code = g.comp, g.outcomes[b.index][0]
            codes = list(node.codes)
            codes[comp] = code
            new = self.abstraction.status(codes)
            events = self.abstraction.events(status, new)
        best = None
        on_target = False
        tgt = self.target
        cur = cursors
        for ev in events:
            for i, sc in enumerate(self.plan.scenarios):
                c = cur[i]
                if c < len(sc.events) and sc.events[c] == ev:
                    if best is None or sc.importance > best:
                        best = sc.importance
                    if tgt is not None and not on_target:
                        on_target = any(e in tgt.events for e in sc.events)
            cur, _ = match_event(self.plan, cur, ev)
        imp = 1.0 if best is None else best
        if tgt is not None and (on_target or tgt.produced_by(comp, code, events)):
            imp *= self.cfg.boost
        return imp

    def weights(self, node, cursors, stats):
        """Unnormalized selection weights at *node*; memoized per stats version."""
        if node.wver != self.version:
            node.wcache = {}
            node.wver = self.version
        hit = node.wcache.get(cursors)
        if hit is not None:
            return hit
        cfg = self.cfg
        bp = node.bp
        ws = []
        for b in bp.branches:
            p = b.probability
            if p <= 0.0:
                ws.append(0.0)
                continue
            w = p ** cfg.alpha if cfg.alpha != 1.0 else p
            if cfg.beta != 0.0:
                w *= self.branch_importance(node, b, cursors, node.status) ** cfg.beta
            if cfg.gamma != 0.0:
                key = (bp.source, b.index)
                h = self.hcache.get(key)
                if h is None:
                    h = self.hcache[key] = entropy_score(stats, key, self.K)
                w *= h ** cfg.gamma
            ws.append(w)
        total = math.fsum(ws)
        assert total > 0.0, "branch selection weights vanished"
        node.wcache[cursors] = out = (ws, total)
        return out

    def new_batch(self):
        """Branch statistics changed: drop memoized weights."""
        self.version += 1
        self.hcache = {}

    def run_story(self, index, stats: BranchStats):
        cfg = self.cfg
        if self.cacheable:
            if self.root is None:
                self.root = self._start(0)
            node = self.root
        else:
            node = self._start(derive_seed(cfg.seed, index, "sim"))
        cursors = initial_cursors(self.plan) if self.plan is not None else ()
        weight = 1.0
        path_prob = 1.0
        keys = []
        choices = []
        hit = False
        depth = 0
        while True:
            for ev in node.events:
                cursors, _ = match_event(self.plan, cursors, ev)
            hit = hit or node.hit
            if node.end is not None:
                break
            depth += 1
            if depth > cfg.max_depth:
                return Story(index, None, path_prob, weight, tuple(choices),
                             tuple(node.state.trace) if cfg.keep_traces else (), hit, cfg.seed), keys
            bp = node.bp
            ws, total = self.weights(node, cursors, stats)
            u = uniform(cfg.seed, index, depth) * total
            acc = 0.0
            bi = None
            for i, w in enumerate(ws):
                if w <= 0.0:
                    continue
                acc += w
                bi = i
                if u < acc:
                    break
            b = bp.branches[bi]
            weight *= b.probability / (ws[bi] / total)
            path_prob *= b.probability
            keys.append((bp.source, bi))
            choices.append((bp.source, b.label))
            child = node.children.get(bi) if self.cacheable else None
            if child is None:
                child = self._child(node, bi, node.status)
                if self.cacheable and self.n_nodes < CACHE_LIMIT:
                    node.children[bi] = child
                    self.n_nodes += 1
            node = child
        return Story(index, node.end, path_prob, weight, tuple(choices),
                     tuple(node.state.trace) if cfg.keep_traces else (), hit, cfg.seed), keys


_WORKER = None


def _worker_init(model, plan, cfg):
    global _WORKER
    _WORKER = _GuidedRunner(model, plan, cfg)


def _worker_run(args):
    indices, stats = args
    _WORKER.new_batch()
    return [_WORKER.run_story(i, stats) for i in indices]


def explore_guided(model: SystemModel, plan: Plan | None, cfg: ExplorationConfig) -> ExplorationResult:
    cfg.check()
    if cfg.mode not in ("guided", "targeted"):
        raise ExplorationError("explore_guided needs mode='guided' or 'targeted'")
    if plan is None and cfg.beta != 0.0:
        raise ExplorationError("guided exploration with beta > 0 needs a plan")
    try:
        runner = _GuidedRunner(model, plan, cfg)
    except PlanError as exc:
        raise ExplorationError(f"plan does not fit the model: {exc}") from None
    res = _new_result(model, cfg)
    stats = BranchStats()
    N = cfg.n_sequences
    pool = None
    if cfg.workers > 1:
        pool = ProcessPoolExecutor(cfg.workers, initializer=_worker_init,
                                   initargs=(model, plan, cfg))
    try:
        for start in range(0, N, cfg.batch_size):
            batch = list(range(start, min(N, start + cfg.batch_size)))
            frozen = stats.copy() if pool is not None else stats
            runner.new_batch()
            if pool is None:
                done = [runner.run_story(i, frozen) for i in batch]
            else:
                k = cfg.workers
                chunks = [batch[j::k] for j in range(k)]
                parts = list(pool.map(_worker_run, [(c, frozen) for c in chunks if c]))
                by_index = {st.index: (st, keys) for part in parts for st, keys in part}
                done = [by_index[i] for i in batch]
            for story, keys in done:
                res.stories.append(story)
                res.n += 1
                if story.end_state is None:
                    res.depth_limited_count += 1
                    continue
                sm = res.sums[story.end_state]
                sm[0] += story.weight
                sm[1] += story.weight * story.weight
            for story, keys in done:
                if story.end_state is not None:
                    stats.record(set(keys), story.end_state)
    finally:
        if pool is not None:
            pool.shutdown()
    res.stats = stats
    if res.depth_limited_count:
        res.notes.append(f"{res.depth_limited_count} stories exceeded max_depth={cfg.max_depth} "
                         f"and were left without an end state")
    if runner.target is not None:
        res.target_stories = [s.index for s in res.stories if s.hits_target]
        if not res.target_stories:
            why = " (no transition of the model can produce it)" if runner.target.statically_unreachable else ""
            res.notes.append(f"target event {cfg.target_event!r} occurred in none of the "
                             f"{res.n} stories{why}")
    return res


def explore_targeted(model, plan, target_event: str, cfg: ExplorationConfig) -> ExplorationResult:
    return explore_guided(model, plan, replace(cfg, mode="targeted", target_event=target_event))


def explore(model: SystemModel, cfg: ExplorationConfig, plan: Plan | None = None) -> ExplorationResult:
    if cfg.mode == "systematic":
        return explore_systematic(model, cfg)
    return explore_guided(model, plan, cfg)


# ---------------------------------------------------------------------------
# merging

def merge_results(rs) -> ExplorationResult:
    """Order-independent pooling of results from the same model and mode."""
    rs = list(rs)
    if not rs:
        raise ExplorationError("nothing to merge")
    if len(rs) == 1:
        return rs[0]
    first = rs[0]
    for r in rs[1:]:
        if r.mode != first.mode:
            raise ExplorationError("cannot merge results of different modes")
        if r.model_fingerprint != first.model_fingerprint:
            raise ExplorationError("cannot merge results of different models")
    rs = sorted(rs, key=lambda r: (r.config.get("seed", 0), r.n, repr(sorted(r.sums.items()))))
    total_n = sum(r.n for r in rs)
    out = _empty_like(first)
    out.n = total_n
    stats = BranchStats()
    for r in rs:
        stats = stats.merged(r.stats)
    out.stats = stats
    out.stories = sorted((s for r in rs for s in r.stories), key=lambda s: (s.run_seed, s.index))
    out.ledger = TruncationLedger(0.0, sum(r.ledger.count for r in rs))
    if first.mode == "systematic":
        # exact results: pool as an n-weighted mean so masses stay normalized
        for e in out.end_states:
            out.sums[e] = [math.fsum(r.sums[e][0] * r.n for r in rs) / total_n, 0.0]
        out.ledger.mass = math.fsum(r.ledger.mass * r.n for r in rs) / total_n
        out.unexplored_mass = math.fsum(r.unexplored_mass * r.n for r in rs) / total_n
        out.depth_limited_mass = math.fsum(r.depth_limited_mass * r.n for r in rs) / total_n
    else:
        for e in out.end_states:
            out.sums[e] = [math.fsum(r.sums[e][0] for r in rs), math.fsum(r.sums[e][1] for r in rs)]
        out.ledger.mass = math.fsum(r.ledger.mass for r in rs)
    out.unexplored_count = sum(r.unexplored_count for r in rs)
    out.depth_limited_count = sum(r.depth_limited_count for r in rs)
    out.notes = sorted({n for r in rs for n in r.notes})
    out.target_stories = sorted({i for r in rs for i in r.target_stories})
    out.config = dict(first.config, merged_runs=len(rs))
    return out


def _empty_like(r: ExplorationResult) -> ExplorationResult:
    return ExplorationResult(
        mode=r.mode, model_name=r.model_name, model_fingerprint=r.model_fingerprint,
        end_states=list(r.end_states), severities=dict(r.severities), config=dict(r.config),
        stories=[], ledger=TruncationLedger(), stats=BranchStats(), n=0,
        sums={e: [0.0, 0.0] for e in r.end_states})


def estimates_csv(r: ExplorationResult) -> str:
    lines = ["end_state,estimate,ci_low,ci_high,n_stories"]
    for e, est in r.estimates.items():
        lines.append(f"{e},{est.estimate!r},{est.ci_low!r},{est.ci_high!r},{est.n_stories}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# persistence

RESULT_FORMAT = 1


def result_to_dict(r: ExplorationResult) -> dict:
    """JSON-ready form of *r* without traces or branch statistics."""
    cfg = {k: v for k, v in r.config.items() if k != "workers"}   # K never changes results
    return {
        "format": RESULT_FORMAT,
        "mode": r.mode,
        "model_name": r.model_name,
        "model_fingerprint": r.model_fingerprint,
        "end_states": list(r.end_states),
        "severities": dict(r.severities),
        "config": cfg,
        "n": r.n,
        "sums": {e: list(v) for e, v in r.sums.items()},
        "ledger": {"truncated_mass": r.ledger.mass, "truncated_count": r.ledger.count,
                   "unexplored_mass": r.unexplored_mass, "unexplored_count": r.unexplored_count,
                   "depth_limited_mass": r.depth_limited_mass,
                   "depth_limited_count": r.depth_limited_count,
                   "explored_mass": r.explored_mass, "rounds": r.rounds},
        "notes": list(r.notes),
        "target_stories": list(r.target_stories),
        "stories": [{"index": s.index, "end_state": s.end_state, "path_prob": s.path_prob,
                     "weight": s.weight, "choices": [list(c) for c in s.choices],
                     "hits_target": s.hits_target, "run_seed": s.run_seed} for s in r.stories],
    }


def result_from_dict(d: dict) -> ExplorationResult:
    if d.get("format") != RESULT_FORMAT:
        raise ExplorationError(f"unsupported result format {d.get('format')!r}")
    led = d["ledger"]
    stories = [Story(s["index"], s["end_state"], s["path_prob"], s["weight"],
                     tuple(tuple(c) for c in s["choices"]), (), s["hits_target"], s["run_seed"])
               for s in d["stories"]]
    return ExplorationResult(
        mode=d["mode"], model_name=d["model_name"], model_fingerprint=d["model_fingerprint"],
        end_states=list(d["end_states"]), severities=dict(d["severities"]), config=dict(d["config"]),
        stories=stories, ledger=TruncationLedger(led["truncated_mass"], led["truncated_count"]),
        stats=BranchStats(), n=d["n"], sums={e: list(v) for e, v in d["sums"].items()},
        unexplored_mass=led["unexplored_mass"], unexplored_count=led["unexplored_count"],
        depth_limited_mass=led["depth_limited_mass"], depth_limited_count=led["depth_limited_count"],
        rounds=led.get("rounds", 1), notes=list(d["notes"]), target_stories=list(d["target_stories"]))
