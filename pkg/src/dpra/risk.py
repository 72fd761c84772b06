"""Risk reports, acceptance verdicts and design comparison."""

from __future__ import annotations

import io
import csv
import math
from dataclasses import dataclass, field
from enum import Enum

from .scheduler import Z95, ExplorationResult

OK_CLASS = "ok"
TIE_TOL = 1e-12


class RiskError(ValueError):
    pass


class LifeCyclePhase(str, Enum):
    productive = "productive"
    degradation = "degradation"
    failure = "failure"
    recovery = "recovery"


class ToolCategory(str, Enum):
    life_design = "life_design"
    maintenance = "maintenance"
    alarms = "alarms"
    mitigations = "mitigations"
    controls = "controls"
    containments = "containments"
    design_change = "design_change"


@dataclass(frozen=True)
class DesignChangeRecord:
    """A design change annotated with the life-cycle phase and tool category it addresses."""
    description: str
    life_cycle_phase: LifeCyclePhase
    tool_category: ToolCategory

    def __post_init__(self):
        try:
            object.__setattr__(self, "life_cycle_phase", LifeCyclePhase(self.life_cycle_phase))
        except ValueError:
            raise RiskError(f"unknown life-cycle phase {self.life_cycle_phase!r}; expected one of "
                            f"{[p.value for p in LifeCyclePhase]}") from None
        try:
            object.__setattr__(self, "tool_category", ToolCategory(self.tool_category))
        except ValueError:
            raise RiskError(f"unknown tool category {self.tool_category!r}; expected one of "
                            f"{[c.value for c in ToolCategory]}") from None

    def to_dict(self) -> dict:
        return {"description": self.description, "life_cycle_phase": self.life_cycle_phase.value,
                "tool_category": self.tool_category.value}


@dataclass(frozen=True)
class Row:
    name: str
    severity: str
    estimate: float
    ci_low: float
    ci_high: float
    n_stories: int


@dataclass(frozen=True)
class WorstCase:
    end_state: str
    severity: str
    path_prob: float
    score: float
    choices: tuple
    story: int


@dataclass
class RiskReport:
    mode: str
    model_name: str
    rows: list                     # Row per end state
    classes: dict                  # severity class -> Row
    worst: list                    # WorstCase, best first
    truncated_mass: float
    unexplored_mass: float
    depth_limited_mass: float
    n_stories: int
    warnings: list = field(default_factory=list)
    straddling: list = field(default_factory=list)

    @property
    def class_names(self) -> list:
        return list(self.classes)

    def render(self) -> str:
        out = [f"risk report: model {self.model_name} ({self.mode}, {self.n_stories} stories)", ""]
        out.append(f"{'end state':<20} {'class':<16} {'estimate':>12} {'95% CI':>27} {'stories':>8}")
        for r in self.rows:
            out.append(f"{r.name:<20} {r.severity:<16} {r.estimate:>12.6g} "
                       f"[{r.ci_low:>11.6g}, {r.ci_high:>11.6g}] {r.n_stories:>8}")
        out.append("")
        out.append(f"{'severity class':<37} {'estimate':>12} {'95% CI':>27}")
        for name, r in self.classes.items():
            out.append(f"{name:<37} {r.estimate:>12.6g} [{r.ci_low:>11.6g}, {r.ci_high:>11.6g}]")
        out.append("")
        out.append(f"truncated mass {self.truncated_mass:.6g}; unexplored mass {self.unexplored_mass:.6g}; "
                   f"depth-limited mass {self.depth_limited_mass:.6g}")
        if self.worst:
            out.append("")
            out.append("worst-case scenarios:")
            for i, w in enumerate(self.worst, 1):
                path = " > ".join(f"{s}={lab}" for s, lab in w.choices) or "(no branching)"
                out.append(f"  {i}. {w.end_state} [{w.severity}] p={w.path_prob:.6g}: {path}")
        for wmsg in self.warnings:
            out.append(f"warning: {wmsg}")
        for c in self.straddling:
            out.append(f"note: confidence interval of class {c!r} straddles its threshold")
        return "\n".join(out) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "name", "severity", "estimate", "ci_low", "ci_high", "n_stories"])
        for r in self.rows:
            w.writerow(["end_state", r.name, r.severity, repr(r.estimate), repr(r.ci_low),
                        repr(r.ci_high), r.n_stories])
        for name, r in self.classes.items():
            w.writerow(["class", name, name, repr(r.estimate), repr(r.ci_low), repr(r.ci_high),
                        r.n_stories])
        return buf.getvalue()


def assess(r: ExplorationResult, k: int = 5, criteria: "AcceptanceCriteria | None" = None,
           consequence: dict | None = None) -> RiskReport:
    """Risk report for an exploration result.

    Worst cases are the most probable distinct stories ending outside the
    ``ok`` class, optionally ranked by probability times a per-class
    consequence weight.
    """
    if r.n == 0:
        raise RiskError("exploration result has no stories")
    est = r.estimates
    rows = [Row(e, r.severities[e], est[e].estimate, est[e].ci_low, est[e].ci_high, est[e].n_stories)
            for e in r.end_states]
    classes = {}
    for e in r.end_states:
        sev = r.severities[e]
        classes.setdefault(sev, []).append(e)
    class_rows = {}
    for sev, members in classes.items():
        n_st = sum(est[e].n_stories for e in members)
        if r.mode == "systematic":
            v = math.fsum(est[e].estimate for e in members)
            class_rows[sev] = Row(sev, sev, v, v, v, n_st)
        else:
            s1 = math.fsum(r.sums[e][0] for e in members)
            s2 = math.fsum(r.sums[e][1] for e in members)
            n = r.n
            mean = math.fsum(est[e].estimate for e in members)
            var = max(0.0, (s2 - n * (s1 / n) ** 2) / (n - 1)) / n if n > 1 else 0.0
            half = Z95 * math.sqrt(var)
            class_rows[sev] = Row(sev, sev, mean, mean - half, mean + half, n_st)

    warnings = []
    seen = {}
    for s in r.stories:
        if s.end_state is None or r.severities[s.end_state] == OK_CLASS:
            continue
        key = (s.end_state, s.choices)
        if key not in seen:
            seen[key] = s
    cons = consequence or {}
    cands = []
    for (e, choices), s in seen.items():
        sev = r.severities[e]
        score = s.path_prob * float(cons.get(sev, 1.0))
        cands.append(WorstCase(e, sev, s.path_prob, score, choices, s.index))
    cands.sort(key=lambda w: (-w.score, w.end_state, w.choices))
    if k > len(cands):
        warnings.append(f"requested top-{k} worst cases but only {len(cands)} non-ok stories exist")
    report = RiskReport(r.mode, r.model_name, rows, class_rows, cands[:k], r.ledger.mass,
                        r.unexplored_mass, r.depth_limited_mass, r.n, warnings)
    report.warnings.extend(r.notes)
    if criteria is not None and r.mode != "systematic":
        for c, row in class_rows.items():
            thr = criteria.thresholds.get(c)
            if thr is not None and row.ci_low <= thr < row.ci_high:
                report.straddling.append(c)
    return report


@dataclass(frozen=True)
class AcceptanceCriteria:
    """Maximum acceptable probability per severity class (None = no limit)."""
    thresholds: dict

    def __post_init__(self):
        for c, t in self.thresholds.items():
            if t is not None and not (0.0 <= t <= 1.0):
                raise RiskError(f"threshold for {c!r} must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "AcceptanceCriteria":
        out = {}
        for c, t in d.items():
            if t is None or (isinstance(t, str) and t.strip().lower() in ("none", "no limit", "no_limit")):
                out[c] = None
            elif isinstance(t, (int, float)) and not isinstance(t, bool):
                out[c] = float(t)
            else:
                raise RiskError(f"threshold for {c!r} must be a number or 'no limit'")
        return cls(out)


ACCEPT, REJECT, INDETERMINATE = "accept", "reject", "indeterminate"


def check_acceptance(rep: RiskReport, crit: AcceptanceCriteria) -> dict:
    """Verdict per severity class.

    Exact results: accept iff estimate <= threshold.  Statistical results:
    accept iff the upper 95% bound is within the threshold, reject iff the
    lower bound exceeds it, otherwise indeterminate.
    """
    out = {}
    for c, row in rep.classes.items():
        if c not in crit.thresholds:
            raise RiskError(f"no acceptance threshold for class {c!r} (use 'no limit' to waive)")
        thr = crit.thresholds[c]
        if thr is None:
            out[c] = ACCEPT
        elif rep.mode == "systematic":
            out[c] = ACCEPT if row.estimate <= thr else REJECT
        elif row.ci_high <= thr:
            out[c] = ACCEPT
        elif row.ci_low > thr:
            out[c] = REJECT
        else:
            out[c] = INDETERMINATE
    return out


@dataclass
class DesignComparison:
    reports: dict                   # name -> RiskReport
    criterion: str
    secondary: list
    deltas: dict                    # name -> class -> estimate minus the preferred one
    preferred: str | None
    tied: list
    changes: dict = field(default_factory=dict)   # name -> [DesignChangeRecord]

    @property
    def is_tie(self) -> bool:
        return self.preferred is None

    def verdict_line(self) -> str:
        if self.preferred is None:
            return f"preferred=tie criterion={self.criterion} tied={','.join(self.tied)}"
        return f"preferred={self.preferred} criterion={self.criterion}"

    def render(self) -> str:
        classes = self.reports[next(iter(self.reports))].class_names
        out = [f"design comparison on class {self.criterion!r}"
               + (f" (then {', '.join(self.secondary)})" if self.secondary else ""), ""]
        out.append(f"{'alternative':<20}" + "".join(f"{c:>16}" for c in classes))
        for name in sorted(self.reports):
            rep = self.reports[name]
            out.append(f"{name:<20}" + "".join(f"{rep.classes[c].estimate:>16.6g}" for c in classes))
        out.append("")
        if self.preferred is not None:
            out.append("difference from the preferred alternative:")
            for name in sorted(self.deltas):
                out.append(f"{name:<20}" + "".join(f"{self.deltas[name][c]:>+16.6g}" for c in classes))
            out.append("")
        for name in sorted(self.changes):
            for ch in self.changes[name]:
                out.append(f"{name}: {ch.description} [{ch.life_cycle_phase.value} / "
                           f"{ch.tool_category.value}]")
        out.append(self.verdict_line())
        return "\n".join(out) + "\n"


def compare_designs(alternatives: dict, criterion: str, secondary=(), changes: dict | None = None
                    ) -> DesignComparison:
    """Prefer the alternative with the lowest probability in *criterion*.

    Ties (within 1e-12) are broken by the *secondary* classes in order; a
    tie that survives them is reported as a tie.
    """
    if len(alternatives) < 2:
        raise RiskError("compare_designs needs at least two alternatives")
    names = sorted(alternatives)
    classes = set(alternatives[names[0]].classes)
    for n in names[1:]:
        if set(alternatives[n].classes) != classes:
            raise RiskError(f"alternative {n!r} has different severity classes")
    order = [criterion] + [c for c in secondary if c != criterion]
    for c in order:
        if c not in classes:
            raise RiskError(f"unknown severity class {c!r}")
    remaining = names
    for c in order:
        vals = {n: alternatives[n].classes[c].estimate for n in remaining}
        best = min(vals.values())
        remaining = [n for n in remaining if vals[n] - best <= TIE_TOL]
        if len(remaining) == 1:
            break
    preferred = remaining[0] if len(remaining) == 1 else None
    deltas = {}
    if preferred is not None:
        ref = alternatives[preferred]
        for n in names:
            deltas[n] = {c: alternatives[n].classes[c].estimate - ref.classes[c].estimate
                         for c in alternatives[n].classes}
    return DesignComparison(dict(alternatives), criterion, list(order[1:]), deltas, preferred,
                            remaining if preferred is None else [], dict(changes or {}))
