"""Command-line entry point: ``dpra validate | plan | explore | report | compare``.

Exit codes: 0 success or accept, 1 validation failure, 2 usage error,
3 reject, 4 indeterminate.  Data goes to files, summaries to stdout and
diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from . import simulator as sim
from .model import ModelError, load_model, validate_model
from .planner import PlanError, check_plan_against_model, generate_plan, plan_load, plan_store
from .risk import (ACCEPT, INDETERMINATE, REJECT, AcceptanceCriteria, DesignChangeRecord, RiskError,
                   assess, check_acceptance, compare_designs)
from .scheduler import (ExplorationConfig, ExplorationError, estimates_csv, explore,
                        result_from_dict, result_to_dict)

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_REJECT, EXIT_INDETERMINATE = 0, 1, 2, 3, 4

MANIFEST = "manifest.json"
RESULT = "result.json"
DATA_FILES = ("estimates.csv", "traces.csv", "ledger.json", RESULT)


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _err(msg: str):
    print(f"dpra: {msg}", file=sys.stderr)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_model(path):
    """Load and validate a model; usage error if unreadable, invalid otherwise."""
    p = Path(path)
    if not p.is_file():
        raise CLIError(f"cannot read model file {str(p)!r}", EXIT_USAGE)
    try:
        return load_model(p)
    except ModelError as e:
        for d in e.diagnostics:
            _err(str(d))
        raise CLIError(f"{p}: {e}", EXIT_INVALID) from None


def _load_plan(path):
    p = Path(path)
    if not p.is_file():
        raise CLIError(f"cannot read plan file {str(p)!r}", EXIT_USAGE)
    try:
        return plan_load(p)
    except (PlanError, ValueError) as e:
        raise CLIError(f"{p}: {e}", EXIT_INVALID) from None


@dataclass
class RunManifest:
    """Everything needed to rerun an ``explore`` invocation."""
    model: str
    model_sha256: str
    model_fingerprint: str
    plan: str | None
    plan_sha256: str | None
    config: dict
    seed: int
    write_traces: bool
    tool_version: str
    outputs: dict = field(default_factory=dict)     # file name -> sha256
    started: str = ""
    finished: str = ""

    def to_json(self) -> str:
        return _dump_json(asdict(self))

    @classmethod
    def load(cls, path) -> "RunManifest":
        p = Path(path)
        if p.is_dir():
            p = p / MANIFEST
        if not p.is_file():
            raise CLIError(f"no manifest at {str(p)!r}", EXIT_USAGE)
        try:
            return cls(**json.loads(p.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, TypeError) as e:
            raise CLIError(f"{p}: malformed manifest ({e})", EXIT_USAGE) from None


# ---------------------------------------------------------------------------
# validate

def cmd_validate(args) -> int:
    p = Path(args.model)
    if not p.is_file():
        raise CLIError(f"cannot read model file {str(p)!r}", EXIT_USAGE)
    try:
        m = load_model(p, check=False)
    except ModelError as e:
        for d in e.diagnostics:
            _err(str(d))
        _err(f"{p}: {e}")
        return EXIT_INVALID
    diags = validate_model(m)
    for d in diags:
        _err(str(d))
    n_err = sum(1 for d in diags if d.severity == "error")
    n_warn = len(diags) - n_err
    print(f"{p}: model {m.name!r}: {n_err} error(s), {n_warn} warning(s)")
    return EXIT_INVALID if n_err else EXIT_OK


# ---------------------------------------------------------------------------
# plan

def cmd_plan(args) -> int:
    plan = _load_plan(args.plan)
    if args.model:
        problems = check_plan_against_model(plan, _load_model(args.model))
        for msg in problems:
            _err(msg)
        if problems:
            return EXIT_INVALID
    try:
        out = generate_plan(plan.fsm, plan.cf_matrix, args.max_len, base=plan)
    except PlanError as e:
        _err(str(e))
        return EXIT_INVALID
    for w in out.warnings:
        _err(f"warning: {w}")
    if args.out:
        plan_store(out, args.out)
    by_goal = {}
    for s in out.scenarios:
        by_goal[s.target] = by_goal.get(s.target, 0) + 1
    print(f"{len(out.scenarios)} scenario(s)"
          + "".join(f"; {g}: {by_goal.get(g, 0)}" for g in out.fsm.goals))
    if not args.out:
        for s in out.scenarios:
            print(f"  -> {s.target}: {' '.join(s.events) or '(empty)'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# explore

def _config_from_args(args) -> ExplorationConfig:
    if args.mode in ("guided", "targeted") and not args.plan:
        raise CLIError(f"--mode {args.mode} requires --plan", EXIT_USAGE)
    if args.mode == "targeted" and not args.target_event:
        raise CLIError("--mode targeted requires --target-event", EXIT_USAGE)
    if args.mode != "targeted" and args.target_event:
        raise CLIError("--target-event only applies to --mode targeted", EXIT_USAGE)
    if args.mode != "systematic" and args.n is None:
        raise CLIError(f"--mode {args.mode} requires --n", EXIT_USAGE)
    cfg = ExplorationConfig(mode=args.mode, p_lim=args.plim, n_sequences=args.n, alpha=args.alpha,
                            beta=args.beta, gamma=args.gamma, seed=args.seed, boost=args.boost,
                            target_event=args.target_event, workers=args.workers,
                            max_depth=args.max_depth)
    try:
        cfg.check()
    except ExplorationError as e:
        raise CLIError(str(e), EXIT_USAGE) from None
    return cfg


def _traces_csv(res) -> str:
    parts = []
    for i, s in enumerate(res.stories):
        text = sim.trace_to_csv(s.trace, story=s.index)
        parts.append(text if i == 0 else text.split("\n", 1)[1])
    return "".join(parts) or "story,time,kind,detail,prob\n"


def _run_explore(model_path, plan_path, cfg: ExplorationConfig, out_dir: Path, write_traces: bool):
    started = _now()
    model = _load_model(model_path)
    plan = None
    if plan_path:
        plan = _load_plan(plan_path)
        problems = check_plan_against_model(plan, model)
        if problems:
            for msg in problems:
                _err(msg)
            raise CLIError("plan does not match the model", EXIT_INVALID)
    try:
        res = explore(model, cfg, plan)
    except (ExplorationError, PlanError) as e:
        raise CLIError(str(e), EXIT_USAGE) from None
    out_dir.mkdir(parents=True, exist_ok=True)
    led = result_to_dict(res)["ledger"]
    files = {
        "estimates.csv": estimates_csv(res),
        "traces.csv": _traces_csv(res) if write_traces else "story,time,kind,detail,prob\n",
        "ledger.json": _dump_json(led),
        RESULT: _dump_json(result_to_dict(res)),
    }
    for name, text in files.items():
        (out_dir / name).write_text(text, encoding="utf-8")
    manifest = RunManifest(
        model=str(Path(model_path).resolve()), model_sha256=_sha256(model_path),
        model_fingerprint=model.fingerprint,
        plan=str(Path(plan_path).resolve()) if plan_path else None,
        plan_sha256=_sha256(plan_path) if plan_path else None,
        config=cfg.to_dict(), seed=cfg.seed, write_traces=write_traces, tool_version=__version__,
        outputs={n: hashlib.sha256(t.encode()).hexdigest() for n, t in files.items()},
        started=started, finished=_now())
    (out_dir / MANIFEST).write_text(manifest.to_json(), encoding="utf-8")
    return res


def cmd_explore(args) -> int:
    if args.from_manifest:
        man = RunManifest.load(args.from_manifest)
        for path, digest, what in ((man.model, man.model_sha256, "model"),
                                   (man.plan, man.plan_sha256, "plan")):
            if path is None:
                continue
            if not Path(path).is_file():
                raise CLIError(f"{what} file {path!r} from the manifest is missing", EXIT_USAGE)
            if _sha256(path) != digest:
                raise CLIError(f"{what} file {path!r} changed since the manifest was written",
                               EXIT_INVALID)
        cfg = ExplorationConfig(**man.config)
        if args.workers_given:
            cfg = ExplorationConfig(**dict(man.config, workers=args.workers))
        out_dir = Path(args.out_dir) if args.out_dir else Path(args.from_manifest)
        if out_dir.is_file():
            out_dir = out_dir.parent
        model_path, plan_path, write_traces = man.model, man.plan, man.write_traces
    else:
        if not args.model:
            raise CLIError("explore needs a model file or --from-manifest", EXIT_USAGE)
        cfg = _config_from_args(args)
        out_dir = Path(args.out_dir or "results")
        model_path, plan_path, write_traces = args.model, args.plan, not args.no_traces
    res = _run_explore(model_path, plan_path, cfg, out_dir, write_traces)
    print(f"{res.model_name}: {cfg.mode} exploration, {res.n} stories -> {out_dir}")
    for e, est in res.estimates.items():
        if cfg.mode == "systematic":
            print(f"  {e:<20} {est.estimate:.6g}")
        else:
            print(f"  {e:<20} {est.estimate:.6g}  [{est.ci_low:.6g}, {est.ci_high:.6g}]")
    print(f"  truncated mass {res.ledger.mass:.6g} ({res.ledger.count} paths)")
    for n in res.notes:
        _err(f"note: {n}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report

def _load_criteria(path) -> AcceptanceCriteria:
    p = Path(path)
    if not p.is_file():
        raise CLIError(f"cannot read criteria file {str(p)!r}", EXIT_USAGE)
    try:
        return AcceptanceCriteria.from_dict(json.loads(p.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, RiskError, AttributeError) as e:
        raise CLIError(f"{p}: bad criteria ({e})", EXIT_USAGE) from None


def _verdict_code(verdicts: dict) -> int:
    vals = set(verdicts.values())
    if REJECT in vals:
        return EXIT_REJECT
    if INDETERMINATE in vals:
        return EXIT_INDETERMINATE
    return EXIT_OK


def cmd_report(args) -> int:
    d = Path(args.results_dir)
    RunManifest.load(d)
    rp = d / RESULT
    if not rp.is_file():
        raise CLIError(f"{str(d)!r} has a manifest but no {RESULT}", EXIT_USAGE)
    res = result_from_dict(json.loads(rp.read_text(encoding="utf-8")))
    crit = _load_criteria(args.criteria) if args.criteria else None
    try:
        rep = assess(res, k=args.top_k, criteria=crit)
    except RiskError as e:
        raise CLIError(str(e), EXIT_USAGE) from None
    sys.stdout.write(rep.render())
    if crit is None:
        return EXIT_OK
    try:
        verdicts = check_acceptance(rep, crit)
    except RiskError as e:
        raise CLIError(str(e), EXIT_USAGE) from None
    print("")
    print("acceptance:")
    for c, v in verdicts.items():
        thr = crit.thresholds[c]
        print(f"  {c:<20} {v:<14} threshold {'no limit' if thr is None else format(thr, '.6g')}")
    return _verdict_code(verdicts)


# ---------------------------------------------------------------------------
# compare

def _compare_config(path):
    if path is None:
        from .satellite import compare_config_path
        path = compare_config_path()
    p = Path(str(path))
    if not p.is_file():
        raise CLIError(f"cannot read compare config {str(p)!r}", EXIT_USAGE)
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CLIError(f"{p}: {e}", EXIT_USAGE) from None
    alts = cfg.get("alternatives") or []
    if len(alts) < 2:
        raise CLIError("compare needs at least two alternatives", EXIT_USAGE)
    if "criterion" not in cfg:
        raise CLIError("compare config needs a 'criterion' class", EXIT_USAGE)
    return p.parent, cfg


def cmd_compare(args) -> int:
    base, cfg = _compare_config(args.config)
    mode = args.mode or cfg.get("mode", "systematic")
    gcfg = cfg.get("guided", {})
    reports = {}
    for alt in cfg["alternatives"]:
        name = alt["name"]
        model = _load_model(base / alt["model"])
        plan = _load_plan(base / alt["plan"]) if alt.get("plan") else None
        if mode == "systematic":
            ecfg = ExplorationConfig(mode="systematic", p_lim=cfg.get("p_lim", 0.0),
                                     seed=args.seed if args.seed is not None else 0,
                                     keep_traces=False, workers=args.workers)
        else:
            if plan is None:
                raise CLIError(f"alternative {name!r} has no plan for guided comparison", EXIT_USAGE)
            ecfg = ExplorationConfig(mode="guided", n_sequences=gcfg.get("n_sequences", 5000),
                                     seed=args.seed if args.seed is not None else gcfg.get("seed", 0),
                                     keep_traces=False, workers=args.workers)
        try:
            res = explore(model, ecfg, plan)
        except (ExplorationError, PlanError) as e:
            raise CLIError(f"{name}: {e}", EXIT_USAGE) from None
        reports[name] = assess(res, k=0)
    try:
        changes = {n: [DesignChangeRecord(**c) for c in cs]
                   for n, cs in cfg.get("changes", {}).items()}
        cmp_ = compare_designs(reports, cfg["criterion"], cfg.get("secondary", []), changes)
    except (RiskError, TypeError) as e:
        raise CLIError(str(e), EXIT_USAGE) from None
    sys.stdout.write(cmp_.render())
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpra", description="Dynamic probabilistic risk assessment.")
    ap.add_argument("--version", action="version", version=f"dpra {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a model file")
    p.add_argument("model")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("plan", help="generate plan scenarios from the abstract FSM")
    p.add_argument("plan")
    p.add_argument("--max-len", type=int, default=6)
    p.add_argument("--out")
    p.add_argument("--model", help="also check the plan against this model")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("explore", help="explore a model and write results")
    p.add_argument("model", nargs="?")
    p.add_argument("--mode", choices=["systematic", "guided", "targeted"], default="systematic")
    p.add_argument("--plan")
    p.add_argument("--plim", type=float, default=0.0)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--boost", type=float, default=10.0)
    p.add_argument("--target-event")
    p.add_argument("--max-depth", type=int, default=10_000)
    p.add_argument("--workers", type=int)
    p.add_argument("--no-traces", action="store_true", help="write traces.csv with a header only")
    p.add_argument("--out-dir")
    p.add_argument("--from-manifest", help="rerun from a manifest file or results directory")
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("report", help="risk report and acceptance verdicts")
    p.add_argument("results_dir")
    p.add_argument("--criteria")
    p.add_argument("--top-k", type=int, default=5)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("compare", help="compare design alternatives")
    p.add_argument("config", nargs="?", help="compare config (default: bundled satellite study)")
    p.add_argument("--mode", choices=["systematic", "guided"])
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    if args.command == "explore":
        args.workers_given = args.workers is not None
        if args.workers is None:
            args.workers = 1
        if args.workers < 1:
            _err("--workers must be positive")
            return EXIT_USAGE
    try:
        return args.func(args)
    except CLIError as e:
        _err(str(e))
        return e.code


if __name__ == "__main__":
    sys.exit(main())
