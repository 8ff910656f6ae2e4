"""Command line scenario runner.

Exit codes: 0 success, 1 I/O or parse error, 2 policy validation errors,
3 infeasible placement, 4 query denied (``rewrite`` only).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .access_control import (
    ActionRule,
    LogEntry,
    PrivatePatternSignature,
    load_action_rules,
    restricted_nodes,
    rewrite_query,
)
from .adversary import (
    DEFAULT_CANDIDATES,
    THREATS,
    Metric,
    compute_put,
    detect_pattern_from_sanitized,
    select_ppm,
)
from .cep import CountSeries, SequencePattern, count_pattern_completions, evaluate_query
from .dp import (
    TAPER_MODES,
    ScheduleConfig,
    allocate_budget,
    exact,
    sanitize_many,
    write_schedule_csv,
)
from .events import DEFAULT_SLOT_SECONDS, EventStream, StreamSchema, Timestamp, read_events_jsonl, write_events_jsonl
from .exceptions import NoFeasiblePlacement, PrispsError, UnsupportedQueryShape
from .placement import Placement, Topology, build_operator_graph, load_topology, place_operators
from .policy import (
    Context,
    PpmCustomization,
    PrivacyPolicy,
    ScenarioConfig,
    derive_ppm_config,
    evaluate_policy,
    has_errors,
    load_policy,
    validate_policy,
)
from .query import QueryAst, parse_query, print_query
from .rng import derive

log = logging.getLogger("prisps")

EXIT_OK, EXIT_IO, EXIT_POLICY, EXIT_PLACEMENT, EXIT_DENIED = 0, 1, 2, 3, 4

METRIC_COLUMNS = ("query", "ppm_id", "epsilon", "privacy_metric", "count_mae", "public_event_accuracy", "latency_ms")

PIPELINE = ("policy", "rewrite", "place", "evaluate", "sanitize", "report")


@dataclass
class Scenario:
    events: Path
    topology: Path
    policy: Path
    queries: list[Path]
    seed: int
    out_dir: Path | None = None
    action_rules: Path | None = None
    epsilon_sweep: list[float] = field(default_factory=lambda: [0.1, 1.0, 10.0])
    taper_mode: str = "table"
    w: int = 3
    sensitivity: float = 1
    horizon: int | None = None
    slot_seconds: float = DEFAULT_SLOT_SECONDS
    trials: int = 10_000
    occurrence_windows: dict = field(default_factory=dict)
    context: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> Scenario:
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        base = path.parent

        def rel(p):
            return None if p is None else (base / p)

        if "seed" not in data:
            raise ValueError("scenario must set a seed")
        return cls(
            events=rel(data["events"]),
            topology=rel(data["topology"]),
            policy=rel(data["policy"]),
            queries=[rel(q) for q in data["queries"]],
            seed=int(data["seed"]),
            out_dir=rel(data.get("out_dir")),
            action_rules=rel(data.get("action_rules")),
            epsilon_sweep=[float(e) for e in data.get("epsilon_sweep", [0.1, 1.0, 10.0])],
            taper_mode=data.get("taper_mode", "table"),
            w=int(data.get("w", 3)),
            sensitivity=data.get("sensitivity", 1),
            horizon=data.get("horizon"),
            slot_seconds=float(data.get("slot_seconds", DEFAULT_SLOT_SECONDS)),
            trials=int(data.get("trials", 10_000)),
            occurrence_windows={k: [tuple(w) for w in v] for k, v in data.get("occurrence_windows", {}).items()},
            context=data.get("context", {}),
        )

    def check_files(self):
        for p in [self.events, self.topology, self.policy, *self.queries, self.action_rules]:
            if p is not None and not Path(p).is_file():
                raise FileNotFoundError(f"scenario file not found: {p}")


def _fmt(value) -> str:
    if value is None or value == "":
        return ""
    if isinstance(value, str):
        return value
    return f"{float(value):.6f}"


def _context(data: dict) -> Context:
    return Context(
        str(data.get("location", "")),
        Timestamp(int(data.get("day", 1)), int(data.get("slot", 1))),
        str(data.get("peer", "")),
    )


def _schemas(queries: Sequence[QueryAst]) -> dict[str, StreamSchema]:
    schemas: dict[str, StreamSchema] = {}
    for q in queries:
        for s in q.stream_defs:
            schemas.setdefault(s.name, s)
    return schemas


def _target_slot(series: CountSeries, intervals) -> int | None:
    """Slot at which the adversary tests for the pattern: first defined slot in a relevance interval."""
    defined = [t for t, _ in series.defined()]
    for start, end in intervals:
        for t in range(start, end + 1):
            if t in defined:
                return t
    return defined[0] if defined else None


def _neighbour(series: CountSeries, slot: int) -> CountSeries:
    values = list(series.values)
    values[slot - 1] += 1
    return CountSeries(tuple(values), series.n_days, series.pattern)


def _dp_rows(qname, series, cust: PpmCustomization, scenario: Scenario, eps_list, latency, q_index):
    rows, reports = [], []
    base = cust.schedule
    target = _target_slot(series, base.relevance_intervals)
    for e_index, eps in enumerate(eps_list):
        config = ScheduleConfig(eps, base.w, base.sensitivity, base.relevance_intervals, base.n_days, base.taper_mode)
        schedule = allocate_budget(config, len(series))
        if target is None:
            advantage = 1.0
        else:
            advantage = detect_pattern_from_sanitized(
                _neighbour(series, target), series, schedule, scenario.trials, derive(scenario.seed, q_index, e_index, 0)
            )
        releases = sanitize_many(series, schedule, derive(scenario.seed, q_index, e_index, 1), scenario.trials)
        report = compute_put(
            "dp_relevance_interval",
            series,
            releases,
            Metric("attacker_advantage", advantage),
            latency,
            {"query": qname, "epsilon": float(eps), "taper_mode": base.taper_mode, "w": base.w},
        )
        reports.append(report)
        rows.append(_row(qname, report, eps))
    return rows, reports


def _row(qname, report, eps=None) -> dict:
    return {
        "query": qname,
        "ppm_id": report.ppm_id,
        "epsilon": eps,
        "privacy_metric": report.privacy_metric.value,
        "count_mae": report.utility("count_mae"),
        "public_event_accuracy": report.utility("public_event_accuracy"),
        "latency_ms": report.utility("latency_ms"),
    }


def run_scenario(
    scenario: Scenario,
    out_dir=None,
    seed: int | None = None,
    taper_mode: str | None = None,
    epsilons: Sequence[float] | None = None,
) -> int:
    """Execute the full pipeline and write all artifacts to ``out_dir``."""
    stages: list[str] = []
    if seed is not None:
        scenario.seed = seed
    if taper_mode is not None:
        scenario.taper_mode = taper_mode
    if epsilons is not None:
        scenario.epsilon_sweep = list(epsilons)
    out = Path(out_dir or scenario.out_dir or "prisps-out")

    try:
        scenario.check_files()
        policy = load_policy(scenario.policy)
        topo = load_topology(scenario.topology)
        queries = {q.stem: parse_query(q.read_text(encoding="utf-8")) for q in scenario.queries}
        schemas = _schemas(list(queries.values()))
        streams = read_events_jsonl(scenario.events, schemas)
        extra_rules = load_action_rules(scenario.action_rules) if scenario.action_rules else []
    except (OSError, ValueError, KeyError, PrispsError) as exc:
        log.error("could not load scenario: %s", exc)
        return EXIT_IO

    # policy -> PPM customisation
    stages.append("policy")
    signatures = {s.id: s for s in policy.signatures}
    horizon = scenario.horizon or max((s.slots_per_day for s in streams.values()), default=0)
    n_days = max((len(s.days) for s in streams.values()), default=1) or 1
    attributes = frozenset(f for s in schemas.values() for f, _ in s.fields)
    scen_cfg = ScenarioConfig(
        signatures=signatures,
        occurrence_windows=scenario.occurrence_windows,
        nodes=frozenset(topo.by_id),
        attributes=attributes,
        w=scenario.w,
        sensitivity=scenario.sensitivity,
        n_days=n_days,
        taper_mode=scenario.taper_mode,
    )
    diagnostics = validate_policy(policy, scen_cfg)
    for d in diagnostics:
        (log.error if d.severity == "error" else log.warning)("policy %s: %s", d.code, d.message)
    if has_errors(diagnostics):
        return EXIT_POLICY
    try:
        effective = evaluate_policy(policy, _context(scenario.context))
        cust = derive_ppm_config(effective, scen_cfg)
    except PrispsError as exc:
        log.error("policy customisation failed: %s", exc)
        return EXIT_POLICY
    rules: list[ActionRule] = list(cust.action_rules) + list(extra_rules)

    out.mkdir(parents=True, exist_ok=True)
    (out / "rewritten-queries").mkdir(exist_ok=True)

    # entry point: rewrite every query before anything else touches it
    stages.append("rewrite")
    rewritten: dict[str, QueryAst | None] = {}
    rewrite_log: dict[str, list[LogEntry]] = {}
    try:
        for name, ast in queries.items():
            new_ast, entries = rewrite_query(ast, rules, list(signatures.values()), scenario.slot_seconds)
            rewritten[name], rewrite_log[name] = new_ast, entries
            text = print_query(new_ast) if new_ast is not None else f"-- DENIED by rule {entries[0].rule_id}\n"
            (out / "rewritten-queries" / f"{name}.txt").write_text(text, encoding="utf-8")
    except PrispsError as exc:
        log.error("query rewriting failed: %s", exc)
        return EXIT_POLICY

    stages.append("place")
    placements: dict[str, dict] = {}
    latencies: dict[str, tuple[float, float]] = {}
    for name, ast in rewritten.items():
        if ast is None:
            continue
        try:
            graph = build_operator_graph(ast)
            baseline = place_operators(graph, topo, trusted_only=False, sink_node=topo.consumer_node)
            allowed = cust.trusted_nodes
            annotated = restricted_nodes(ast)
            if annotated is not None:
                allowed = frozenset(annotated) if allowed is None else allowed & frozenset(annotated)
            constrained = place_operators(graph, topo, trusted_only=allowed is not None, allowed_nodes=allowed)
        except (NoFeasiblePlacement, UnsupportedQueryShape) as exc:
            log.error("placement of %s failed: %s", name, exc)
            return EXIT_PLACEMENT
        placements[name] = {"placement": constrained.to_dict(), "baseline": baseline.to_dict()}
        latencies[name] = (baseline.total_latency_ms, constrained.total_latency_ms)
        exposure = _exposure(constrained, topo)
        placements[name]["untrusted_exposure"] = exposure

    stages.append("evaluate")
    series_by_query: dict[str, CountSeries] = {}
    for name, ast in rewritten.items():
        source = queries[name]
        derived = evaluate_query(source, streams, scenario.slot_seconds)
        write_events_jsonl(out / f"derived-{name}.jsonl", [derived])
        stream = streams[source.bindings[0].stream]
        pattern = SequencePattern.from_query(source, scenario.slot_seconds)
        series_by_query[name] = count_pattern_completions(stream, pattern, horizon, n_days)

    stages.append("sanitize")
    if cust.schedule is not None:
        write_schedule_csv(allocate_budget(cust.schedule, horizon), out / "schedule.csv")
    else:
        write_schedule_csv(allocate_budget(ScheduleConfig(1, scenario.w, 1, (), n_days, scenario.taper_mode), horizon),
                           out / "schedule.csv")

    rows, reports = [], []
    for q_index, (name, series) in enumerate(series_by_query.items()):
        ast = rewritten[name]
        base_latency, constrained_latency = latencies.get(name, (0.0, 0.0))
        none = compute_put("none", series, [series.values], Metric("attacker_advantage", 1.0), base_latency,
                           {"query": name})
        reports.append(none)
        rows.append(_row(name, none))
        if ast is None:
            denied = compute_put("ac_deny", series, [series.values], Metric("consumer_inference", 0.0), 0.0,
                                 {"query": name, "rule": rewrite_log[name][0].rule_id})
            reports.append(denied)
            rows.append(_row(name, denied))
            continue
        if ast.sink_publisher is not None and ast.sink_publisher != queries[name].sink_publisher:
            # the consumer receives nothing; the publisher sees exact results
            rewrite = compute_put("ac_query_rewrite", series, [series.values], Metric("consumer_inference", 0.0),
                                  constrained_latency, {"query": name, "publisher": ast.sink_publisher})
            reports.append(rewrite)
            rows.append(_row(name, rewrite))
        if cust.trusted_nodes is not None or restricted_nodes(ast) is not None:
            placed = compute_put("trusted_placement", series, [series.values],
                                 Metric("untrusted_exposure", placements[name]["untrusted_exposure"]),
                                 constrained_latency, {"query": name})
            reports.append(placed)
            rows.append(_row(name, placed))
        if cust.schedule is not None:
            latency = constrained_latency if cust.trusted_nodes is not None else base_latency
            dp_rows, dp_reports = _dp_rows(name, series, cust, scenario, scenario.epsilon_sweep, latency, q_index)
            rows.extend(dp_rows)
            reports.extend(dp_reports)

    stages.append("report")
    assert list(stages) == list(PIPELINE), stages
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([row["query"], row["ppm_id"]] + [_fmt(row[c]) for c in METRIC_COLUMNS[2:]])
    with open(out / "placement.json", "w", encoding="utf-8") as fh:
        json.dump(placements, fh, indent=2, sort_keys=True)
        fh.write("\n")

    ranking = {}
    for threat in THREATS:
        ranked = select_ppm(DEFAULT_CANDIDATES, {"privacy_guarantees": 1, "utility": 1, "runtime": 1}, threat)
        ranking[threat] = [c.id for c in ranked]
    report = {
        "seed": scenario.seed,
        "pipeline": stages,
        "diagnostics": [d.__dict__ for d in diagnostics],
        "rewrite_log": {k: [e.__dict__ for e in v] for k, v in rewrite_log.items()},
        "reports": [r.to_dict() for r in reports],
        "ppm_ranking": ranking,
    }
    with open(out / "put_report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    log.info("pipeline %s complete; artifacts in %s", " -> ".join(stages), out)
    return EXIT_OK


def _exposure(placement: Placement, topo: Topology) -> float:
    free = placement.nodes[1:-1]
    if not free:
        return 0.0
    return sum(1 for n in free if not topo.by_id[n].trusted) / len(free)


# ---------------------------------------------------------------- subcommands


def _eps_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid epsilon list {text!r}") from None
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("epsilons must be positive")
    return values


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _cmd_run(args) -> int:
    try:
        scenario = Scenario.load(args.scenario)
    except (OSError, ValueError, KeyError) as exc:
        log.error("could not read scenario: %s", exc)
        return EXIT_IO
    return run_scenario(scenario, args.out, args.seed, args.taper, args.eps)


def _rules_from(policy: PrivacyPolicy, context: dict, extra: Path | None):
    sigs = {s.id: s for s in policy.signatures}
    effective = evaluate_policy(policy, _context(context))
    cfg = ScenarioConfig(signatures=sigs, occurrence_windows={s: ((1, 1),) for s in sigs})
    cust = derive_ppm_config(effective, cfg)
    rules = list(cust.action_rules) + (load_action_rules(extra) if extra else [])
    return rules, list(sigs.values()), cust


def _cmd_rewrite(args) -> int:
    try:
        ast = parse_query(Path(args.query).read_text(encoding="utf-8"))
        policy = load_policy(args.policy)
        rules, sigs, _ = _rules_from(policy, {}, args.rules)
        new_ast, entries = rewrite_query(ast, rules, sigs)
    except (OSError, ValueError, KeyError, PrispsError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    for e in entries:
        log.info("applied %s (%s) on %s: %s", e.rule_id, e.action, e.signature_id, e.detail)
    if new_ast is None:
        sys.stdout.write(f"-- DENIED by rule {entries[0].rule_id}\n")
        return EXIT_DENIED
    sys.stdout.write(print_query(new_ast))
    return EXIT_OK


def _cmd_sanitize(args) -> int:
    try:
        ast = parse_query(Path(args.query).read_text(encoding="utf-8"))
        streams = read_events_jsonl(args.events, _schemas([ast]))
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
        stream = streams[ast.bindings[0].stream]
        horizon = int(cfg.get("horizon") or stream.slots_per_day)
        pattern = SequencePattern.from_query(ast, float(cfg.get("slot_seconds", DEFAULT_SLOT_SECONDS)))
        series = count_pattern_completions(stream, pattern, horizon)
        config = ScheduleConfig(
            exact(cfg["epsilon"]),
            int(cfg.get("w", 3)),
            cfg.get("sensitivity", 1),
            tuple(tuple(i) for i in cfg.get("relevance_intervals", ())),
            int(cfg.get("n_days", len(stream.days) or 1)),
            cfg.get("taper_mode", "table"),
        )
        schedule = allocate_budget(config, horizon)
    except (OSError, ValueError, KeyError, PrispsError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    released = sanitize_many(series, schedule, np.random.default_rng(args.seed), 1)[0]
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["slot", "count", "sanitized"])
    for t, (q, m) in enumerate(zip(series.values, released), 1):
        writer.writerow([t, "" if q is None else q, "" if q is None else _fmt(m)])
    return EXIT_OK


def _cmd_place(args) -> int:
    try:
        ast = parse_query(Path(args.query).read_text(encoding="utf-8"))
        topo = load_topology(args.topology)
        allowed = None
        if args.policy:
            policy = load_policy(args.policy)
            rules, sigs, cust = _rules_from(policy, {}, None)
            ast, _ = rewrite_query(ast, rules, sigs)
            if ast is None:
                log.error("query denied by policy")
                return EXIT_DENIED
            if args.trusted_only:
                allowed = cust.trusted_nodes
        # a RestrictNodes rewrite binds regardless of --trusted-only
        annotated = restricted_nodes(ast)
        if annotated is not None:
            allowed = frozenset(annotated) if allowed is None else allowed & frozenset(annotated)
        placement = place_operators(build_operator_graph(ast), topo, args.trusted_only, allowed)
    except (NoFeasiblePlacement, UnsupportedQueryShape) as exc:
        log.error("%s", exc)
        return EXIT_PLACEMENT
    except (OSError, ValueError, KeyError, PrispsError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    text = json.dumps(placement.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_fixture(args) -> int:
    from .fixtures import generate_bob_fixture

    generate_bob_fixture(args.dir)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prisps", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a full scenario")
    run.add_argument("--scenario", required=True, type=Path)
    run.add_argument("--seed", type=_seed, default=None, help="overrides the scenario seed")
    run.add_argument("--out", type=Path, default=None)
    run.add_argument("--taper", choices=TAPER_MODES, default=None)
    run.add_argument("--eps", type=_eps_list, default=None, help="comma separated epsilon sweep")
    run.set_defaults(func=_cmd_run)

    rw = sub.add_parser("rewrite", help="rewrite one query under a policy")
    rw.add_argument("query", type=Path)
    rw.add_argument("--policy", required=True, type=Path)
    rw.add_argument("--rules", type=Path, default=None, help="additional action rules (JSON)")
    rw.set_defaults(func=_cmd_rewrite)

    sz = sub.add_parser("sanitize", help="sanitize the count series of a query")
    sz.add_argument("events", type=Path)
    sz.add_argument("--query", required=True, type=Path)
    sz.add_argument("--config", required=True, type=Path)
    sz.add_argument("--seed", type=_seed, required=True)
    sz.set_defaults(func=_cmd_sanitize)

    pl = sub.add_parser("place", help="place the operators of one query")
    pl.add_argument("query", type=Path)
    pl.add_argument("--topology", required=True, type=Path)
    pl.add_argument("--policy", type=Path, default=None)
    pl.add_argument("--trusted-only", action=argparse.BooleanOptionalAction, default=False)
    pl.add_argument("--out", type=Path, default=None)
    pl.set_defaults(func=_cmd_place)

    fx = sub.add_parser("fixture", help="write the bundled bob scenario")
    fx.add_argument("dir", type=Path)
    fx.set_defaults(func=_cmd_fixture)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("PRISPS_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
