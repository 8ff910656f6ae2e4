"""User privacy policies and their translation into PPM settings.

A policy holds static rules (what to protect and how strongly) and dynamic
rules that override a static rule when the user's context matches.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence, Union

from .access_control import ActionRule, PrivatePatternSignature, RewriteSink
from .dp import EPSILON_SWEEP, ScheduleConfig, epsilon_from_knob
from .events import Timestamp
from .exceptions import UnknownNode, UnknownPattern
from .query.ast import COMPARISON_OPS, Comparison

CONTEXT_FIELDS = ("location", "peer", "day", "slot")


@dataclass(frozen=True)
class ConcealAttribute:
    name: str


@dataclass(frozen=True)
class ProtectPattern:
    signature: str


@dataclass(frozen=True)
class RestrictSink:
    pattern: str
    publisher: str


@dataclass(frozen=True)
class TrustNodes:
    nodes: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))


Trigger = Union[ConcealAttribute, ProtectPattern, RestrictSink, TrustNodes]


@dataclass(frozen=True)
class StaticRule:
    id: str
    trigger: Trigger
    put_knob: float = 0.5  # 0 = maximal privacy, 1 = maximal utility

    def __post_init__(self):
        if not 0 <= self.put_knob <= 1:
            raise ValueError(f"rule {self.id}: put_knob must lie in [0, 1]")


class _Suspend:
    def __repr__(self):
        return "SUSPEND"


SUSPEND = _Suspend()


@dataclass(frozen=True)
class DynamicRule:
    id: str
    context_predicate: tuple[Comparison, ...]
    overrides: str
    replacement: StaticRule | _Suspend = SUSPEND

    def __post_init__(self):
        object.__setattr__(self, "context_predicate", tuple(self.context_predicate))
        for c in self.context_predicate:
            if c.field not in CONTEXT_FIELDS:
                raise ValueError(f"dynamic rule {self.id}: unknown context field {c.field!r}")
            if c.op not in COMPARISON_OPS:
                raise ValueError(f"dynamic rule {self.id}: unknown operator {c.op!r}")


@dataclass(frozen=True)
class Context:
    location: str
    time: Timestamp
    peer: str = ""

    def get(self, name: str):
        if name == "day":
            return self.time.day
        if name == "slot":
            return self.time.slot
        return getattr(self, name)


@dataclass(frozen=True)
class PrivacyPolicy:
    user: str
    static_rules: tuple[StaticRule, ...] = ()
    dynamic_rules: tuple[DynamicRule, ...] = ()
    purpose_statements: tuple[str, ...] = ()
    signatures: tuple[PrivatePatternSignature, ...] = ()

    def __post_init__(self):
        for name in ("static_rules", "dynamic_rules", "purpose_statements", "signatures"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def signature(self, sig_id: str) -> PrivatePatternSignature | None:
        return next((s for s in self.signatures if s.id == sig_id), None)


# ---------------------------------------------------------------- JSON I/O


def _trigger_from_dict(data: dict) -> Trigger:
    kind = data["type"]
    if kind == "ConcealAttribute":
        return ConcealAttribute(data["name"])
    if kind == "ProtectPattern":
        return ProtectPattern(data["signature"])
    if kind == "RestrictSink":
        return RestrictSink(data["pattern"], data["publisher"])
    if kind == "TrustNodes":
        return TrustNodes(tuple(data["nodes"]))
    raise ValueError(f"unknown trigger type {kind!r}")


def _trigger_to_dict(trigger: Trigger) -> dict:
    if isinstance(trigger, ConcealAttribute):
        return {"type": "ConcealAttribute", "name": trigger.name}
    if isinstance(trigger, ProtectPattern):
        return {"type": "ProtectPattern", "signature": trigger.signature}
    if isinstance(trigger, RestrictSink):
        return {"type": "RestrictSink", "pattern": trigger.pattern, "publisher": trigger.publisher}
    return {"type": "TrustNodes", "nodes": list(trigger.nodes)}


def _static_from_dict(data: dict, rule_id: str | None = None) -> StaticRule:
    return StaticRule(rule_id or data["id"], _trigger_from_dict(data["trigger"]), float(data.get("put_knob", 0.5)))


def policy_from_dict(data: Mapping) -> PrivacyPolicy:
    static = tuple(_static_from_dict(r) for r in data.get("static_rules", ()))
    dynamic = []
    for r in data.get("dynamic_rules", ()):
        when = tuple(Comparison(c["field"], c["op"], c["value"]) for c in r.get("when", ()))
        repl = r.get("replacement", "Suspend")
        replacement = SUSPEND if repl == "Suspend" else _static_from_dict(repl, rule_id=r["overrides"])
        dynamic.append(DynamicRule(r["id"], when, r["overrides"], replacement))
    return PrivacyPolicy(
        str(data.get("user", "")),
        static,
        tuple(dynamic),
        tuple(data.get("purpose_statements", ())),
        tuple(PrivatePatternSignature.from_dict(s) for s in data.get("signatures", ())),
    )


def policy_to_dict(policy: PrivacyPolicy) -> dict:
    def static(rule: StaticRule, with_id=True) -> dict:
        out = {"id": rule.id} if with_id else {}
        out.update({"trigger": _trigger_to_dict(rule.trigger), "put_knob": rule.put_knob})
        return out

    return {
        "user": policy.user,
        "purpose_statements": list(policy.purpose_statements),
        "signatures": [s.to_dict() for s in policy.signatures],
        "static_rules": [static(r) for r in policy.static_rules],
        "dynamic_rules": [
            {
                "id": d.id,
                "when": [{"field": c.field, "op": c.op, "value": c.value} for c in d.context_predicate],
                "overrides": d.overrides,
                "replacement": "Suspend" if d.replacement is SUSPEND else static(d.replacement, with_id=False),
            }
            for d in policy.dynamic_rules
        ],
    }


def load_policy(path) -> PrivacyPolicy:
    with open(path, encoding="utf-8") as fh:
        return policy_from_dict(json.load(fh))


# ---------------------------------------------------------------- evaluation


def context_matches(predicate: Sequence[Comparison], ctx: Context) -> bool:
    return all(c.evaluate(ctx.get(c.field)) for c in predicate)


def evaluate_policy(policy: PrivacyPolicy, ctx: Context) -> list[StaticRule]:
    """Static rules in effect under ``ctx``, in static declaration order.

    The first dynamic rule (declaration order) whose context predicate holds
    decides the fate of the static rule it overrides.
    """
    effective = []
    for rule in policy.static_rules:
        override = next(
            (d for d in policy.dynamic_rules if d.overrides == rule.id and context_matches(d.context_predicate, ctx)),
            None,
        )
        if override is None:
            effective.append(rule)
        elif override.replacement is not SUSPEND:
            effective.append(override.replacement)
    return effective


@dataclass(frozen=True)
class ScenarioConfig:
    """What the deployment knows when customizing PPMs for one user."""

    signatures: Mapping[str, PrivatePatternSignature] = field(default_factory=dict)
    occurrence_windows: Mapping[str, tuple[tuple[int, int], ...]] = field(default_factory=dict)
    nodes: frozenset[str] | None = None
    attributes: frozenset[str] | None = None
    epsilon_sweep: tuple[float, float] = EPSILON_SWEEP
    w: int = 3
    sensitivity: float = 1
    n_days: int = 1
    taper_mode: str = "table"


@dataclass(frozen=True)
class PpmCustomization:
    schedule: ScheduleConfig | None = None
    action_rules: tuple[ActionRule, ...] = ()
    trusted_nodes: frozenset[str] | None = None
    concealed_attributes: Mapping[str, float] = field(default_factory=dict)
    protected_patterns: tuple[str, ...] = ()

    @property
    def relevance_intervals(self) -> tuple[tuple[int, int], ...]:
        return () if self.schedule is None else self.schedule.relevance_intervals

    @property
    def epsilon(self) -> Fraction | None:
        return None if self.schedule is None else self.schedule.epsilon

    def is_empty(self) -> bool:
        return (
            self.schedule is None
            and not self.action_rules
            and self.trusted_nodes is None
            and not self.concealed_attributes
        )


def _merge_intervals(intervals) -> tuple[tuple[int, int], ...]:
    merged: list[list[int]] = []
    for start, end in sorted(intervals):
        if merged and start <= merged[-1][1] + 1:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return tuple((a, b) for a, b in merged)


def derive_ppm_config(rules: Sequence[StaticRule], scenario: ScenarioConfig) -> PpmCustomization:
    """Translate context-resolved rules into settings for each PPM."""
    intervals, epsilons, protected = [], [], []
    action_rules, trusted, concealed = [], None, {}
    for rule in rules:
        trig = rule.trigger
        if isinstance(trig, ProtectPattern):
            if trig.signature not in scenario.signatures:
                raise UnknownPattern(f"rule {rule.id}: unknown pattern {trig.signature!r}")
            windows = scenario.occurrence_windows.get(trig.signature)
            if not windows:
                raise UnknownPattern(f"rule {rule.id}: no occurrence window configured for {trig.signature!r}")
            intervals.extend(windows)
            epsilons.append(epsilon_from_knob(rule.put_knob, scenario.epsilon_sweep))
            protected.append(trig.signature)
        elif isinstance(trig, RestrictSink):
            if trig.pattern not in scenario.signatures:
                raise UnknownPattern(f"rule {rule.id}: unknown pattern {trig.pattern!r}")
            action_rules.append(ActionRule(f"{rule.id}/sink", trig.pattern, RewriteSink(trig.publisher), rule.id))
        elif isinstance(trig, TrustNodes):
            if scenario.nodes is not None:
                missing = sorted(set(trig.nodes) - scenario.nodes)
                if missing:
                    raise UnknownNode(f"rule {rule.id}: unknown nodes {missing}")
            trusted = (trusted or frozenset()) | frozenset(trig.nodes)
        elif isinstance(trig, ConcealAttribute):
            # knob 0 asks for full moment alignment, knob 1 for none
            concealed[trig.name] = max(concealed.get(trig.name, 0.0), 1.0 - rule.put_knob)

    schedule = None
    if intervals:
        schedule = ScheduleConfig(
            min(epsilons),
            scenario.w,
            scenario.sensitivity,
            _merge_intervals(intervals),
            scenario.n_days,
            scenario.taper_mode,
        )
    return PpmCustomization(schedule, tuple(action_rules), trusted, concealed, tuple(dict.fromkeys(protected)))


@dataclass(frozen=True)
class Diagnostic:
    code: str
    severity: str  # "error" | "warning"
    message: str
    rule_id: str | None = None


def validate_policy(
    policy: PrivacyPolicy,
    scenario: ScenarioConfig | None = None,
    obfuscator_enabled: bool = False,
) -> list[Diagnostic]:
    """Static checks on a policy; never raises."""
    out: list[Diagnostic] = []
    ids = [r.id for r in policy.static_rules] + [d.id for d in policy.dynamic_rules]
    for rid in sorted({i for i in ids if ids.count(i) > 1}):
        out.append(Diagnostic("DuplicateId", "error", f"rule id {rid!r} is used more than once", rid))

    static_ids = {r.id for r in policy.static_rules}
    for d in policy.dynamic_rules:
        if d.overrides not in static_ids:
            out.append(Diagnostic("DanglingOverride", "error", f"overrides unknown static rule {d.overrides!r}", d.id))

    patterns = {s.id for s in policy.signatures}
    if scenario is not None:
        patterns |= set(scenario.signatures)
    rules = list(policy.static_rules) + [d.replacement for d in policy.dynamic_rules if d.replacement is not SUSPEND]
    for rule in rules:
        trig = rule.trigger
        if isinstance(trig, (ProtectPattern, RestrictSink)):
            name = trig.signature if isinstance(trig, ProtectPattern) else trig.pattern
            if name not in patterns:
                out.append(Diagnostic("UnknownPattern", "error", f"unknown pattern {name!r}", rule.id))
        elif isinstance(trig, TrustNodes) and scenario is not None and scenario.nodes is not None:
            for node in trig.nodes:
                if node not in scenario.nodes:
                    out.append(Diagnostic("UnknownNode", "error", f"unknown node {node!r}", rule.id))
        elif isinstance(trig, ConcealAttribute):
            if scenario is not None and scenario.attributes is not None and trig.name not in scenario.attributes:
                out.append(Diagnostic("UnknownAttribute", "error", f"unknown attribute {trig.name!r}", rule.id))
            if not obfuscator_enabled:
                out.append(
                    Diagnostic(
                        "R4Awareness",
                        "warning",
                        f"{trig.name!r} is withheld but can still be inferred from sensor data; "
                        "enable an obfuscator or accept the risk",
                        rule.id,
                    )
                )

    if policy.static_rules and not any(s.strip() for s in policy.purpose_statements):
        out.append(Diagnostic("MissingPurpose", "warning", "policy states no data-use purpose"))
    return out


def has_errors(diagnostics: Sequence[Diagnostic]) -> bool:
    return any(d.severity == "error" for d in diagnostics)
