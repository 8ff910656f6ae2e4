"""Query-rewriting access control for private patterns.

The rewriter is the entry point of every query: it finds queries whose
sequence pattern contains a protected activity sequence and applies the
matching privacy action rules (redirect the sink, deny, or restrict the
nodes allowed to process the query).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Sequence, Union

from .events import DEFAULT_SLOT_SECONDS
from .exceptions import ConflictingRules
from .query.ast import Annotation, QueryAst


@dataclass(frozen=True)
class PrivatePatternSignature:
    id: str
    steps: tuple[str, ...]
    max_within: int

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if len(self.steps) < 2:
            raise ValueError(f"signature {self.id}: a private pattern needs at least two steps")

    @classmethod
    def from_dict(cls, data: dict) -> PrivatePatternSignature:
        return cls(str(data["id"]), tuple(data["steps"]), int(data.get("max_within", len(data["steps"]))))

    def to_dict(self) -> dict:
        return {"id": self.id, "steps": list(self.steps), "max_within": self.max_within}


@dataclass(frozen=True)
class RewriteSink:
    publisher: str

    def __post_init__(self):
        if not self.publisher:
            raise ValueError("RewriteSink needs a non-empty publisher")


@dataclass(frozen=True)
class Deny:
    pass


@dataclass(frozen=True)
class RestrictNodes:
    nodes: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(sorted(set(self.nodes))))


Action = Union[RewriteSink, Deny, RestrictNodes]


@dataclass(frozen=True)
class ActionRule:
    id: str
    signature: str
    action: Action
    provenance: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> ActionRule:
        action = data["action"]
        kind, params = action["type"], action.get("params", {})
        if kind == "RewriteSink":
            parsed = RewriteSink(params["publisher"])
        elif kind == "Deny":
            parsed = Deny()
        elif kind == "RestrictNodes":
            parsed = RestrictNodes(tuple(params["nodes"]))
        else:
            raise ValueError(f"rule {data.get('id')}: unknown action type {kind!r}")
        return cls(str(data["id"]), str(data["signature"]), parsed, data.get("provenance"))

    def to_dict(self) -> dict:
        if isinstance(self.action, RewriteSink):
            action = {"type": "RewriteSink", "params": {"publisher": self.action.publisher}}
        elif isinstance(self.action, RestrictNodes):
            action = {"type": "RestrictNodes", "params": {"nodes": list(self.action.nodes)}}
        else:
            action = {"type": "Deny", "params": {}}
        out = {"id": self.id, "signature": self.signature, "action": action}
        if self.provenance is not None:
            out["provenance"] = self.provenance
        return out


@dataclass(frozen=True)
class LogEntry:
    rule_id: str
    signature_id: str
    action: str
    detail: str = ""


RESTRICT_ANNOTATION = "restrict"


def load_action_rules(path) -> list[ActionRule]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise ValueError("action rules file must hold a JSON array")
    return [ActionRule.from_dict(item) for item in data]


def _is_subsequence(needle: Sequence[str], haystack: Sequence[str | None]) -> bool:
    it = iter(haystack)
    return all(any(label == step for label in it) for step in needle)


def detect_private_pattern_query(
    ast: QueryAst,
    signatures: Sequence[PrivatePatternSignature],
    slot_seconds: float = DEFAULT_SLOT_SECONDS,
) -> list[str]:
    """Ids of the signatures whose steps the query's pattern contains in order.

    Containment is by subsequence, so padding a query with extra steps does
    not evade detection. A query without ``within`` is unbounded and hence
    always wide enough.
    """
    labels = ast.activity_steps
    within = None if ast.within is None else ast.within.to_slots(slot_seconds)
    matched = []
    for sig in signatures:
        if within is not None and within < len(sig.steps) - 1:
            continue
        if _is_subsequence(sig.steps, labels):
            matched.append(sig.id)
    return matched


def _set_annotation(annotations: tuple[Annotation, ...], new: Annotation) -> tuple[Annotation, ...]:
    for i, ann in enumerate(annotations):
        if ann.name == new.name:
            return annotations[:i] + (new,) + annotations[i + 1 :]
    return (new,) + annotations


def restricted_nodes(ast: QueryAst) -> tuple[str, ...] | None:
    """Trusted-node constraint attached by a RestrictNodes rewrite, if any."""
    ann = ast.annotation(RESTRICT_ANNOTATION)
    if ann is None:
        return None
    nodes = ann.get("nodes", "")
    return tuple(n for n in nodes.split(",") if n)


def rewrite_query(
    ast: QueryAst,
    rules: Sequence[ActionRule],
    signatures: Sequence[PrivatePatternSignature],
    slot_seconds: float = DEFAULT_SLOT_SECONDS,
) -> tuple[QueryAst | None, list[LogEntry]]:
    """Apply ``rules`` to ``ast``.

    Returns the rewritten AST (``None`` when a Deny rule fires) and a log of
    the rules that were applied. Rules are scanned in declaration order; the
    first rule of each action kind wins.
    """
    known = {s.id for s in signatures}
    for rule in rules:
        if rule.signature not in known:
            raise ValueError(f"rule {rule.id} references unknown signature {rule.signature!r}")
    matched = set(detect_private_pattern_query(ast, signatures, slot_seconds))
    applicable = [r for r in rules if r.signature in matched]

    publishers: dict[str, RewriteSink] = {}
    for rule in applicable:
        if isinstance(rule.action, RewriteSink):
            seen = publishers.setdefault(rule.signature, rule.action)
            if seen.publisher != rule.action.publisher:
                raise ConflictingRules(
                    f"signature {rule.signature}: publishers {seen.publisher!r} and {rule.action.publisher!r}"
                )

    first: dict[type, ActionRule] = {}
    for rule in applicable:
        first.setdefault(type(rule.action), rule)

    if Deny in first:
        rule = first[Deny]
        return None, [LogEntry(rule.id, rule.signature, "Deny", "query rejected")]

    log = []
    annotations = ast.annotations
    if RewriteSink in first:
        rule = first[RewriteSink]
        publisher = rule.action.publisher
        annotations = _set_annotation(annotations, Annotation("sink", (("publisher", publisher),)))
        log.append(LogEntry(rule.id, rule.signature, "RewriteSink", f"publisher={publisher}"))
    if RestrictNodes in first:
        rule = first[RestrictNodes]
        nodes = ",".join(rule.action.nodes)
        annotations = _set_annotation(annotations, Annotation(RESTRICT_ANNOTATION, (("nodes", nodes),)))
        log.append(LogEntry(rule.id, rule.signature, "RestrictNodes", f"nodes={nodes}"))
    if not log:
        return ast, log
    return replace(ast, annotations=annotations), log
