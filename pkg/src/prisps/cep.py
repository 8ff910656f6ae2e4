"""Sequence-pattern matching and count queries over event streams.

Match selection is greedy by earliest completion with event consumption:
among all valid index tuples not using an already consumed event, the one
with the smallest ``(last index, full tuple)`` key is taken next. The scan
below realises this in ``O(k * n)`` per completion candidate without enumerating tuples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .events import DEFAULT_SLOT_SECONDS, Event, EventStream, StreamSchema, Timestamp
from .exceptions import SemanticError, UnknownField, UnknownLabel, UnknownStream
from .query.ast import Comparison, Predicate, QueryAst


@dataclass(frozen=True)
class Step:
    predicate: Predicate | None = None
    stream: str | None = None

    def matches(self, event: Event) -> bool:
        if self.stream is not None and event.stream_name != self.stream:
            return False
        return self.predicate is None or self.predicate.matches(event)

    def mask(self, events: Sequence[Event]) -> list[bool]:
        """``matches`` over ``events``; plain label steps skip predicate dispatch."""
        comps = self.predicate.comparisons if self.predicate is not None else ()
        if len(comps) == 1 and comps[0].field == "user_activity" and comps[0].op == "==" and isinstance(comps[0].value, str):
            label, stream = comps[0].value, self.stream
            return [e.activity == label and (stream is None or e.stream_name == stream) for e in events]
        return [self.matches(e) for e in events]


@dataclass(frozen=True)
class SequencePattern:
    steps: tuple[Step, ...]
    within: int | None = None  # max slot span, inclusive; None = unbounded

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise ValueError("a sequence pattern needs at least one step")
        if self.within is not None and self.within < len(self.steps) - 1:
            raise ValueError(
                f"within={self.within} slots cannot fit {len(self.steps)} steps (needs >= {len(self.steps) - 1})"
            )

    @classmethod
    def from_labels(cls, labels: Sequence[str], within: int | None = None) -> SequencePattern:
        steps = [Step(Predicate((Comparison("user_activity", "==", label),))) for label in labels]
        return cls(tuple(steps), within)

    @classmethod
    def from_query(cls, ast: QueryAst, slot_seconds: float = DEFAULT_SLOT_SECONDS) -> SequencePattern:
        within = ast.within.to_slots(slot_seconds) if ast.within is not None else None
        steps = tuple(Step(b.predicate, b.stream) for b in ast.bindings)
        return cls(steps, within)

    @property
    def k(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class PatternMatch:
    day: int
    event_indices: tuple[int, ...]
    completion_slot: int


@dataclass(frozen=True)
class CountSeries:
    """Per-slot completion counts; ``None`` marks an undefined slot (printed "–")."""

    values: tuple[int | None, ...]
    n_days: int
    pattern: SequencePattern | None = None

    def __len__(self):
        return len(self.values)

    def defined(self) -> list[tuple[int, int]]:
        return [(t, v) for t, v in enumerate(self.values, 1) if v is not None]

    def format(self) -> list[str]:
        return ["–" if v is None else str(v) for v in self.values]


def _match_events(events: Sequence[Event], pattern: SequencePattern, day: int) -> list[PatternMatch]:
    k = pattern.k
    n = len(events)
    slots = [e.ts.slot for e in events]
    ok = [step.mask(events) for step in pattern.steps]
    consumed = [False] * n
    matches = []
    for j in range(n):
        if not ok[k - 1][j]:
            continue
        lo = 0
        if pattern.within is not None:
            while lo < j and slots[lo] < slots[j] - pattern.within:
                lo += 1
        # earliest free position per step gives the lexicographically smallest tuple
        chosen, p = [], lo
        for s in range(k - 1):
            while p < j and (consumed[p] or not ok[s][p]):
                p += 1
            if p == j:
                break
            chosen.append(p)
            p += 1
        if len(chosen) != k - 1:
            continue
        chosen.append(j)
        for p in chosen:
            consumed[p] = True
        matches.append(PatternMatch(day, tuple(chosen), slots[j]))
    return matches


def match_sequence(stream: EventStream, pattern: SequencePattern, day: int) -> list[PatternMatch]:
    """Greedy non-overlapping matches of ``pattern`` on one day of ``stream``."""
    return _match_events(stream.day_events(day), pattern, day)


def count_pattern_completions(
    stream: EventStream,
    pattern: SequencePattern,
    horizon: int | None = None,
    n_days: int | None = None,
) -> CountSeries:
    """Number of days on which the pattern completes at each slot.

    A day contributes at most 1 to a slot even if two matches complete there.
    """
    horizon = stream.slots_per_day if horizon is None else horizon
    days = stream.days
    completions = [0] * (horizon + 1)
    for day in days:
        for slot in {m.completion_slot for m in match_sequence(stream, pattern, day)}:
            if slot <= horizon:
                completions[slot] += 1
    values = tuple(None if t < pattern.k else completions[t] for t in range(1, horizon + 1))
    return CountSeries(values, len(days) if n_days is None else n_days, pattern)


def count_events(
    stream: EventStream,
    event_set: Sequence[str],
    ts: Timestamp,
    alphabet: frozenset[str] | None = None,
) -> list[int]:
    """Multiplicity of each label of ``event_set`` at exactly ``ts``."""
    if not event_set:
        raise ValueError("event_set must not be empty")
    if len(set(event_set)) != len(event_set):
        raise ValueError("event_set labels must be distinct")
    alphabet = stream.alphabet if alphabet is None else alphabet
    for label in event_set:
        if label not in alphabet:
            raise UnknownLabel(f"label {label!r} is not part of the alphabet")
    at_ts = [e.activity for e in stream.events if e.ts == ts]
    return [at_ts.count(label) for label in event_set]


def _merge_streams(ast: QueryAst, streams: Mapping[str, EventStream]) -> list[Event]:
    merged = []
    for name in dict.fromkeys(b.stream for b in ast.bindings):
        if name not in streams:
            raise UnknownStream(f"stream {name!r} is not available")
        merged.extend(streams[name].events)
    merged.sort(key=lambda e: e.ts)
    return merged


def evaluate_query(
    ast: QueryAst,
    streams: Mapping[str, EventStream],
    slot_seconds: float = DEFAULT_SLOT_SECONDS,
) -> EventStream:
    """Run a parsed query, emitting one derived event per pattern match."""
    pattern = SequencePattern.from_query(ast, slot_seconds)
    events = _merge_streams(ast, streams)
    position = {b.name: i for i, b in enumerate(ast.bindings)}

    names = [item.output_name for item in ast.select]
    if len(set(names)) != len(names):
        raise SemanticError("select list produces duplicate output names")
    fields = []
    for item in ast.select:
        if item.ref.binding not in position:
            raise UnknownField(f"unknown binding {item.ref.binding!r}")
        if item.aggregate == "count":
            fields.append((item.output_name, "long"))
        else:
            binding = ast.bindings[position[item.ref.binding]]
            schema = streams[binding.stream].schema
            ftype = schema.field_type(item.ref.field)
            if ftype is None:
                ftype = {"user_activity": "string", "day": "int", "slot": "int", "ts": "long"}.get(item.ref.field)
            if ftype is None:
                raise UnknownField(f"unknown field {item.ref.binding}.{item.ref.field}")
            fields.append((item.output_name, ftype))
    out_schema = StreamSchema(ast.insert_into, tuple(fields))

    out = []
    days = sorted({e.ts.day for e in events})
    for day in days:
        day_events = [e for e in events if e.ts.day == day]
        for match in _match_events(day_events, pattern, day):
            bound = [day_events[i] for i in match.event_indices]
            attrs = {}
            for item in ast.select:
                event = bound[position[item.ref.binding]]
                try:
                    value = event.get(item.ref.field)
                except KeyError:
                    if item.aggregate == "count":
                        value = None
                    else:
                        raise UnknownField(
                            f"event has no field {item.ref.field!r} for {item.ref.binding}"
                        ) from None
                attrs[item.output_name] = (0 if value is None else 1) if item.aggregate == "count" else value
            out.append(Event(ast.insert_into, Timestamp(day, match.completion_slot), ast.insert_into, attrs))
    return EventStream(ast.insert_into, out_schema, tuple(out))
