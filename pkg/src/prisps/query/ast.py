"""Immutable AST for the Siddhi-like query subset."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

from ..events import DEFAULT_SLOT_SECONDS, StreamSchema

COMPARISON_OPS = ("==", "!=", "<=", ">=", "<", ">")

# Fields every stream exposes regardless of its declared schema.
RESERVED_FIELDS = {"user_activity": "string", "day": "int", "slot": "int"}

TIME_UNITS = {"sec": 1, "min": 60}

Literal = Union[int, float, str]


@dataclass(frozen=True)
class Comparison:
    field: str
    op: str
    value: Literal

    def evaluate(self, actual) -> bool:
        if isinstance(self.value, str) != isinstance(actual, str):
            return self.op == "!="
        if self.op == "==":
            return actual == self.value
        if self.op == "!=":
            return actual != self.value
        if self.op == "<":
            return actual < self.value
        if self.op == "<=":
            return actual <= self.value
        if self.op == ">":
            return actual > self.value
        if self.op == ">=":
            return actual >= self.value
        raise ValueError(f"unknown operator {self.op!r}")


@dataclass(frozen=True)
class Predicate:
    """Conjunction of comparisons; never empty."""

    comparisons: tuple[Comparison, ...]

    def __post_init__(self):
        object.__setattr__(self, "comparisons", tuple(self.comparisons))
        if not self.comparisons:
            raise ValueError("a predicate needs at least one comparison")

    def matches(self, event) -> bool:
        for c in self.comparisons:
            try:
                actual = event.get(c.field)
            except KeyError:
                return False
            if not c.evaluate(actual):
                return False
        return True

    def activity_label(self) -> str | None:
        """Label of the first ``user_activity == '...'`` comparison, if any."""
        for c in self.comparisons:
            if c.field == "user_activity" and c.op == "==" and isinstance(c.value, str):
                return c.value
        return None

    def extra_comparisons(self) -> tuple[Comparison, ...]:
        label = self.activity_label()
        out = []
        dispatched = False
        for c in self.comparisons:
            if not dispatched and label is not None and c.field == "user_activity" and c.op == "==" and c.value == label:
                dispatched = True
                continue
            out.append(c)
        return tuple(out)


@dataclass(frozen=True)
class Binding:
    name: str
    stream: str
    predicate: Predicate | None = None


@dataclass(frozen=True)
class Duration:
    value: int
    unit: str = "min"

    def __post_init__(self):
        if self.unit not in TIME_UNITS:
            raise ValueError(f"unsupported time unit {self.unit!r}")

    @property
    def seconds(self) -> int:
        return self.value * TIME_UNITS[self.unit]

    def to_slots(self, slot_seconds: float = DEFAULT_SLOT_SECONDS) -> int:
        # Largest span s with s * slot_seconds <= duration.
        return int(math.floor(self.seconds / slot_seconds + 1e-9))


@dataclass(frozen=True)
class FieldRef:
    binding: str
    field: str


@dataclass(frozen=True)
class SelectItem:
    ref: FieldRef
    aggregate: str | None = None  # None or "count"
    alias: str | None = None

    @property
    def output_name(self) -> str:
        return self.alias or self.ref.field


@dataclass(frozen=True)
class Annotation:
    name: str
    params: tuple[tuple[str, str], ...] = ()

    def get(self, key: str, default=None):
        for k, v in self.params:
            if k == key:
                return v
        return default


@dataclass(frozen=True)
class QueryAst:
    stream_defs: tuple[StreamSchema, ...]
    bindings: tuple[Binding, ...]
    select: tuple[SelectItem, ...]
    insert_into: str
    within: Duration | None = None
    annotations: tuple[Annotation, ...] = field(default=())

    def __post_init__(self):
        for name in ("stream_defs", "bindings", "select", "annotations"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def schema(self, stream: str) -> StreamSchema | None:
        for s in self.stream_defs:
            if s.name == stream:
                return s
        return None

    def annotation(self, name: str) -> Annotation | None:
        for a in self.annotations:
            if a.name == name:
                return a
        return None

    @property
    def sink_publisher(self) -> str | None:
        sink = self.annotation("sink")
        return None if sink is None else sink.get("publisher")

    @property
    def activity_steps(self) -> tuple[str | None, ...]:
        return tuple(b.predicate.activity_label() if b.predicate else None for b in self.bindings)

    def has_count(self) -> bool:
        return any(item.aggregate == "count" for item in self.select)
