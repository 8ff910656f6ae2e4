"""Event and stream data model with validated ingestion.

Time is discrete: a :class:`Timestamp` is a ``(day, slot)`` pair and the
physical length of a slot is a configuration value (``DEFAULT_SLOT_SECONDS``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .exceptions import InvalidTimestamp, SchemaMismatch

DEFAULT_SLOT_SECONDS = 60

FIELD_TYPES = ("long", "int", "float", "string")

_RECORD_KEYS = frozenset({"day", "slot", "stream", "activity", "attrs"})


@dataclass(frozen=True, order=True)
class Timestamp:
    day: int
    slot: int

    def __post_init__(self):
        for name in ("day", "slot"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise InvalidTimestamp(f"{name} must be an integer, got {value!r}")
            if value < 1:
                raise InvalidTimestamp(f"{name} must be >= 1, got {value}")


@dataclass(frozen=True)
class StreamSchema:
    """Ordered ``(field, type)`` declarations of one stream."""

    name: str
    fields: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple((str(n), str(t)) for n, t in self.fields))
        seen = set()
        for fname, ftype in self.fields:
            if ftype not in FIELD_TYPES:
                raise SchemaMismatch(f"stream {self.name}: unsupported type {ftype!r} for {fname}")
            if fname in seen:
                raise SchemaMismatch(f"stream {self.name}: duplicate field {fname}")
            seen.add(fname)

    def field_type(self, name: str) -> str | None:
        for fname, ftype in self.fields:
            if fname == name:
                return ftype
        return None


def value_conforms(value: Any, ftype: str) -> bool:
    if isinstance(value, bool):
        return False
    if ftype in ("long", "int"):
        return isinstance(value, int)
    if ftype == "float":
        return isinstance(value, (int, float))
    if ftype == "string":
        return isinstance(value, str)
    return False


@dataclass(frozen=True)
class Event:
    stream_name: str
    ts: Timestamp
    activity: str
    attrs: Mapping[str, Any] = field(default_factory=dict)

    def get(self, name: str) -> Any:
        """Field lookup used by predicates and projections.

        ``user_activity``, ``day`` and ``slot`` are reserved and resolve from
        the event itself; ``ts`` falls back to the slot when not carried as
        an attribute.
        """
        if name == "user_activity":
            return self.activity
        if name == "day":
            return self.ts.day
        if name == "slot":
            return self.ts.slot
        if name in self.attrs:
            return self.attrs[name]
        if name == "ts":
            return self.ts.slot
        raise KeyError(name)

    def to_record(self) -> dict:
        record = {
            "day": self.ts.day,
            "slot": self.ts.slot,
            "stream": self.stream_name,
            "activity": self.activity,
        }
        if self.attrs:
            record["attrs"] = dict(self.attrs)
        return record


@dataclass(frozen=True)
class EventStream:
    name: str
    schema: StreamSchema
    events: tuple[Event, ...] = ()

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def days(self) -> list[int]:
        return sorted({e.ts.day for e in self.events})

    @property
    def alphabet(self) -> frozenset[str]:
        return frozenset(e.activity for e in self.events)

    @property
    def slots_per_day(self) -> int:
        return max((e.ts.slot for e in self.events), default=0)

    def day_events(self, day: int) -> list[Event]:
        return [e for e in self.events if e.ts.day == day]


def _coerce_record(raw: Any, schema: StreamSchema) -> Event:
    if isinstance(raw, Event):
        raw = raw.to_record()
    if not isinstance(raw, Mapping):
        raise SchemaMismatch(f"event record must be a mapping, got {type(raw).__name__}")
    unknown = set(raw) - _RECORD_KEYS
    if unknown:
        raise SchemaMismatch(f"unknown record keys: {sorted(unknown)}")
    for key in ("day", "slot", "activity"):
        if key not in raw:
            raise SchemaMismatch(f"record is missing required key {key!r}")
    stream = raw.get("stream", schema.name)
    if stream != schema.name:
        raise SchemaMismatch(f"record for stream {stream!r} does not match schema {schema.name!r}")
    activity = raw["activity"]
    if not isinstance(activity, str) or not activity:
        raise SchemaMismatch("activity must be a non-empty string")
    attrs = raw.get("attrs") or {}
    if not isinstance(attrs, Mapping):
        raise SchemaMismatch("attrs must be a mapping")
    for key, value in attrs.items():
        ftype = schema.field_type(key)
        if ftype is None:
            raise SchemaMismatch(f"attribute {key!r} is not declared in stream {schema.name}")
        if not value_conforms(value, ftype):
            raise SchemaMismatch(f"attribute {key!r}={value!r} is not of type {ftype}")
    return Event(schema.name, Timestamp(raw["day"], raw["slot"]), activity, dict(attrs))


def ingest_events(records: Iterable[Any], schema: StreamSchema) -> EventStream:
    """Validate raw records against ``schema`` and return a sorted stream.

    Sorting is by ``(day, slot)`` and stable, so simultaneous events keep
    their ingestion order. ``Event`` instances are accepted as records, which
    makes ingestion idempotent.
    """
    events = [_coerce_record(r, schema) for r in records]
    events.sort(key=lambda e: e.ts)
    return EventStream(schema.name, schema, tuple(events))


def read_events_jsonl(path: str | Path, schemas: Mapping[str, StreamSchema]) -> dict[str, EventStream]:
    """Load a JSON Lines event file, one stream per declared schema."""
    buckets: dict[str, list[dict]] = {name: [] for name in schemas}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaMismatch(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict) or "stream" not in record:
                raise SchemaMismatch(f"{path}:{lineno}: record must carry a 'stream' key")
            if record["stream"] not in buckets:
                raise SchemaMismatch(f"{path}:{lineno}: undeclared stream {record['stream']!r}")
            buckets[record["stream"]].append(record)
    return {name: ingest_events(recs, schemas[name]) for name, recs in buckets.items()}


def write_events_jsonl(path: str | Path, streams: Sequence[EventStream]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for stream in streams:
            for event in stream.events:
                fh.write(json.dumps(event.to_record(), sort_keys=False) + "\n")
