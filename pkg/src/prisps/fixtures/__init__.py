"""Reproducible fixtures: the "bob" scenario, random instances, synthetic attributes."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..adversary import FeatureWindows
from ..events import Event, EventStream, StreamSchema, Timestamp, ingest_events
from ..placement import Link, Node, Topology
from ..query.ast import (
    COMPARISON_OPS,
    Annotation,
    Binding,
    Comparison,
    Duration,
    FieldRef,
    Predicate,
    QueryAst,
    SelectItem,
)
from ..rng import as_generator

GOLDEN_DIR = Path(__file__).with_name("bob")

BOB_DAYS = {
    1: ["swallow", "drink", "lay down", "drink", "swallow", "lay down", "walk"],
    2: ["walk", "swallow", "drink", "lay down", "walk", "lay down", "drink"],
    3: ["swallow", "drink", "lay down", "walk", "swallow", "drink", "lay down"],
}
TAKING_MEDICINE = ("swallow", "drink", "lay down")
BOB_STREAM = "TakeMedicineStr"

BOB_QUERY = """\
define stream TakeMedicineStr (ts long, cnt_swallow int,
cnt_drink int, cnt_layd int);
from every e1=TakeMedicineStr[ user_activity == 'swallow' ]
     -> e2=TakeMedicineStr[ user_activity == 'drink' ]
     -> e3=TakeMedicineStr[ user_activity == 'lay down' ]
    within 2 min
select e3.ts, count(e1.user_activity) as cnt_swallow,
count(e2.user_activity) as cnt_drink,
count(e3.user_activity) as cnt_layd
insert into TakeMedicinePattern;
"""

BOB_SCHEMA = StreamSchema(
    BOB_STREAM, (("ts", "long"), ("cnt_swallow", "int"), ("cnt_drink", "int"), ("cnt_layd", "int"))
)


def bob_records() -> list[dict]:
    return [
        {"day": day, "slot": slot, "stream": BOB_STREAM, "activity": activity}
        for day, row in BOB_DAYS.items()
        for slot, activity in enumerate(row, 1)
    ]


def bob_stream() -> EventStream:
    return ingest_events(bob_records(), BOB_SCHEMA)


def bob_policy() -> dict:
    return {
        "user": "Bob",
        "purpose_statements": [
            "IMU data from Bob's wearables is collected to monitor his exercise.",
        ],
        "signatures": [{"id": "taking_medicine", "steps": list(TAKING_MEDICINE), "max_within": 3}],
        "static_rules": [
            {"id": "protect_medicine", "trigger": {"type": "ProtectPattern", "signature": "taking_medicine"}, "put_knob": 0.0},
            {
                "id": "medicine_only_to_bob",
                "trigger": {"type": "RestrictSink", "pattern": "taking_medicine", "publisher": "Bob"},
                "put_knob": 0.0,
            },
            {"id": "trusted_devices", "trigger": {"type": "TrustNodes", "nodes": ["fog_hub", "bob_cloud"]}, "put_knob": 0.0},
        ],
        "dynamic_rules": [],
    }


def bob_topology() -> Topology:
    nodes = [
        Node("smartwatch", "sensor", trusted=False, capacity=1),
        Node("fog_hub", "fog", trusted=True, capacity=3, owner=None),
        Node("fog_isp", "fog", trusted=False, capacity=3),
        Node("cloud_har", "cloud", trusted=False, capacity=4),
        Node("bob_cloud", "cloud", trusted=True, capacity=4, owner="Bob"),
    ]
    links = [
        Link("smartwatch", "fog_hub", 4.0),
        Link("smartwatch", "fog_isp", 2.0),
        Link("fog_hub", "fog_isp", 3.0),
        Link("fog_hub", "cloud_har", 20.0),
        Link("fog_isp", "cloud_har", 15.0),
        Link("fog_hub", "bob_cloud", 12.0),
        Link("cloud_har", "bob_cloud", 5.0),
    ]
    return Topology(nodes, links, "smartwatch", "cloud_har")


def bob_scenario() -> dict:
    return {
        "events": "events.jsonl",
        "topology": "topology.json",
        "policy": "policy.json",
        "queries": ["query.siddhi"],
        "seed": 42,
        "epsilon_sweep": [0.1, 1, 10],
        "taper_mode": "table",
        "w": 3,
        "horizon": 7,
        "slot_seconds": 60,
        "trials": 10000,
        "occurrence_windows": {"taking_medicine": [[1, 4]]},
        "context": {"location": "home", "day": 1, "slot": 1, "peer": "har_app"},
    }


def _dump_json(data) -> str:
    return json.dumps(data, indent=2) + "\n"


def bob_files() -> dict[str, str]:
    """File name -> content of the bundled scenario."""
    events = "".join(json.dumps(r) + "\n" for r in bob_records())
    return {
        "events.jsonl": events,
        "query.siddhi": BOB_QUERY,
        "policy.json": _dump_json(bob_policy()),
        "topology.json": _dump_json(bob_topology().to_dict()),
        "scenario.json": _dump_json(bob_scenario()),
    }


def generate_bob_fixture(out_dir=None) -> dict[str, str]:
    """Write the bob scenario files to ``out_dir`` (if given) and return them."""
    files = bob_files()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, content in files.items():
            (out / name).write_text(content, encoding="utf-8")
    return files


# ------------------------------------------------------------ random instances


def random_day_stream(rng, length: int, alphabet=("a", "b", "c", "d", "e"), slots: int | None = None,
                      day: int = 1, stream: str = "S") -> EventStream:
    """One day of random events; slots non-decreasing, duplicates allowed."""
    gen = as_generator(rng)
    slots = slots or max(1, length)
    slot_values = np.sort(gen.integers(1, slots + 1, size=length))
    labels = gen.integers(0, len(alphabet), size=length)
    events = tuple(
        Event(stream, Timestamp(day, int(s)), alphabet[int(a)]) for s, a in zip(slot_values, labels)
    )
    return EventStream(stream, StreamSchema(stream), events)


def random_multiday_stream(rng, days: int, length: int, alphabet=("a", "b", "c"), slots: int = 8,
                           stream: str = "S") -> EventStream:
    gen = as_generator(rng)
    events = []
    for day in range(1, days + 1):
        events.extend(random_day_stream(gen, int(gen.integers(0, length + 1)), alphabet, slots, day, stream).events)
    return EventStream(stream, StreamSchema(stream), tuple(events))


def random_topology(rng, n_nodes: int, trust_p: float = 0.5) -> Topology:
    """Random connected topology with integer latencies and mixed trust."""
    gen = as_generator(rng)
    ids = [f"n{i}" for i in range(n_nodes)]
    layers = ["sensor"] + [str(gen.choice(["fog", "cloud"])) for _ in ids[1:]]
    nodes = [
        Node(i, layer, bool(gen.random() < trust_p), int(gen.integers(1, 4)))
        for i, layer in zip(ids, layers)
    ]
    links = []
    for j in range(1, n_nodes):  # spanning tree keeps it connected
        links.append(Link(ids[int(gen.integers(0, j))], ids[j], float(gen.integers(0, 20))))
    for _ in range(int(gen.integers(0, n_nodes + 1))):
        a, b = gen.choice(n_nodes, size=2, replace=False)
        links.append(Link(ids[int(a)], ids[int(b)], float(gen.integers(0, 20))))
    consumer = ids[int(gen.integers(0, n_nodes))]
    return Topology(nodes, links, ids[0], consumer)


_IDENT_POOL = ("alpha", "beta", "gamma", "delta", "x1", "y_2", "Zed", "ts", "val")
_LABELS = ("swallow", "drink", "lay down", "walk", "it's", "back\\slash", "")


def _random_literal(gen, ftype: str):
    if ftype in ("int", "long"):
        return int(gen.integers(-1000, 1000))
    if ftype == "float":
        if gen.random() < 0.3:
            return int(gen.integers(-50, 50))
        return float(gen.normal() * 10 ** int(gen.integers(-6, 8)))
    return str(gen.choice(_LABELS))


def random_query_ast(rng) -> QueryAst:
    """Random, semantically valid AST for round-trip testing."""
    gen = as_generator(rng)
    n_streams = int(gen.integers(1, 3))
    schemas = []
    for i in range(n_streams):
        names = list(gen.choice(_IDENT_POOL, size=int(gen.integers(1, 5)), replace=False))
        types = [str(gen.choice(["long", "int", "float", "string"])) for _ in names]
        schemas.append(StreamSchema(f"Stream{i}", tuple(zip(names, types))))
    bindings = []
    for j in range(int(gen.integers(1, 5))):
        schema = schemas[int(gen.integers(0, n_streams))]
        fields = list(schema.fields) + [("user_activity", "string"), ("slot", "int"), ("day", "int")]
        predicate = None
        if gen.random() < 0.85:
            comps = []
            for _ in range(int(gen.integers(1, 4))):
                fname, ftype = fields[int(gen.integers(0, len(fields)))]
                op = "==" if fname == "user_activity" and gen.random() < 0.7 else str(gen.choice(COMPARISON_OPS))
                comps.append(Comparison(fname, op, _random_literal(gen, ftype)))
            predicate = Predicate(tuple(comps))
        bindings.append(Binding(f"e{j + 1}", schema.name, predicate))
    select = []
    for _ in range(int(gen.integers(1, 5))):
        b = bindings[int(gen.integers(0, len(bindings)))]
        schema = next(s for s in schemas if s.name == b.stream)
        fields = [f for f, _ in schema.fields] + ["user_activity"]
        ref = FieldRef(b.name, str(gen.choice(fields)))
        aggregate = "count" if gen.random() < 0.4 else None
        alias = f"out{len(select)}" if aggregate or gen.random() < 0.5 else None
        select.append(SelectItem(ref, aggregate, alias))
    within = Duration(int(gen.integers(1, 60)), str(gen.choice(["min", "sec"]))) if gen.random() < 0.7 else None
    annotations = []
    if gen.random() < 0.5:
        annotations.append(Annotation("sink", (("publisher", str(gen.choice(["Bob", "Alice", "o'neil"]))),)))
    if gen.random() < 0.2:
        annotations.append(Annotation("info", ()))
    return QueryAst(tuple(schemas), tuple(bindings), tuple(select), "OutStream", within, tuple(annotations))


# ------------------------------------------------------------ synthetic attributes


@dataclass(frozen=True)
class SyntheticAttributeSpec:
    groups: int = 2
    dims: int = 8
    mean_shift_sigmas: float = 2.0
    windows_per_group: int = 200
    activity_classes: int = 4
    activity_spread: float = 3.0

    def __post_init__(self):
        if self.groups < 2 or self.dims < 2 or self.windows_per_group < 1 or self.activity_classes < 1:
            raise ValueError("synthetic spec needs >= 2 groups, >= 2 dims and positive counts")
        if self.mean_shift_sigmas < 0:
            raise ValueError("mean_shift_sigmas must be >= 0")


def generate_synthetic_attributes(spec: SyntheticAttributeSpec, rng) -> FeatureWindows:
    """Gaussian windows per (group, activity) with unit within-class noise.

    Group ``g`` shifts every feature by ``g * mean_shift_sigmas``; activity
    centres live in the subspace orthogonal to that shift direction.
    """
    gen = as_generator(rng)
    d = spec.dims
    direction = np.ones(d) / np.sqrt(d)
    centres = gen.normal(0.0, spec.activity_spread, size=(spec.activity_classes, d))
    centres -= np.outer(centres @ direction, direction)
    X, groups, acts = [], [], []
    for g in range(spec.groups):
        activity = np.arange(spec.windows_per_group) % spec.activity_classes
        noise = gen.normal(size=(spec.windows_per_group, d))
        X.append(centres[activity] + g * spec.mean_shift_sigmas + noise)
        groups.append(np.full(spec.windows_per_group, g))
        acts.append(activity)
    return FeatureWindows(np.vstack(X), np.concatenate(groups), np.concatenate(acts))
