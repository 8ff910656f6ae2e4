"""Multilayer topology model and trust-constrained operator placement.

Operators form a linear pipeline ``Source -> Filter* -> SequenceMatcher ->
Aggregate -> Sink``. Source and Sink are pinned; the remaining (free)
operators are assigned to minimise the summed shortest-path latency between
consecutive operators. With ``trusted_only`` the search space of the free
operators shrinks to trusted nodes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .exceptions import NoFeasiblePlacement, UnreachablePair, UnsupportedQueryShape
from .query.ast import QueryAst

LAYERS = ("sensor", "fog", "cloud")
EXHAUSTIVE_LIMIT = 10**6


@dataclass(frozen=True)
class Node:
    id: str
    layer: str
    trusted: bool = False
    capacity: int = 1
    owner: str | None = None

    def __post_init__(self):
        if self.layer not in LAYERS:
            raise ValueError(f"node {self.id}: layer must be one of {LAYERS}")
        if self.capacity < 0:
            raise ValueError(f"node {self.id}: capacity must be >= 0")


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    latency_ms: float

    def __post_init__(self):
        if not self.latency_ms >= 0:
            raise ValueError(f"link {self.a}-{self.b}: latency must be >= 0")


class Topology:
    """Node graph; links are bidirectional."""

    def __init__(self, nodes: Sequence[Node], links: Sequence[Link], source_node: str, consumer_node: str):
        self.nodes = tuple(nodes)
        self.links = tuple(links)
        self.source_node = source_node
        self.consumer_node = consumer_node
        self.by_id = {n.id: n for n in self.nodes}
        if len(self.by_id) != len(self.nodes):
            raise ValueError("node ids must be unique")
        for link in self.links:
            for end in (link.a, link.b):
                if end not in self.by_id:
                    raise ValueError(f"link references unknown node {end!r}")
        for end in (source_node, consumer_node):
            if end not in self.by_id:
                raise ValueError(f"unknown endpoint node {end!r}")
        self._dist = _all_pairs_shortest(self)
        if math.isinf(self.distance(source_node, consumer_node)):
            raise ValueError("consumer is not reachable from source")

    @property
    def ids(self) -> list[str]:
        return sorted(self.by_id)

    def distance(self, a: str, b: str) -> float:
        return self._dist[a][b]

    def node_of_owner(self, owner: str) -> str | None:
        owned = sorted(n.id for n in self.nodes if n.owner == owner)
        return owned[0] if owned else None

    @classmethod
    def from_dict(cls, data: dict) -> Topology:
        nodes = [
            Node(n["id"], n["layer"], bool(n.get("trusted", False)), int(n.get("capacity", 1)), n.get("owner"))
            for n in data["nodes"]
        ]
        links = [Link(l["from"], l["to"], float(l["latency_ms"])) for l in data.get("links", ())]
        return cls(nodes, links, data["source_node"], data["consumer_node"])

    def to_dict(self) -> dict:
        nodes = []
        for n in self.nodes:
            entry = {"id": n.id, "layer": n.layer, "trusted": n.trusted, "capacity": n.capacity}
            if n.owner is not None:
                entry["owner"] = n.owner
            nodes.append(entry)
        return {
            "nodes": nodes,
            "links": [{"from": l.a, "to": l.b, "latency_ms": l.latency_ms} for l in self.links],
            "source_node": self.source_node,
            "consumer_node": self.consumer_node,
        }


def load_topology(path) -> Topology:
    with open(path, encoding="utf-8") as fh:
        return Topology.from_dict(json.load(fh))


def _all_pairs_shortest(topo: Topology) -> dict[str, dict[str, float]]:
    ids = [n.id for n in topo.nodes]
    dist = {a: {b: (0.0 if a == b else math.inf) for b in ids} for a in ids}
    for link in topo.links:
        d = min(dist[link.a][link.b], float(link.latency_ms))
        dist[link.a][link.b] = dist[link.b][link.a] = d
    for k in ids:
        dk = dist[k]
        for i in ids:
            dik = dist[i][k]
            if math.isinf(dik):
                continue
            di = dist[i]
            for j in ids:
                if dik + dk[j] < di[j]:
                    di[j] = dik + dk[j]
    return dist


@dataclass(frozen=True)
class Operator:
    name: str
    kind: str  # Source | Filter | SequenceMatcher | Aggregate | Sink


@dataclass(frozen=True)
class OperatorGraph:
    operators: tuple[Operator, ...]
    publisher: str | None = None

    def __post_init__(self):
        kinds = [op.kind for op in self.operators]
        if len(kinds) < 2 or kinds[0] != "Source" or kinds[-1] != "Sink":
            raise ValueError("operator pipeline must start with Source and end with Sink")

    @property
    def kinds(self) -> list[str]:
        return [op.kind for op in self.operators]

    @property
    def free(self) -> tuple[Operator, ...]:
        return self.operators[1:-1]


def build_operator_graph(ast: QueryAst) -> OperatorGraph:
    """Linear operator pipeline for ``ast``."""
    if len({b.stream for b in ast.bindings}) > 1:
        raise UnsupportedQueryShape("patterns over several input streams need a join, which is unsupported")
    ops = [Operator("source", "Source")]
    for b in ast.bindings:
        if b.predicate is not None and b.predicate.extra_comparisons():
            ops.append(Operator(f"filter_{b.name}", "Filter"))
    if len(ast.bindings) > 1:
        ops.append(Operator("match", "SequenceMatcher"))
    if ast.has_count():
        ops.append(Operator("aggregate", "Aggregate"))
    ops.append(Operator("sink", "Sink"))
    return OperatorGraph(tuple(ops), ast.sink_publisher)


@dataclass(frozen=True)
class Placement:
    assignment: tuple[tuple[str, str], ...]  # (operator name, node id) in pipeline order
    total_latency_ms: float
    optimal: bool = True
    trusted_only: bool = False

    @property
    def nodes(self) -> list[str]:
        return [node for _, node in self.assignment]

    def to_dict(self) -> dict:
        return {
            "assignment": [{"operator": op, "node": node} for op, node in self.assignment],
            "total_latency_ms": round(self.total_latency_ms, 6),
            "optimal": self.optimal,
            "trusted_only": self.trusted_only,
        }


def end_to_end_latency(placement: Placement | Sequence[str], topo: Topology) -> float:
    """Sum of shortest-path latencies between consecutive operators' nodes."""
    nodes = placement.nodes if isinstance(placement, Placement) else list(placement)
    total = 0.0
    for a, b in zip(nodes, nodes[1:]):
        d = topo.distance(a, b)
        if math.isinf(d):
            raise UnreachablePair(f"no path from {a} to {b}")
        total += d
    return total


def candidate_nodes(topo: Topology, trusted_only: bool, allowed_nodes: Iterable[str] | None = None) -> list[str]:
    """Nodes eligible for free operators.

    An ``allowed_nodes`` set (from a RestrictNodes rewrite) is intersected
    with the topology's trust flags.
    """
    ids = topo.ids
    if allowed_nodes is not None:
        allowed = set(allowed_nodes)
        return [i for i in ids if i in allowed and topo.by_id[i].trusted]
    if trusted_only:
        return [i for i in ids if topo.by_id[i].trusted]
    return ids


def _sink_node(graph: OperatorGraph, topo: Topology, sink_node: str | None) -> str:
    if sink_node is not None:
        return sink_node
    if graph.publisher is not None:
        node = topo.node_of_owner(graph.publisher)
        if node is None:
            raise NoFeasiblePlacement(f"no node belongs to sink publisher {graph.publisher!r}")
        return node
    return topo.consumer_node


def place_operators(
    graph: OperatorGraph,
    topo: Topology,
    trusted_only: bool = False,
    allowed_nodes: Iterable[str] | None = None,
    sink_node: str | None = None,
) -> Placement:
    """Latency-minimal placement of ``graph`` on ``topo``.

    Small instances are solved exactly by depth-first branch and bound
    (ties go to the lexicographically smallest assignment). Beyond
    ``EXHAUSTIVE_LIMIT`` candidate assignments a greedy chain placement is
    used and the result is flagged ``optimal=False``.
    """
    source, sink = topo.source_node, _sink_node(graph, topo, sink_node)
    cands = candidate_nodes(topo, trusted_only, allowed_nodes)
    n_free = len(graph.free)
    if n_free and not cands:
        raise NoFeasiblePlacement("no eligible node for the free operators")

    load = {i: 0 for i in topo.by_id}
    load[source] += 1
    load[sink] += 1
    for pinned in {source, sink}:
        if load[pinned] > topo.by_id[pinned].capacity:
            raise NoFeasiblePlacement(f"pinned operators exceed the capacity of {pinned}")

    if len(cands) ** n_free <= EXHAUSTIVE_LIMIT:
        chosen = _branch_and_bound(n_free, cands, source, sink, topo, load)
        optimal = True
    else:
        chosen = _greedy(n_free, cands, source, sink, topo, load)
        optimal = False
    if chosen is None:
        raise NoFeasiblePlacement("trust and capacity constraints admit no placement")
    nodes = [source, *chosen, sink]
    assignment = tuple((op.name, node) for op, node in zip(graph.operators, nodes))
    return Placement(assignment, end_to_end_latency(nodes, topo), optimal, trusted_only or allowed_nodes is not None)


def _branch_and_bound(n_free, cands, source, sink, topo, load):
    best_cost, best = math.inf, None
    path: list[str] = []

    def visit(prev: str, cost: float):
        nonlocal best_cost, best
        if cost >= best_cost:
            return
        if len(path) == n_free:
            total = cost + topo.distance(prev, sink)
            if total < best_cost:
                best_cost, best = total, list(path)
            return
        for node in cands:
            step = topo.distance(prev, node)
            if math.isinf(step) or load[node] >= topo.by_id[node].capacity:
                continue
            load[node] += 1
            path.append(node)
            visit(node, cost + step)
            path.pop()
            load[node] -= 1

    visit(source, 0.0)
    return best


def _greedy(n_free, cands, source, sink, topo, load):
    load = dict(load)
    prev, chosen = source, []
    for i in range(n_free):
        last = i == n_free - 1
        options = [
            (topo.distance(prev, n) + (topo.distance(n, sink) if last else 0.0), n)
            for n in cands
            if load[n] < topo.by_id[n].capacity
        ]
        options = [o for o in options if not math.isinf(o[0])]
        if not options:
            return None
        _, node = min(options)
        load[node] += 1
        chosen.append(node)
        prev = node
    return chosen
