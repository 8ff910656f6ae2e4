import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import nx_distances, placement_oracle
from prisps.access_control import ActionRule, PrivatePatternSignature, RestrictNodes, rewrite_query
from prisps.exceptions import NoFeasiblePlacement, UnreachablePair, UnsupportedQueryShape
from prisps.fixtures import BOB_QUERY, bob_topology, random_topology
from prisps.placement import (
    Link,
    Node,
    Operator,
    OperatorGraph,
    Topology,
    build_operator_graph,
    candidate_nodes,
    end_to_end_latency,
    place_operators,
)
from prisps.query import parse_query

MEDICINE = PrivatePatternSignature("taking_medicine", ("swallow", "drink", "lay down"), 3)


def test_operator_graph_for_reference_query():
    graph = build_operator_graph(parse_query(BOB_QUERY))
    assert graph.kinds == ["Source", "SequenceMatcher", "Aggregate", "Sink"]


def test_filters_only_for_extra_comparisons():
    ast = parse_query(
        "define stream S (hr float);\n"
        "from every a=S[user_activity == 'run' and hr > 120.0] -> b=S[user_activity == 'rest']\n"
        "select b.hr insert into O;"
    )
    assert build_operator_graph(ast).kinds == ["Source", "Filter", "SequenceMatcher", "Sink"]


def test_multi_stream_queries_unsupported():
    ast = parse_query("define stream A (x int);\ndefine stream B (x int);\nfrom every a=A -> b=B select a.x insert into O;")
    with pytest.raises(UnsupportedQueryShape):
        build_operator_graph(ast)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_floyd_warshall_matches_networkx(seed):
    topo = random_topology(np.random.default_rng(seed), 8)
    ref = nx_distances(topo)
    for a in topo.ids:
        for b in topo.ids:
            assert topo.distance(a, b) == ref[a].get(b, math.inf)


def test_bob_placements():
    topo = bob_topology()
    graph = build_operator_graph(parse_query(BOB_QUERY))
    free = place_operators(graph, topo)
    assert free.nodes == ["smartwatch", "cloud_har", "cloud_har", "cloud_har"]
    assert free.total_latency_ms == 17
    trusted = place_operators(graph, topo, trusted_only=True)
    assert set(trusted.nodes[1:-1]) <= {"fog_hub", "bob_cloud"}
    assert trusted.total_latency_ms >= free.total_latency_ms
    assert trusted.total_latency_ms == placement_oracle(topo, 2, ["bob_cloud", "fog_hub"], "smartwatch", "cloud_har")[0]


def test_sink_follows_rewritten_publisher():
    topo = bob_topology()
    ast, _ = rewrite_query(parse_query(BOB_QUERY), [ActionRule("r", MEDICINE.id, RestrictNodes(("fog_hub", "cloud_har")))], [MEDICINE])
    allowed = candidate_nodes(topo, True, ("fog_hub", "cloud_har"))
    assert allowed == ["fog_hub"]  # untrusted nodes are dropped from the allow-list
    graph = OperatorGraph(build_operator_graph(ast).operators, "Bob")
    placed = place_operators(graph, topo, allowed_nodes=allowed)
    assert placed.nodes[-1] == "bob_cloud"
    assert placed.nodes[1:-1] == ["fog_hub", "fog_hub"]


def test_capacity_and_trust_infeasibility():
    topo = Topology(
        [Node("s", "sensor", False, 1), Node("f", "fog", True, 1), Node("c", "cloud", False, 5)],
        [Link("s", "f", 1), Link("f", "c", 1)],
        "s",
        "c",
    )
    two_free = OperatorGraph((Operator("src", "Source"), Operator("a", "Filter"), Operator("b", "Filter"), Operator("k", "Sink")))
    with pytest.raises(NoFeasiblePlacement):
        place_operators(two_free, topo, trusted_only=True)
    assert place_operators(two_free, topo).total_latency_ms == 2
    with pytest.raises(NoFeasiblePlacement):
        place_operators(OperatorGraph(two_free.operators, "Nobody"), topo)


def test_unreachable_pair():
    topo = Topology([Node("s", "sensor"), Node("c", "cloud"), Node("x", "fog")], [Link("s", "c", 1)], "s", "c")
    with pytest.raises(UnreachablePair):
        end_to_end_latency(["s", "x", "c"], topo)
    graph = OperatorGraph((Operator("src", "Source"), Operator("a", "Filter"), Operator("k", "Sink")))
    topo2 = Topology([Node("s", "sensor", capacity=2), Node("c", "cloud", capacity=2), Node("x", "fog")], [Link("s", "c", 1)], "s", "c")
    assert place_operators(graph, topo2).nodes == ["s", "c", "c"]


def test_topology_validation_and_round_trip():
    topo = bob_topology()
    assert Topology.from_dict(topo.to_dict()).to_dict() == topo.to_dict()
    with pytest.raises(ValueError):
        Topology([Node("a", "sensor")], [Link("a", "b", 1)], "a", "a")
    with pytest.raises(ValueError):
        Node("a", "edge")
    with pytest.raises(ValueError):
        Link("a", "b", -1)
    with pytest.raises(ValueError):
        Topology([Node("a", "sensor"), Node("b", "cloud")], [], "a", "b")


def test_greedy_fallback_flags_non_optimal(monkeypatch):
    import prisps.placement as placement

    monkeypatch.setattr(placement, "EXHAUSTIVE_LIMIT", 0)
    topo = bob_topology()
    placed = place_operators(build_operator_graph(parse_query(BOB_QUERY)), topo)
    assert not placed.optimal
    assert placed.total_latency_ms >= 17
