"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import itertools
from fractions import Fraction

import networkx as nx
import numpy as np


def cep_oracle(labels, slots, pattern, within=None):
    """Enumerate every k-tuple, sort by (last index, tuple), take greedily without reuse."""
    k = len(pattern)
    valid = [
        t
        for t in itertools.combinations(range(len(labels)), k)
        if all(labels[i] == p for i, p in zip(t, pattern))
        and (within is None or slots[t[-1]] - slots[t[0]] <= within)
    ]
    valid.sort(key=lambda t: (t[-1], t))
    used, out = set(), []
    for t in valid:
        if used.isdisjoint(t):
            used.update(t)
            out.append(t)
    return out


class BatchCepOracle:
    """Vectorised form of ``cep_oracle`` over all label strings of one length.

    Slots equal positions (1-based), so the within test is static per tuple.
    """

    def __init__(self, n, pattern_codes, within=None):
        k = len(pattern_codes)
        combos = [
            t for t in itertools.combinations(range(n), k) if within is None or t[-1] - t[0] <= within
        ]
        combos.sort(key=lambda t: (t[-1], t))
        self.combos = combos
        self.index = {t: i for i, t in enumerate(combos)}
        self.idx = np.array(combos, dtype=np.intp).reshape(len(combos), k)
        self.pattern = np.array(pattern_codes, dtype=np.int8)
        self.n = n

    def taken(self, codes: np.ndarray) -> np.ndarray:
        """Boolean ``(streams, combos)`` matrix of greedily selected tuples."""
        s = codes.shape[0]
        if not self.combos:
            return np.zeros((s, 0), dtype=bool)
        valid = (codes[:, self.idx] == self.pattern).all(axis=2)
        used = np.zeros((s, self.n), dtype=bool)
        taken = np.zeros_like(valid)
        for c, tup in enumerate(self.combos):
            take = valid[:, c] & ~used[:, list(tup)].any(axis=1)
            taken[:, c] = take
            for i in tup:
                used[take, i] = True
        return taken


def all_codes(n, alphabet_size=3) -> np.ndarray:
    if n == 0:
        return np.zeros((1, 0), dtype=np.int8)
    return np.array(list(itertools.product(range(alphabet_size), repeat=n)), dtype=np.int8)


def window_sums(entries, w):
    """Budget of every sliding window, NoNoise counted as zero."""
    h = len(entries)
    vals = [Fraction(0) if e is None else e for e in entries]
    if h <= w:
        return {(1, h): sum(vals, Fraction(0))} if h else {}
    return {(a, a + w - 1): sum(vals[a - 1 : a + w - 1], Fraction(0)) for a in range(1, h - w + 2)}


def nx_distances(topo):
    g = nx.Graph()
    g.add_nodes_from(n.id for n in topo.nodes)
    for link in topo.links:
        if g.has_edge(link.a, link.b):
            g[link.a][link.b]["weight"] = min(g[link.a][link.b]["weight"], link.latency_ms)
        else:
            g.add_edge(link.a, link.b, weight=link.latency_ms)
    return dict(nx.all_pairs_dijkstra_path_length(g))


def placement_oracle(topo, n_free, cands, source, sink):
    """Exhaustive minimum over every assignment; ties to the smallest tuple."""
    dist = nx_distances(topo)
    best = None
    for combo in itertools.product(sorted(cands), repeat=n_free):
        load = {}
        for node in (source, *combo, sink):
            load[node] = load.get(node, 0) + 1
        if any(load[node] > topo.by_id[node].capacity for node in load):
            continue
        path = (source, *combo, sink)
        try:
            cost = sum(dist[a][b] for a, b in zip(path, path[1:]))
        except KeyError:
            continue
        if best is None or (cost, combo) < best:
            best = (cost, combo)
    return best  # None when infeasible
