"""Shared test fixtures: graph builders and independent oracles.

The oracles here deliberately take the dumbest correct route (dense double
sums, exhaustive enumeration) so they share no code path with the library.
"""
from __future__ import annotations

import numpy as np

from csfm.graph import EpipolarGraph
from csfm.rotations import random_quat
from csfm.sim3 import Sim3


def make_graph(n, edges):
    edges = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    return EpipolarGraph(
        node_count=n, edges=edges, weights=np.ones(edges.shape[0], dtype=np.int64)
    )


def clique_edges(nodes):
    nodes = list(nodes)
    return [(nodes[i], nodes[j]) for i in range(len(nodes)) for j in range(i + 1, len(nodes))]


def brute_modularity(g: EpipolarGraph, labels) -> float:
    """Literal ordered-pair double sum: (1/2m) sum_ij (A_ij - d_i d_j / 2m) delta."""
    n = g.node_count
    A = np.zeros((n, n))
    for i, j in g.edges:
        A[i, j] = 1.0
        A[j, i] = 1.0
    d = A.sum(axis=1)
    m = g.edges.shape[0]
    q = 0.0
    for i in range(n):
        for j in range(n):
            if labels[i] == labels[j]:
                q += A[i, j] - d[i] * d[j] / (2.0 * m)
    return q / (2.0 * m)


def set_partitions(items):
    """All set partitions of ``items`` (Bell-number many)."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for k in range(len(part)):
            yield part[:k] + [[first] + part[k]] + part[k + 1 :]
        yield [[first]] + part


def exhaustive_max_modularity(g: EpipolarGraph) -> float:
    best = -np.inf
    labels = np.empty(g.node_count, dtype=np.int64)
    for part in set_partitions(range(g.node_count)):
        for cid, group in enumerate(part):
            for v in group:
                labels[v] = cid
        best = max(best, brute_modularity(g, labels))
    return best


def random_connected_graph(rng, n, extra_edges=0):
    """Random spanning tree plus ``extra_edges`` distinct chords."""
    edges = set()
    order = rng.permutation(n)
    for k in range(1, n):
        a = int(order[k])
        b = int(order[rng.integers(0, k)])
        edges.add((min(a, b), max(a, b)))
    attempts = 0
    while len(edges) < n - 1 + extra_edges and attempts < 50 * (extra_edges + 1):
        attempts += 1
        a, b = rng.integers(0, n, size=2)
        if a != b:
            edges.add((min(int(a), int(b)), max(int(a), int(b))))
    return make_graph(n, sorted(edges))


def random_sim3(rng, scale_range=(0.5, 2.0), translation=5.0) -> Sim3:
    return Sim3(
        s=float(np.exp(rng.uniform(np.log(scale_range[0]), np.log(scale_range[1])))),
        q=random_quat(rng),
        t=rng.uniform(-translation, translation, size=3),
    )
