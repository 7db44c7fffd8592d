"""Shared graph builders for the test suite."""

from keynodes.graphs import CascadeGraph


def path_graph(k, delays=None):
    """0 -> 1 -> ... -> k-1."""
    edges = [(i, i + 1) for i in range(k - 1)]
    return CascadeGraph(k, edges, delays)


def star_graph(k):
    """Center 0 with k leaves: 0 -> 1..k."""
    return CascadeGraph(k + 1, [(0, i) for i in range(1, k + 1)])


def random_digraph(rng, n, p):
    """Random directed graph; every node is touched by at least one edge."""
    edges = [(a, b) for a in range(n) for b in range(n) if a != b and rng.random() < p]
    if not edges:
        edges = [(0, 1 % n)]
    return CascadeGraph(n, edges)


def random_dag(rng, n, p):
    """Random DAG: edges only go from smaller to larger ids."""
    edges = [(a, b) for a in range(n) for b in range(a + 1, n) if rng.random() < p]
    if not edges:
        edges = [(0, n - 1)]
    return CascadeGraph(n, edges)


def edge_sets(g):
    return set(map(tuple, g.edges))
