"""Classical seed-selection baselines for the comparison harness.

Degree, k-shell, and H-index operate on the undirected view of the cascade
(their standard definitions); the leader-rank walk keeps edge directions and
adds a ground node linked both ways to every node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError
from .graphs import CascadeGraph, SeedSet, reachable_within


def ranked_order(scores) -> np.ndarray:
    """Node ids sorted by descending score, ties broken by smaller id."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    return np.lexsort((np.arange(s.size), -s))


@dataclass(frozen=True)
class RankedScores:
    method: str
    scores: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.scores).all():
            raise NumericError(f"{self.method}: non-finite scores")

    def order(self) -> np.ndarray:
        return ranked_order(self.scores)

    def top(self, k: int) -> np.ndarray:
        return self.order()[:k]


def degree_centrality(g: CascadeGraph) -> RankedScores:
    """Out-degree + in-degree."""
    return RankedScores("degree", (g.out_degrees() + g.in_degrees()).astype(np.float64))


def kshell(g: CascadeGraph) -> RankedScores:
    """Iterative undirected core peeling; score is the shell index."""
    adj = [set(map(int, nbrs)) for nbrs in g.und_adj]
    deg = np.array([len(a) for a in adj])
    shell = np.zeros(g.n, dtype=np.float64)
    remaining = set(range(g.n))
    k = 0
    while remaining:
        peel = [v for v in remaining if deg[v] <= k]
        if not peel:
            k += 1
            continue
        while peel:
            v = peel.pop()
            shell[v] = k
            remaining.discard(v)
            for u in adj[v]:
                adj[u].discard(v)
                deg[u] -= 1
                if u in remaining and deg[u] <= k and u not in peel:
                    peel.append(u)
            adj[v] = set()
    return RankedScores("kshell", shell)


def h_index(g: CascadeGraph) -> RankedScores:
    """Largest h such that the node has >= h neighbors of degree >= h."""
    und = g.und_adj
    deg = np.array([len(a) for a in und])
    scores = np.zeros(g.n, dtype=np.float64)
    for v in range(g.n):
        nbr_deg = np.sort(deg[und[v]])[::-1]
        h = 0
        while h < nbr_deg.size and nbr_deg[h] >= h + 1:
            h += 1
        scores[v] = h
    return RankedScores("hindex", scores)


def leaderrank(g: CascadeGraph, tol: float = 1e-10, max_iters: int = 100_000) -> RankedScores:
    """Random-walk score with a bidirectionally-linked ground node.

    Power-iterates the walk until the L1 change drops below tol, then
    spreads the ground node's score equally over the real nodes; the final
    scores sum to N.
    """
    n = g.n
    ground = n
    # column-stochastic transition: P[i, j] = 1/outdeg(i) for edge i -> j
    P = np.zeros((n + 1, n + 1))
    outdeg = g.out_degrees() + 1.0  # +1 for the edge to ground
    for a, b in g.edges:
        P[a, b] = 1.0 / outdeg[a]
    P[:n, ground] = 1.0 / outdeg
    P[ground, :n] = 1.0 / n

    s = np.ones(n + 1)
    s[ground] = 0.0
    for _ in range(max_iters):
        s_new = P.T @ s
        if np.abs(s_new - s).sum() < tol:
            s = s_new
            break
        s = s_new
    else:
        raise NumericError(f"leaderrank failed to converge within {max_iters} iterations")
    return RankedScores("leaderrank", s[:n] + s[ground] / n)


def greedy_dcover(g: CascadeGraph, budget: int, d: int = 1):
    """Greedy d-hop cover: repeatedly take the node covering the most
    currently-uncovered nodes (ties by smaller id); once everything is
    covered, remaining picks go by degree."""
    if budget < 1:
        raise DataError(f"budget must be >= 1, got {budget}")
    budget = min(budget, g.n)
    covers = [np.fromiter(sorted(reachable_within(g, u, d)), dtype=np.int64) for u in range(g.n)]
    covered = np.zeros(g.n, dtype=bool)
    picked: list[int] = []
    chosen = np.zeros(g.n, dtype=bool)
    while len(picked) < budget and not covered.all():
        best_v, best_gain = -1, 0
        for v in range(g.n):
            if chosen[v]:
                continue
            gain = int(np.count_nonzero(~covered[covers[v]]))
            if gain > best_gain:
                best_v, best_gain = v, gain
        if best_v < 0:
            break
        picked.append(best_v)
        chosen[best_v] = True
        covered[covers[best_v]] = True
    if len(picked) < budget:
        for v in degree_centrality(g).order():
            if not chosen[v]:
                picked.append(int(v))
                chosen[v] = True
                if len(picked) == budget:
                    break
    return SeedSet(tuple(picked), budget / g.n)
