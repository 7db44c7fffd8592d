"""Spread and robustness evaluation of seed sets, plus method comparison.

Infection runs a discrete SIR process on the undirected view: every
infected node tries each susceptible neighbor once with probability mu,
then recovers for good.  The robustness index is the surviving largest
weakly-connected component after deleting the seed set.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import baselines
from .errors import DataError
from .graphs import CascadeGraph, largest_component_size
from .seeding import derived_seed
from .training import select_seeds

BUILTIN_METHODS = ("degree", "kshell", "hindex", "leaderrank", "greedy", "random")

REPORT_HEADER = "graph,method,st_mean,st_stderr,r,mu,runs,fraction"


@dataclass(frozen=True)
class SirConfig:
    mu: float | None = None  # None: per-graph default off the epidemic threshold
    runs: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        if self.mu is not None and not (0.0 <= self.mu <= 1.0):
            raise DataError(f"mu must be in [0, 1], got {self.mu}")
        if self.runs < 1:
            raise DataError("runs must be >= 1")


def default_mu(g: CascadeGraph) -> float:
    """1.5x the heterogeneous mean-field epidemic threshold <k>/(<k^2>-<k>),
    capped at 1; keeps spread off the floor on heavy-tailed graphs."""
    deg = np.array([len(a) for a in g.und_adj], dtype=np.float64)
    k1 = deg.mean()
    k2 = (deg**2).mean()
    if k2 - k1 <= 0:
        return 1.0
    return float(min(1.0, 1.5 * k1 / (k2 - k1)))


def sir_run(g: CascadeGraph, seeds, mu: float, rng: np.random.Generator) -> int:
    """One stochastic outbreak; returns the count of ever-infected nodes.

    Recovery is certain after one step, so at termination the recovered set
    is exactly the ever-infected set.
    """
    seeds = np.asarray(sorted(set(int(v) for v in seeds)), dtype=np.int64)
    if seeds.size == 0:
        raise DataError("sir_run needs a non-empty seed set")
    if seeds.min() < 0 or seeds.max() >= g.n:
        raise DataError("seed out of range")
    und = g.und_adj
    susceptible = np.ones(g.n, dtype=bool)
    susceptible[seeds] = False
    infected = seeds
    total = seeds.size
    while infected.size:
        contacts = (
            np.concatenate([und[v] for v in infected]) if infected.size else infected
        )
        contacts = contacts[susceptible[contacts]]
        if contacts.size == 0 or mu == 0.0:
            break
        counts = np.bincount(contacts, minlength=g.n)
        candidates = np.nonzero(counts)[0]
        if mu == 1.0:
            fresh = candidates
        else:
            p = 1.0 - (1.0 - mu) ** counts[candidates]
            fresh = candidates[rng.random(candidates.size) < p]
        susceptible[fresh] = False
        total += fresh.size
        infected = fresh
    return int(total)


def infection_rate(g: CascadeGraph, seeds, cfg: SirConfig) -> tuple[float, float]:
    """Monte-Carlo mean and standard error of the final infected fraction.

    Each run draws from its own (seed, run) stream, so the estimate is
    independent of run order and parallelism.
    """
    mu = cfg.mu if cfg.mu is not None else default_mu(g)
    counts = np.empty(cfg.runs, dtype=np.int64)
    for r in range(cfg.runs):
        rng = np.random.default_rng(derived_seed(cfg.rng_seed, r))
        counts[r] = sir_run(g, seeds, mu, rng)
    # statistics over the integer counts first, so the degenerate cases
    # (mu 0 or 1: every run identical) come out exactly |seeds|/N and 0
    mean = counts.mean() / g.n
    stderr = float(counts.std(ddof=1) / g.n / math.sqrt(cfg.runs)) if cfg.runs > 1 else 0.0
    return float(mean), stderr


def robustness(g: CascadeGraph, seeds) -> float:
    """Fraction of nodes in the largest component after removing the seeds;
    lower means the selection fragments the network more."""
    return largest_component_size(g, set(int(v) for v in seeds)) / g.n


@dataclass(frozen=True)
class EvalRow:
    graph: str
    method: str
    st_mean: float
    st_stderr: float
    r: float
    mu: float
    runs: int
    fraction: float


@dataclass
class EvalReport:
    rows: list[EvalRow]

    def methods(self) -> list[str]:
        seen: list[str] = []
        for row in self.rows:
            if row.method not in seen:
                seen.append(row.method)
        return seen

    def method_rows(self, method: str) -> list[EvalRow]:
        return [r for r in self.rows if r.method == method]

    def method_means(self) -> dict[str, tuple[float, float]]:
        """method -> (mean S_t, mean R) across graphs."""
        out = {}
        for m in self.methods():
            rows = self.method_rows(m)
            out[m] = (
                float(np.mean([r.st_mean for r in rows])),
                float(np.mean([r.r for r in rows])),
            )
        return out

    def to_csv(self) -> str:
        lines = [REPORT_HEADER]
        for r in self.rows:
            lines.append(
                f"{r.graph},{r.method},{r.st_mean!r},{r.st_stderr!r},{r.r!r},"
                f"{r.mu!r},{r.runs},{r.fraction!r}"
            )
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        means = self.method_means()
        width = max([len("method")] + [len(m) for m in means])
        lines = [f"{'method':<{width}}  {'S_t':>8}  {'R':>8}"]
        for m, (st, r) in means.items():
            lines.append(f"{m:<{width}}  {st:>8.4f}  {r:>8.4f}")
        return "\n".join(lines)


def _select_for_method(method, g, gi, k, fraction, d_cover, cfg, scorers):
    if scorers and method in scorers:
        return select_seeds(scorers[method](g, gi), fraction).members
    if method == "degree":
        return tuple(int(v) for v in baselines.degree_centrality(g).top(k))
    if method == "kshell":
        return tuple(int(v) for v in baselines.kshell(g).top(k))
    if method == "hindex":
        return tuple(int(v) for v in baselines.h_index(g).top(k))
    if method == "leaderrank":
        return tuple(int(v) for v in baselines.leaderrank(g).top(k))
    if method == "greedy":
        return baselines.greedy_dcover(g, k, d_cover).members
    if method == "random":
        rng = np.random.default_rng(derived_seed(cfg.rng_seed, gi, 104729))
        return tuple(int(v) for v in rng.permutation(g.n)[:k])
    raise AssertionError(method)


def compare_methods(
    graphs,
    methods,
    cfg: SirConfig,
    seed_fraction: float,
    d_cover: int = 1,
    scorers: dict | None = None,
    names: list[str] | None = None,
    jobs: int = 1,
) -> EvalReport:
    """Evaluate every method on every graph: S_t (Monte-Carlo) and R.

    `scorers` supplies score callables ``(graph, graph_index) -> array`` for
    model-based methods; built-in names are degree, kshell, hindex,
    leaderrank, greedy, and random.
    """
    methods = list(methods)
    valid = set(BUILTIN_METHODS) | set(scorers or {})
    unknown = [m for m in methods if m not in valid]
    if unknown:
        raise DataError(f"unknown method(s) {unknown}; valid: {sorted(valid)}")
    if not (0 < seed_fraction <= 1):
        raise DataError(f"fraction must be in (0, 1], got {seed_fraction}")
    names = names if names is not None else [f"graph{gi}" for gi in range(len(graphs))]

    def eval_graph(gi: int) -> list[EvalRow]:
        g = graphs[gi]
        mu = cfg.mu if cfg.mu is not None else default_mu(g)
        k = math.ceil(seed_fraction * g.n)
        rcfg = SirConfig(mu=mu, runs=cfg.runs, rng_seed=derived_seed(cfg.rng_seed, gi))
        rows = []
        for method in methods:
            seeds = _select_for_method(method, g, gi, k, seed_fraction, d_cover, cfg, scorers)
            st, se = infection_rate(g, seeds, rcfg)
            rows.append(
                EvalRow(names[gi], method, st, se, robustness(g, seeds), mu, cfg.runs, seed_fraction)
            )
        return rows

    if jobs > 1 and len(graphs) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_graph = list(pool.map(eval_graph, range(len(graphs))))
    else:
        per_graph = [eval_graph(gi) for gi in range(len(graphs))]
    return EvalReport([row for rows in per_graph for row in rows])
