"""Per-node feature views: profile attributes and random-walk statistics."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError
from .graphs import CascadeGraph, bfs_distances
from .seeding import derived_seed

USER_DIM = 9
STRUCT_DIM = 8

# count-like user columns that get log(1+x) before z-scoring: name length,
# description length, followers, friends, statuses, retweet delay
_USER_LOG_COLS = (0, 1, 2, 3, 4, 7)


@dataclass(frozen=True)
class WalkConfig:
    walks_per_node: int = 10
    walk_len: int = 4
    rng_seed: int = 0

    def __post_init__(self):
        if self.walks_per_node < 1 or self.walk_len < 1:
            raise DataError("walks_per_node and walk_len must be >= 1")
        if self.rng_seed < 0:
            raise DataError("rng_seed must be >= 0")


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray  # (N, F) float64
    view_tag: str  # "user" | "structure"

    def __post_init__(self):
        if self.view_tag not in ("user", "structure"):
            raise DataError(f"unknown view tag {self.view_tag!r}")
        if not np.isfinite(self.values).all():
            raise DataError(f"{self.view_tag} features contain NaN/Inf")


def user_attribute_vector(g: CascadeGraph, v: int) -> np.ndarray:
    """The 9 profile features of node v, in fixed order.

    (name chars, description chars, followers, friends, statuses,
    verified, geo_enabled, retweet delay seconds, hops from the source).
    Absent fields map to 0; an unreachable node maps feature 9 to 0.
    """
    if not (0 <= v < g.n):
        raise DataError(f"node {v} out of range for n={g.n}")
    u = g.users[v] if g.users is not None else None
    dist = bfs_distances(g, g.source)[v]
    vec = np.zeros(USER_DIM, dtype=np.float64)
    if u is not None:
        vec[0] = len(u.name) if u.name is not None else 0
        vec[1] = len(u.description) if u.description is not None else 0
        vec[2] = u.followers_count or 0
        vec[3] = u.friends_count or 0
        vec[4] = u.statuses_count or 0
        vec[5] = 1.0 if u.verified else 0.0
        vec[6] = 1.0 if u.geo_enabled else 0.0
        vec[7] = u.retweet_delay_s or 0.0
    vec[8] = max(dist, 0)
    return vec


def user_feature_matrix(g: CascadeGraph) -> FeatureMatrix:
    """Raw (unnormalized) user-attribute view for every node."""
    dist = bfs_distances(g, g.source)
    mat = np.zeros((g.n, USER_DIM), dtype=np.float64)
    for v in range(g.n):
        u = g.users[v] if g.users is not None else None
        if u is not None:
            mat[v, 0] = len(u.name) if u.name is not None else 0
            mat[v, 1] = len(u.description) if u.description is not None else 0
            mat[v, 2] = u.followers_count or 0
            mat[v, 3] = u.friends_count or 0
            mat[v, 4] = u.statuses_count or 0
            mat[v, 5] = 1.0 if u.verified else 0.0
            mat[v, 6] = 1.0 if u.geo_enabled else 0.0
            mat[v, 7] = u.retweet_delay_s or 0.0
        mat[v, 8] = max(int(dist[v]), 0)
    return FeatureMatrix(mat, "user")


def _zscore(mat: np.ndarray) -> np.ndarray:
    mean = mat.mean(axis=0)
    std = mat.std(axis=0)
    safe = np.where(std > 0, std, 1.0)
    out = (mat - mean) / safe
    out[:, std == 0] = 0.0
    return out


def normalize_features(m: FeatureMatrix) -> FeatureMatrix:
    """Per-graph normalization: log(1+x) on count-like user columns, then
    z-score every column; zero-variance columns become all zeros."""
    vals = m.values.astype(np.float64, copy=True)
    if m.view_tag == "user":
        for c in _USER_LOG_COLS:
            vals[:, c] = np.log1p(vals[:, c])
    return FeatureMatrix(_zscore(vals), m.view_tag)


def raw_walk_statistics(
    g: CascadeGraph, cfg: WalkConfig, undirected: bool = False
) -> np.ndarray:
    """Unnormalized (N, 8) walk statistics.

    Columns: out-degree and in-degree (each over n-1), mean and max
    out-degree of visited nodes, return frequency, distinct-visit ratio,
    fraction of walks that ran the full length without getting stuck, and
    mean depth reached.  Each node samples its walks from its own derived
    RNG stream, so results are independent of evaluation order.
    """
    gv = g.undirected() if undirected else g
    adj = gv.out_adj
    outdeg = gv.out_degrees().astype(np.float64)
    indeg = gv.in_degrees().astype(np.float64)
    denom = max(g.n - 1, 1)
    steps_total = cfg.walks_per_node * cfg.walk_len

    stats = np.zeros((g.n, STRUCT_DIM), dtype=np.float64)
    for v in range(g.n):
        rng = np.random.default_rng(derived_seed(cfg.rng_seed, v))
        visited: list[int] = []
        distinct = {v}
        returns = 0
        depth_sum = 0
        full_walks = 0
        for _ in range(cfg.walks_per_node):
            cur = v
            depth = 0
            stuck = False
            for _ in range(cfg.walk_len):
                nbrs = adj[cur]
                if nbrs.size == 0:
                    cur = v
                    depth = 0
                    stuck = True
                else:
                    cur = int(nbrs[rng.integers(nbrs.size)])
                    depth += 1
                visited.append(cur)
                distinct.add(cur)
                if cur == v:
                    returns += 1
                depth_sum += depth
            if not stuck:
                full_walks += 1
        vis_deg = outdeg[visited]
        stats[v, 0] = outdeg[v] / denom
        stats[v, 1] = indeg[v] / denom
        stats[v, 2] = vis_deg.mean()
        stats[v, 3] = vis_deg.max()
        stats[v, 4] = returns / steps_total
        stats[v, 5] = len(distinct) / (steps_total + 1)
        stats[v, 6] = full_walks / cfg.walks_per_node
        stats[v, 7] = depth_sum / steps_total
    return stats


def random_walk_features(
    g: CascadeGraph, cfg: WalkConfig, undirected: bool = False
) -> FeatureMatrix:
    """Structural view: per-graph z-scored random-walk statistics."""
    return FeatureMatrix(_zscore(raw_walk_statistics(g, cfg, undirected)), "structure")


def featurize_graph(
    g: CascadeGraph,
    walk_cfg: WalkConfig,
    master_seed: int,
    graph_index: int,
    undirected: bool = False,
) -> tuple[FeatureMatrix, FeatureMatrix]:
    """Both normalized views for one graph of a dataset, deterministically
    keyed by (master seed, graph index)."""
    user = normalize_features(user_feature_matrix(g))
    wcfg = replace(walk_cfg, rng_seed=derived_seed(master_seed, graph_index))
    struct = random_walk_features(g, wcfg, undirected=undirected)
    return user, struct


def dump_features_csv(
    user: FeatureMatrix, struct: FeatureMatrix, path
) -> None:
    """Write both views as ``node,view,f0..f8`` rows (structure leaves f8 empty)."""
    width = max(user.values.shape[1], struct.values.shape[1])
    header = "node,view," + ",".join(f"f{i}" for i in range(width))
    lines = [header + "\n"]
    for tag, m in (("user", user), ("structure", struct)):
        for v in range(m.values.shape[0]):
            cells = [repr(float(x)) for x in m.values[v]]
            cells += [""] * (width - len(cells))
            lines.append(f"{v},{tag}," + ",".join(cells) + "\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)
