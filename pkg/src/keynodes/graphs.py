"""Directed retweet-cascade graphs: I/O, queries, and synthetic generation.

A cascade records one source post and how it spread: an edge (src, dst)
means dst retweeted src's post, ``delay_s`` seconds after the source post
went out.  Node ids are dense 0..N-1; original string ids are kept as a
sidecar label list for reporting.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

_USERS_HEADER = (
    "id",
    "name",
    "description",
    "followers",
    "friends",
    "statuses",
    "verified",
    "geo_enabled",
)


@dataclass(frozen=True)
class SeedSet:
    """An ordered pick of key nodes; fraction is the share of N it targets."""

    members: tuple[int, ...]
    fraction: float

    def __post_init__(self):
        if len(set(self.members)) != len(self.members):
            raise DataError("seed members must be distinct")
        if not (0 < self.fraction <= 1):
            raise DataError(f"fraction must be in (0, 1], got {self.fraction}")


@dataclass(frozen=True)
class UserRecord:
    """Profile metadata for one node; None means the field is absent."""

    name: str | None = None
    description: str | None = None
    followers_count: int | None = None
    friends_count: int | None = None
    statuses_count: int | None = None
    verified: bool | None = None
    geo_enabled: bool | None = None
    retweet_delay_s: float | None = None

    def has_profile(self) -> bool:
        return any(
            v is not None
            for v in (
                self.name,
                self.description,
                self.followers_count,
                self.friends_count,
                self.statuses_count,
                self.verified,
                self.geo_enabled,
            )
        )


class CascadeGraph:
    """Immutable directed graph of one cascade.

    Construction deduplicates edges and drops self-loops (adjacency is a
    set).  All derived adjacency structures are built lazily and cached;
    instances are safe for concurrent read access.
    """

    def __init__(self, n, edges, delays=None, users=None, labels=None, source=None):
        if n < 1:
            raise DataError("graph needs at least one node")
        edges = [(int(a), int(b)) for a, b in edges]
        if delays is None:
            delays = [0.0] * len(edges)
        if len(delays) != len(edges):
            raise DataError("delays must align with edges")
        seen: set[tuple[int, int]] = set()
        kept, kept_delays = [], []
        for (a, b), d in zip(edges, delays):
            if not (0 <= a < n and 0 <= b < n):
                raise DataError(f"edge ({a},{b}) endpoint out of range for n={n}")
            if a == b or (a, b) in seen:
                continue
            seen.add((a, b))
            kept.append((a, b))
            kept_delays.append(float(d))
        self.n = int(n)
        self.edges = np.array(kept, dtype=np.int64).reshape(len(kept), 2)
        self.delays = np.array(kept_delays, dtype=np.float64)
        if users is not None and len(users) != n:
            raise DataError("users must have one entry per node")
        self.users = tuple(users) if users is not None else None
        self.labels = tuple(labels) if labels is not None else tuple(str(i) for i in range(n))
        self._out = None
        self._in = None
        self._und = None
        self._und_graph = None
        self.source = int(source) if source is not None else self._find_source()

    # -- adjacency ---------------------------------------------------------

    def _build_adj(self):
        out = [[] for _ in range(self.n)]
        inn = [[] for _ in range(self.n)]
        for a, b in self.edges:
            out[a].append(b)
            inn[b].append(a)
        self._out = tuple(np.array(sorted(x), dtype=np.int64) for x in out)
        self._in = tuple(np.array(sorted(x), dtype=np.int64) for x in inn)

    @property
    def out_adj(self):
        if self._out is None:
            self._build_adj()
        return self._out

    @property
    def in_adj(self):
        if self._in is None:
            self._build_adj()
        return self._in

    @property
    def und_adj(self):
        """Undirected simple adjacency (reciprocal edges collapse)."""
        if self._und is None:
            nbrs = [set() for _ in range(self.n)]
            for a, b in self.edges:
                nbrs[a].add(b)
                nbrs[b].add(a)
            self._und = tuple(np.array(sorted(x), dtype=np.int64) for x in nbrs)
        return self._und

    def out_degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        if len(self.edges):
            deg += np.bincount(self.edges[:, 0], minlength=self.n)
        return deg

    def in_degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        if len(self.edges):
            deg += np.bincount(self.edges[:, 1], minlength=self.n)
        return deg

    def undirected(self) -> "CascadeGraph":
        """Symmetrized view: every edge present in both directions."""
        if self._und_graph is None:
            both = list(map(tuple, self.edges)) + [(int(b), int(a)) for a, b in self.edges]
            delays = list(self.delays) + list(self.delays)
            self._und_graph = CascadeGraph(
                self.n, both, delays, users=self.users, labels=self.labels, source=self.source
            )
        return self._und_graph

    def _find_source(self) -> int:
        indeg = self.in_degrees()
        for v in range(self.n):
            if indeg[v] == 0 and len(_bfs(self.out_adj, v)) == self.n:
                return v
        return 0

    def node_delay(self, v: int) -> float | None:
        """Seconds after the source post at which v first retweeted."""
        mask = self.edges[:, 1] == v
        if not mask.any():
            return None
        return float(self.delays[mask].min())


def _bfs(adj, start, max_depth=None):
    """Hop distances from start over the given adjacency; dict node -> dist."""
    dist = {start: 0}
    q = deque([start])
    while q:
        v = q.popleft()
        if max_depth is not None and dist[v] >= max_depth:
            continue
        for u in adj[v]:
            u = int(u)
            if u not in dist:
                dist[u] = dist[v] + 1
                q.append(u)
    return dist


def bfs_distances(g: CascadeGraph, start: int) -> np.ndarray:
    """Directed hop distance from start to every node; -1 if unreachable."""
    out = np.full(g.n, -1, dtype=np.int64)
    for v, d in _bfs(g.out_adj, start).items():
        out[v] = d
    return out


def shortest_path_len(g: CascadeGraph, a: int, b: int) -> int | None:
    """Directed BFS distance a -> b, or None when b is unreachable from a."""
    _check_node(g, a)
    _check_node(g, b)
    if a == b:
        return 0
    dist = _bfs(g.out_adj, a)
    return dist.get(b)


def out_neighborhood(g: CascadeGraph, v: int, d: int) -> set[int]:
    """Nodes whose selection covers v: every u with a directed path
    u -> v of length <= d, plus v itself."""
    _check_node(g, v)
    if d < 1:
        raise DataError(f"hop radius must be >= 1, got {d}")
    return set(_bfs(g.in_adj, v, max_depth=d))


def reachable_within(g: CascadeGraph, u: int, d: int) -> set[int]:
    """Nodes u covers: everything within d directed hops downstream, incl u."""
    _check_node(g, u)
    if d < 1:
        raise DataError(f"hop radius must be >= 1, got {d}")
    return set(_bfs(g.out_adj, u, max_depth=d))


def largest_component_size(g: CascadeGraph, removed: set[int]) -> int:
    """Size of the largest weakly-connected component of g minus `removed`."""
    removed = set(int(v) for v in removed)
    for v in removed:
        _check_node(g, v)
    alive = [v for v in range(g.n) if v not in removed]
    if not alive:
        return 0
    und = g.und_adj
    seen = set(removed)
    best = 0
    for start in alive:
        if start in seen:
            continue
        size = 0
        q = deque([start])
        seen.add(start)
        while q:
            v = q.popleft()
            size += 1
            for u in und[v]:
                u = int(u)
                if u not in seen:
                    seen.add(u)
                    q.append(u)
        best = max(best, size)
    return best


def _check_node(g: CascadeGraph, v: int):
    if not (0 <= v < g.n):
        raise DataError(f"node {v} out of range for n={g.n}")


# -- file formats -----------------------------------------------------------


def load_cascade(dir_path) -> CascadeGraph:
    """Load a cascade directory holding edges.tsv and optional users.tsv.

    edges.tsv lines are ``src<TAB>dst<TAB>delay_s``; ``#`` comments and blank
    lines are skipped.  Node ids may be arbitrary strings and are remapped to
    dense 0..N-1 in first-appearance order.
    """
    d = Path(dir_path)
    epath = d / "edges.tsv"
    if not epath.is_file():
        raise DataError(f"{epath}: missing edges.tsv")

    ids: dict[str, int] = {}
    labels: list[str] = []

    def intern(tok: str) -> int:
        if tok not in ids:
            ids[tok] = len(labels)
            labels.append(tok)
        return ids[tok]

    raw_edges: list[tuple[int, int]] = []
    raw_delays: list[float] = []
    with open(epath, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split("\t")
            if len(parts) != 3:
                raise DataError(
                    f"{epath}:{lineno}: expected 'src<TAB>dst<TAB>delay_s', got {line.rstrip()!r}"
                )
            try:
                delay = float(parts[2])
            except ValueError:
                raise DataError(f"{epath}:{lineno}: bad delay {parts[2]!r}") from None
            if not np.isfinite(delay) or delay < 0:
                raise DataError(f"{epath}:{lineno}: delay must be finite and >= 0")
            raw_edges.append((intern(parts[0]), intern(parts[1])))
            raw_delays.append(delay)
    if not raw_edges:
        raise DataError(f"{epath}: no edges")

    n = len(labels)
    profiles: dict[int, UserRecord] = {}
    upath = d / "users.tsv"
    if upath.is_file():
        profiles = _parse_users(upath, ids)

    g = CascadeGraph(n, raw_edges, raw_delays, labels=labels)
    users = []
    for v in range(n):
        delay = g.node_delay(v)
        prof = profiles.get(v)
        if prof is None and delay is None:
            users.append(UserRecord())
        elif prof is None:
            users.append(UserRecord(retweet_delay_s=delay))
        else:
            users.append(
                UserRecord(
                    name=prof.name,
                    description=prof.description,
                    followers_count=prof.followers_count,
                    friends_count=prof.friends_count,
                    statuses_count=prof.statuses_count,
                    verified=prof.verified,
                    geo_enabled=prof.geo_enabled,
                    retweet_delay_s=delay,
                )
            )
    return CascadeGraph(
        n, raw_edges, raw_delays, users=users, labels=labels, source=g.source
    )


def _parse_users(upath: Path, ids: dict[str, int]) -> dict[int, UserRecord]:
    def opt_int(tok, lineno, col):
        if tok == "":
            return None
        try:
            val = int(tok)
        except ValueError:
            raise DataError(f"{upath}:{lineno}: bad integer {tok!r} in {col}") from None
        if val < 0:
            raise DataError(f"{upath}:{lineno}: {col} must be >= 0")
        return val

    def opt_bool(tok, lineno, col):
        if tok == "":
            return None
        low = tok.lower()
        if low in ("1", "true"):
            return True
        if low in ("0", "false"):
            return False
        raise DataError(f"{upath}:{lineno}: bad boolean {tok!r} in {col}")

    profiles: dict[int, UserRecord] = {}
    with open(upath, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if tuple(header.split("\t")) != _USERS_HEADER:
            raise DataError(f"{upath}:1: bad header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            cells = line.rstrip("\n").split("\t")
            if len(cells) != len(_USERS_HEADER):
                raise DataError(
                    f"{upath}:{lineno}: expected {len(_USERS_HEADER)} columns, got {len(cells)}"
                )
            if cells[0] not in ids:
                raise DataError(f"{upath}:{lineno}: user id {cells[0]!r} not in edge file")
            v = ids[cells[0]]
            if v in profiles:
                raise DataError(f"{upath}:{lineno}: duplicate user row for id {cells[0]!r}")
            profiles[v] = UserRecord(
                name=cells[1] or None,
                description=cells[2] or None,
                followers_count=opt_int(cells[3], lineno, "followers"),
                friends_count=opt_int(cells[4], lineno, "friends"),
                statuses_count=opt_int(cells[5], lineno, "statuses"),
                verified=opt_bool(cells[6], lineno, "verified"),
                geo_enabled=opt_bool(cells[7], lineno, "geo_enabled"),
            )
    return profiles


def save_cascade(g: CascadeGraph, dir_path) -> None:
    """Write edges.tsv (and users.tsv when any profile field is set)."""
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    for (a, b), delay in zip(g.edges, g.delays):
        lines.append(f"{g.labels[a]}\t{g.labels[b]}\t{float(delay)!r}\n")
    with open(d / "edges.tsv", "w", encoding="utf-8") as fh:
        fh.writelines(lines)

    if g.users is None or not any(u is not None and u.has_profile() for u in g.users):
        return

    def cell(val):
        if val is None:
            return ""
        if isinstance(val, bool):
            return "1" if val else "0"
        return str(val)

    with open(d / "users.tsv", "w", encoding="utf-8") as fh:
        fh.write("\t".join(_USERS_HEADER) + "\n")
        for v in range(g.n):
            u = g.users[v]
            if u is None or not u.has_profile():
                continue
            fh.write(
                "\t".join(
                    [
                        g.labels[v],
                        cell(u.name),
                        cell(u.description),
                        cell(u.followers_count),
                        cell(u.friends_count),
                        cell(u.statuses_count),
                        cell(u.verified),
                        cell(u.geo_enabled),
                    ]
                )
                + "\n"
            )


# -- synthetic cascades ------------------------------------------------------

_LETTERS = np.array(list("abcdefghijklmnopqrstuvwxyz"))


def synth_cascade(
    n_nodes: int,
    extra_edge_frac: float = 0.0,
    attr_noise: float = 0.0,
    rng_seed: int = 0,
) -> CascadeGraph:
    """Generate a retweet cascade: preferential-attachment tree plus extras.

    Node 0 posts; each later node retweets an existing node chosen with
    probability proportional to (out-degree + 1), which yields the heavy-
    tailed hub structure of real cascades.  ``extra_edge_frac * n`` extra
    retweet edges are layered on top.  followers_count correlates with
    out-degree, log-normally perturbed by ``attr_noise``.  Deterministic for
    a fixed seed.
    """
    if n_nodes < 10:
        raise DataError(f"n_nodes must be >= 10, got {n_nodes}")
    if extra_edge_frac < 0 or attr_noise < 0:
        raise DataError("extra_edge_frac and attr_noise must be >= 0")
    rng = np.random.default_rng(rng_seed)

    outdeg = np.zeros(n_nodes, dtype=np.int64)
    node_delay = np.zeros(n_nodes, dtype=np.float64)
    edges: list[tuple[int, int]] = []
    delays: list[float] = []
    for t in range(1, n_nodes):
        w = outdeg[:t] + 1.0
        parent = int(rng.choice(t, p=w / w.sum()))
        edges.append((parent, t))
        node_delay[t] = node_delay[parent] + rng.exponential(60.0)
        delays.append(node_delay[t])
        outdeg[parent] += 1

    present = set(edges)
    n_extra = int(round(extra_edge_frac * n_nodes))
    attempts = 0
    added = 0
    while added < n_extra and attempts < 50 * (n_extra + 1):
        attempts += 1
        w = outdeg + 1.0
        src = int(rng.choice(n_nodes, p=w / w.sum()))
        dst = int(rng.integers(1, n_nodes))
        if src == dst or (src, dst) in present:
            continue
        present.add((src, dst))
        edges.append((src, dst))
        delays.append(max(node_delay[src], node_delay[dst]) + rng.exponential(60.0))
        outdeg[src] += 1
        added += 1

    users = []
    for v in range(n_nodes):
        followers = int(
            round(50.0 * (outdeg[v] + 1) * np.exp(attr_noise * rng.standard_normal()))
        )
        name_len = int(rng.integers(3, 13))
        name = "".join(_LETTERS[rng.integers(0, 26, size=name_len)])
        has_desc = rng.random() < 0.7
        desc_len = int(rng.integers(5, 121))
        description = (
            "".join(_LETTERS[rng.integers(0, 26, size=desc_len)]) if has_desc else None
        )
        friends = int(rng.poisson(80))
        statuses = int(rng.poisson(200))
        verified = bool(followers > 2000 or rng.random() < 0.02)
        geo = bool(rng.random() < 0.4)
        drop = attr_noise > 0 and rng.random() < 0.05
        users.append(
            UserRecord(
                name=name,
                description=description,
                followers_count=followers,
                friends_count=None if drop else friends,
                statuses_count=statuses,
                verified=verified,
                geo_enabled=geo,
                retweet_delay_s=float(node_delay[v]) if v != 0 else None,
            )
        )
    return CascadeGraph(n_nodes, edges, delays, users=users, source=0)
