"""Unsupervised coverage objective, Adam, the training loop, and seed picks.

The objective treats each node's score as the probability of drafting it
into the seed set: it penalizes the expected number of nodes left uncovered
(a node is covered when any selected node lies within d directed hops
upstream of it, itself included) plus lambda times the expected seed count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParamStore, Tape, first_nonfinite
from .baselines import ranked_order
from .errors import DataError, NumericError
from .features import WalkConfig, featurize_graph
from .graphs import CascadeGraph, SeedSet, reachable_within
from .model import (
    ModelConfig,
    bind_params,
    check_ablations,
    collect_grads,
    init_params,
    mmen_forward,
)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 2
    epochs: int = 50
    lr: float = 5e-4
    lam: float = 1.0
    d_cover: int = 1
    patience: int = 10
    seed_fraction: float = 0.05
    rng_seed: int = 0

    def __post_init__(self):
        if self.lam <= 0:
            raise DataError("lambda must be > 0")
        if not (0 < self.seed_fraction <= 1):
            raise DataError("seed_fraction must be in (0, 1]")
        if self.batch_size < 1 or self.epochs < 1 or self.d_cover < 1:
            raise DataError("batch_size, epochs, d_cover must be >= 1")
        if self.patience < 0:
            raise DataError("patience must be >= 0")


def select_seeds(scores: np.ndarray, fraction: float) -> SeedSet:
    """Top ceil(fraction * N) nodes by score, ties broken by smaller id."""
    if not (0 < fraction <= 1):
        raise DataError(f"fraction must be in (0, 1], got {fraction}")
    scores = np.asarray(scores, dtype=np.float64).ravel()
    k = math.ceil(fraction * scores.size)
    order = ranked_order(scores)
    return SeedSet(tuple(int(v) for v in order[:k]), fraction)


def cover_pairs(g: CascadeGraph, d: int) -> tuple[np.ndarray, np.ndarray]:
    """(u, v) index arrays with u covering v: directed path u -> v of
    length <= d, plus every v covering itself."""
    us, vs = [], []
    for u in range(g.n):
        for v in reachable_within(g, u, d):
            us.append(u)
            vs.append(v)
    return np.array(us, dtype=np.int64), np.array(vs, dtype=np.int64)


def coverage_loss(tape: Tape, scores_id: int, g: CascadeGraph, lam: float, d: int, pairs=None) -> int:
    """Record the loss on the tape; returns the scalar node id.

    First term: sum over nodes of the product of (1 - s_u) over the node's
    coverers, computed in log space with 1 - s clamped at 1e-12 so saturated
    scores cannot underflow the product.  Second term: lam * sum(s).
    """
    if g.n == 0:
        raise DataError("coverage loss needs a non-empty graph")
    if lam <= 0:
        raise DataError("lambda must be > 0")
    u_idx, v_idx = cover_pairs(g, d) if pairs is None else pairs
    one = tape.leaf(np.ones((1, 1)))
    one_minus = tape.record("add", [one, tape.record("scalar_mul", [scores_id], c=-1.0)])
    logs = tape.record("log", [tape.record("clamp_min", [one_minus], c=1e-12)])
    per_node = tape.record(
        "segment_sum",
        [tape.record("gather_rows", [logs], indices=u_idx)],
        segments=v_idx,
        num_segments=g.n,
    )
    uncovered = tape.record("sum", [tape.record("exp", [per_node])])
    seed_size = tape.record("scalar_mul", [tape.record("sum", [scores_id])], c=lam)
    return tape.record("add", [uncovered, seed_size])


@dataclass
class AdamState:
    m: ParamStore
    v: ParamStore
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ParamStore) -> "AdamState":
        return cls(m=params.zeros_like(), v=params.zeros_like())


def adam_step(params: ParamStore, grads: dict, state: AdamState, lr: float) -> ParamStore:
    """Standard bias-corrected Adam update, in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name in params.names():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        params[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


@dataclass
class GraphBundle:
    """One graph prepared for training: features and cover pairs."""

    graph: CascadeGraph
    user: np.ndarray
    struct: np.ndarray
    pairs: tuple[np.ndarray, np.ndarray]


def prepare_graphs(
    graphs,
    cfg: TrainConfig,
    walk_cfg: WalkConfig,
    undirected: bool = False,
    index_offset: int = 0,
) -> list[GraphBundle]:
    bundles = []
    for i, g in enumerate(graphs):
        user, struct = featurize_graph(
            g, walk_cfg, cfg.rng_seed, index_offset + i, undirected=undirected
        )
        bundles.append(GraphBundle(g, user.values, struct.values, cover_pairs(g, cfg.d_cover)))
    return bundles


def _graph_loss(tape, bundle, params, binding, model_cfg, cfg, ablate, undirected):
    fwd = mmen_forward(
        tape,
        bundle.graph,
        bundle.user,
        bundle.struct,
        params,
        model_cfg,
        binding=binding,
        ablate=ablate,
        undirected=undirected,
    )
    return coverage_loss(tape, fwd.score, bundle.graph, cfg.lam, cfg.d_cover, pairs=bundle.pairs)


def _check_finite(tape, loss_id, context):
    val = tape.value(loss_id).item()
    if not np.isfinite(val):
        bad = first_nonfinite(tape)
        where = f"op '{bad[1]}' (tape node {bad[0]})" if bad else "loss"
        raise NumericError(f"non-finite value from {where} during {context}")
    return val


@dataclass
class TrainResult:
    params: ParamStore
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf


def train(
    train_graphs,
    val_graphs,
    cfg: TrainConfig,
    model_cfg: ModelConfig | None = None,
    walk_cfg: WalkConfig | None = None,
    ablate=frozenset(),
    undirected: bool = False,
    init: ParamStore | None = None,
) -> TrainResult:
    """Batch training with early stopping on mean validation loss.

    Deterministic for a fixed cfg.rng_seed: parameter init, walk features,
    and the per-epoch shuffle all derive from it.  Returns the parameters of
    the best validation epoch.
    """
    if not train_graphs or not val_graphs:
        raise DataError("need at least one training and one validation graph")
    model_cfg = model_cfg or ModelConfig()
    walk_cfg = walk_cfg or WalkConfig()
    ablate = check_ablations(ablate)

    train_b = prepare_graphs(train_graphs, cfg, walk_cfg, undirected)
    val_b = prepare_graphs(val_graphs, cfg, walk_cfg, undirected, index_offset=len(train_b))

    params = init.copy() if init is not None else init_params(model_cfg, cfg.rng_seed, ablate)
    adam = AdamState.for_params(params)
    shuffle_rng = np.random.default_rng([cfg.rng_seed, 1])

    result = TrainResult(params.copy())
    bad_epochs = 0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(train_b))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            grads_sum: dict[str, np.ndarray] | None = None
            for gi in batch:
                tape = Tape()
                binding = bind_params(tape, params)
                loss_id = _graph_loss(
                    tape, train_b[gi], params, binding, model_cfg, cfg, ablate, undirected
                )
                epoch_loss += _check_finite(tape, loss_id, f"epoch {epoch} training")
                tape.backward(loss_id)
                grads = collect_grads(tape, binding)
                if grads_sum is None:
                    grads_sum = grads
                else:
                    for name in grads_sum:
                        grads_sum[name] += grads[name]
            adam_step(params, grads_sum, adam, cfg.lr)
        train_loss = epoch_loss / len(train_b)

        val_loss = 0.0
        for bundle in val_b:
            tape = Tape()
            binding = bind_params(tape, params)
            loss_id = _graph_loss(tape, bundle, params, binding, model_cfg, cfg, ablate, undirected)
            val_loss += _check_finite(tape, loss_id, f"epoch {epoch} validation")
        val_loss /= len(val_b)

        result.history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            result.params = params.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
        if bad_epochs >= cfg.patience:
            break
    return result


def score_graph(
    g: CascadeGraph,
    params: ParamStore,
    model_cfg: ModelConfig,
    walk_cfg: WalkConfig,
    master_seed: int,
    graph_index: int = 0,
    ablate=frozenset(),
    undirected: bool = False,
):
    """Forward-only scores for one graph.

    Returns (scores, s_user, s_struct, weights) as plain arrays; s_user and
    weights are None when the user view is ablated.
    """
    user, struct = featurize_graph(g, walk_cfg, master_seed, graph_index, undirected=undirected)
    tape = Tape()
    fwd = mmen_forward(
        tape, g, user.values, struct.values, params, model_cfg, ablate=ablate, undirected=undirected
    )
    scores = tape.value(fwd.score).ravel().copy()
    if not np.isfinite(scores).all():
        bad = first_nonfinite(tape)
        raise NumericError(f"non-finite score from op '{bad[1]}' (tape node {bad[0]})")
    s_user = tape.value(fwd.score_user).ravel().copy() if fwd.score_user is not None else None
    s_struct = tape.value(fwd.score_struct).ravel().copy()
    weights = tape.value(fwd.weights).ravel().copy() if fwd.weights is not None else None
    return scores, s_user, s_struct, weights
