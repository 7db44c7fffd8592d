"""Dual-view node scorer: graph attention, memory-bank enhancement,
per-view sigmoid heads, and adaptive two-way fusion.

Each view (profile attributes / walk structure) runs an input projection
followed by two rounds of attention + memory enhancement, then maps every
node to a score in (0, 1).  A softmax head over pooled view representations
mixes the two score vectors into the final ranking signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ParamStore, Tape
from .errors import DataError, ShapeError
from .features import STRUCT_DIM, USER_DIM
from .graphs import CascadeGraph

ABLATIONS = ("no-user", "no-memory", "no-fusion")
VIEWS = ("user", "struct")


@dataclass(frozen=True)
class ModelConfig:
    user_dim: int = USER_DIM
    struct_dim: int = STRUCT_DIM
    hidden: int = 64
    heads: int = 4
    mem_groups: int = 4
    mem_slots: int = 32
    leaky_slope: float = 0.2
    n_layers: int = 2

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise DataError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if min(self.hidden, self.heads, self.mem_groups, self.mem_slots, self.n_layers) < 1:
            raise DataError("model dimensions must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads


def check_ablations(ablate) -> frozenset:
    ablate = frozenset(ablate)
    unknown = ablate - set(ABLATIONS)
    if unknown:
        raise DataError(f"unknown ablation(s) {sorted(unknown)}; valid: {list(ABLATIONS)}")
    return ablate


def _uniform(rng, fan_in, shape):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: ModelConfig, rng_seed: int = 0, ablate=frozenset()) -> ParamStore:
    """Fresh parameters: uniform(+-sqrt(1/fan_in)), memory slots normal(0, 0.1).

    Ablated components are simply not created, so their tensors never appear
    in checkpoints.
    """
    ablate = check_ablations(ablate)
    rng = np.random.default_rng(rng_seed)
    p = ParamStore()
    L, F = cfg.hidden, cfg.head_dim
    for view in VIEWS:
        if view == "user" and "no-user" in ablate:
            continue
        f_in = cfg.user_dim if view == "user" else cfg.struct_dim
        p[f"{view}.proj.W"] = _uniform(rng, f_in, (f_in, L))
        p[f"{view}.proj.b"] = _uniform(rng, f_in, (1, L))
        for layer in range(cfg.n_layers):
            for k in range(cfg.heads):
                base = f"{view}.gat{layer}.h{k}"
                p[f"{base}.W"] = _uniform(rng, L, (L, F))
                p[f"{base}.a_src"] = _uniform(rng, 2 * F, (F, 1))
                p[f"{base}.a_dst"] = _uniform(rng, 2 * F, (F, 1))
            if "no-memory" not in ablate:
                for i in range(cfg.mem_groups):
                    p[f"{view}.mem{layer}.m{i}"] = rng.normal(0.0, 0.1, size=(cfg.mem_slots, L))
                p[f"{view}.mem{layer}.conv_w"] = _uniform(rng, cfg.mem_groups, (cfg.mem_groups, 1))
                p[f"{view}.mem{layer}.conv_b"] = _uniform(rng, cfg.mem_groups, (1, 1))
        p[f"{view}.score.W"] = _uniform(rng, L, (L, 1))
        p[f"{view}.score.b"] = _uniform(rng, L, (1, 1))
    if "no-fusion" not in ablate and "no-user" not in ablate:
        p["fusion.W"] = _uniform(rng, 2 * L, (2 * L, 2))
        p["fusion.b"] = _uniform(rng, 2 * L, (1, 2))
    return p


def expected_param_shapes(cfg: ModelConfig, ablate=frozenset()) -> dict[str, tuple]:
    template = init_params(cfg, rng_seed=0, ablate=ablate)
    return {name: val.shape for name, val in template.items()}


def validate_params(params: ParamStore, cfg: ModelConfig, ablate=frozenset()) -> None:
    """Check every expected tensor exists with the right shape."""
    expected = expected_param_shapes(cfg, ablate)
    for name, shape in expected.items():
        if name not in params:
            raise ShapeError(f"checkpoint missing tensor {name!r}")
        got = params[name].shape
        if tuple(got) != tuple(shape):
            raise ShapeError(f"tensor {name!r} has shape {got}, expected {shape}")
    extra = set(params.names()) - set(expected) - {"meta"}
    if extra:
        raise ShapeError(f"unexpected tensors in checkpoint: {sorted(extra)}")


def bind_params(tape: Tape, params: ParamStore) -> dict[str, int]:
    """Place every parameter on the tape as a leaf; returns name -> node id."""
    return {name: tape.leaf(val, name=name) for name, val in params.items()}


def collect_grads(tape: Tape, binding: dict[str, int]) -> dict[str, np.ndarray]:
    out = {}
    for name, nid in binding.items():
        g = tape.nodes[nid].grad
        out[name] = g if g is not None else np.zeros_like(tape.nodes[nid].value)
    return out


def attention_indices(g: CascadeGraph, undirected: bool = False):
    """(src, dst) arrays for attention messages, one self-loop per node.

    Message j -> i exists when j is an in-neighbor of i (dst attends over
    its in-neighbors and itself).
    """
    gv = g.undirected() if undirected else g
    loops = np.arange(g.n, dtype=np.int64)
    if len(gv.edges) == 0:
        return loops, loops
    src = np.concatenate([gv.edges[:, 0], loops])
    dst = np.concatenate([gv.edges[:, 1], loops])
    return src, dst


# -- tape-level building blocks ------------------------------------------------


def gat_layer(tape, h, src, dst, n_nodes, head_ids, slope=0.2):
    """One multi-head attention layer over the given edge list.

    head_ids is a list of (W, a_src, a_dst) tape leaf ids.  Per head the
    edge logit is leaky_relu(a_dst . W h_dst + a_src . W h_src), softmaxed
    over each destination's incoming messages; head outputs are concatenated
    and passed through elu.
    """
    outs = []
    for W, a_src, a_dst in head_ids:
        hw = tape.record("matmul", [h, W])
        s_center = tape.record("matmul", [hw, a_dst])
        s_nbr = tape.record("matmul", [hw, a_src])
        logits = tape.record(
            "add",
            [
                tape.record("gather_rows", [s_center], indices=dst),
                tape.record("gather_rows", [s_nbr], indices=src),
            ],
        )
        att = tape.record(
            "segment_softmax",
            [tape.record("leaky_relu", [logits], alpha=slope)],
            segments=dst,
            num_segments=n_nodes,
        )
        msgs = tape.record("mul", [att, tape.record("gather_rows", [hw], indices=src)])
        outs.append(tape.record("segment_sum", [msgs], segments=dst, num_segments=n_nodes))
    cat = outs[0] if len(outs) == 1 else tape.record("concat", outs, axis=1)
    return tape.record("elu", [cat])


def memory_read(tape, h, group_ids, conv_w, conv_b):
    """Soft read over every memory group, mixed by a kernel-1 convolution.

    Per group: similarity softmax of node features against the slot matrix,
    then the probability-weighted sum of slots; group outputs are combined
    as conv_b + sum_i conv_w[i] * read_i.
    """
    out = None
    for i, m in enumerate(group_ids):
        # (N, L) @ (L, b) similarity -> per-node softmax over slots -> (N, L)
        logits = tape.record("matmul", [h, tape.record("transpose", [m])])
        probs = tape.record("row_softmax", [logits])
        read = tape.record("matmul", [probs, m])
        c_i = tape.record("gather_rows", [conv_w], indices=np.array([i]))
        scaled = tape.record("mul", [read, c_i])
        out = scaled if out is None else tape.record("add", [out, scaled])
    return tape.record("add", [out, conv_b])


def memory_enhance(tape, h, f_m):
    """relu(layer_norm(h + memory)) with parameter-free row layer norm."""
    return tape.record("relu", [tape.record("layer_norm", [tape.record("add", [h, f_m])], eps=1e-5)])


def score_head(tape, h, W, b):
    """Per-node sigmoid score in (0, 1)."""
    return tape.record("sigmoid", [tape.record("add", [tape.record("matmul", [h, W]), b])])


def fusion_weights(tape, h_user, h_struct, W, b):
    """Two-way softmax over pooled view representations; sums to 1."""
    pooled = tape.record(
        "concat",
        [tape.record("mean_rows", [h_user]), tape.record("mean_rows", [h_struct])],
        axis=1,
    )
    return tape.record("row_softmax", [tape.record("add", [tape.record("matmul", [pooled, W]), b])])


def fuse_scores(tape, s1, s2, w):
    """Convex combination w[0]*s1 + w[1]*s2, elementwise over nodes."""
    both = tape.record("concat", [s1, s2], axis=1)
    weighted = tape.record("mul", [both, w])
    ones = tape.leaf(np.ones((2, 1)))
    return tape.record("matmul", [weighted, ones])


@dataclass
class ForwardResult:
    """Tape node ids of the forward pass outputs."""

    score: int
    score_user: int | None
    score_struct: int
    weights: int | None  # (1, 2) fusion weights; None when the user view is off
    hidden_user: int | None
    hidden_struct: int


def mmen_forward(
    tape: Tape,
    g: CascadeGraph,
    user_feats: np.ndarray,
    struct_feats: np.ndarray,
    params: ParamStore,
    cfg: ModelConfig,
    binding: dict[str, int] | None = None,
    ablate=frozenset(),
    undirected: bool = False,
) -> ForwardResult:
    """Full forward pass on one graph; returns tape ids of all outputs."""
    ablate = check_ablations(ablate)
    if binding is None:
        binding = bind_params(tape, params)
    src, dst = attention_indices(g, undirected=undirected)
    use_user = "no-user" not in ablate
    use_memory = "no-memory" not in ablate

    def view_forward(view, feats):
        f_in = cfg.user_dim if view == "user" else cfg.struct_dim
        if feats.shape != (g.n, f_in):
            raise ShapeError(
                f"{view} features have shape {feats.shape}, expected {(g.n, f_in)}"
            )
        h = tape.record(
            "add",
            [
                tape.record("matmul", [tape.leaf(feats), binding[f"{view}.proj.W"]]),
                binding[f"{view}.proj.b"],
            ],
        )
        for layer in range(cfg.n_layers):
            heads = [
                (
                    binding[f"{view}.gat{layer}.h{k}.W"],
                    binding[f"{view}.gat{layer}.h{k}.a_src"],
                    binding[f"{view}.gat{layer}.h{k}.a_dst"],
                )
                for k in range(cfg.heads)
            ]
            h = gat_layer(tape, h, src, dst, g.n, heads, slope=cfg.leaky_slope)
            if use_memory:
                groups = [binding[f"{view}.mem{layer}.m{i}"] for i in range(cfg.mem_groups)]
                f_m = memory_read(
                    tape,
                    h,
                    groups,
                    binding[f"{view}.mem{layer}.conv_w"],
                    binding[f"{view}.mem{layer}.conv_b"],
                )
                h = memory_enhance(tape, h, f_m)
        s = score_head(tape, h, binding[f"{view}.score.W"], binding[f"{view}.score.b"])
        return h, s

    h_s, s2 = view_forward("struct", struct_feats)
    if not use_user:
        return ForwardResult(s2, None, s2, None, None, h_s)
    h_u, s1 = view_forward("user", user_feats)
    if "no-fusion" in ablate:
        w = tape.leaf(np.array([[0.5, 0.5]]))
    else:
        w = fusion_weights(tape, h_u, h_s, binding["fusion.W"], binding["fusion.b"])
    s = fuse_scores(tape, s1, s2, w)
    return ForwardResult(s, s1, s2, w, h_u, h_s)
