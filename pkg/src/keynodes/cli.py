"""Command-line entry point: dataset generation, training, scoring, comparison.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.  Every
subcommand honors --seed; identical invocations produce byte-identical
primary outputs.  A plain-text ``key = value`` config file can supply any
flag; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .autodiff import ParamStore, load_checkpoint, save_checkpoint
from .epidemic import SirConfig, compare_methods
from .errors import DataError, NumericError
from .features import WalkConfig, dump_features_csv, featurize_graph
from .graphs import load_cascade, save_cascade, synth_cascade
from .model import ABLATIONS, ModelConfig, validate_params
from .seeding import derived_seed
from .training import TrainConfig, score_graph, select_seeds, train

_META_VERSION = 1.0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _nonneg_int(text: str) -> int:
    val = int(text)
    if val < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return val


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="keynodes", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=_nonneg_int, default=0, help="master RNG seed (default 0)")
        p.add_argument("--config", default=None, help="key = value file supplying flag defaults")
        p.add_argument("--jobs", type=int, default=1, help="worker cap for parallel sections")

    p = sub.add_parser("gen", help="generate a synthetic cascade dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--n-graphs", type=int, default=10, help="number of cascades")
    p.add_argument("--nodes-min", type=int, default=200, help="smallest cascade size")
    p.add_argument("--nodes-max", type=int, default=500, help="largest cascade size")
    p.add_argument("--extra-edge-frac", type=float, default=0.1, help="extra retweet edges per node")
    p.add_argument("--attr-noise", type=float, default=0.5, help="profile noise scale")
    common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the scorer on a dataset")
    p.add_argument("--data", required=True, help="dataset directory with manifest.json")
    p.add_argument("--out", required=True, help="output directory for best.ckpt and history.csv")
    p.add_argument("--batch-size", type=int, default=2, help="graphs per update (default 2)")
    p.add_argument("--epochs", type=int, default=50, help="max epochs (default 50)")
    p.add_argument("--lr", type=float, default=5e-4, help="Adam learning rate (default 5e-4)")
    p.add_argument("--lam", type=float, default=1.0, help="seed-size penalty weight (default 1.0)")
    p.add_argument("--d-cover", type=int, default=1, help="coverage hop radius (default 1)")
    p.add_argument("--patience", type=int, default=10, help="early-stopping patience (default 10)")
    p.add_argument("--hidden", type=int, default=64, help="hidden width (default 64)")
    p.add_argument("--heads", type=int, default=4, help="attention heads (default 4)")
    p.add_argument("--mem-groups", type=int, default=4, help="memory groups (default 4)")
    p.add_argument("--mem-slots", type=int, default=32, help="slots per memory group (default 32)")
    p.add_argument("--walks-per-node", type=int, default=10, help="random walks per node (default 10)")
    p.add_argument("--walk-len", type=int, default=4, help="random walk length (default 4)")
    p.add_argument("--ablate", choices=ABLATIONS, default=None, help="train a reduced variant")
    p.add_argument("--undirected", action="store_true", help="walk and attend over both edge directions")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score one cascade with a checkpoint")
    p.add_argument("--checkpoint", required=True, help="path to best.ckpt")
    p.add_argument("--cascade", required=True, help="cascade directory to score")
    p.add_argument("--out", required=True, help="output scores.csv")
    p.add_argument("--fraction", type=float, default=0.05, help="seed fraction to flag (default 0.05)")
    p.add_argument("--dump-features", default=None, help="also write both feature views as CSV")
    common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("compare", help="evaluate selection methods on the test split")
    p.add_argument("--data", required=True, help="dataset directory with manifest.json")
    p.add_argument("--out", required=True, help="output report.csv")
    p.add_argument("--checkpoint", default=None, help="checkpoint for the mmen method")
    p.add_argument(
        "--methods",
        default="degree,kshell,hindex,leaderrank,greedy,random",
        help="comma-separated method names (mmen needs --checkpoint)",
    )
    p.add_argument("--mu", type=float, default=None, help="infection probability (default: auto per graph)")
    p.add_argument("--runs", type=int, default=100, help="Monte-Carlo runs per estimate (default 100)")
    p.add_argument("--fraction", type=float, default=0.05, help="seed fraction (default 0.05)")
    p.add_argument("--d-cover", type=int, default=1, help="hop radius for the greedy method (default 1)")
    p.add_argument(
        "--ablate",
        action="append",
        choices=ABLATIONS + ("all",),
        default=None,
        help="also evaluate inference-time ablations of the checkpoint (repeatable)",
    )
    common(p)
    p.set_defaults(func=cmd_compare)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse argv, letting an optional --config file supply defaults."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    path = Path(args.config)
    if not path.is_file():
        raise DataError(f"{path}: config file not found")
    sub = None
    for action in parser._subparsers._group_actions:  # find the active subparser
        sub = action.choices[args.command]
    option_types: dict[str, argparse.Action] = {}
    for action in sub._actions:
        if action.dest not in ("help",):
            option_types[action.dest] = action
    overrides = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise DataError(f"{path}:{lineno}: expected 'key = value'")
        key, _, raw = s.partition("=")
        dest = key.strip().replace("-", "_")
        if dest not in option_types:
            raise DataError(f"{path}:{lineno}: unknown option {key.strip()!r}")
        action = option_types[dest]
        raw = raw.strip()
        if isinstance(action, argparse._StoreTrueAction):
            overrides[dest] = raw.lower() in ("1", "true", "yes")
        elif isinstance(action, argparse._AppendAction):
            overrides[dest] = [v.strip() for v in raw.split(",") if v.strip()]
        elif action.type is not None:
            overrides[dest] = action.type(raw)
        else:
            overrides[dest] = raw
    # explicit flags win: re-parse with file values as defaults
    sub.set_defaults(**overrides)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, list(argv) if argv is not None else sys.argv[1:])
    except SystemExit as exc:
        return int(exc.code or 0)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


# -- subcommands ----------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.n_graphs < 1:
        raise DataError("--n-graphs must be >= 1")
    if args.nodes_min < 10 or args.nodes_min > args.nodes_max:
        raise DataError("need 10 <= --nodes-min <= --nodes-max")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    sizes = rng.integers(args.nodes_min, args.nodes_max + 1, size=args.n_graphs)
    names = [f"g{i:03d}" for i in range(args.n_graphs)]
    for i, name in enumerate(names):
        g = synth_cascade(
            int(sizes[i]), args.extra_edge_frac, args.attr_noise, derived_seed(args.seed, i)
        )
        save_cascade(g, out / name)
    n_train = int(0.7 * args.n_graphs)
    n_val = int(0.15 * args.n_graphs)
    manifest = {
        "graphs": names,
        "splits": {
            "train": names[:n_train],
            "val": names[n_train : n_train + n_val],
            "test": names[n_train + n_val :],
        },
        "seed": args.seed,
        "n_nodes_range": [args.nodes_min, args.nodes_max],
        "extra_edge_frac": args.extra_edge_frac,
        "attr_noise": args.attr_noise,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {args.n_graphs} cascades to {out}")
    return 0


def _load_manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.is_file():
        raise DataError(f"{path}: missing manifest.json")
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    for key in ("graphs", "splits"):
        if key not in manifest:
            raise DataError(f"{path}: manifest missing {key!r}")
    return manifest


def _load_split(data_dir, manifest, split) -> tuple[list, list[str]]:
    names = manifest["splits"].get(split, [])
    graphs = [load_cascade(Path(data_dir) / name) for name in names]
    return graphs, names


def _pack_meta(model_cfg: ModelConfig, walk_cfg: WalkConfig, undirected: bool, ablate) -> np.ndarray:
    bits = sum(1 << i for i, a in enumerate(ABLATIONS) if a in ablate)
    return np.array(
        [
            [
                _META_VERSION,
                model_cfg.user_dim,
                model_cfg.struct_dim,
                model_cfg.hidden,
                model_cfg.heads,
                model_cfg.mem_groups,
                model_cfg.mem_slots,
                walk_cfg.walks_per_node,
                walk_cfg.walk_len,
                1.0 if undirected else 0.0,
                bits,
            ]
        ]
    )


def _unpack_meta(params: ParamStore):
    if "meta" not in params:
        raise DataError("checkpoint has no meta tensor; not produced by this tool?")
    row = params["meta"].ravel()
    if row.size != 11 or row[0] != _META_VERSION:
        raise DataError(f"unsupported checkpoint meta (version {row[0] if row.size else '?'})")
    model_cfg = ModelConfig(
        user_dim=int(row[1]),
        struct_dim=int(row[2]),
        hidden=int(row[3]),
        heads=int(row[4]),
        mem_groups=int(row[5]),
        mem_slots=int(row[6]),
    )
    walk_cfg = WalkConfig(walks_per_node=int(row[7]), walk_len=int(row[8]))
    undirected = bool(row[9])
    bits = int(row[10])
    ablate = frozenset(a for i, a in enumerate(ABLATIONS) if bits & (1 << i))
    weights = ParamStore({k: v for k, v in params.items() if k != "meta"})
    return weights, model_cfg, walk_cfg, undirected, ablate


def cmd_train(args) -> int:
    manifest = _load_manifest(args.data)
    train_graphs, _ = _load_split(args.data, manifest, "train")
    val_graphs, _ = _load_split(args.data, manifest, "val")
    if not train_graphs or not val_graphs:
        raise DataError("dataset needs non-empty train and val splits")

    ablate = frozenset([args.ablate]) if args.ablate else frozenset()
    cfg = TrainConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        lr=args.lr,
        lam=args.lam,
        d_cover=args.d_cover,
        patience=args.patience,
        rng_seed=args.seed,
    )
    model_cfg = ModelConfig(
        hidden=args.hidden,
        heads=args.heads,
        mem_groups=args.mem_groups,
        mem_slots=args.mem_slots,
    )
    walk_cfg = WalkConfig(walks_per_node=args.walks_per_node, walk_len=args.walk_len)

    result = train(
        train_graphs,
        val_graphs,
        cfg,
        model_cfg=model_cfg,
        walk_cfg=walk_cfg,
        ablate=ablate,
        undirected=args.undirected,
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = result.params.copy()
    ckpt["meta"] = _pack_meta(model_cfg, walk_cfg, args.undirected, ablate)
    save_checkpoint(ckpt, out / "best.ckpt")
    with open(out / "history.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for row in result.history:
            fh.write(f"{row['epoch']},{row['train_loss']!r},{row['val_loss']!r}\n")
    print(f"best epoch {result.best_epoch}; final val loss {result.best_val_loss!r}")
    return 0


def cmd_score(args) -> int:
    raw = load_checkpoint(args.checkpoint)
    params, model_cfg, walk_cfg, undirected, ablate = _unpack_meta(raw)
    validate_params(params, model_cfg, ablate)
    g = load_cascade(args.cascade)
    scores, s_user, s_struct, weights = score_graph(
        g, params, model_cfg, walk_cfg, args.seed, 0, ablate=ablate, undirected=undirected
    )
    seeds = set(select_seeds(scores, args.fraction).members)
    w_user, w_stru = (0.0, 1.0) if weights is None else (float(weights[0]), float(weights[1]))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("node,score,s_user,s_struct,w_user,w_stru,is_seed\n")
        for v in range(g.n):
            su = "" if s_user is None else repr(float(s_user[v]))
            fh.write(
                f"{v},{float(scores[v])!r},{su},{float(s_struct[v])!r},"
                f"{w_user!r},{w_stru!r},{int(v in seeds)}\n"
            )
    if args.dump_features:
        user, struct = featurize_graph(g, walk_cfg, args.seed, 0, undirected=undirected)
        dump_features_csv(user, struct, args.dump_features)
    print(f"scored {g.n} nodes; {len(seeds)} flagged as seeds")
    return 0


def cmd_compare(args) -> int:
    manifest = _load_manifest(args.data)
    graphs, names = _load_split(args.data, manifest, "test")
    if not graphs:
        raise DataError("dataset has an empty test split")

    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    ablations: list[str] = []
    for a in args.ablate or []:
        ablations.extend(ABLATIONS if a == "all" else [a])
    ablations = list(dict.fromkeys(ablations))

    scorers = {}
    if args.checkpoint or "mmen" in methods or ablations:
        if not args.checkpoint:
            raise DataError("the mmen method needs --checkpoint")
        raw = load_checkpoint(args.checkpoint)
        params, model_cfg, walk_cfg, undirected, base_ablate = _unpack_meta(raw)
        validate_params(params, model_cfg, base_ablate)

        def make_scorer(extra):
            extra = frozenset(extra) | base_ablate

            def scorer(g, gi):
                return score_graph(
                    g, params, model_cfg, walk_cfg, args.seed, gi,
                    ablate=extra, undirected=undirected,
                )[0]

            return scorer

        scorers["mmen"] = make_scorer(frozenset())
        if "mmen" not in methods:
            methods.insert(0, "mmen")
        for a in ablations:
            name = f"mmen-{a}"
            scorers[name] = make_scorer(frozenset([a]))
            methods.insert(methods.index("mmen") + 1 + ablations.index(a), name)

    cfg = SirConfig(mu=args.mu, runs=args.runs, rng_seed=args.seed)
    report = compare_methods(
        graphs,
        methods,
        cfg,
        args.fraction,
        d_cover=args.d_cover,
        scorers=scorers,
        names=names,
        jobs=args.jobs,
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    print(f"test graphs: {len(graphs)}  runs: {args.runs}  fraction: {args.fraction}")
    print(report.to_table())
    return 0


if __name__ == "__main__":
    sys.exit(main())
