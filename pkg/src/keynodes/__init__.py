"""Key-node identification in retweet cascades.

Library + CLI that scores nodes of an information cascade with a dual-view
attention model (profile attributes and walk structure, each enhanced by
learned memory banks), trains it unsupervised against a differentiable
coverage objective, and evaluates selected seed sets with SIR spread and a
network robustness index against classical centrality baselines.
"""

from .autodiff import ParamStore, Tape, grad_check, load_checkpoint, save_checkpoint
from .baselines import (
    RankedScores,
    degree_centrality,
    greedy_dcover,
    h_index,
    kshell,
    leaderrank,
)
from .epidemic import (
    EvalReport,
    SirConfig,
    compare_methods,
    default_mu,
    infection_rate,
    robustness,
    sir_run,
)
from .errors import DataError, NumericError, ShapeError
from .features import (
    FeatureMatrix,
    WalkConfig,
    normalize_features,
    random_walk_features,
    user_attribute_vector,
    user_feature_matrix,
)
from .graphs import (
    CascadeGraph,
    SeedSet,
    UserRecord,
    largest_component_size,
    load_cascade,
    out_neighborhood,
    save_cascade,
    shortest_path_len,
    synth_cascade,
)
from .model import ModelConfig, init_params, mmen_forward
from .training import (
    AdamState,
    TrainConfig,
    adam_step,
    coverage_loss,
    select_seeds,
    train,
)

__version__ = "0.1.0"
