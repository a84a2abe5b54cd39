"""zerorec: zero-shot transferable recommendation from interaction statistics.

Build dataset-agnostic user/item features from a raw implicit-feedback
matrix, pre-train a small ranking model once, and apply it without
retraining to unseen users and items in the same or another dataset.
"""

from .dataset import (
    Interaction,
    InteractionDataset,
    build_dataset,
    k_core_filter,
    load_dataset,
    load_interactions,
    partition_seen_unseen,
    save_dataset,
    split_per_user,
)
from .ensemble import InterpolationWeights, blend_external, combine_family, combine_universal
from .errors import ConfigError, DataError, NumericError, ZerorecError
from .evaluation import MetricReport, RankingTask, build_tasks, mf_bpr_baseline, mostpop_scorer, rank_metrics
from .features import FeatureConfig, FeatureTable, build_all
from .graph_embed import EmbeddingTable, WalkConfig, edge_embedding, generate_walks, train_sgns
from .model import MlpTower, ScorerBundle, TrainConfig, bpr_loss, score, train_all, zero_shot_score
from .synth import SynthSpec, generate

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "EmbeddingTable",
    "FeatureConfig",
    "FeatureTable",
    "Interaction",
    "InteractionDataset",
    "InterpolationWeights",
    "MetricReport",
    "MlpTower",
    "NumericError",
    "RankingTask",
    "ScorerBundle",
    "SynthSpec",
    "TrainConfig",
    "WalkConfig",
    "ZerorecError",
    "blend_external",
    "bpr_loss",
    "build_all",
    "build_dataset",
    "build_tasks",
    "combine_family",
    "combine_universal",
    "edge_embedding",
    "generate",
    "generate_walks",
    "k_core_filter",
    "load_dataset",
    "load_interactions",
    "mf_bpr_baseline",
    "mostpop_scorer",
    "partition_seen_unseen",
    "rank_metrics",
    "save_dataset",
    "score",
    "split_per_user",
    "train_all",
    "train_sgns",
    "zero_shot_score",
]
