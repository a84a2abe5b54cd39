"""Sampled-ranking evaluation: 99 negatives per test edge, AUC / Recall@10 /
NDCG@10 with per-user averaging and multi-seed repetition, plus the MostPop
and MF-BPR baseline scorers.

The positive's 1-based rank r among the 100 candidates (ties broken by item
index ascending) drives every metric: AUC = (100-r)/99, Recall@10 = [r<=10],
NDCG@10 = 1/log2(r+1) for r<=10 else 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import InteractionDataset
from .errors import ConfigError, DataError, NumericError
from .model import (
    Adam,
    TrainConfig,
    _NegativeSampler,
    _sigmoid,
    _trainable_edges,
    _validation_auc,
    _validation_tasks,
)

log = logging.getLogger(__name__)

N_NEGATIVES = 99
TOP_K = 10


@dataclass
class RankingTask:
    user: int
    positive: int
    negatives: np.ndarray

    @property
    def items(self) -> np.ndarray:
        """Candidate item indices, positive first."""
        return np.concatenate(([self.positive], self.negatives))


@dataclass
class MetricReport:
    auc: float
    recall_at_10: float
    ndcg_at_10: float
    n_users: int
    n_tasks: int
    per_seed: list[dict] = field(default_factory=list)
    skipped_tasks: int = 0

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "recall_at_10": self.recall_at_10,
            "ndcg_at_10": self.ndcg_at_10,
            "n_users": self.n_users,
            "n_tasks": self.n_tasks,
            "skipped_tasks": self.skipped_tasks,
            "per_seed": self.per_seed,
        }


def build_tasks(
    ds: InteractionDataset,
    rng_seed: int,
    n_negatives: int = N_NEGATIVES,
    split: str = "test",
) -> tuple[list[RankingTask], int]:
    """One task per edge of ``split`` with negatives sampled outside the
    user's full history. Users whose candidate pool is smaller than
    ``n_negatives`` are skipped; the skipped count is returned and logged."""
    if ds.split_tags is None:
        raise DataError("dataset has no splits")
    edges = ds.edges_of_split(split)
    if len(edges) == 0:
        raise DataError(f"dataset has no {split} split")
    sampler = _NegativeSampler(ds)
    rng = np.random.default_rng(rng_seed)
    tasks: list[RankingTask] = []
    skipped = 0
    for u, v in edges:
        pool = sampler.complement_of(int(u))
        if len(pool) < n_negatives:
            skipped += 1
            continue
        negs = rng.choice(pool, size=n_negatives, replace=False)
        tasks.append(RankingTask(int(u), int(v), negs))
    if skipped:
        log.warning("skipped %d %s task(s): candidate pool < %d", skipped, split, n_negatives)
    return tasks, skipped


def positive_ranks(scores: np.ndarray, items: np.ndarray) -> np.ndarray:
    """1-based rank of column 0 within each row; ties break by item index."""
    scores = np.asarray(scores, dtype=np.float64)
    items = np.asarray(items)
    pos_score = scores[:, :1]
    pos_item = items[:, :1]
    better = scores > pos_score
    tied_ahead = (scores == pos_score) & (items < pos_item)
    return 1 + np.sum(better | tied_ahead, axis=1)


def metrics_from_ranks(ranks: np.ndarray, n_candidates: int) -> np.ndarray:
    """(n_tasks, 3) columns auc, recall@10, ndcg@10."""
    ranks = np.asarray(ranks, dtype=np.float64)
    auc = (n_candidates - ranks) / (n_candidates - 1)
    hit = ranks <= TOP_K
    recall = hit.astype(np.float64)
    ndcg = np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0)
    return np.column_stack((auc, recall, ndcg))


def rank_metrics(
    scores: np.ndarray, items: np.ndarray, n_candidates: int = 100
) -> tuple[float, float, float]:
    """Metrics for one candidate list; the positive sits at position 0."""
    scores = np.asarray(scores, dtype=np.float64)
    items = np.asarray(items)
    if scores.shape != (n_candidates,) or items.shape != (n_candidates,):
        raise ConfigError(
            f"expected {n_candidates} scores and item ids, got {scores.shape} / {items.shape}"
        )
    r = positive_ranks(scores[None, :], items[None, :])[0]
    m = metrics_from_ranks(np.array([r]), n_candidates)[0]
    return float(m[0]), float(m[1]), float(m[2])


def per_user_mean(values: np.ndarray, users: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean of ``values`` rows within each user; returns (user_ids, means)."""
    users = np.asarray(users)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    order = np.argsort(users, kind="stable")
    sorted_users = users[order]
    sorted_vals = values[order]
    uniq, starts = np.unique(sorted_users, return_index=True)
    sums = np.add.reduceat(sorted_vals, starts, axis=0)
    counts = np.diff(np.concatenate((starts, [len(users)])))
    return uniq, sums / counts[:, None]


def aggregate(per_task_metrics: np.ndarray, users: np.ndarray) -> dict:
    """Two-level mean: within each user, then unweighted across users."""
    uniq, means = per_user_mean(per_task_metrics, users)
    overall = means.mean(axis=0)
    return {
        "auc": float(overall[0]),
        "recall_at_10": float(overall[1]),
        "ndcg_at_10": float(overall[2]),
        "n_users": int(len(uniq)),
        "n_tasks": int(len(users)),
    }


def aggregate_seeds(per_seed: list[dict], skipped_tasks: int = 0) -> MetricReport:
    if not per_seed:
        raise DataError("no per-seed metrics to aggregate")
    return MetricReport(
        auc=float(np.mean([s["auc"] for s in per_seed])),
        recall_at_10=float(np.mean([s["recall_at_10"] for s in per_seed])),
        ndcg_at_10=float(np.mean([s["ndcg_at_10"] for s in per_seed])),
        n_users=per_seed[0]["n_users"],
        n_tasks=per_seed[0]["n_tasks"],
        per_seed=per_seed,
        skipped_tasks=skipped_tasks,
    )


def evaluate_scored_tasks(tasks: list[RankingTask], score_matrix: np.ndarray) -> dict:
    """Metrics for pre-scored tasks; row i of score_matrix aligns to tasks[i]."""
    items = np.stack([t.items for t in tasks])
    users = np.array([t.user for t in tasks])
    ranks = positive_ranks(score_matrix, items)
    return aggregate(metrics_from_ranks(ranks, items.shape[1]), users)


class MostPopScorer:
    """Ranks items by their train interaction count; user-independent."""

    def __init__(self, ds: InteractionDataset):
        self.item_scores = ds.item_degrees("train" if ds.split_tags is not None else None).astype(
            np.float64
        )

    def __call__(self, user: int, items: np.ndarray) -> np.ndarray:
        return self.item_scores[np.asarray(items)]


def mostpop_scorer(ds: InteractionDataset) -> MostPopScorer:
    return MostPopScorer(ds)


class MfBprScorer:
    """Matrix factorization trained with the pairwise ranking loss.

    Scores are inner products of per-id embeddings, so entities outside the
    training id space cannot be scored; that failure mode is exactly why the
    universal features exist.
    """

    def __init__(self, P: np.ndarray, Q: np.ndarray, update_count: int, val_auc: float):
        self.P = P
        self.Q = Q
        self.update_count = update_count
        self.val_auc = val_auc

    def __call__(self, user: int, items: np.ndarray) -> np.ndarray:
        items = np.asarray(items)
        if not 0 <= user < len(self.P) or items.min() < 0 or items.max() >= len(self.Q):
            raise DataError("id-based baseline cannot score cold entities")
        return self.Q[items] @ self.P[user]


def mf_bpr_baseline(
    ds: InteractionDataset, cfg: TrainConfig | None = None, dim: int = 64
) -> MfBprScorer:
    """Train the MF-BPR baseline on the train split of ``ds``."""
    cfg = cfg or TrainConfig()
    rng_init = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(10,)))
    P = rng_init.normal(0.0, 0.1, size=(ds.n_users, dim))
    Q = rng_init.normal(0.0, 0.1, size=(ds.n_items, dim))
    sampler = _NegativeSampler(ds)
    train_edges = _trainable_edges(ds, sampler)
    val_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(11,)))
    val_tasks = _validation_tasks(ds, sampler, cfg.val_negatives, val_rng)

    opt = Adam([P, Q], lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    best = (-np.inf, P.copy(), Q.copy(), 0)
    stale = 0
    steps = 0
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(12, epoch)))
        perm = rng.permutation(len(train_edges))
        for lo in range(0, len(perm), cfg.batch_size):
            batch = train_edges[perm[lo : lo + cfg.batch_size]]
            users = np.repeat(batch[:, 0], cfg.negatives_per_positive)
            pos = np.repeat(batch[:, 1], cfg.negatives_per_positive)
            neg = sampler.sample(users, rng)
            pu, qp, qn = P[users], Q[pos], Q[neg]
            d = np.sum(pu * (qp - qn), axis=1)
            if not np.isfinite(d).all():
                raise NumericError(f"MF-BPR diverged at epoch {epoch}")
            g = -_sigmoid(-d) / len(users)
            gP = np.zeros_like(P)
            gQ = np.zeros_like(Q)
            np.add.at(gP, users, g[:, None] * (qp - qn))
            np.add.at(gQ, pos, g[:, None] * pu)
            np.add.at(gQ, neg, -g[:, None] * pu)
            opt.step([gP, gQ])
            steps += 1

        val_auc = mf_validation_auc(P, Q, val_tasks)
        if np.isnan(val_auc) or val_auc > best[0] + 1e-12:
            best = (val_auc if np.isfinite(val_auc) else -np.inf, P.copy(), Q.copy(), steps)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    _, P_best, Q_best, steps_best = best
    auc = best[0] if np.isfinite(best[0]) else float("nan")
    return MfBprScorer(P_best, Q_best, steps_best, auc)


def mf_validation_auc(P, Q, tasks) -> float:
    return _validation_auc(P, Q, tasks)
