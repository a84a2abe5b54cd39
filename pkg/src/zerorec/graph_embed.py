"""Co-occurrence node embeddings: biased random walks + SGNS, edge vectors.

Users and items share one embedding space with disjoint id ranges (item idx
offset by n_users) so that edge vectors can be formed componentwise. On a
bipartite graph the second-order walk bias degenerates: the next hop is
either the previous node (weight 1/p) or a two-hop neighbor (weight 1/q),
since a distance-1 move would need a same-side edge.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import InteractionDataset
from .errors import ConfigError, DataError

_EMB_MAGIC = b"ZRECEMB1"


@dataclass
class WalkConfig:
    """Node2vec and SGNS hyperparameters (reference defaults)."""

    dim: int = 64
    walk_length: int = 80
    walks_per_node: int = 10
    return_p: float = 1.0
    inout_q: float = 1.0
    window: int = 10
    negatives_per_positive: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    rng_seed: int = 0
    batch_size: int = 4096
    parallel: bool = False

    def __post_init__(self):
        if self.walk_length < 2:
            raise ConfigError("walk_length must be >= 2")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.return_p <= 0 or self.inout_q <= 0:
            raise ConfigError("return_p and inout_q must be > 0")
        if self.dim < 1:
            raise ConfigError("embedding dim must be >= 1")


@dataclass
class EmbeddingTable:
    dim: int
    user_vectors: np.ndarray
    item_vectors: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim <= 0:
            raise ConfigError("embedding dim must be positive")
        for name, arr in (("user", self.user_vectors), ("item", self.item_vectors)):
            if arr.shape[1] != self.dim:
                raise ConfigError(f"{name} vectors have dim {arr.shape[1]}, expected {self.dim}")
            if not np.isfinite(arr).all():
                raise ConfigError(f"{name} vectors contain non-finite values")

    @property
    def n_users(self) -> int:
        return len(self.user_vectors)

    @property
    def n_items(self) -> int:
        return len(self.item_vectors)


def _train_adjacency(ds: InteractionDataset):
    """CSR adjacency of the unified node space (users then items), train edges."""
    n_users, n_items = ds.n_users, ds.n_items
    n_nodes = n_users + n_items
    e = ds.edges_of_split("train") if ds.split_tags is not None else ds.edges
    if len(e) == 0:
        raise DataError("no train edges to walk on")
    src = np.concatenate((e[:, 0], e[:, 1] + n_users))
    dst = np.concatenate((e[:, 1] + n_users, e[:, 0]))
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    deg = np.bincount(src, minlength=n_nodes)
    indptr = np.concatenate(([0], np.cumsum(deg)))
    return indptr, dst, n_nodes, deg


def generate_walks(ds: InteractionDataset, cfg: WalkConfig):
    """Second-order biased walks from every node of the train graph.

    Returns (walks, stats): walks is an (n_walks, walk_length) int array.
    Each walk has its own seeded generator so output does not depend on
    scheduling order. Nodes with no train edges get no walks; their count
    is recorded in the stats.
    """
    indptr, nbrs, n_nodes, deg = _train_adjacency(ds)
    w_back = 1.0 / cfg.return_p
    w_out = 1.0 / cfg.inout_q
    uniform = cfg.return_p == 1.0 and cfg.inout_q == 1.0
    L = cfg.walk_length

    starts = np.flatnonzero(deg > 0)
    walks = np.empty((len(starts) * cfg.walks_per_node, L), dtype=np.int64)
    row = 0
    for start in starts:
        start = int(start)
        for widx in range(cfg.walks_per_node):
            rng = np.random.default_rng(
                np.random.SeedSequence(cfg.rng_seed, spawn_key=(start, widx))
            )
            r = rng.random(L - 1)
            walk = walks[row]
            walk[0] = start
            prev = -1
            cur = start
            for t in range(1, L):
                lo, hi = indptr[cur], indptr[cur + 1]
                deg = hi - lo
                if t == 1 or uniform:
                    nxt = nbrs[lo + int(r[t - 1] * deg)]
                elif deg == 1:
                    nxt = nbrs[lo]
                else:
                    total = w_back + (deg - 1) * w_out
                    x = r[t - 1] * total
                    if x < w_back:
                        nxt = prev
                    else:
                        j = int((x - w_back) / w_out)
                        j = min(j, deg - 2)
                        pos_prev = int(np.searchsorted(nbrs[lo:hi], prev))
                        if j >= pos_prev:
                            j += 1
                        nxt = nbrs[lo + j]
                walk[t] = nxt
                prev = cur
                cur = nxt
            row += 1

    stats = {
        "n_walks": int(walks.shape[0]),
        "walk_length": L,
        "n_nodes": n_nodes,
        "nodes_without_train_edges": int(n_nodes - len(starts)),
        "return_weight": w_back,
        "exploration_weight": w_out,
        "bipartite_note": "next hop is the previous node or a two-hop neighbor",
    }
    return walks, stats


def _skipgram_pairs(walks: np.ndarray, window: int):
    """All (center, context) pairs within the window, both directions."""
    centers, contexts = [], []
    L = walks.shape[1]
    for d in range(1, min(window, L - 1) + 1):
        a = walks[:, :-d].ravel()
        b = walks[:, d:].ravel()
        centers.append(a)
        contexts.append(b)
        centers.append(b)
        contexts.append(a)
    return np.concatenate(centers), np.concatenate(contexts)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sgns_tuple_loss(center: np.ndarray, context: np.ndarray, negatives: np.ndarray) -> float:
    """SGNS logistic loss for one (center, context, negatives) tuple."""
    pos = np.dot(center, context)
    negs = negatives @ center
    # -log sigma(x) written as softplus(-x) for stability
    return float(np.logaddexp(0.0, -pos) + np.sum(np.logaddexp(0.0, negs)))


def sgns_tuple_grad(center: np.ndarray, context: np.ndarray, negatives: np.ndarray):
    """Analytic gradients of sgns_tuple_loss wrt (center, context, negatives)."""
    g_pos = sigmoid(np.dot(center, context)) - 1.0
    g_negs = sigmoid(negatives @ center)
    d_center = g_pos * context + g_negs @ negatives
    d_context = g_pos * center
    d_negatives = g_negs[:, None] * center[None, :]
    return d_center, d_context, d_negatives


def _apply_batch(w_in, w_out, c, o, negs, lr):
    u = w_in[c]
    vpos = w_out[o]
    vneg = w_out[negs]
    g_pos = sigmoid(np.sum(u * vpos, axis=1)) - 1.0
    g_neg = sigmoid(np.einsum("bd,bkd->bk", u, vneg))
    d_u = g_pos[:, None] * vpos + np.einsum("bk,bkd->bd", g_neg, vneg)
    np.add.at(w_in, c, -lr * d_u)
    np.add.at(w_out, o, -lr * g_pos[:, None] * u)
    np.add.at(
        w_out,
        negs.ravel(),
        (-lr * g_neg[:, :, None] * u[:, None, :]).reshape(-1, u.shape[1]),
    )


def train_sgns(
    walks: np.ndarray, cfg: WalkConfig, n_users: int, n_items: int
) -> EmbeddingTable:
    """Skip-gram with negative sampling over the walk corpus.

    Negatives come from the unigram distribution raised to 0.75; the learning
    rate decays linearly over all scheduled pair updates. Returns the input
    vectors split back into user and item blocks; nodes absent from every
    walk keep their initialization.
    """
    n_nodes = n_users + n_items
    counts = np.bincount(walks.ravel(), minlength=n_nodes).astype(np.float64)

    init_rng = np.random.default_rng(np.random.SeedSequence(cfg.rng_seed, spawn_key=(1,)))
    w_in = (init_rng.random((n_nodes, cfg.dim)) - 0.5) / cfg.dim
    w_out = np.zeros((n_nodes, cfg.dim))

    centers, contexts = _skipgram_pairs(walks, cfg.window)
    n_pairs = len(centers)
    noise = counts**0.75
    noise_cum = np.cumsum(noise / noise.sum())
    total = max(1, n_pairs * cfg.epochs)
    lr0 = cfg.learning_rate
    k = cfg.negatives_per_positive
    done = 0

    pool = ThreadPoolExecutor() if cfg.parallel else None
    pending = []
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(np.random.SeedSequence(cfg.rng_seed, spawn_key=(2, epoch)))
        perm = rng.permutation(n_pairs)
        for lo in range(0, n_pairs, cfg.batch_size):
            sel = perm[lo : lo + cfg.batch_size]
            negs = np.searchsorted(noise_cum, rng.random((len(sel), k)))
            lr = lr0 * max(1.0 - done / total, 1e-4)
            done += len(sel)
            if pool is None:
                _apply_batch(w_in, w_out, centers[sel], contexts[sel], negs, lr)
            else:
                # Hogwild-style: shared arrays, races tolerated, nondeterministic
                pending.append(
                    pool.submit(_apply_batch, w_in, w_out, centers[sel], contexts[sel], negs, lr)
                )
    if pool is not None:
        for f in pending:
            f.result()
        pool.shutdown()

    return EmbeddingTable(
        dim=cfg.dim,
        user_vectors=w_in[:n_users].copy(),
        item_vectors=w_in[n_users:].copy(),
        meta={"epochs": cfg.epochs, "pairs_per_epoch": int(n_pairs)},
    )


def edge_embedding(
    g_u: np.ndarray, g_v: np.ndarray, weights: np.ndarray | None = None
) -> np.ndarray:
    """Hadamard product of endpoint vectors, optionally reweighted per dim."""
    g_u = np.asarray(g_u)
    g_v = np.asarray(g_v)
    if g_u.shape != g_v.shape:
        raise ConfigError(f"edge embedding dim mismatch: {g_u.shape} vs {g_v.shape}")
    out = g_u * g_v
    if weights is not None:
        weights = np.asarray(weights)
        if weights.shape != g_u.shape[-1:]:
            raise ConfigError(f"weight vector shape {weights.shape} does not match dim")
        out = out * weights
    return out


def edge_embeddings_for(
    emb: EmbeddingTable, edges: np.ndarray, weights: np.ndarray | None = None
) -> np.ndarray:
    """Edge vectors for an (E, 2) array of (user_idx, item_idx) pairs."""
    return edge_embedding(emb.user_vectors[edges[:, 0]], emb.item_vectors[edges[:, 1]], weights)


def save_embeddings(emb: EmbeddingTable, path: str | Path, stats: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_EMB_MAGIC)
        fh.write(struct.pack("<III", emb.dim, emb.n_users, emb.n_items))
        fh.write(emb.user_vectors.astype("<f4").tobytes())
        fh.write(emb.item_vectors.astype("<f4").tobytes())
    if stats is not None:
        with open(path.parent / "walkstats.json", "w", encoding="utf-8") as fh:
            json.dump(stats, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return path


def load_embeddings(path: str | Path) -> EmbeddingTable:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _EMB_MAGIC:
            raise DataError(f"{path}: not an embeddings file")
        dim, n_users, n_items = struct.unpack("<III", fh.read(12))
        users = np.frombuffer(fh.read(4 * dim * n_users), dtype="<f4").reshape(n_users, dim)
        items = np.frombuffer(fh.read(4 * dim * n_items), dtype="<f4").reshape(n_items, dim)
    return EmbeddingTable(
        dim=dim,
        user_vectors=users.astype(np.float64),
        item_vectors=items.astype(np.float64),
    )
