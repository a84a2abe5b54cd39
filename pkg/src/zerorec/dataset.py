"""Interaction data ingestion, k-core filtering, partitioning, and splits.

A dataset is an immutable bipartite implicit-feedback graph: dense internal
user/item ids, a deduplicated edge array sorted by (user, item), optional
per-edge split tags and a partition label. All downstream stages read train
edges through the adjacency helpers here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

SPLIT_TRAIN = 0
SPLIT_VALID = 1
SPLIT_TEST = 2

SPLIT_NAMES = {"train": SPLIT_TRAIN, "valid": SPLIT_VALID, "test": SPLIT_TEST}

_DELIMITERS = {".tsv": "\t", ".csv": ",", ".dat": "\t", ".txt": "\t"}


@dataclass(frozen=True)
class Interaction:
    """One raw interaction row. Timestamps are kept for provenance only."""

    user_id: str
    item_id: str
    timestamp: int | None = None

    def __post_init__(self):
        if not self.user_id or not self.item_id:
            raise DataError("interaction with empty user or item id")


@dataclass
class InteractionDataset:
    """Bipartite interaction graph with dense ids.

    ``edges`` is an (E, 2) uint32 array of (user_idx, item_idx) pairs,
    deduplicated and sorted lexicographically; treat instances as immutable
    once constructed. ``split_tags`` (when set) holds one of
    SPLIT_TRAIN/SPLIT_VALID/SPLIT_TEST per edge.
    """

    users: list[str]
    items: list[str]
    edges: np.ndarray
    split_tags: np.ndarray | None = None
    partition: str | None = None
    meta: dict = field(default_factory=dict)

    _user_indptr: np.ndarray | None = field(default=None, repr=False, compare=False)
    _item_order: np.ndarray | None = field(default=None, repr=False, compare=False)
    _item_indptr: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def _ensure_index(self):
        if self._user_indptr is None:
            counts = np.bincount(self.edges[:, 0], minlength=self.n_users)
            self._user_indptr = np.concatenate(([0], np.cumsum(counts)))
            self._item_order = np.lexsort((self.edges[:, 0], self.edges[:, 1]))
            icounts = np.bincount(self.edges[:, 1], minlength=self.n_items)
            self._item_indptr = np.concatenate(([0], np.cumsum(icounts)))

    def _split_mask(self, split: str | None) -> np.ndarray | None:
        if split is None:
            return None
        if self.split_tags is None:
            raise ConfigError("dataset has no split tags; run split_per_user first")
        return self.split_tags == SPLIT_NAMES[split]

    def edge_indices_for_user(self, u: int, split: str | None = None) -> np.ndarray:
        self._ensure_index()
        idx = np.arange(self._user_indptr[u], self._user_indptr[u + 1])
        mask = self._split_mask(split)
        return idx if mask is None else idx[mask[idx]]

    def user_items(self, u: int, split: str | None = None) -> np.ndarray:
        return self.edges[self.edge_indices_for_user(u, split), 1]

    def item_users(self, v: int, split: str | None = None) -> np.ndarray:
        self._ensure_index()
        idx = self._item_order[self._item_indptr[v] : self._item_indptr[v + 1]]
        mask = self._split_mask(split)
        if mask is not None:
            idx = idx[mask[idx]]
        return self.edges[idx, 0]

    def user_degrees(self, split: str | None = None) -> np.ndarray:
        mask = self._split_mask(split)
        col = self.edges[:, 0] if mask is None else self.edges[mask, 0]
        return np.bincount(col, minlength=self.n_users)

    def item_degrees(self, split: str | None = None) -> np.ndarray:
        mask = self._split_mask(split)
        col = self.edges[:, 1] if mask is None else self.edges[mask, 1]
        return np.bincount(col, minlength=self.n_items)

    def edges_of_split(self, split: str) -> np.ndarray:
        return self.edges[self._split_mask(split)]


def infer_delimiter(path: str | Path, fmt: str | None = None, delimiter: str | None = None) -> str:
    if delimiter:
        return delimiter
    if fmt:
        if fmt not in ("tsv", "csv"):
            raise ConfigError(f"unknown format {fmt!r}; expected tsv or csv")
        return "\t" if fmt == "tsv" else ","
    suffix = Path(path).suffix.lower()
    if suffix in _DELIMITERS:
        return _DELIMITERS[suffix]
    raise ConfigError(f"cannot infer delimiter from {path!r}; pass format or delimiter")


def load_interactions(
    path: str | Path,
    fmt: str | None = None,
    delimiter: str | None = None,
    rating_threshold: float = 3.0,
) -> list[Interaction]:
    """Parse a delimited interaction log into Interaction records.

    Columns are user, item[, rating[, timestamp]]. Rows carrying a rating
    below ``rating_threshold`` are dropped (explicit feedback binarization);
    rows without a rating column are kept. Duplicates are NOT collapsed here.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    sep = infer_delimiter(path, fmt, delimiter)

    out: list[Interaction] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            cols = line.split(sep)
            if len(cols) < 2:
                raise DataError(f"{path}:{lineno}: expected at least 2 columns, got {len(cols)}")
            user, item = cols[0].strip(), cols[1].strip()
            if not user or not item:
                raise DataError(f"{path}:{lineno}: empty user or item id")
            if len(cols) >= 3 and cols[2].strip():
                try:
                    rating = float(cols[2])
                except ValueError:
                    raise DataError(f"{path}:{lineno}: malformed rating {cols[2]!r}") from None
                if rating < rating_threshold:
                    continue
            ts = None
            if len(cols) >= 4 and cols[3].strip():
                try:
                    ts = int(float(cols[3]))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: malformed timestamp {cols[3]!r}") from None
            out.append(Interaction(user, item, ts))
    if not out:
        raise DataError(f"{path}: no interactions parsed")
    return out


def k_core_filter(edges: np.ndarray, k: int) -> np.ndarray:
    """Maximal subgraph where every user and item has degree >= k.

    Computed by iterative pruning to fixpoint; raises when nothing survives.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    edges = np.asarray(edges)
    while len(edges) > 0:
        udeg = np.bincount(edges[:, 0])
        ideg = np.bincount(edges[:, 1])
        keep = (udeg[edges[:, 0]] >= k) & (ideg[edges[:, 1]] >= k)
        if keep.all():
            return edges
        edges = edges[keep]
    raise DataError("dataset eliminated by k-core")


def build_dataset(
    interactions: list[Interaction], k: int = 5, meta: dict | None = None
) -> InteractionDataset:
    """Dedupe interactions, assign dense ids in first-seen order, k-core filter."""
    if not interactions:
        raise DataError("no interactions to build a dataset from")
    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    pairs = []
    for it in interactions:
        u = user_ids.setdefault(it.user_id, len(user_ids))
        v = item_ids.setdefault(it.item_id, len(item_ids))
        pairs.append((u, v))
    edges = np.unique(np.asarray(pairs, dtype=np.int64), axis=0)
    edges = k_core_filter(edges, k)

    users = list(user_ids)
    items = list(item_ids)
    ds = _reindex(edges, users, items)
    ds.meta = dict(meta or {}, k_core=k)
    return ds


def _reindex(edges: np.ndarray, users: list[str], items: list[str]) -> InteractionDataset:
    """Compact node ids to the edge set's survivors, preserving id order."""
    ukeep = np.unique(edges[:, 0])
    ikeep = np.unique(edges[:, 1])
    umap = np.full(len(users), -1, dtype=np.int64)
    umap[ukeep] = np.arange(len(ukeep))
    imap = np.full(len(items), -1, dtype=np.int64)
    imap[ikeep] = np.arange(len(ikeep))
    new_edges = np.column_stack((umap[edges[:, 0]], imap[edges[:, 1]]))
    order = np.lexsort((new_edges[:, 1], new_edges[:, 0]))
    new_edges = new_edges[order].astype(np.uint32)
    return InteractionDataset(
        users=[users[i] for i in ukeep],
        items=[items[i] for i in ikeep],
        edges=new_edges,
    )


def partition_seen_unseen(
    ds: InteractionDataset, seen_fraction: float, rng_seed: int, k: int = 5
) -> tuple[InteractionDataset, InteractionDataset]:
    """Split users and items into disjoint seen/unseen halves.

    Both node sets are shuffled independently; the first floor(fraction * n)
    go to the seen half. Only seen-seen and unseen-unseen edges survive, and
    each half is re-filtered with k-core, so halves are generally unequal.
    """
    if not 0.0 < seen_fraction < 1.0:
        raise ConfigError(f"seen_fraction must be in (0,1), got {seen_fraction}")
    rng = np.random.default_rng(rng_seed)
    uperm = rng.permutation(ds.n_users)
    iperm = rng.permutation(ds.n_items)
    n_seen_u = int(np.floor(seen_fraction * ds.n_users))
    n_seen_i = int(np.floor(seen_fraction * ds.n_items))
    if min(n_seen_u, n_seen_i) == 0 or n_seen_u == ds.n_users or n_seen_i == ds.n_items:
        raise DataError("partition leaves an empty user or item half")

    user_seen = np.zeros(ds.n_users, dtype=bool)
    user_seen[uperm[:n_seen_u]] = True
    item_seen = np.zeros(ds.n_items, dtype=bool)
    item_seen[iperm[:n_seen_i]] = True

    halves = []
    for label, umask, imask in (
        ("seen", user_seen, item_seen),
        ("unseen", ~user_seen, ~item_seen),
    ):
        sel = umask[ds.edges[:, 0]] & imask[ds.edges[:, 1]]
        sub = ds.edges[sel].astype(np.int64)
        if len(sub) == 0:
            raise DataError(f"{label} partition has no edges")
        try:
            sub = k_core_filter(sub, k)
        except DataError:
            raise DataError(f"{label} partition eliminated by {k}-core") from None
        half = _reindex(sub, ds.users, ds.items)
        half.partition = label
        half.meta = dict(ds.meta, partition=label, seen_fraction=seen_fraction, partition_seed=rng_seed)
        halves.append(half)
    return halves[0], halves[1]


def split_per_user(
    ds: InteractionDataset,
    train_fraction: float = 0.7,
    valid_fraction_of_train: float = 0.1,
    rng_seed: int = 0,
) -> InteractionDataset:
    """Tag each edge train/valid/test with per-user fractions.

    Per user: train count = max(1, round(train_fraction * n)) clipped so at
    least one test edge remains; valid = floor(valid_fraction * train) edges
    re-tagged out of the train share (possibly zero for small users).
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must be in (0,1), got {train_fraction}")
    ds._ensure_index()
    tags = np.full(ds.n_edges, SPLIT_TEST, dtype=np.uint8)
    rng = np.random.default_rng(rng_seed)
    for u in range(ds.n_users):
        idx = np.arange(ds._user_indptr[u], ds._user_indptr[u + 1])
        n = len(idx)
        if n < 2:
            raise DataError(f"user {ds.users[u]!r} has {n} edge(s); need >= 2 to split")
        n_train = int(np.floor(train_fraction * n + 0.5))
        n_train = min(max(1, n_train), n - 1)
        perm = rng.permutation(n)
        train_idx = idx[perm[:n_train]]
        n_valid = int(np.floor(valid_fraction_of_train * n_train))
        tags[train_idx[n_valid:]] = SPLIT_TRAIN
        tags[train_idx[:n_valid]] = SPLIT_VALID
    return replace(
        ds,
        split_tags=tags,
        meta=dict(
            ds.meta,
            train_fraction=train_fraction,
            valid_fraction=valid_fraction_of_train,
            split_seed=rng_seed,
        ),
        _user_indptr=None,
        _item_order=None,
        _item_indptr=None,
    )


def save_dataset(ds: InteractionDataset, dirpath: str | Path) -> Path:
    """Write the dataset directory: edges.bin, id maps, splits.bin, meta.json."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    ds.edges.astype("<u4").tofile(dirpath / "edges.bin")
    for name, ids in (("users.tsv", ds.users), ("items.tsv", ds.items)):
        with open(dirpath / name, "w", encoding="utf-8") as fh:
            for i, ext in enumerate(ids):
                fh.write(f"{i}\t{ext}\n")
    if ds.split_tags is not None:
        ds.split_tags.astype("u1").tofile(dirpath / "splits.bin")
    meta = dict(
        ds.meta,
        n_users=ds.n_users,
        n_items=ds.n_items,
        n_edges=ds.n_edges,
        partition=ds.partition,
    )
    with open(dirpath / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return dirpath


def load_dataset(dirpath: str | Path) -> InteractionDataset:
    dirpath = Path(dirpath)
    if not (dirpath / "meta.json").exists():
        raise DataError(f"not a dataset directory (missing meta.json): {dirpath}")
    with open(dirpath / "meta.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    edges = np.fromfile(dirpath / "edges.bin", dtype="<u4").reshape(-1, 2).astype(np.uint32)

    def read_ids(name):
        out = []
        with open(dirpath / name, encoding="utf-8") as fh:
            for line in fh:
                _, ext = line.rstrip("\n").split("\t", 1)
                out.append(ext)
        return out

    tags = None
    if (dirpath / "splits.bin").exists():
        tags = np.fromfile(dirpath / "splits.bin", dtype="u1")
        if len(tags) != len(edges):
            raise DataError(f"{dirpath}: splits.bin does not match edges.bin")
    return InteractionDataset(
        users=read_ids("users.tsv"),
        items=read_ids("items.tsv"),
        edges=edges,
        split_tags=tags,
        partition=meta.get("partition"),
        meta=meta,
    )
