"""Universal feature construction from train-split interactions.

Five families per dataset:

* activity          -- per-node sums of neighbor activity-bin one-hots
* co_size / co_density -- per-bin mean similarity of neighbors to their
  cluster centroids, binned by cluster size resp. density
* int_size / int_density -- per-node sums of incident-edge cluster-bin
  one-hots, from clustered edge embeddings

Count families sum one-hots (row sum equals train degree); similarity
families average, so empty bins stay at zero via the pseudo-inverse
normalizer. Bin ranks tie-break on external ids so features are equivariant
under internal id permutations.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import clustering
from .clustering import ClusterModel, assign_bins, bin_clusters, cluster_stats, kmeans
from .dataset import InteractionDataset
from .errors import ConfigError, DataError
from .graph_embed import (
    EmbeddingTable,
    WalkConfig,
    edge_embeddings_for,
    generate_walks,
    load_embeddings,
    save_embeddings,
    train_sgns,
)

FAMILIES = ("activity", "co_size", "co_density", "int_size", "int_density")

_FEA_MAGIC = b"ZRECFEA1"


@dataclass
class FeatureTable:
    family: str
    k: int
    user_rows: np.ndarray
    item_rows: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown feature family {self.family!r}")
        if self.user_rows.shape[1] != self.k or self.item_rows.shape[1] != self.k:
            raise ConfigError(f"{self.family}: rows do not have width k={self.k}")


@dataclass
class FeatureConfig:
    """Per-family dimensions plus the embedding/clustering knobs.

    The cluster count of each family equals its feature dimension; size and
    density bin counts can be overridden independently and default to the
    family k.
    """

    k_activity: int = 10
    k_cooccur: int = 10
    k_interaction: int = 10
    k_cooccur_size: int | None = None
    k_cooccur_density: int | None = None
    k_interaction_size: int | None = None
    k_interaction_density: int | None = None
    similarity: str = "inverse_distance"
    distance: str = "cosine"
    walk: WalkConfig = field(default_factory=WalkConfig)

    def co_bins(self) -> tuple[int, int]:
        return (
            self.k_cooccur_size or self.k_cooccur,
            self.k_cooccur_density or self.k_cooccur,
        )

    def int_bins(self) -> tuple[int, int]:
        return (
            self.k_interaction_size or self.k_interaction,
            self.k_interaction_density or self.k_interaction,
        )


def similarity_to_centroid(vectors: np.ndarray, centroids: np.ndarray, kind: str) -> np.ndarray:
    """Similarity s(x, t) of each row to its centroid row.

    The default maps Euclidean distance into (0, 1] via 1/(1+d); the raw
    negated distance is available for ablation.
    """
    d = np.linalg.norm(np.asarray(vectors) - np.asarray(centroids), axis=-1)
    if kind == "inverse_distance":
        return 1.0 / (1.0 + d)
    if kind == "negative_distance":
        return -d
    raise ConfigError(f"unknown similarity {kind!r}")


def activity_features(ds: InteractionDataset, k: int) -> FeatureTable:
    """Sum of neighbor activity-bin one-hots (items binned for users, and
    vice versa). Bin 0 is always the least active end."""
    if ds.split_tags is not None and not (ds.split_tags == 0).any():
        raise DataError("no train edges to build activity features from")
    e = ds.edges_of_split("train") if ds.split_tags is not None else ds.edges
    if len(e) == 0:
        raise DataError("no train edges to build activity features from")
    item_deg = np.bincount(e[:, 1], minlength=ds.n_items)
    user_deg = np.bincount(e[:, 0], minlength=ds.n_users)
    _, item_bin = assign_bins(item_deg, k, tiebreak=np.asarray(ds.items))
    _, user_bin = assign_bins(user_deg, k, tiebreak=np.asarray(ds.users))

    a_u = np.zeros((ds.n_users, k))
    a_v = np.zeros((ds.n_items, k))
    np.add.at(a_u, (e[:, 0], item_bin[e[:, 1]]), 1.0)
    np.add.at(a_v, (e[:, 1], user_bin[e[:, 0]]), 1.0)
    return FeatureTable("activity", k, a_u, a_v)


def _binned_mean(
    edges: np.ndarray, side: int, n_rows: int, bins: np.ndarray, svals: np.ndarray, k: int
) -> np.ndarray:
    """Per-row, per-bin mean of neighbor s-values; empty bins stay 0."""
    rows = edges[:, side]
    cols = bins
    num = np.zeros((n_rows, k))
    cnt = np.zeros((n_rows, k))
    np.add.at(num, (rows, cols), svals)
    np.add.at(cnt, (rows, cols), 1.0)
    nz = cnt > 0
    num[nz] /= cnt[nz]
    return num


def cooccurrence_features(
    ds: InteractionDataset,
    emb: EmbeddingTable,
    user_clusters: ClusterModel,
    item_clusters: ClusterModel,
    k_size: int,
    k_density: int,
    similarity: str = "inverse_distance",
) -> tuple[FeatureTable, FeatureTable]:
    """Size- and density-binned co-occurrence features for users and items.

    For a user, coordinate b of the density table is the mean similarity to
    centroid of its neighbors whose cluster falls in density bin b; item
    features mirror with user clusters.
    """
    for cm, n in ((user_clusters, ds.n_users), (item_clusters, ds.n_items)):
        if len(cm.assignment) != n:
            raise ConfigError("cluster model does not match dataset nodes")
        if cm.size is None:
            raise ConfigError("cluster model needs stats; run cluster_stats first")
    bin_clusters(user_clusters, k_size, k_density)
    bin_clusters(item_clusters, k_size, k_density)

    e = ds.edges_of_split("train") if ds.split_tags is not None else ds.edges
    s_item = similarity_to_centroid(
        emb.item_vectors, item_clusters.centroids[item_clusters.assignment], similarity
    )
    s_user = similarity_to_centroid(
        emb.user_vectors, user_clusters.centroids[user_clusters.assignment], similarity
    )

    tables = {}
    for tag, k, ubins, ibins in (
        ("size", k_size, user_clusters.size_bin, item_clusters.size_bin),
        ("density", k_density, user_clusters.density_bin, item_clusters.density_bin),
    ):
        c_u = _binned_mean(e, 0, ds.n_users, ibins[item_clusters.assignment[e[:, 1]]], s_item[e[:, 1]], k)
        c_v = _binned_mean(e, 1, ds.n_items, ubins[user_clusters.assignment[e[:, 0]]], s_user[e[:, 0]], k)
        tables[tag] = FeatureTable(f"co_{tag}", k, c_u, c_v)
    return tables["size"], tables["density"]


def interaction_features(
    ds: InteractionDataset,
    edge_clusters: ClusterModel,
    train_edges: np.ndarray,
    k_size: int,
    k_density: int,
) -> tuple[FeatureTable, FeatureTable]:
    """Sums of incident-edge cluster-bin one-hots for users and items.

    ``edge_clusters`` must be fitted on the embeddings of ``train_edges`` in
    the same order.
    """
    if len(edge_clusters.assignment) != len(train_edges):
        raise ConfigError("edge cluster model does not match the train edge list")
    if edge_clusters.size is None:
        raise ConfigError("edge cluster model needs stats; run cluster_stats first")
    bin_clusters(edge_clusters, k_size, k_density)

    tables = {}
    for tag, k, bins in (
        ("size", k_size, edge_clusters.size_bin),
        ("density", k_density, edge_clusters.density_bin),
    ):
        ebin = bins[edge_clusters.assignment]
        e_u = np.zeros((ds.n_users, k))
        e_v = np.zeros((ds.n_items, k))
        np.add.at(e_u, (train_edges[:, 0], ebin), 1.0)
        np.add.at(e_v, (train_edges[:, 1], ebin), 1.0)
        tables[tag] = FeatureTable(f"int_{tag}", k, e_u, e_v)
    return tables["size"], tables["density"]


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def artifact_hashes(cfg: FeatureConfig, dataset_id: str) -> dict:
    """Per-artifact cache keys: each one covers exactly its own inputs."""
    walk = asdict(cfg.walk)
    emb_h = _hash({"dataset": dataset_id, "walk": walk})
    co_size, co_density = cfg.co_bins()
    int_size, int_density = cfg.int_bins()
    return {
        "embeddings": emb_h,
        "activity": _hash({"dataset": dataset_id, "k": cfg.k_activity}),
        "co": _hash(
            {
                "embeddings": emb_h,
                "m": cfg.k_cooccur,
                "bins": [co_size, co_density],
                "similarity": cfg.similarity,
                "distance": cfg.distance,
            }
        ),
        "int": _hash(
            {
                "embeddings": emb_h,
                "m": cfg.k_interaction,
                "bins": [int_size, int_density],
                "distance": cfg.distance,
            }
        ),
    }


def build_all(
    ds: InteractionDataset,
    cfg: FeatureConfig,
    artifacts_dir: str | Path | None = None,
    dataset_id: str = "",
) -> dict[str, FeatureTable]:
    """Run the full feature pipeline: walks, SGNS, clustering, five tables.

    When ``artifacts_dir`` is given, embeddings and feature tables are cached
    there keyed by config hash and reused on matching re-runs.
    """
    hashes = artifact_hashes(cfg, dataset_id)
    out_dir = Path(artifacts_dir) if artifacts_dir is not None else None
    manifest = _load_manifest(out_dir)

    emb = None
    if out_dir is not None and manifest.get("embeddings") == hashes["embeddings"]:
        emb_path = out_dir / "embeddings.bin"
        if emb_path.exists():
            emb = load_embeddings(emb_path)
    if emb is None:
        walks, stats = generate_walks(ds, cfg.walk)
        emb = train_sgns(walks, cfg.walk, ds.n_users, ds.n_items)
        if out_dir is not None:
            save_embeddings(emb, out_dir / "embeddings.bin", stats)

    tables: dict[str, FeatureTable] = {}
    from_cache: set[str] = set()

    def cached(names: tuple[str, ...], key: str) -> bool:
        if out_dir is None or manifest.get(key) != hashes[key]:
            return False
        loaded = {}
        for fam in names:
            path = out_dir / "features" / f"{fam}.bin"
            if not path.exists():
                return False
            loaded[fam] = load_feature_table(path)
        tables.update(loaded)
        from_cache.update(names)
        return True

    if not cached(("activity",), "activity"):
        tables["activity"] = activity_features(ds, cfg.k_activity)

    if not cached(("co_size", "co_density"), "co"):
        seed = cfg.walk.rng_seed
        user_cm = cluster_stats(
            kmeans(emb.user_vectors, cfg.k_cooccur, rng_seed=seed + 1), emb.user_vectors, cfg.distance
        )
        item_cm = cluster_stats(
            kmeans(emb.item_vectors, cfg.k_cooccur, rng_seed=seed + 2), emb.item_vectors, cfg.distance
        )
        co_s, co_d = cooccurrence_features(
            ds, emb, user_cm, item_cm, *cfg.co_bins(), similarity=cfg.similarity
        )
        tables["co_size"], tables["co_density"] = co_s, co_d
        _save_clusters(out_dir, users=user_cm, items=item_cm)

    if not cached(("int_size", "int_density"), "int"):
        e = ds.edges_of_split("train") if ds.split_tags is not None else ds.edges
        evecs = edge_embeddings_for(emb, e)
        edge_cm = cluster_stats(
            kmeans(evecs, cfg.k_interaction, rng_seed=cfg.walk.rng_seed + 3), evecs, cfg.distance
        )
        tables["int_size"], tables["int_density"] = interaction_features(
            ds, edge_cm, e, *cfg.int_bins()
        )
        _save_clusters(out_dir, edges=edge_cm)

    for fam, table in tables.items():
        key = {"activity": "activity"}.get(fam, fam.split("_")[0])
        table.provenance = {"dataset": dataset_id, "config": hashes[key]}

    if out_dir is not None:
        fdir = out_dir / "features"
        fdir.mkdir(parents=True, exist_ok=True)
        for fam, table in tables.items():
            if fam not in from_cache:
                save_feature_table(table, fdir / f"{fam}.bin")
        manifest = dict(hashes)
        manifest["dataset"] = dataset_id
        with open(fdir / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return tables


def _load_manifest(out_dir: Path | None) -> dict:
    if out_dir is None:
        return {}
    path = out_dir / "features" / "manifest.json"
    if not path.exists():
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _save_clusters(out_dir: Path | None, **models: ClusterModel):
    if out_dir is None:
        return
    path = out_dir / "clusters.json"
    existing = {}
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            existing = json.load(fh)
    for name, cm in models.items():
        existing[name] = clustering.cluster_model_to_dict(cm)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(existing, fh, sort_keys=True)
        fh.write("\n")


def save_feature_table(table: FeatureTable, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fam = table.family.encode().ljust(16, b"\0")
    cfg_hash = table.provenance.get("config", "").encode().ljust(16, b"\0")[:16]
    with open(path, "wb") as fh:
        fh.write(_FEA_MAGIC)
        fh.write(fam)
        fh.write(
            np.asarray(
                [table.k, len(table.user_rows), len(table.item_rows)], dtype="<u4"
            ).tobytes()
        )
        fh.write(cfg_hash)
        fh.write(table.user_rows.astype("<f4").tobytes())
        fh.write(table.item_rows.astype("<f4").tobytes())
    return path


def load_feature_table(path: str | Path) -> FeatureTable:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(8) != _FEA_MAGIC:
            raise DataError(f"{path}: not a feature table file")
        family = fh.read(16).rstrip(b"\0").decode()
        k, n_users, n_items = np.frombuffer(fh.read(12), dtype="<u4")
        cfg_hash = fh.read(16).rstrip(b"\0").decode()
        users = np.frombuffer(fh.read(4 * k * n_users), dtype="<f4").reshape(n_users, k)
        items = np.frombuffer(fh.read(4 * k * n_items), dtype="<f4").reshape(n_items, k)
    return FeatureTable(
        family,
        int(k),
        users.astype(np.float64),
        items.astype(np.float64),
        provenance={"config": cfg_hash},
    )
