"""K-means clustering plus cluster size/density statistics and quantile bins.

Cluster assignment uses squared Euclidean distance; the density statistic
uses a separately configured bounded metric (cosine by default, range [0,2]).
Binning is rank-based so it stays a total function under ties.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

log = logging.getLogger(__name__)


@dataclass
class BinSpec:
    """Quantile bin layout over an empirical distribution of size n.

    ``edges`` holds k+1 nearest-rank quantile boundaries in value space for
    auditing; the actual bin of an element is derived from its rank:
    bin = floor(rank * k / n), so every element maps to exactly one bin and
    bins may be empty when k exceeds the number of distinct ranks.
    """

    k: int
    n: int
    edges: np.ndarray
    strategy: str = "quantile"

    def bin_of_rank(self, rank: int | np.ndarray) -> int | np.ndarray:
        return (np.asarray(rank) * self.k) // self.n


def rank_with_ties(values: np.ndarray, tiebreak: np.ndarray | None = None) -> np.ndarray:
    """Dense 0..n-1 ranks ordered by value, ties broken by ``tiebreak``.

    With tiebreak=None ties fall back to original index order.
    """
    values = np.asarray(values)
    if tiebreak is None:
        order = np.argsort(values, kind="stable")
    else:
        order = np.lexsort((np.asarray(tiebreak), values))
    ranks = np.empty(len(values), dtype=np.int64)
    ranks[order] = np.arange(len(values))
    return ranks


def quantile_bins(values: np.ndarray, k: int) -> BinSpec:
    """Fit a k-bin quantile BinSpec on ``values`` (nearest-rank edges)."""
    values = np.asarray(values, dtype=np.float64)
    if k < 1:
        raise ConfigError(f"number of bins must be >= 1, got {k}")
    if len(values) == 0:
        raise ConfigError("cannot bin an empty value list")
    svals = np.sort(values)
    n = len(svals)
    edges = np.empty(k + 1, dtype=np.float64)
    edges[0] = svals[0]
    for i in range(1, k + 1):
        # nearest-rank quantile at probability i/k
        r = int(np.ceil(i * n / k)) - 1
        edges[i] = svals[min(max(r, 0), n - 1)]
    return BinSpec(k=k, n=n, edges=edges)


def assign_bins(values: np.ndarray, k: int, tiebreak: np.ndarray | None = None):
    """Fit quantile bins and return (spec, per-element bin indices)."""
    spec = quantile_bins(values, k)
    return spec, spec.bin_of_rank(rank_with_ties(values, tiebreak))


def one_hot_bin(value_rank: int, spec: BinSpec) -> np.ndarray:
    vec = np.zeros(spec.k, dtype=np.float64)
    vec[int(spec.bin_of_rank(value_rank))] = 1.0
    return vec


@dataclass
class ClusterModel:
    """Fitted k-means model with optional size/density statistics and bins."""

    n_clusters: int
    centroids: np.ndarray
    assignment: np.ndarray
    size: np.ndarray | None = None
    density: np.ndarray | None = None
    size_bin: np.ndarray | None = None
    density_bin: np.ndarray | None = None
    size_bins: BinSpec | None = None
    density_bins: BinSpec | None = None
    objective_history: list = field(default_factory=list, repr=False)


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # (n, m) squared euclidean distances, computed via the expansion to stay O(n*m*d)
    p2 = np.sum(points * points, axis=1)[:, None]
    c2 = np.sum(centroids * centroids, axis=1)[None, :]
    d = p2 + c2 - 2.0 * points @ centroids.T
    np.maximum(d, 0.0, out=d)
    return d


def _kmeanspp_init(points: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centroids = np.empty((m, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    closest = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, m):
        total = closest.sum()
        if total <= 0.0:
            # all remaining points coincide with a centroid; pick deterministically
            pick = int(rng.integers(n))
        else:
            r = rng.random() * total
            pick = int(np.searchsorted(np.cumsum(closest), r))
            pick = min(pick, n - 1)
        centroids[j] = points[pick]
        closest = np.minimum(closest, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def kmeans(points: np.ndarray, m: int, rng_seed: int, max_iter: int = 100) -> ClusterModel:
    """Lloyd's algorithm with k-means++ init, run to assignment fixpoint.

    Empty clusters are repaired by stealing the point currently farthest from
    its own centroid, keeping the cluster count fixed.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if m < 1:
        raise ConfigError(f"need m >= 1 clusters, got {m}")
    if n < m:
        raise ConfigError(f"cannot fit {m} clusters on {n} points")
    rng = np.random.default_rng(rng_seed)
    centroids = _kmeanspp_init(points, m, rng)

    assignment = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    for _ in range(max_iter):
        d = _sq_dists(points, centroids)
        new_assignment = np.argmin(d, axis=1)
        dist_own = d[np.arange(n), new_assignment]

        counts = np.bincount(new_assignment, minlength=m)
        for empty in np.flatnonzero(counts == 0):
            candidates = np.flatnonzero(counts[new_assignment] > 1)
            steal = candidates[np.argmax(dist_own[candidates])]
            counts[new_assignment[steal]] -= 1
            new_assignment[steal] = empty
            counts[empty] = 1
            dist_own[steal] = 0.0

        history.append(float(dist_own.sum()))
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for j in range(m):
            centroids[j] = points[assignment == j].mean(axis=0)

    # centroids must reflect the final assignment (singleton => centroid == point)
    for j in range(m):
        centroids[j] = points[assignment == j].mean(axis=0)
    return ClusterModel(
        n_clusters=m,
        centroids=centroids,
        assignment=assignment,
        objective_history=history,
    )


def cosine_distance(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bounded cosine distance in [0, 2], rows of x against rows of y.

    Zero vectors use the orthogonal convention (distance 1) unless both
    sides are zero, which counts as identical (distance 0).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    denom = nx * ny
    dots = np.sum(x * y, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = 1.0 - dots / denom
    zero = denom == 0.0
    if zero.any():
        log.warning("cosine distance saw %d zero-vector pairs", int(zero.sum()))
        both = zero & (nx == 0.0) & (ny == 0.0)
        d[zero] = 1.0
        d[both] = 0.0
    return np.clip(d, 0.0, 2.0)


_DISTANCES = {"cosine": cosine_distance}


def cluster_stats(
    model: ClusterModel, points: np.ndarray, distance: str = "cosine"
) -> ClusterModel:
    """Fill per-cluster size S and density D (mean bounded distance to centroid)."""
    if distance not in _DISTANCES:
        raise ConfigError(f"unknown bounded distance {distance!r}")
    points = np.asarray(points, dtype=np.float64)
    m = model.n_clusters
    size = np.bincount(model.assignment, minlength=m).astype(np.float64)
    d = _DISTANCES[distance](points, model.centroids[model.assignment])
    density = np.zeros(m, dtype=np.float64)
    np.add.at(density, model.assignment, d)
    nonzero = size > 0
    density[nonzero] /= size[nonzero]
    model.size = size
    model.density = density
    return model


def bin_clusters(model: ClusterModel, k_size: int, k_density: int) -> ClusterModel:
    """Quantile-bin the size and density distributions; ties break by cluster index."""
    if model.size is None or model.density is None:
        raise ConfigError("cluster_stats must run before bin_clusters")
    model.size_bins, model.size_bin = assign_bins(model.size, k_size)
    model.density_bins, model.density_bin = assign_bins(model.density, k_density)
    return model


def cluster_model_to_dict(model: ClusterModel) -> dict:
    """JSON-friendly dump for the clusters.json audit artifact."""
    out = {
        "n_clusters": model.n_clusters,
        "centroids": model.centroids.tolist(),
        "assignment": model.assignment.tolist(),
    }
    if model.size is not None:
        out["size"] = model.size.tolist()
        out["density"] = model.density.tolist()
    if model.size_bin is not None:
        out["size_bin"] = model.size_bin.tolist()
        out["density_bin"] = model.density_bin.tolist()
        out["size_bin_edges"] = model.size_bins.edges.tolist()
        out["density_bin_edges"] = model.density_bins.edges.tolist()
    return out
