"""Score interpolation: size/density mixing, family combination, external
blending, and validation-metric grid search for the weights.

All combiners are affine, so outputs stay in the convex hull of their
inputs and ranking monotonicity is preserved weight-by-weight. Weights live
in the open interval (0,1): boundary configurations are realized by
flooring at 1e-3 and renormalizing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .evaluation import metrics_from_ranks, per_user_mean, positive_ranks

WEIGHT_FLOOR = 1e-3
METRIC_COLUMNS = {"auc": 0, "recall10": 1, "recall_at_10": 1, "ndcg10": 2, "ndcg_at_10": 2}

COUNT_FAMILY = "activity"
CO_FAMILIES = ("co_size", "co_density")
INT_FAMILIES = ("int_size", "int_density")


@dataclass(frozen=True)
class InterpolationWeights:
    alpha: float
    beta: float
    gamma: float
    delta: float = 0.5
    epsilon: float = 0.5
    eta: float | None = None

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta", "epsilon"):
            w = getattr(self, name)
            if not 0.0 < w < 1.0:
                raise ConfigError(f"{name}={w} must lie in the open interval (0,1)")
        if abs(self.alpha + self.beta + self.gamma - 1.0) > 1e-9:
            raise ConfigError(
                f"alpha+beta+gamma must equal 1, got {self.alpha + self.beta + self.gamma}"
            )
        if self.eta is not None and not 0.0 < self.eta < 1.0:
            raise ConfigError(f"eta={self.eta} must lie in the open interval (0,1)")


def weights_to_dict(w: InterpolationWeights) -> dict:
    return {
        "alpha": w.alpha,
        "beta": w.beta,
        "gamma": w.gamma,
        "delta": w.delta,
        "epsilon": w.epsilon,
        "eta": w.eta,
    }


def weights_from_dict(d: dict) -> InterpolationWeights:
    return InterpolationWeights(
        alpha=d["alpha"],
        beta=d["beta"],
        gamma=d["gamma"],
        delta=d.get("delta", 0.5),
        epsilon=d.get("epsilon", 0.5),
        eta=d.get("eta"),
    )


def floor_simplex(raw: tuple[float, float, float], floor: float = WEIGHT_FLOOR):
    """Clamp a simplex point away from the boundary and renormalize."""
    w = np.maximum(np.asarray(raw, dtype=np.float64), floor)
    w = w / w.sum()
    return float(w[0]), float(w[1]), float(w[2])


def single_family_weights(family: str, floor: float = WEIGHT_FLOOR) -> InterpolationWeights:
    """Near-boundary weights that realize a single-family scorer (Act/Co/Int)."""
    vertex = {"activity": (1, 0, 0), "co": (0, 1, 0), "int": (0, 0, 1)}
    key = "activity" if family == "activity" else family.split("_")[0]
    if key not in vertex:
        raise ConfigError(f"unknown family {family!r}")
    a, b, g = floor_simplex(vertex[key], floor)
    mix = {"delta": 0.5, "epsilon": 0.5}
    if family == "co_size":
        mix["delta"] = 1.0 - floor
    elif family == "co_density":
        mix["delta"] = floor
    elif family == "int_size":
        mix["epsilon"] = 1.0 - floor
    elif family == "int_density":
        mix["epsilon"] = floor
    return InterpolationWeights(a, b, g, **mix)


def combine_family(y_size, y_density, mix: float):
    """mix * size + (1-mix) * density; the per-family aggregation."""
    if not 0.0 < mix < 1.0:
        raise ConfigError(f"mix weight must be in (0,1), got {mix}")
    return mix * np.asarray(y_size) + (1.0 - mix) * np.asarray(y_density)


def combine_universal(y_a, y_c, y_i, w: InterpolationWeights):
    """alpha*activity + beta*co + gamma*int on already family-combined scores."""
    return w.alpha * np.asarray(y_a) + w.beta * np.asarray(y_c) + w.gamma * np.asarray(y_i)


def combined_scores(family_scores: dict, w: InterpolationWeights) -> np.ndarray:
    """Apply the size/density mixes and the family interpolation to score tables."""
    missing = [f for f in (COUNT_FAMILY, *CO_FAMILIES, *INT_FAMILIES) if f not in family_scores]
    if missing:
        raise ConfigError(f"missing family scores: {missing}")
    y_c = combine_family(family_scores["co_size"], family_scores["co_density"], w.delta)
    y_i = combine_family(family_scores["int_size"], family_scores["int_density"], w.epsilon)
    return combine_universal(family_scores[COUNT_FAMILY], y_c, y_i, w)


def minmax_normalize(scores: np.ndarray) -> np.ndarray:
    """Row-wise min-max to [0,1]; constant rows map to 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    lo = scores.min(axis=-1, keepdims=True)
    hi = scores.max(axis=-1, keepdims=True)
    span = hi - lo
    out = np.full_like(scores, 0.5)
    nz = np.broadcast_to(span > 0, scores.shape)
    out[nz] = ((scores - lo) / np.where(span > 0, span, 1.0))[nz]
    return out


def blend_external(y_z, y_b, eta: float):
    """(1-eta) * universal + eta * external: blends in another ranker."""
    if not 0.0 < eta < 1.0:
        raise ConfigError(f"eta must be in (0,1), got {eta}")
    return (1.0 - eta) * np.asarray(y_z) + eta * np.asarray(y_b)


def blend_task_scores(
    universal: np.ndarray, external: np.ndarray, eta: float, normalize: bool = True
) -> np.ndarray:
    """Blend two per-task candidate score matrices, min-max normalizing each
    candidate list first (raw blending available for fidelity runs)."""
    if normalize:
        universal = minmax_normalize(universal)
        external = minmax_normalize(external)
    return blend_external(universal, external, eta)


def _metric_of(scores: np.ndarray, items: np.ndarray, users: np.ndarray, col: int) -> float:
    ranks = positive_ranks(scores, items)
    per_task = metrics_from_ranks(ranks, items.shape[1])[:, col]
    _, means = per_user_mean(per_task, users)
    return float(means.mean())


def tune_weights(
    family_scores: dict,
    task_users: np.ndarray,
    task_items: np.ndarray,
    metric: str = "auc",
    mix_grid: np.ndarray | None = None,
    simplex_steps: int = 20,
    floor: float = WEIGHT_FLOOR,
) -> tuple[InterpolationWeights, float]:
    """Grid-search delta/epsilon then (alpha, beta, gamma) on validation scores.

    The mixes are tuned per family first (delta on the co pair, epsilon on
    the int pair); the simplex search is exhaustive at step 1/simplex_steps
    with weights floored and renormalized. Ties resolve to the
    lexicographically first grid point, so the result is deterministic.
    """
    if metric not in METRIC_COLUMNS:
        raise ConfigError(f"unknown metric {metric!r}")
    col = METRIC_COLUMNS[metric]
    for fam in (COUNT_FAMILY, *CO_FAMILIES, *INT_FAMILIES):
        if fam not in family_scores:
            raise ConfigError(f"missing family scores: {fam!r}")
        if len(family_scores[fam]) == 0:
            raise DataError("empty validation set; cannot tune weights")
    if mix_grid is None:
        mix_grid = np.round(np.arange(1, 10) * 0.1, 10)

    def best_mix(size_key, density_key):
        best = (-np.inf, None)
        for mix in mix_grid:
            y = combine_family(family_scores[size_key], family_scores[density_key], float(mix))
            m = _metric_of(y, task_items, task_users, col)
            if m > best[0]:
                best = (m, float(mix))
        return best[1]

    delta = best_mix("co_size", "co_density")
    epsilon = best_mix("int_size", "int_density")

    y_a = np.asarray(family_scores[COUNT_FAMILY], dtype=np.float64)
    y_c = combine_family(family_scores["co_size"], family_scores["co_density"], delta)
    y_i = combine_family(family_scores["int_size"], family_scores["int_density"], epsilon)

    best_metric = -np.inf
    best_abg = None
    for ai in range(simplex_steps + 1):
        for bi in range(simplex_steps + 1 - ai):
            gi = simplex_steps - ai - bi
            a, b, g = floor_simplex(
                (ai / simplex_steps, bi / simplex_steps, gi / simplex_steps), floor
            )
            m = _metric_of(a * y_a + b * y_c + g * y_i, task_items, task_users, col)
            if m > best_metric:
                best_metric = m
                best_abg = (a, b, g)
    w = InterpolationWeights(*best_abg, delta=delta, epsilon=epsilon)
    return w, float(best_metric)


def tune_eta(
    universal: np.ndarray,
    external: np.ndarray,
    task_users: np.ndarray,
    task_items: np.ndarray,
    metric: str = "auc",
    grid: np.ndarray | None = None,
    normalize: bool = True,
) -> tuple[float, float]:
    """Pick the blending weight eta on validation scores; includes
    near-boundary points so the blend can collapse to either scorer."""
    if metric not in METRIC_COLUMNS:
        raise ConfigError(f"unknown metric {metric!r}")
    col = METRIC_COLUMNS[metric]
    if grid is None:
        grid = np.concatenate(([WEIGHT_FLOOR], np.round(np.arange(1, 10) * 0.1, 10), [1 - WEIGHT_FLOOR]))
    best = (-np.inf, None)
    for eta in grid:
        y = blend_task_scores(universal, external, float(eta), normalize=normalize)
        m = _metric_of(y, task_items, task_users, col)
        if m > best[0]:
            best = (m, float(eta))
    return best[1], best[0]
