"""Twin MLP towers scored by inner product, trained with BPR + Adam.

One (user tower, item tower) pair per feature family. Towers are three
dense layers capped at width 64 with tanh after every layer (the final
activation is a config flag). Training samples one unobserved item per
positive and early-stops on validation AUC; zero-shot scoring runs the same
forward pass with zero parameter updates.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .dataset import InteractionDataset
from .errors import ConfigError, DataError, NumericError

if TYPE_CHECKING:
    from .ensemble import InterpolationWeights

log = logging.getLogger(__name__)

_MLP_MAGIC = b"ZRECMLP1"


@dataclass
class MlpTower:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    final_activation: bool = True
    update_count: int = 0

    def __post_init__(self):
        dims = [w.shape for w in self.weights]
        for (a, b), bias in zip(dims, self.biases):
            if bias.shape != (b,):
                raise ConfigError("bias shape does not match layer width")
        for (_, out_prev), (in_next, _) in zip(dims, dims[1:]):
            if out_prev != in_next:
                raise ConfigError(f"layer dims do not chain: {dims}")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    def _act(self, x, last: bool):
        if self.activation == "identity" or (last and not self.final_activation):
            return x
        return np.tanh(x)

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if h.shape[1] != self.input_dim:
            raise ConfigError(
                f"input dim {h.shape[1]} does not match tower input {self.input_dim}"
            )
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = self._act(h @ w + b, i == last)
        return h

    def forward_trace(self, x: np.ndarray):
        """Forward pass keeping layer inputs/outputs for backprop."""
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        inputs, outputs = [], []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            h = self._act(h @ w + b, i == last)
            outputs.append(h)
        return h, inputs, outputs

    def backward(self, d_out: np.ndarray, inputs, outputs):
        """Gradients for all weights/biases given dLoss/dOutput."""
        grads_w, grads_b = [], []
        last = len(self.weights) - 1
        g = d_out
        for i in range(last, -1, -1):
            if not (self.activation == "identity" or (i == last and not self.final_activation)):
                g = g * (1.0 - outputs[i] ** 2)
            grads_w.append(inputs[i].T @ g)
            grads_b.append(g.sum(axis=0))
            if i > 0:
                g = g @ self.weights[i].T
        return grads_w[::-1], grads_b[::-1]

    def params(self):
        return self.weights + self.biases

    def copy_params(self):
        return [p.copy() for p in self.params()]

    def set_params(self, params):
        n = len(self.weights)
        for i in range(n):
            self.weights[i][...] = params[i]
            self.biases[i][...] = params[n + i]


def new_tower(
    input_dim: int,
    hidden_dim: int = 64,
    depth: int = 3,
    seed: int = 0,
    activation: str = "tanh",
    final_activation: bool = True,
    input_stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> MlpTower:
    """Glorot-uniform initialized tower [input_dim -> hidden_dim * depth].

    ``input_stats`` = (mean, std) of the training inputs folds a
    standardization into the first layer's initial weights, so raw count
    features start in tanh's linear regime; the model class is unchanged
    and training remains free to move the parameters anywhere.
    """
    rng = np.random.default_rng(seed)
    dims = [input_dim] + [hidden_dim] * depth
    weights, biases = [], []
    for a, b in zip(dims, dims[1:]):
        bound = np.sqrt(6.0 / (a + b))
        weights.append(rng.uniform(-bound, bound, size=(a, b)))
        biases.append(np.zeros(b))
    if input_stats is not None:
        mu, sigma = input_stats
        sigma = np.where(sigma > 0, sigma, 1.0)
        biases[0] = biases[0] - (mu / sigma) @ weights[0]
        weights[0] = weights[0] / sigma[:, None]
    return MlpTower(weights, biases, activation=activation, final_activation=final_activation)


def score(user_tower: MlpTower, item_tower: MlpTower, f_u: np.ndarray, f_v: np.ndarray):
    """Inner product of the two tower outputs; scalar for single rows."""
    e_u = user_tower.forward(f_u)
    e_v = item_tower.forward(f_v)
    if e_u.shape != e_v.shape:
        raise ConfigError("user/item tower outputs have mismatched shapes")
    s = np.sum(e_u * e_v, axis=1)
    return float(s[0]) if s.shape == (1,) else s


def bpr_loss(scores_pos: np.ndarray, scores_neg: np.ndarray) -> float:
    """Mean of -ln sigma(s+ - s-); stable log1p form, no overflow either way."""
    scores_pos = np.asarray(scores_pos, dtype=np.float64)
    scores_neg = np.asarray(scores_neg, dtype=np.float64)
    if scores_pos.shape != scores_neg.shape:
        raise ConfigError("positive and negative score lists differ in length")
    return float(np.mean(np.logaddexp(0.0, scores_neg - scores_pos)))


class Adam:
    """Standard Adam over a list of parameter arrays."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainConfig:
    epochs: int = 25
    batch_size: int = 1024
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    negatives_per_positive: int = 1
    patience: int = 3
    seed: int = 0
    val_negatives: int = 99
    hidden_dim: int = 64
    depth: int = 3
    final_activation: bool = True
    standardize_init: bool = True

    def __post_init__(self):
        if self.epochs > 25:
            raise ConfigError("epoch cap is 25")
        if self.hidden_dim > 64:
            raise ConfigError("layer output cap is 64")


class _NegativeSampler:
    """Uniform negatives outside each user's full interaction history."""

    def __init__(self, ds: InteractionDataset):
        self.n_items = ds.n_items
        keys = ds.edges[:, 0].astype(np.int64) * ds.n_items + ds.edges[:, 1]
        self.keys = np.sort(keys)
        hist = np.bincount(ds.edges[:, 0], minlength=ds.n_users)
        self.pool = ds.n_items - hist

    def in_history(self, users, items):
        q = users.astype(np.int64) * self.n_items + items
        idx = np.searchsorted(self.keys, q)
        idx = np.minimum(idx, len(self.keys) - 1)
        return self.keys[idx] == q

    def history_of(self, u: int) -> np.ndarray:
        lo = np.searchsorted(self.keys, int(u) * self.n_items)
        hi = np.searchsorted(self.keys, (int(u) + 1) * self.n_items)
        return (self.keys[lo:hi] - int(u) * self.n_items).astype(np.int64)

    def complement_of(self, u: int) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_items, dtype=np.int64), self.history_of(u))

    def sample(self, users: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if (self.pool[users] < 1).any():
            bad = int(users[self.pool[users] < 1][0])
            raise DataError(f"user index {bad} has interacted with every item")
        out = rng.integers(self.n_items, size=len(users))
        bad = self.in_history(users, out)
        tries = 0
        while bad.any() and tries < 200:
            out[bad] = rng.integers(self.n_items, size=int(bad.sum()))
            bad = self.in_history(users, out)
            tries += 1
        if bad.any():
            # tiny catalogs: fall back to explicit complements
            for i in np.flatnonzero(bad):
                out[i] = rng.choice(self.complement_of(int(users[i])))
        return out


def _trainable_edges(ds: InteractionDataset, sampler: _NegativeSampler) -> np.ndarray:
    """Train edges whose user still has unobserved items to sample from."""
    edges = ds.edges_of_split("train").astype(np.int64)
    if len(edges) == 0:
        raise DataError("no train edges to fit on")
    ok = sampler.pool[edges[:, 0]] >= 1
    if not ok.all():
        log.warning(
            "dropping %d train edge(s): their users interacted with every item",
            int((~ok).sum()),
        )
        edges = edges[ok]
    if len(edges) == 0:
        raise DataError("every train user has interacted with every item")
    return edges


def _validation_tasks(ds, sampler, n_negatives, rng):
    """(user, positive, negatives) triples from the valid split, for early stop."""
    tasks = []
    for u, v in ds.edges_of_split("valid"):
        choices = sampler.complement_of(int(u))
        if len(choices) < 1:
            continue
        take = min(n_negatives, len(choices))
        negs = rng.choice(choices, size=take, replace=False)
        tasks.append((int(u), int(v), negs))
    return tasks


def _validation_auc(user_out, item_out, tasks) -> float:
    if not tasks:
        return float("nan")
    aucs = np.empty(len(tasks))
    for i, (u, v, negs) in enumerate(tasks):
        s_pos = user_out[u] @ item_out[v]
        s_neg = item_out[negs] @ user_out[u]
        wins = np.count_nonzero(s_neg < s_pos) + 0.5 * np.count_nonzero(s_neg == s_pos)
        aucs[i] = wins / len(negs)
    return float(aucs.mean())


def bpr_batch_loss_and_grads(
    user_tower: MlpTower,
    item_tower: MlpTower,
    f_u: np.ndarray,
    f_pos: np.ndarray,
    f_neg: np.ndarray,
):
    """Mean BPR loss on a triple batch and gradients for both towers.

    Returns (loss, user grads, item grads) where each grad list matches the
    tower's params() ordering (weights then biases).
    """
    e_u, u_in, u_out = user_tower.forward_trace(f_u)
    f_items = np.concatenate((f_pos, f_neg))
    e_i, i_in, i_out = item_tower.forward_trace(f_items)
    b = len(f_u)
    e_p, e_n = e_i[:b], e_i[b:]

    d = np.sum(e_u * (e_p - e_n), axis=1)
    loss = float(np.mean(np.logaddexp(0.0, -d)))
    g = -_sigmoid(-d) / b
    d_eu = g[:, None] * (e_p - e_n)
    d_ei = np.concatenate((g[:, None] * e_u, -g[:, None] * e_u))
    gu_w, gu_b = user_tower.backward(d_eu, u_in, u_out)
    gi_w, gi_b = item_tower.backward(d_ei, i_in, i_out)
    return loss, gu_w + gu_b, gi_w + gi_b


@dataclass
class TrainedFamily:
    user_tower: MlpTower
    item_tower: MlpTower
    val_auc: float
    history: list = field(default_factory=list)


def train_family(
    user_rows: np.ndarray,
    item_rows: np.ndarray,
    ds: InteractionDataset,
    cfg: TrainConfig,
) -> TrainedFamily:
    """BPR-train one tower pair on the train split of ``ds``.

    Deterministic given the seed; raises NumericError if the loss diverges.
    The returned towers are the best validation-AUC checkpoint.
    """
    k = user_rows.shape[1]
    u_stats = (user_rows.mean(axis=0), user_rows.std(axis=0)) if cfg.standardize_init else None
    i_stats = (item_rows.mean(axis=0), item_rows.std(axis=0)) if cfg.standardize_init else None
    user_tower = new_tower(k, cfg.hidden_dim, cfg.depth, seed=cfg.seed * 2 + 1,
                           final_activation=cfg.final_activation, input_stats=u_stats)
    item_tower = new_tower(k, cfg.hidden_dim, cfg.depth, seed=cfg.seed * 2 + 2,
                           final_activation=cfg.final_activation, input_stats=i_stats)
    sampler = _NegativeSampler(ds)
    train_edges = _trainable_edges(ds, sampler)

    val_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(3,)))
    val_tasks = _validation_tasks(ds, sampler, cfg.val_negatives, val_rng)

    params = user_tower.params() + item_tower.params()
    opt = Adam(params, lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    n_user_params = len(user_tower.params())

    best_auc = -np.inf
    best_params = None
    best_counts = (0, 0)
    stale = 0
    history = []
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(4, epoch)))
        perm = rng.permutation(len(train_edges))
        losses = []
        for lo in range(0, len(perm), cfg.batch_size):
            batch = train_edges[perm[lo : lo + cfg.batch_size]]
            users = np.repeat(batch[:, 0], cfg.negatives_per_positive)
            pos = np.repeat(batch[:, 1], cfg.negatives_per_positive)
            neg = sampler.sample(users, rng)

            loss, gu, gi = bpr_batch_loss_and_grads(
                user_tower, item_tower, user_rows[users], item_rows[pos], item_rows[neg]
            )
            losses.append(loss)
            if not np.isfinite(loss):
                raise NumericError(
                    f"BPR loss diverged at epoch {epoch} (lr={cfg.learning_rate})"
                )
            opt.step(gu + gi)
            user_tower.update_count += 1
            item_tower.update_count += 1

        user_out = user_tower.forward(user_rows)
        item_out = item_tower.forward(item_rows)
        val_auc = _validation_auc(user_out, item_out, val_tasks)
        history.append({"epoch": epoch, "loss": float(np.mean(losses)), "val_auc": val_auc})
        if np.isnan(val_auc) or val_auc > best_auc + 1e-12:
            best_auc = -np.inf if np.isnan(val_auc) else val_auc
            best_params = [p.copy() for p in params]
            best_counts = (user_tower.update_count, item_tower.update_count)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    if best_params is not None:
        user_tower.set_params(best_params[:n_user_params])
        item_tower.set_params(best_params[n_user_params:])
        user_tower.update_count, item_tower.update_count = best_counts
    return TrainedFamily(user_tower, item_tower, best_auc if np.isfinite(best_auc) else float("nan"), history)


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class ScorerBundle:
    """The serializable pre-trained model: one tower pair per family."""

    towers: dict[str, tuple[MlpTower, MlpTower]]
    family_k: dict[str, int]
    weights: "InterpolationWeights | None" = None
    meta: dict = field(default_factory=dict)

    def check_k(self, family: str, k: int):
        want = self.family_k[family]
        if k != want:
            raise ConfigError(
                f"feature dimension incompatible; rebuild target features with k={want} "
                f"for family {family!r} (got k={k})"
            )


def zero_shot_score(bundle: ScorerBundle, family: str, f_u: np.ndarray, f_v: np.ndarray):
    """Score unseen entities with the pre-trained towers; no updates occur."""
    f_u = np.atleast_2d(np.asarray(f_u))
    f_v = np.atleast_2d(np.asarray(f_v))
    bundle.check_k(family, f_u.shape[1])
    bundle.check_k(family, f_v.shape[1])
    ut, it = bundle.towers[family]
    return score(ut, it, f_u, f_v)


def train_all(features: dict, ds: InteractionDataset, cfg: TrainConfig) -> ScorerBundle:
    """Train every family's tower pair and collect them into a bundle."""
    towers = {}
    family_k = {}
    meta: dict = {"seed": cfg.seed, "val_auc": {}, "epochs_ran": {}}
    for i, (family, table) in enumerate(sorted(features.items())):
        fam_cfg = TrainConfig(**{**cfg.__dict__, "seed": cfg.seed + 101 * i})
        trained = train_family(table.user_rows, table.item_rows, ds, fam_cfg)
        towers[family] = (trained.user_tower, trained.item_tower)
        family_k[family] = table.k
        meta["val_auc"][family] = trained.val_auc
        meta["epochs_ran"][family] = len(trained.history)
    return ScorerBundle(towers=towers, family_k=family_k, meta=meta)


def _write_tower(fh, tower: MlpTower):
    fh.write(struct.pack("<I", len(tower.weights)))
    for w, b in zip(tower.weights, tower.biases):
        fh.write(struct.pack("<II", *w.shape))
        fh.write(w.astype("<f8").tobytes())
        fh.write(b.astype("<f8").tobytes())


def _read_tower(fh, final_activation: bool) -> MlpTower:
    (n_layers,) = struct.unpack("<I", fh.read(4))
    weights, biases = [], []
    for _ in range(n_layers):
        a, b = struct.unpack("<II", fh.read(8))
        weights.append(np.frombuffer(fh.read(8 * a * b), dtype="<f8").reshape(a, b).copy())
        biases.append(np.frombuffer(fh.read(8 * b), dtype="<f8").copy())
    return MlpTower(weights, biases, final_activation=final_activation)


def save_bundle(bundle: ScorerBundle, dirpath: str | Path) -> Path:
    from .ensemble import weights_to_dict

    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    for family, (ut, it) in bundle.towers.items():
        with open(dirpath / f"{family}.bin", "wb") as fh:
            fh.write(_MLP_MAGIC)
            _write_tower(fh, ut)
            _write_tower(fh, it)
        sidecar = {
            "family": family,
            "k": bundle.family_k[family],
            "final_activation": ut.final_activation,
            "update_count": [ut.update_count, it.update_count],
            "val_auc": bundle.meta.get("val_auc", {}).get(family),
            "epochs": bundle.meta.get("epochs_ran", {}).get(family),
            "seed": bundle.meta.get("seed"),
            "source_dataset": bundle.meta.get("source_dataset"),
        }
        with open(dirpath / f"{family}.json", "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if bundle.weights is not None:
        payload = weights_to_dict(bundle.weights)
        tuning = bundle.meta.get("tuning", {})
        if "value" in tuning:
            payload["validation_metric"] = tuning["value"]
            payload["metric"] = tuning.get("metric", "auc")
        with open(dirpath / "weights.json", "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    with open(dirpath / "bundle.json", "w", encoding="utf-8") as fh:
        json.dump(bundle.meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return dirpath


def load_bundle(dirpath: str | Path) -> ScorerBundle:
    from .ensemble import weights_from_dict

    dirpath = Path(dirpath)
    if not (dirpath / "bundle.json").exists():
        raise DataError(f"not a bundle directory (missing bundle.json): {dirpath}")
    with open(dirpath / "bundle.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    towers = {}
    family_k = {}
    for sidecar_path in sorted(dirpath.glob("*.json")):
        if sidecar_path.name in ("bundle.json", "weights.json"):
            continue
        with open(sidecar_path, encoding="utf-8") as fh:
            sidecar = json.load(fh)
        family = sidecar["family"]
        with open(dirpath / f"{family}.bin", "rb") as fh:
            if fh.read(8) != _MLP_MAGIC:
                raise DataError(f"{family}.bin: not a tower file")
            ut = _read_tower(fh, sidecar["final_activation"])
            it = _read_tower(fh, sidecar["final_activation"])
        ut.update_count, it.update_count = sidecar["update_count"]
        towers[family] = (ut, it)
        family_k[family] = sidecar["k"]
    weights = None
    if (dirpath / "weights.json").exists():
        with open(dirpath / "weights.json", encoding="utf-8") as fh:
            weights = weights_from_dict(json.load(fh))
    return ScorerBundle(towers=towers, family_k=family_k, weights=weights, meta=meta)
