"""End-to-end orchestration of the three problem settings.

Every artifact directory embeds the hash of its full upstream configuration:
prepare -> dataset_hash, featurize -> feature hashes, train -> bundle_hash.
Evaluate verifies the chain (unless forced) and never writes into the bundle
directory; zero-shot runs perform zero optimizer steps by construction and
the update counters are recorded in the report to prove it.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from . import ensemble, evaluation, features as feat_mod, model as model_mod, report as report_mod
from .config import ExperimentConfig, config_hash
from .errors import ConfigError, DataError, ZerorecError

log = logging.getLogger(__name__)


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def run_prepare(cfg: ExperimentConfig, input_path: str | Path, out_dir: str | Path) -> dict:
    """load -> binarize -> dedup -> k-core -> partition -> split; writes
    seen/ and unseen/ dataset directories. No-op on matching re-runs."""
    input_path = Path(input_path)
    out_dir = Path(out_dir)
    d = cfg.data
    base = config_hash(
        {
            "input": file_digest(input_path),
            "rating_threshold": d.rating_threshold,
            "k_core": d.k_core,
            "seen_fraction": d.seen_fraction,
            "train_fraction": d.train_fraction,
            "valid_fraction": d.valid_fraction,
            "seed": d.seed,
        }
    )
    expected = {
        label: config_hash({"base": base, "partition": label}) for label in ("seen", "unseen")
    }
    dirs = {label: out_dir / label for label in ("seen", "unseen")}
    if all(_dataset_hash_of(p) == expected[label] for label, p in dirs.items()):
        log.info("prepare: cache hit (%s)", base)
        return dirs

    interactions = ds_mod.load_interactions(
        input_path, fmt=d.format, delimiter=d.delimiter, rating_threshold=d.rating_threshold
    )
    full = ds_mod.build_dataset(interactions, k=d.k_core, meta={"source": input_path.name})
    seen, unseen = ds_mod.partition_seen_unseen(full, d.seen_fraction, d.seed, k=d.k_core)
    for label, half in (("seen", seen), ("unseen", unseen)):
        half = ds_mod.split_per_user(half, d.train_fraction, d.valid_fraction, d.seed + 1)
        half.meta["dataset_hash"] = expected[label]
        ds_mod.save_dataset(half, dirs[label])
        log.info(
            "prepare: %s half -> %d users / %d items / %d edges",
            label, half.n_users, half.n_items, half.n_edges,
        )
    return dirs


def _dataset_hash_of(dirpath: Path) -> str | None:
    meta = dirpath / "meta.json"
    if not meta.exists():
        return None
    with open(meta, encoding="utf-8") as fh:
        return json.load(fh).get("dataset_hash")


def run_featurize(cfg: ExperimentConfig, dataset_dir: str | Path) -> dict:
    """Build (or reuse) the five feature tables next to the dataset."""
    dataset_dir = Path(dataset_dir)
    ds = ds_mod.load_dataset(dataset_dir)
    dataset_id = ds.meta.get("dataset_hash") or file_digest(dataset_dir / "edges.bin")
    tables = feat_mod.build_all(ds, cfg.features, artifacts_dir=dataset_dir, dataset_id=dataset_id)
    return tables


def features_hash_of(dataset_dir: Path) -> str:
    manifest = dataset_dir / "features" / "manifest.json"
    if not manifest.exists():
        raise DataError(f"no features under {dataset_dir}; run featurize first")
    with open(manifest, encoding="utf-8") as fh:
        return config_hash(json.load(fh))


def _load_tables(dataset_dir: Path) -> dict:
    fdir = dataset_dir / "features"
    tables = {}
    for fam in feat_mod.FAMILIES:
        path = fdir / f"{fam}.bin"
        if not path.exists():
            raise DataError(f"missing feature table {path}; run featurize first")
        tables[fam] = feat_mod.load_feature_table(path)
    return tables


def _check_feature_chain(dataset_dir: Path, ds, force: bool):
    manifest = dataset_dir / "features" / "manifest.json"
    with open(manifest, encoding="utf-8") as fh:
        recorded = json.load(fh).get("dataset")
    actual = ds.meta.get("dataset_hash")
    if actual and recorded != actual:
        msg = f"{dataset_dir}: features were built for dataset {recorded}, not {actual}"
        if force:
            log.warning("%s (forced)", msg)
        else:
            raise ConfigError(msg + " (use --force to override)")


def _pairwise_scores(user_out, item_out, users, items, chunk=512):
    """(T, C) inner products of user rows against per-task candidate rows."""
    out = np.empty(items.shape, dtype=np.float64)
    for lo in range(0, len(users), chunk):
        hi = lo + chunk
        out[lo:hi] = np.einsum("td,tcd->tc", user_out[users[lo:hi]], item_out[items[lo:hi]])
    return out


def _family_score_matrices(bundle, tables, users, items):
    scores = {}
    for fam, (ut, it) in bundle.towers.items():
        table = tables[fam]
        bundle.check_k(fam, table.k)
        user_out = ut.forward(table.user_rows)
        item_out = it.forward(table.item_rows)
        scores[fam] = _pairwise_scores(user_out, item_out, users, items)
    return scores


def run_train(
    cfg: ExperimentConfig, dataset_dir: str | Path, bundle_dir: str | Path, force: bool = False
) -> model_mod.ScorerBundle:
    """Train all five tower pairs on the source dataset and tune the
    interpolation weights (and the MostPop blend weight) on its validation
    split. Resume-safe: a bundle with a matching hash is reused."""
    dataset_dir = Path(dataset_dir)
    bundle_dir = Path(bundle_dir)
    ds = ds_mod.load_dataset(dataset_dir)
    fhash = features_hash_of(dataset_dir)
    bundle_hash = config_hash({"features": fhash, "model": cfg.model, "eval": cfg.eval})
    if (bundle_dir / "bundle.json").exists():
        existing = model_mod.load_bundle(bundle_dir)
        if existing.meta.get("bundle_hash") == bundle_hash:
            log.info("train: cache hit (%s)", bundle_hash)
            return existing
    _check_feature_chain(dataset_dir, ds, force)
    tables = _load_tables(dataset_dir)

    bundle = model_mod.train_all(tables, ds, cfg.model)
    for fam, auc in bundle.meta["val_auc"].items():
        log.info("train: family %s validation AUC %.4f", fam, auc)

    tasks, _ = evaluation.build_tasks(
        ds, rng_seed=cfg.model.seed + 50, n_negatives=cfg.eval.n_negatives, split="valid"
    )
    if not tasks:
        raise DataError("no usable validation tasks; cannot tune weights")
    users = np.array([t.user for t in tasks])
    items = np.stack([t.items for t in tasks])
    val_scores = _family_score_matrices(bundle, tables, users, items)
    weights, achieved = ensemble.tune_weights(val_scores, users, items, metric=cfg.eval.metric)

    pop = evaluation.mostpop_scorer(ds)
    pop_scores = pop.item_scores[items]
    universal = ensemble.combined_scores(val_scores, weights)
    eta, _ = ensemble.tune_eta(universal, pop_scores, users, items, metric=cfg.eval.metric)
    weights = replace(weights, eta=eta)

    bundle.weights = weights
    bundle.meta.update(
        {
            "bundle_hash": bundle_hash,
            "source_dataset": ds.meta.get("dataset_hash"),
            "source_features": fhash,
            "tuning": {"metric": cfg.eval.metric, "value": achieved},
        }
    )
    model_mod.save_bundle(bundle, bundle_dir)
    return bundle


def _dir_snapshot(dirpath: Path) -> dict:
    return {
        str(p): (p.stat().st_mtime_ns, p.stat().st_size)
        for p in sorted(dirpath.rglob("*"))
        if p.is_file()
    }


def _mfbpr_for(ds, cfg: ExperimentConfig, dataset_dir: Path):
    """Train (or load a cached) MF-BPR baseline on the target's train split."""
    key = config_hash(
        {"dataset": ds.meta.get("dataset_hash"), "model": cfg.model, "kind": "mfbpr"}
    )
    cache = dataset_dir / "baselines" / f"mfbpr-{key}.npz"
    if cache.exists():
        data = np.load(cache)
        return evaluation.MfBprScorer(
            data["P"], data["Q"], int(data["steps"]), float(data["val_auc"])
        )
    scorer = evaluation.mf_bpr_baseline(ds, cfg.model)
    cache.parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        cache, P=scorer.P, Q=scorer.Q, steps=scorer.update_count, val_auc=scorer.val_auc
    )
    return scorer


def run_evaluate(
    cfg: ExperimentConfig,
    bundle_dir: str | Path,
    target_dir: str | Path,
    out_dir: str | Path,
    blend: str | None = None,
    eta: float | None = None,
    eta_grid: list[float] | None = None,
    force: bool = False,
) -> evaluation.MetricReport:
    """Score the target's test tasks with the pre-trained bundle.

    Modes: in_domain (target is the training dataset), zero_shot_in_domain
    (other half of the same dataset), zero_shot_cross_domain (other dataset).
    Optional blending with MostPop (any mode) or MF-BPR (in_domain only).
    """
    bundle_dir = Path(bundle_dir)
    target_dir = Path(target_dir)
    out_dir = Path(out_dir)
    before = _dir_snapshot(bundle_dir)

    bundle = model_mod.load_bundle(bundle_dir)
    if bundle.weights is None:
        raise DataError(f"{bundle_dir}: bundle has no tuned weights")
    ds = ds_mod.load_dataset(target_dir)
    _check_feature_chain(target_dir, ds, force)
    tables = _load_tables(target_dir)
    _check_mode_chain(cfg.mode, bundle, ds, force)

    if blend not in (None, "mostpop", "mfbpr"):
        raise ConfigError(f"unknown blend {blend!r}")
    if blend == "mfbpr" and cfg.mode != "in_domain":
        raise ConfigError("MF-BPR blend is id-based and cannot score unseen ids; in_domain only")

    external = None
    if blend == "mostpop":
        external = evaluation.mostpop_scorer(ds)
    elif blend == "mfbpr":
        external = _mfbpr_for(ds, cfg, target_dir)

    eta_used = None
    if blend is not None and eta is None:
        if cfg.mode == "in_domain":
            vt, _ = evaluation.build_tasks(
                ds, rng_seed=cfg.model.seed + 50, n_negatives=cfg.eval.n_negatives, split="valid"
            )
            if not vt:
                raise DataError("no validation tasks to tune eta on")
            vu = np.array([t.user for t in vt])
            vi = np.stack([t.items for t in vt])
            v_universal = ensemble.combined_scores(
                _family_score_matrices(bundle, tables, vu, vi), bundle.weights
            )
            v_ext = _external_scores(external, vu, vi)
            eta_used, _ = ensemble.tune_eta(
                v_universal, v_ext, vu, vi, metric=cfg.eval.metric,
                grid=np.asarray(eta_grid) if eta_grid else None,
            )
        else:
            eta_used = bundle.weights.eta  # tuned on the source validation split
            if eta_used is None:
                raise ConfigError(
                    "bundle carries no source-tuned eta; pass --eta or retrain the bundle"
                )
    elif eta is not None:
        eta_used = eta

    per_seed = []
    skipped = 0
    for seed in cfg.eval.seeds:
        tasks, skipped = evaluation.build_tasks(ds, seed, cfg.eval.n_negatives, split="test")
        if not tasks:
            raise DataError("no usable test tasks")
        users = np.array([t.user for t in tasks])
        items = np.stack([t.items for t in tasks])
        fam_scores = _family_score_matrices(bundle, tables, users, items)
        combined = ensemble.combined_scores(fam_scores, bundle.weights)
        if external is not None:
            combined = ensemble.blend_task_scores(
                combined, _external_scores(external, users, items), eta_used
            )
        m = evaluation.evaluate_scored_tasks(tasks, combined)
        m["seed"] = seed
        per_seed.append(m)
    rep = evaluation.aggregate_seeds(per_seed, skipped)

    after = _dir_snapshot(bundle_dir)
    if after != before:
        raise ZerorecError("evaluate must not write into the bundle directory")

    payload = {
        "mode": cfg.mode,
        "blend": blend,
        "eta": eta_used,
        "metrics": rep.to_dict(),
        "n_negatives": cfg.eval.n_negatives,
        "seeds": list(cfg.eval.seeds),
        "chain": {
            "bundle": bundle.meta.get("bundle_hash"),
            "bundle_source_dataset": bundle.meta.get("source_dataset"),
            "target_dataset": ds.meta.get("dataset_hash"),
            "target_features": features_hash_of(target_dir),
        },
        "update_counts": {
            fam: [ut.update_count, it.update_count] for fam, (ut, it) in bundle.towers.items()
        },
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    report_mod.write_report_csv(rep, out_dir / "report.csv")
    report_mod.render_report_figure(rep, out_dir / "report_metrics.png", title=cfg.mode)
    return rep


def _external_scores(external, users, items):
    out = np.empty(items.shape, dtype=np.float64)
    for i, (u, cand) in enumerate(zip(users, items)):
        out[i] = external(int(u), cand)
    return out


def _check_mode_chain(mode: str, bundle, target_ds, force: bool):
    source = bundle.meta.get("source_dataset")
    target = target_ds.meta.get("dataset_hash")
    problem = None
    if mode == "in_domain" and source != target:
        problem = "in_domain requires the bundle's own dataset as target"
    if mode == "zero_shot_in_domain":
        if source == target:
            problem = "zero_shot_in_domain requires the other half, not the training half"
        elif target_ds.partition not in (None, "unseen"):
            problem = f"target partition is {target_ds.partition!r}, expected the unseen half"
    if mode == "zero_shot_cross_domain" and source == target:
        problem = "zero_shot_cross_domain requires a different dataset"
    if problem:
        if force:
            log.warning("%s (forced)", problem)
        else:
            raise ConfigError(problem + " (use --force to override)")


def run_sweep(
    cfg: ExperimentConfig,
    axis: str,
    values: list[float],
    input_path: str | Path,
    out_root: str | Path,
) -> list[dict]:
    """Run the full pipeline per axis value and emit a long-format CSV plus
    a metric-vs-axis figure. Failures at one point keep earlier results."""
    if axis not in ("train_fraction", "seen_fraction", "k"):
        raise ConfigError(f"unknown sweep axis {axis!r}")
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    for value in values:
        point_cfg = _config_for_point(cfg, axis, value)
        point_dir = out_root / f"{axis}={value:g}"
        try:
            dirs = run_prepare(point_cfg, input_path, point_dir / "data")
            run_featurize(point_cfg, dirs["seen"])
            run_featurize(point_cfg, dirs["unseen"])
            run_train(point_cfg, dirs["seen"], point_dir / "bundle")
            for mode, target in (("in_domain", "seen"), ("zero_shot_in_domain", "unseen")):
                mode_cfg = replace(point_cfg, mode=mode)
                rep = run_evaluate(
                    mode_cfg,
                    point_dir / "bundle",
                    dirs[target],
                    point_dir / f"report_{mode}",
                )
                for seed_metrics in rep.per_seed:
                    rows.append(
                        {
                            "axis": axis,
                            "value": value,
                            "mode": mode,
                            "seed": seed_metrics["seed"],
                            "auc": seed_metrics["auc"],
                            "recall_at_10": seed_metrics["recall_at_10"],
                            "ndcg_at_10": seed_metrics["ndcg_at_10"],
                        }
                    )
        except ZerorecError as exc:
            log.error("sweep point %s=%s failed: %s", axis, value, exc)
            continue
        report_mod.write_sweep_csv(rows, out_root / "sweep.csv")
    if rows:
        report_mod.write_sweep_csv(rows, out_root / "sweep.csv")
        report_mod.render_sweep_figure(rows, axis, out_root / f"sweep_{axis}.png")
    return rows


def _config_for_point(cfg: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    if axis == "train_fraction":
        return replace(cfg, data=replace(cfg.data, train_fraction=float(value)))
    if axis == "seen_fraction":
        return replace(cfg, data=replace(cfg.data, seen_fraction=float(value)))
    k = int(value)
    return replace(
        cfg,
        features=replace(
            cfg.features,
            k_activity=k,
            k_cooccur=k,
            k_interaction=k,
            k_cooccur_size=None,
            k_cooccur_density=None,
            k_interaction_size=None,
            k_interaction_density=None,
        ),
    )
