"""Command-line entry points: prepare, featurize, train, evaluate, sweep,
config show. Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
failure."""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from . import pipeline
from .config import ExperimentConfig, cache_root, config_to_toml, load_config
from .errors import ConfigError, DataError, NumericError, ZerorecError

log = logging.getLogger(__name__)

_EXIT_CODES = ((ConfigError, 2), (DataError, 3), (NumericError, 4), (ZerorecError, 4))


def _fail(exc: ZerorecError):
    for cls, code in _EXIT_CODES:
        if isinstance(exc, cls):
            click.echo(f"error: {exc}", err=True)
            sys.exit(code)
    raise exc


def _common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                      help="TOML experiment config; flags override it.")(fn)
    fn = click.option("--threads", type=int, default=None,
                      help="Intra-stage parallelism (0 = all cores).")(fn)
    fn = click.option("--deterministic/--no-deterministic", default=None,
                      help="Force single-threaded numeric paths.")(fn)
    return fn


def _build_config(config_path, overrides) -> ExperimentConfig:
    try:
        return load_config(config_path, overrides)
    except ZerorecError as exc:
        _fail(exc)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose):
    """Zero-shot transferable recommender experiments."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--output-dir", type=click.Path(), default=None,
              help="Defaults to <cache root>/datasets/<input stem>.")
@click.option("--cache-dir", type=click.Path(), default=None)
@click.option("--rating-threshold", type=float, default=None)
@click.option("--k-core", type=int, default=None)
@click.option("--seen-fraction", type=float, default=None)
@click.option("--train-fraction", type=float, default=None)
@click.option("--valid-fraction", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--format", "fmt", type=click.Choice(["tsv", "csv"]), default=None)
@click.option("--delimiter", default=None)
@_common_options
def prepare(input_path, output_dir, cache_dir, rating_threshold, k_core, seen_fraction,
            train_fraction, valid_fraction, seed, fmt, delimiter, config_path, threads,
            deterministic):
    """Ingest a raw interaction log into seen/ and unseen/ dataset dirs."""
    cfg = _build_config(config_path, {
        "data.rating_threshold": rating_threshold,
        "data.k_core": k_core,
        "data.seen_fraction": seen_fraction,
        "data.train_fraction": train_fraction,
        "data.valid_fraction": valid_fraction,
        "data.seed": seed,
        "data.format": fmt,
        "data.delimiter": delimiter,
        "threads": threads,
        "deterministic": deterministic,
    })
    out = Path(output_dir) if output_dir else cache_root(cache_dir) / "datasets" / Path(input_path).stem
    try:
        dirs = pipeline.run_prepare(cfg, input_path, out)
    except ZerorecError as exc:
        _fail(exc)
    for label, d in dirs.items():
        click.echo(f"{label}: {d}")


@main.command()
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True))
@click.option("--k-activity", type=int, default=None)
@click.option("--k-cooccur", type=int, default=None)
@click.option("--k-interaction", type=int, default=None)
@click.option("--dim", type=int, default=None, help="Embedding dimension.")
@click.option("--walk-length", type=int, default=None)
@click.option("--walks-per-node", type=int, default=None)
@click.option("--window", type=int, default=None)
@click.option("--return-p", type=float, default=None)
@click.option("--inout-q", type=float, default=None)
@click.option("--sgns-epochs", type=int, default=None)
@click.option("--seed", type=int, default=None, help="Featurization master seed.")
@_common_options
def featurize(dataset_dir, k_activity, k_cooccur, k_interaction, dim, walk_length,
              walks_per_node, window, return_p, inout_q, sgns_epochs, seed, config_path,
              threads, deterministic):
    """Build the five universal feature tables for a prepared dataset."""
    cfg = _build_config(config_path, {
        "features.k_activity": k_activity,
        "features.k_cooccur": k_cooccur,
        "features.k_interaction": k_interaction,
        "features.walk.dim": dim,
        "features.walk.walk_length": walk_length,
        "features.walk.walks_per_node": walks_per_node,
        "features.walk.window": window,
        "features.walk.return_p": return_p,
        "features.walk.inout_q": inout_q,
        "features.walk.epochs": sgns_epochs,
        "features.walk.rng_seed": seed,
        "features.walk.parallel": None if deterministic in (None, True) else True,
        "threads": threads,
        "deterministic": deterministic,
    })
    try:
        tables = pipeline.run_featurize(cfg, dataset_dir)
    except ZerorecError as exc:
        _fail(exc)
    for fam, t in sorted(tables.items()):
        click.echo(f"{fam}: k={t.k} users={len(t.user_rows)} items={len(t.item_rows)}")


@main.command()
@click.option("--features", "dataset_dir", required=True, type=click.Path(exists=True),
              help="Featurized source dataset directory.")
@click.option("--output", "bundle_dir", required=True, type=click.Path())
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--negatives", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--metric", type=click.Choice(["auc", "recall10", "ndcg10"]), default=None)
@click.option("--n-negatives", type=int, default=None, help="Negatives per ranking task.")
@click.option("--force", is_flag=True, help="Ignore hash-chain mismatches.")
@_common_options
def train(dataset_dir, bundle_dir, epochs, batch_size, lr, negatives, seed, metric,
          n_negatives, force, config_path, threads, deterministic):
    """Pre-train the tower pairs and tune interpolation weights."""
    cfg = _build_config(config_path, {
        "model.epochs": epochs,
        "model.batch_size": batch_size,
        "model.learning_rate": lr,
        "model.negatives_per_positive": negatives,
        "model.seed": seed,
        "eval.metric": metric,
        "eval.n_negatives": n_negatives,
        "threads": threads,
        "deterministic": deterministic,
    })
    try:
        bundle = pipeline.run_train(cfg, dataset_dir, bundle_dir, force=force)
    except ZerorecError as exc:
        _fail(exc)
    for fam, auc in sorted(bundle.meta.get("val_auc", {}).items()):
        click.echo(f"{fam}: val_auc={auc:.4f}")
    click.echo(f"bundle: {bundle_dir}")


@main.command()
@click.option("--mode", type=click.Choice(["in_domain", "zero_shot_in_domain",
                                           "zero_shot_cross_domain"]), required=True)
@click.option("--bundle", "bundle_dir", required=True, type=click.Path(exists=True))
@click.option("--target", "target_dir", required=True, type=click.Path(exists=True))
@click.option("--output", "out_dir", required=True, type=click.Path())
@click.option("--blend", type=click.Choice(["mostpop", "mfbpr"]), default=None)
@click.option("--eta", type=float, default=None, help="Fixed blend weight (skips tuning).")
@click.option("--eta-grid", default=None, help="Comma-separated eta candidates to tune over.")
@click.option("--seeds", default=None, help="Comma-separated evaluation seeds.")
@click.option("--n-negatives", type=int, default=None)
@click.option("--force", is_flag=True, help="Ignore hash-chain mismatches.")
@_common_options
def evaluate(mode, bundle_dir, target_dir, out_dir, blend, eta, eta_grid, seeds, n_negatives,
             force, config_path, threads, deterministic):
    """Evaluate a bundle on a target dataset's test tasks."""
    cfg = _build_config(config_path, {
        "mode": mode,
        "eval.seeds": [int(s) for s in seeds.split(",")] if seeds else None,
        "eval.n_negatives": n_negatives,
        "threads": threads,
        "deterministic": deterministic,
    })
    try:
        grid = [float(v) for v in eta_grid.split(",")] if eta_grid else None
        rep = pipeline.run_evaluate(cfg, bundle_dir, target_dir, out_dir,
                                    blend=blend, eta=eta, eta_grid=grid, force=force)
    except ZerorecError as exc:
        _fail(exc)
    click.echo(f"auc={rep.auc:.4f} recall@10={rep.recall_at_10:.4f} "
               f"ndcg@10={rep.ndcg_at_10:.4f} ({rep.n_tasks} tasks, {rep.n_users} users)")
    click.echo(f"report: {Path(out_dir) / 'report.json'}")


@main.command()
@click.option("--axis", type=click.Choice(["train_fraction", "seen_fraction", "k"]),
              required=True)
@click.option("--values", required=True, help="Comma-separated axis values.")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--output", "out_root", required=True, type=click.Path())
@_common_options
def sweep(axis, values, input_path, out_root, config_path, threads, deterministic):
    """Run the full pipeline per axis value; emit long-format CSV + figure."""
    cfg = _build_config(config_path, {"threads": threads, "deterministic": deterministic})
    try:
        vals = [float(v) for v in values.split(",")]
    except ValueError:
        _fail(ConfigError(f"bad sweep values {values!r}"))
    try:
        rows = pipeline.run_sweep(cfg, axis, vals, input_path, out_root)
    except ZerorecError as exc:
        _fail(exc)
    click.echo(f"{len(rows)} sweep rows -> {Path(out_root) / 'sweep.csv'}")


@main.group()
def config():
    """Configuration helpers."""


@config.command("show")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def config_show(config_path):
    """Print the effective configuration (defaults merged with the file)."""
    cfg = _build_config(config_path, {})
    click.echo(config_to_toml(cfg))


if __name__ == "__main__":
    main()
