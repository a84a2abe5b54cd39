import json
import shutil

import numpy as np
import pytest
from click.testing import CliRunner

from zerorec.cli import main
from zerorec.synth import SynthSpec, generate, write_tsv

CONFIG = """\
mode = "in_domain"

[data]
seed = 3

[features]
k_activity = 5
k_cooccur = 5
k_interaction = 5

[features.walk]
dim = 16
walk_length = 15
walks_per_node = 4
window = 3
epochs = 2
rng_seed = 1

[model]
epochs = 4
batch_size = 256
learning_rate = 0.005
seed = 2
val_negatives = 30

[eval]
n_negatives = 30
seeds = [101, 102]
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Prepared + featurized + trained artifacts shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    write_tsv(generate(SynthSpec(500, 220, density=10, rng_seed=5)), root / "raw.tsv")
    write_tsv(generate(SynthSpec(400, 200, density=10, rng_seed=21)), root / "other.tsv")
    (root / "exp.toml").write_text(CONFIG)

    runner = CliRunner()

    def run(*args, check=True):
        result = runner.invoke(main, list(args), catch_exceptions=False)
        if check and result.exit_code != 0:
            raise AssertionError(f"command {args} failed:\n{result.output}")
        return result

    run("prepare", "--input", str(root / "raw.tsv"), "--output-dir", str(root / "data"),
        "--config", str(root / "exp.toml"))
    run("prepare", "--input", str(root / "other.tsv"), "--output-dir", str(root / "other"),
        "--config", str(root / "exp.toml"))
    for d in ("data/seen", "data/unseen", "other/unseen"):
        run("featurize", "--dataset", str(root / d), "--config", str(root / "exp.toml"))
    run("train", "--features", str(root / "data" / "seen"), "--output", str(root / "bundle"),
        "--config", str(root / "exp.toml"))
    return root, run


class TestPrepare:
    def test_outputs_exist(self, workspace):
        root, _ = workspace
        for half in ("seen", "unseen"):
            d = root / "data" / half
            for name in ("edges.bin", "users.tsv", "items.tsv", "splits.bin", "meta.json"):
                assert (d / name).exists()

    def test_rerun_is_cache_hit(self, workspace):
        root, run = workspace
        mtime = (root / "data" / "seen" / "edges.bin").stat().st_mtime_ns
        run("prepare", "--input", str(root / "raw.tsv"), "--output-dir", str(root / "data"),
            "--config", str(root / "exp.toml"))
        assert (root / "data" / "seen" / "edges.bin").stat().st_mtime_ns == mtime

    def test_missing_input_nonzero_exit(self, workspace):
        root, _ = workspace
        result = CliRunner().invoke(main, ["prepare", "--input", str(root / "nope.tsv")])
        assert result.exit_code != 0

    def test_bad_config_key_exit_code_2(self, workspace, tmp_path):
        root, _ = workspace
        bad = tmp_path / "bad.toml"
        bad.write_text("[data]\nnot_a_key = 1\n")
        result = CliRunner().invoke(
            main,
            ["prepare", "--input", str(root / "raw.tsv"), "--output-dir", str(tmp_path / "x"),
             "--config", str(bad)],
        )
        assert result.exit_code == 2


class TestFeaturize:
    def test_artifacts_exist(self, workspace):
        root, _ = workspace
        fdir = root / "data" / "seen"
        assert (fdir / "embeddings.bin").exists()
        assert (fdir / "walkstats.json").exists()
        assert (fdir / "clusters.json").exists()
        for fam in ("activity", "co_size", "co_density", "int_size", "int_density"):
            assert (fdir / "features" / f"{fam}.bin").exists()
        manifest = json.loads((fdir / "features" / "manifest.json").read_text())
        assert manifest["dataset"] == json.loads((fdir / "meta.json").read_text())["dataset_hash"]

    def test_clusters_json_is_auditable(self, workspace):
        root, _ = workspace
        clusters = json.loads((root / "data" / "seen" / "clusters.json").read_text())
        assert set(clusters) == {"users", "items", "edges"}
        for section in clusters.values():
            assert {"centroids", "size", "density", "size_bin", "density_bin"} <= set(section)


class TestTrain:
    def test_bundle_contents(self, workspace):
        root, _ = workspace
        b = root / "bundle"
        for fam in ("activity", "co_size", "co_density", "int_size", "int_density"):
            assert (b / f"{fam}.bin").exists() and (b / f"{fam}.json").exists()
        weights = json.loads((b / "weights.json").read_text())
        assert abs(weights["alpha"] + weights["beta"] + weights["gamma"] - 1) < 1e-9
        assert "validation_metric" in weights
        assert 0 < weights["eta"] < 1

    def test_rerun_is_resume_safe(self, workspace):
        root, run = workspace
        mtime = (root / "bundle" / "activity.bin").stat().st_mtime_ns
        run("train", "--features", str(root / "data" / "seen"), "--output", str(root / "bundle"),
            "--config", str(root / "exp.toml"))
        assert (root / "bundle" / "activity.bin").stat().st_mtime_ns == mtime

    def test_per_family_val_auc_logged(self, workspace):
        root, _ = workspace
        meta = json.loads((root / "bundle" / "bundle.json").read_text())
        assert set(meta["val_auc"]) == {"activity", "co_size", "co_density", "int_size", "int_density"}


class TestEvaluate:
    def test_in_domain_report_and_figure(self, workspace):
        root, run = workspace
        out = root / "report_in"
        run("evaluate", "--mode", "in_domain", "--bundle", str(root / "bundle"),
            "--target", str(root / "data" / "seen"), "--output", str(out),
            "--config", str(root / "exp.toml"))
        report = json.loads((out / "report.json").read_text())
        assert report["mode"] == "in_domain"
        assert len(report["metrics"]["per_seed"]) == 2
        assert (out / "report.csv").exists()
        assert (out / "report_metrics.png").exists()
        lines = (out / "report.csv").read_text().strip().splitlines()
        assert lines[0].startswith("seed,auc")
        assert lines[-1].startswith("mean,")

    def test_zero_shot_in_domain_no_bundle_writes(self, workspace):
        root, run = workspace
        snapshot = {
            p.name: p.stat().st_mtime_ns for p in (root / "bundle").iterdir()
        }
        run("evaluate", "--mode", "zero_shot_in_domain", "--bundle", str(root / "bundle"),
            "--target", str(root / "data" / "unseen"), "--output", str(root / "report_zsid"),
            "--config", str(root / "exp.toml"))
        after = {p.name: p.stat().st_mtime_ns for p in (root / "bundle").iterdir()}
        assert after == snapshot
        report = json.loads((root / "report_zsid" / "report.json").read_text())
        assert all(c[0] > 0 for c in report["update_counts"].values())

    def test_zero_shot_cross_domain(self, workspace):
        root, run = workspace
        run("evaluate", "--mode", "zero_shot_cross_domain", "--bundle", str(root / "bundle"),
            "--target", str(root / "other" / "unseen"), "--output", str(root / "report_x"),
            "--config", str(root / "exp.toml"))
        report = json.loads((root / "report_x" / "report.json").read_text())
        assert report["chain"]["bundle_source_dataset"] != report["chain"]["target_dataset"]

    def test_blend_mostpop_zero_shot_uses_stored_eta(self, workspace):
        root, run = workspace
        run("evaluate", "--mode", "zero_shot_in_domain", "--bundle", str(root / "bundle"),
            "--target", str(root / "data" / "unseen"), "--output", str(root / "report_blend"),
            "--blend", "mostpop", "--config", str(root / "exp.toml"))
        report = json.loads((root / "report_blend" / "report.json").read_text())
        stored = json.loads((root / "bundle" / "weights.json").read_text())["eta"]
        assert report["eta"] == stored

    def test_blend_mfbpr_in_domain_only(self, workspace):
        root, _ = workspace
        result = CliRunner().invoke(
            main,
            ["evaluate", "--mode", "zero_shot_in_domain", "--bundle", str(root / "bundle"),
             "--target", str(root / "data" / "unseen"), "--output", str(root / "never"),
             "--blend", "mfbpr", "--config", str(root / "exp.toml")],
        )
        assert result.exit_code == 2
        assert "in_domain" in result.output

    def test_blend_mfbpr_in_domain_works(self, workspace):
        root, run = workspace
        run("evaluate", "--mode", "in_domain", "--bundle", str(root / "bundle"),
            "--target", str(root / "data" / "seen"), "--output", str(root / "report_mf"),
            "--blend", "mfbpr", "--config", str(root / "exp.toml"))
        report = json.loads((root / "report_mf" / "report.json").read_text())
        assert report["blend"] == "mfbpr" and 0 < report["eta"] < 1

    def test_blend_with_eta_grid(self, workspace):
        root, run = workspace
        run("evaluate", "--mode", "in_domain", "--bundle", str(root / "bundle"),
            "--target", str(root / "data" / "seen"), "--output", str(root / "report_grid"),
            "--blend", "mostpop", "--eta-grid", "0.25,0.75",
            "--config", str(root / "exp.toml"))
        report = json.loads((root / "report_grid" / "report.json").read_text())
        assert report["eta"] in (0.25, 0.75)

    def test_wrong_mode_target_rejected(self, workspace):
        root, _ = workspace
        result = CliRunner().invoke(
            main,
            ["evaluate", "--mode", "in_domain", "--bundle", str(root / "bundle"),
             "--target", str(root / "data" / "unseen"), "--output", str(root / "never2"),
             "--config", str(root / "exp.toml")],
        )
        assert result.exit_code == 2

    def test_chain_mismatch_refused_unless_forced(self, workspace, tmp_path):
        root, run = workspace
        # graft A's features onto B's dataset: manifest no longer matches
        target = tmp_path / "grafted"
        shutil.copytree(root / "other" / "unseen", target)
        shutil.rmtree(target / "features")
        shutil.copytree(root / "data" / "unseen" / "features", target / "features")
        args = ["evaluate", "--mode", "zero_shot_cross_domain", "--bundle", str(root / "bundle"),
                "--target", str(target), "--output", str(tmp_path / "rep"),
                "--config", str(root / "exp.toml")]
        result = CliRunner().invoke(main, args)
        assert result.exit_code == 2
        assert "features were built for dataset" in result.output

    def test_k_mismatch_reports_required_k(self, workspace, tmp_path):
        root, run = workspace
        refeat = tmp_path / "refeat"
        shutil.copytree(root / "data" / "unseen", refeat)
        run("featurize", "--dataset", str(refeat), "--config", str(root / "exp.toml"),
            "--k-activity", "7")
        result = CliRunner().invoke(
            main,
            ["evaluate", "--mode", "zero_shot_in_domain", "--bundle", str(root / "bundle"),
             "--target", str(refeat), "--output", str(tmp_path / "rep"),
             "--config", str(root / "exp.toml")],
        )
        assert result.exit_code == 2
        assert "rebuild target features with k=5" in result.output


class TestSweep:
    def test_two_point_sweep(self, workspace, tmp_path):
        root, run = workspace
        out = tmp_path / "sweep"
        run("sweep", "--axis", "train_fraction", "--values", "0.5,0.7",
            "--input", str(root / "raw.tsv"), "--output", str(out),
            "--config", str(root / "exp.toml"))
        csv_text = (out / "sweep.csv").read_text().strip().splitlines()
        assert csv_text[0] == "axis,value,mode,seed,auc,recall_at_10,ndcg_at_10"
        # 2 values x 2 modes x 2 seeds
        assert len(csv_text) == 1 + 8
        assert (out / "sweep_train_fraction.png").exists()

    def test_bad_axis_rejected(self, workspace):
        root, _ = workspace
        result = CliRunner().invoke(
            main, ["sweep", "--axis", "bogus", "--values", "1", "--input",
                   str(root / "raw.tsv"), "--output", "x"])
        assert result.exit_code == 2


class TestConfigShow:
    def test_prints_all_sections(self):
        result = CliRunner().invoke(main, ["config", "show"])
        assert result.exit_code == 0
        for section in ("[data]", "[features]", "[features.walk]", "[model]", "[eval]"):
            assert section in result.output
        assert "mode = " in result.output

    def test_merges_file_values(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text("[model]\nepochs = 9\n")
        result = CliRunner().invoke(main, ["config", "show", "--config", str(cfg)])
        assert "epochs = 9" in result.output


class TestCacheEnv:
    def test_cache_dir_env_used(self, workspace, tmp_path, monkeypatch):
        root, _ = workspace
        monkeypatch.setenv("ZEROREC_CACHE_DIR", str(tmp_path / "cache"))
        result = CliRunner().invoke(
            main, ["prepare", "--input", str(root / "raw.tsv"), "--config", str(root / "exp.toml")],
            catch_exceptions=False)
        assert result.exit_code == 0
        assert (tmp_path / "cache" / "datasets" / "raw" / "seen" / "meta.json").exists()
