"""End-to-end tests for the command line: synth -> train -> cluster ->
evaluate, plus config precedence and exit codes."""

from __future__ import annotations

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from eventmine import dataio, evaluation
from eventmine.cli import main

SYNTH_ARGS = [
    "synth",
    "--seed", "5",
    "--seen", "3",
    "--unseen", "4",
    "--per-type", "4",
    "--dim", "8",
    "--noise", "0.02",
    "--aug-noise", "0.03",
]

FAST_TRAIN = (
    "\n[train]\n"
    "seed = 0\n"
    "max_epochs = 3\n"
    "batch_size = 7\n"
    "learning_rate = 1e-3\n"
    "dropout_rate = 0.0\n"
    "n_clusters_for_stopping = 4\n"
)


def make_workspace(tmp_path_factory, name, extra_config=FAST_TRAIN):
    """Synthesize a tiny dataset and write a fast training config for it."""
    root = tmp_path_factory.mktemp(name)
    assert main(SYNTH_ARGS + ["--out", str(root)]) == 0
    config = root / "fast.toml"
    config.write_text(
        "[paths]\n"
        'embeddings = "embeddings.emb"\n'
        'labels = "labels.jsonl"\n'
        'augmented = "augmented.emb"\n'
        'names_embeddings = "names.emb"\n'
        'names_labels = "names.txt"\n'
        'frames_embeddings = "frames.emb"\n'
        'frames_labels = "frames.txt"\n'
        'frames_list = "frames.tsv"\n'
        'frame_edges = "frame_edges.tsv"\n'
        'frame_mapping = "frame_mapping.tsv"\n'
        'output_dir = "run"\n'
        + extra_config
        + "\n[clustering]\n"
        'backend = "agglomerative"\n'
        'variant = "dot"\n'
        "k = 4\n"
        "\n[evaluation]\n"
        "total_unseen_types = 4\n",
        encoding="utf-8",
    )
    return root, config


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One fully trained and clustered workspace shared by read-only tests."""
    root, config = make_workspace(tmp_path_factory, "pipeline")
    assert main(["train", "--config", str(config)]) == 0
    assert main(["cluster", "--config", str(config)]) == 0
    assert main(["evaluate", "--config", str(config)]) == 0
    return root, config


class TestSynth:
    def test_writes_all_artifacts(self, tmp_path):
        assert main(SYNTH_ARGS + ["--out", str(tmp_path)]) == 0
        for name in (
            "embeddings.emb",
            "labels.jsonl",
            "augmented.emb",
            "names.emb",
            "names.txt",
            "frames.emb",
            "frames.txt",
            "frames.tsv",
            "frame_edges.tsv",
            "frame_mapping.tsv",
            "config.toml",
        ):
            assert (tmp_path / name).is_file(), name

    def test_outputs_are_loadable_and_sized(self, tmp_path):
        main(SYNTH_ARGS + ["--out", str(tmp_path)])
        ds = dataio.load_dataset(
            tmp_path / "embeddings.emb",
            tmp_path / "labels.jsonl",
            tmp_path / "augmented.emb",
        )
        assert ds.n == (3 + 4) * 4
        assert ds.d == 8
        assert ds.unseen_indices.size == 16

    def test_same_seed_gives_identical_bytes(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        main(SYNTH_ARGS + ["--out", str(a)])
        main(SYNTH_ARGS + ["--out", str(b)])
        assert (a / "embeddings.emb").read_bytes() == (b / "embeddings.emb").read_bytes()
        assert (a / "labels.jsonl").read_bytes() == (b / "labels.jsonl").read_bytes()


class TestTrain:
    def test_writes_checkpoint_trace_and_csv(self, pipeline):
        root, _ = pipeline
        run = root / "run"
        assert (run / "checkpoint_seed0.ckpt").is_file()
        trace = json.loads((run / "trace_seed0.json").read_text())
        assert len(trace["epochs"]) == 3
        assert trace["seed"] == 0
        with open(run / "silhouettes_seed0.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "silhouette", "windowed"]
        assert len(rows) == 4

    def test_training_is_reproducible_bytes(self, tmp_path_factory):
        root, config = make_workspace(tmp_path_factory, "repro")
        out_a = root / "a"
        out_b = root / "b"
        assert main(["train", "--config", str(config), "--out", str(out_a)]) == 0
        assert main(["train", "--config", str(config), "--out", str(out_b)]) == 0
        assert (
            (out_a / "checkpoint_seed0.ckpt").read_bytes()
            == (out_b / "checkpoint_seed0.ckpt").read_bytes()
        )
        assert (
            (out_a / "trace_seed0.json").read_text()
            == (out_b / "trace_seed0.json").read_text()
        )

    def test_seed_flag_overrides_config(self, tmp_path_factory):
        root, config = make_workspace(tmp_path_factory, "seedflag")
        assert main(["train", "--config", str(config), "--seed", "9"]) == 0
        run = root / "run"
        assert (run / "checkpoint_seed9.ckpt").is_file()
        assert not (run / "checkpoint_seed0.ckpt").exists()


class TestCluster:
    def test_clusters_and_meta(self, pipeline):
        root, _ = pipeline
        run = root / "run"
        indices, labels = dataio.load_assignments(run / "clusters.jsonl")
        assert indices.size == 16
        assert indices.min() >= 12  # only unseen rows are clustered
        meta = json.loads((run / "clusters_meta.json").read_text())
        assert meta["backend"] == "agglomerative"
        assert meta["variant"] == "dot"
        assert meta["k"] == 4
        assert meta["n_runs"] == 1
        assert meta["manifold"] is False

    def test_embedding_variant_needs_no_checkpoint(self, tmp_path_factory):
        root, config = make_workspace(tmp_path_factory, "embvar")
        out = root / "embout"
        code = main(
            ["cluster", "--config", str(config), "--variant", "embedding", "--out", str(out)]
        )
        assert code == 0
        meta = json.loads((out / "clusters_meta.json").read_text())
        assert meta["variant"] == "embedding"
        assert meta["n_runs"] == 1

    def test_affinity_backend(self, pipeline):
        root, config = pipeline
        out = root / "affinity"
        code = main(
            [
                "cluster",
                "--config", str(config),
                "--backend", "affinity",
                "--checkpoint", str(root / "run" / "checkpoint_seed0.ckpt"),
                "--out", str(out),
            ]
        )
        assert code == 0
        meta = json.loads((out / "clusters_meta.json").read_text())
        assert meta["backend"] == "affinity"
        assert meta["k"] >= 1
        assert isinstance(meta["converged"], bool)

    def test_affinity_finds_near_planted_count(self, tmp_path_factory):
        """With default training, exemplar count lands near the planted
        type count (regression range: 4 unseen types -> k in [4, 12])."""
        extra = "\n[train]\nseed = 0\nn_clusters_for_stopping = 4\n"
        root, config = make_workspace(tmp_path_factory, "affk", extra)
        assert main(["train", "--config", str(config)]) == 0
        code = main(["cluster", "--config", str(config), "--backend", "affinity"])
        assert code == 0
        meta = json.loads((root / "run" / "clusters_meta.json").read_text())
        assert 4 <= meta["k"] <= 12

    def test_manifold_flag(self, pipeline):
        root, config = pipeline
        out = root / "manifold"
        code = main(
            [
                "cluster",
                "--config", str(config),
                "--manifold",
                "--checkpoint", str(root / "run" / "checkpoint_seed0.ckpt"),
                "--out", str(out),
            ]
        )
        assert code == 0
        meta = json.loads((out / "clusters_meta.json").read_text())
        assert meta["manifold"] is True


class TestEnsemble:
    def test_multi_seed_train_and_ensembled_distances(self, tmp_path_factory):
        extra = FAST_TRAIN + "\n[ensemble]\nseeds = [0, 1]\n"
        root, config = make_workspace(tmp_path_factory, "ensemble", extra)
        assert main(["train", "--config", str(config)]) == 0
        run = root / "run"
        assert (run / "checkpoint_seed0.ckpt").is_file()
        assert (run / "checkpoint_seed1.ckpt").is_file()
        assert main(["cluster", "--config", str(config)]) == 0
        meta = json.loads((run / "clusters_meta.json").read_text())
        assert meta["n_runs"] == 2


class TestEvaluate:
    def test_metrics_files(self, pipeline):
        root, _ = pipeline
        run = root / "run"
        metrics = json.loads((run / "metrics.json").read_text())
        assert set(metrics) == set(evaluation.METRIC_COLUMNS)
        assert 0.0 <= metrics["geometric_nmi"] <= 1.0
        with open(run / "metrics.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == list(evaluation.METRIC_COLUMNS)
        assert len(rows) == 2
        assert float(rows[1][1]) == pytest.approx(metrics["geometric_nmi"], abs=1e-6)

    def test_rankings_written_when_corpora_configured(self, pipeline):
        root, _ = pipeline
        run = root / "run"
        names = json.loads((run / "names_ranking.json").read_text())
        assert len(names["ranks"]) == 4
        assert names["mrr"] <= 1.0
        frames = json.loads((run / "frames_ranking.json").read_text())
        for m in (1, 5, 10, 50, 100):
            assert f"hits_at_{m}" in frames

    def test_standalone_ranking_commands(self, pipeline):
        root, config = pipeline
        out = root / "standalone"
        code = main(
            [
                "rank-names",
                "--config", str(config),
                "--clusters", str(root / "run" / "clusters.jsonl"),
                "--out", str(out),
            ]
        )
        assert code == 0
        assert (out / "names_ranking.json").is_file()
        code = main(
            [
                "rank-frames",
                "--config", str(config),
                "--clusters", str(root / "run" / "clusters.jsonl"),
                "--transitive",
                "--out", str(out),
            ]
        )
        assert code == 0
        assert (out / "frames_ranking.csv").is_file()

    def test_report_aggregates_runs(self, pipeline):
        root, config = pipeline
        run = root / "run"
        code = main(
            ["report", "--runs", str(run), str(run), "--out", str(root / "rep")]
        )
        assert code == 0
        with open(root / "rep" / "report.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["run", *evaluation.METRIC_COLUMNS]
        assert len(rows) == 3
        assert rows[1][1:] == rows[2][1:]


class TestPrecedence:
    def test_env_var_overrides_config_output_dir(self, tmp_path_factory, monkeypatch):
        root, config = make_workspace(tmp_path_factory, "envout")
        env_out = root / "from_env"
        monkeypatch.setenv("EVENTMINE_OUTPUT_DIR", str(env_out))
        assert main(["train", "--config", str(config)]) == 0
        assert (env_out / "checkpoint_seed0.ckpt").is_file()
        assert not (root / "run").exists()

    def test_flag_overrides_env_var(self, tmp_path_factory, monkeypatch):
        root, config = make_workspace(tmp_path_factory, "flagout")
        monkeypatch.setenv("EVENTMINE_OUTPUT_DIR", str(root / "ignored"))
        flag_out = root / "from_flag"
        assert main(["train", "--config", str(config), "--out", str(flag_out)]) == 0
        assert (flag_out / "checkpoint_seed0.ckpt").is_file()
        assert not (root / "ignored").exists()

    def test_relative_paths_resolve_against_config_dir(
        self, tmp_path_factory, monkeypatch, tmp_path
    ):
        root, config = make_workspace(tmp_path_factory, "relpath")
        monkeypatch.chdir(tmp_path)  # far away from the data
        assert main(["train", "--config", str(config)]) == 0
        assert (root / "run" / "checkpoint_seed0.ckpt").is_file()


class TestExitCodes:
    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["train", "--config", str(tmp_path / "nope.toml")]) == 2
        assert "nope.toml" in capsys.readouterr().err

    def test_invalid_toml(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[paths\n", encoding="utf-8")
        assert main(["train", "--config", str(bad)]) == 2

    def test_missing_required_path_key(self, tmp_path):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text('[paths]\nlabels = "x.jsonl"\n', encoding="utf-8")
        assert main(["train", "--config", str(cfg)]) == 2

    def test_nonexistent_embeddings(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text(
            '[paths]\nembeddings = "missing.emb"\nlabels = "missing.jsonl"\n',
            encoding="utf-8",
        )
        assert main(["train", "--config", str(cfg)]) == 2
        assert "missing.emb" in capsys.readouterr().err

    def test_agglomerative_without_k(self, tmp_path_factory):
        extra = FAST_TRAIN
        root, _ = make_workspace(tmp_path_factory, "nok", extra)
        cfg = root / "nok.toml"
        cfg.write_text(
            "[paths]\n"
            'embeddings = "embeddings.emb"\n'
            'labels = "labels.jsonl"\n'
            'output_dir = "run"\n'
            "[clustering]\n"
            'variant = "embedding"\n',
            encoding="utf-8",
        )
        assert main(["cluster", "--config", str(cfg)]) == 2

    def test_unknown_train_key(self, tmp_path_factory):
        root, _ = make_workspace(tmp_path_factory, "badkey")
        cfg = root / "badkey.toml"
        cfg.write_text(
            "[paths]\n"
            'embeddings = "embeddings.emb"\n'
            'labels = "labels.jsonl"\n'
            "[train]\n"
            "learning_rte = 0.1\n",
            encoding="utf-8",
        )
        assert main(["train", "--config", str(cfg)]) == 2

    def test_numerics_failure_exits_three(self, tmp_path_factory):
        """A zero-norm name embedding surfaces as the numerics exit code."""
        root, config = make_workspace(tmp_path_factory, "numerics")
        assert main(["train", "--config", str(config)]) == 0
        assert main(["cluster", "--config", str(config)]) == 0
        names = dataio.load_name_corpus(root / "names.emb", root / "names.txt")
        broken = names.embeddings.copy()
        broken[0] = 0.0
        dataio.save_matrix(root / "names.emb", broken)
        assert main(["rank-names", "--config", str(config)]) == 3

    def test_corrupt_embedding_file(self, tmp_path_factory):
        root, config = make_workspace(tmp_path_factory, "corrupt")
        (root / "embeddings.emb").write_bytes(b"JUNKJUNKJUNK")
        assert main(["train", "--config", str(config)]) == 2


class TestConsoleScript:
    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "eventmine.cli"] + SYNTH_ARGS + ["--out", str(tmp_path)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert "wrote synthetic dataset" in proc.stdout

    def test_installed_script(self, tmp_path):
        proc = subprocess.run(
            ["eventmine"] + SYNTH_ARGS + ["--out", str(tmp_path)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert (tmp_path / "config.toml").is_file()

    def test_generated_config_drives_pipeline(self, tmp_path):
        """The config written by synth works unmodified for the whole loop."""
        assert main(SYNTH_ARGS + ["--out", str(tmp_path)]) == 0
        config = tmp_path / "config.toml"
        assert main(["train", "--config", str(config)]) == 0
        assert main(["cluster", "--config", str(config)]) == 0
        assert main(["evaluate", "--config", str(config)]) == 0
        assert (tmp_path / "metrics.json").is_file()
