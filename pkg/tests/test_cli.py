"""End-to-end command line behavior and exit codes."""

import json
from pathlib import Path

import numpy as np
import pytest

from exprec.cli import main
from exprec.dataset import FormatConfig, parse_reviews
from exprec.trainer import FittedModel


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    corpus_path = root / "corpus.tsv"
    truth_path = root / "truth.json"
    cfg = {
        "n_users": 25,
        "n_items": 30,
        "ratings_per_user": [10, 16],
        "noise_sigma": 0.15,
        "level_drift": 0.25,
        "seed": 5,
    }
    cfg_path = root / "synth.json"
    cfg_path.write_text(json.dumps(cfg))
    rc = main(["synth", "--config", str(cfg_path), "--out", str(corpus_path), "--truth", str(truth_path)])
    assert rc == 0
    return root, corpus_path, truth_path


@pytest.fixture(scope="module")
def split_dir(corpus):
    root, corpus_path, _ = corpus
    out = root / "split"
    rc = main([
        "split", "--input", str(corpus_path), "--out-dir", str(out),
        "--scheme", "final", "--test-fraction", "0.15", "--validation-fraction", "0.15",
        "--seed", "3",
    ])
    assert rc == 0
    return out

@pytest.fixture(scope="module")
def model_path(corpus, split_dir):
    root, _, _ = corpus
    path = root / "model.json"
    rc = main([
        "fit", "--input", str(split_dir / "train.tsv"), "--valid", str(split_dir / "valid.tsv"),
        "--model", "d", "--E", "3", "--K", "2", "--seed", "1",
        "--lambda-grid", "1e-5", "--max-outer-iters", "8", "--out", str(path),
    ])
    assert rc == 0
    return path


class TestUsageErrors:
    def test_unknown_model_kind_exits_1(self, capsys):
        rc = main(["fit", "--model", "z", "--input", "x", "--valid", "y", "--out", "m"])
        assert rc == 1

    def test_unknown_flag_exits_1(self):
        assert main(["synth", "--nonsense"]) == 1

    def test_unknown_subcommand_exits_1(self):
        assert main(["frobnicate"]) == 1


class TestSynthCommand:
    def test_writes_corpus_and_truth(self, corpus):
        _, corpus_path, truth_path = corpus
        d = parse_reviews(corpus_path, FormatConfig(scale_max=5.0))
        assert len(d.users) == 25
        truth = json.loads(truth_path.read_text())
        assert set(truth) == {"true_params", "true_levels", "leaver_flags", "clamp_count", "n_ratings"}
        assert truth["n_ratings"] == len(d)

    def test_idempotent_given_seed(self, corpus, tmp_path):
        root, corpus_path, _ = corpus
        out2 = tmp_path / "again.tsv"
        truth2 = tmp_path / "truth2.json"
        cfg_path = root / "synth.json"
        rc = main(["synth", "--config", str(cfg_path), "--out", str(out2), "--truth", str(truth2)])
        assert rc == 0
        assert out2.read_bytes() == corpus_path.read_bytes()


class TestSplitCommand:
    def test_manifest_and_files(self, corpus, split_dir):
        _, corpus_path, _ = corpus
        manifest = json.loads((split_dir / "split.json").read_text())
        total = sum(manifest["rows"].values())
        d = parse_reviews(corpus_path, FormatConfig(scale_max=5.0))
        assert total == len(d)
        for name in ("train.tsv", "valid.tsv", "test.tsv"):
            assert (split_dir / name).exists()


class TestFitEvaluateCompare:
    def test_model_file_loads(self, model_path):
        m = FittedModel.load(model_path)
        assert m.kind.value == "d"
        assert m.params.E == 3

    def test_evaluate_writes_report(self, corpus, split_dir, model_path):
        root, _, _ = corpus
        report_path = root / "report.json"
        rc = main([
            "evaluate", "--model", str(model_path), "--test", str(split_dir / "test.tsv"),
            "--train", str(split_dir / "train.tsv"), "--out", str(report_path),
        ])
        assert rc == 0
        report = json.loads(report_path.read_text())
        assert report["mse"] >= 0
        assert sum(v["count"] for v in report["per_level"].values()) == report["n_test"]

    def test_compare_includes_benefits(self, corpus, split_dir, model_path, capsys):
        root, _, _ = corpus
        flat_path = root / "flat.json"
        rc = main([
            "fit", "--input", str(split_dir / "train.tsv"), "--valid", str(split_dir / "valid.tsv"),
            "--model", "lf", "--E", "3", "--K", "2", "--seed", "1",
            "--lambda-grid", "1e-5", "--out", str(flat_path),
        ])
        assert rc == 0
        rc = main([
            "compare", "--model", str(flat_path), "--model", str(model_path),
            "--test", str(split_dir / "test.tsv"), "--train", str(split_dir / "train.tsv"),
        ])
        assert rc == 0
        out = capsys.readouterr().out
        assert "benefit_d_over_lf" in out

    def test_fit_identical_across_thread_counts(self, corpus, split_dir, tmp_path):
        args = [
            "fit", "--input", str(split_dir / "train.tsv"), "--valid", str(split_dir / "valid.tsv"),
            "--model", "d", "--E", "3", "--K", "2", "--seed", "2",
            "--lambda-grid", "1e-5,1e-3", "--max-outer-iters", "5",
        ]
        p1 = tmp_path / "t1.json"
        p4 = tmp_path / "t4.json"
        assert main(args + ["--threads", "1", "--out", str(p1)]) == 0
        assert main(args + ["--threads", "4", "--out", str(p4)]) == 0
        assert p1.read_bytes() == p4.read_bytes()


class TestAnalyzeCommand:
    def test_writes_tables(self, corpus, split_dir, model_path, tmp_path):
        out_dir = tmp_path / "analysis"
        genres = tmp_path / "genres.tsv"
        d = parse_reviews(split_dir / "train.tsv", FormatConfig(scale_max=5.0))
        lines = [f"{item}\t{'ale' if j % 2 else 'lager'}" for j, item in enumerate(d.items)]
        genres.write_text("\n".join(lines) + "\n")
        rc = main([
            "analyze", "--model", str(model_path), "--train", str(split_dir / "train.tsv"),
            "--genres", str(genres), "--out-dir", str(out_dir),
            "--min-ratings", "1", "--min-cohort", "2", "--prefixes", "5",
        ])
        assert rc == 0
        for name in ("taste_scores.csv", "genre_summary.csv", "agreement.csv",
                     "progression.csv", "retention.csv"):
            assert (out_dir / name).exists(), name


class TestValidateCommand:
    def test_valid_model_passes(self, corpus, split_dir, model_path, capsys):
        rc = main(["validate", "--model", str(model_path), "--train", str(split_dir / "train.tsv")])
        out = capsys.readouterr().out
        assert rc == 0
        assert out.count("PASS") == 3

    def test_corrupted_assignment_exits_2(self, corpus, split_dir, model_path, tmp_path, capsys):
        doc = json.loads(Path(model_path).read_text())
        user = next(u for u, lv in doc["assignment"].items() if len(lv) >= 2)
        doc["assignment"][user][0] = 3
        doc["assignment"][user][1] = 1
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(doc))
        rc = main(["validate", "--model", str(bad), "--train", str(split_dir / "train.tsv")])
        captured = capsys.readouterr()
        assert rc == 2
        assert "monotonicity violated at user=" in captured.out + captured.err


class TestIngestCommand:
    def test_normalizes_and_pools(self, tmp_path, capsys):
        raw = tmp_path / "raw.tsv"
        rows = ["user\titem\trating\ttimestamp"]
        for k in range(60):
            rows.append(f"big\ti{k}\t{10 + (k % 10)}\t{k}")
        rows.append("tiny\ti0\t20\t3")
        raw.write_text("\n".join(rows) + "\n")
        out = tmp_path / "clean.tsv"
        rc = main(["ingest", "--input", str(raw), "--out", str(out),
                   "--scale-max", "20", "--min-ratings", "50"])
        assert rc == 0
        d = parse_reviews(out, FormatConfig(scale_max=5.0))
        assert "__background__" in d.users
        assert d.values.max() <= 5.0
