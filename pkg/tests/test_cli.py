import json

import pytest

from fusepool.cli import main
from fusepool.corpus import load_corpus, save_corpus
from fusepool.synthetic import correlated_pool, oeq_pool


@pytest.fixture
def pool_corpus(tmp_path):
    path = tmp_path / "pool.jsonl"
    save_corpus(correlated_pool(6, 200, seed=0), path)
    return path


def run(*argv) -> int:
    return main([str(a) for a in argv])


class TestPipeline:
    def test_full_pipeline_exit_zero(self, tmp_path, pool_corpus, capsys):
        out = tmp_path / "run"
        assert run("prune", "--corpus", pool_corpus, "--out", out,
                   "--topk", "5", "--w1", "0.6", "--w2", "0.4", "--seed", "3") == 0
        assert (out / "candidates.csv").exists()
        ensemble = json.loads((out / "ensemble.json").read_text())
        assert len(ensemble["members"]) >= 2

        assert run("train-weighted", "--corpus", pool_corpus, "--out", out,
                   "--epochs", "40", "--seed", "3") == 0
        assert (out / "fusion_params.json").exists()

        assert run("evaluate", "--corpus", pool_corpus, "--out", out,
                   "--seed", "3") == 0
        report = json.loads((out / "report.json").read_text())
        assert 0.0 <= report["accuracy"] <= 1.0
        predictions = (out / "predictions.jsonl").read_text().strip().splitlines()
        assert len(predictions) == report["n_episodes"]
        assert "test accuracy" in capsys.readouterr().out

        assert run("diversity-report", "--corpus", pool_corpus, "--out", out,
                   "--split", "all", "--seed", "3") == 0
        summary = json.loads((out / "diversity_report.json").read_text())
        assert summary["n_candidates"] == 57
        assert (out / "failure_matrix.csv").exists()

    def test_candidates_csv_ranks_all_247_for_a_pool_of_8(self, tmp_path):
        corpus_path = tmp_path / "pool8.jsonl"
        save_corpus(correlated_pool(8, 120, seed=1), corpus_path)
        out = tmp_path / "run8"
        assert run("prune", "--corpus", corpus_path, "--out", out,
                   "--topk", "5", "--method", "bf", "--seed", "0") == 0
        rows = (out / "candidates.csv").read_text().strip().splitlines()
        assert len(rows) == 1 + 247

    def test_prune_is_idempotent(self, tmp_path, pool_corpus):
        out = tmp_path / "run"
        run("prune", "--corpus", pool_corpus, "--out", out, "--seed", "5")
        first = {
            name: (out / name).read_bytes()
            for name in ("candidates.csv", "ensemble.json")
        }
        run("prune", "--corpus", pool_corpus, "--out", out, "--seed", "5")
        for name, blob in first.items():
            assert (out / name).read_bytes() == blob

    def test_random_pick_among_topk(self, tmp_path, pool_corpus):
        picks = set()
        for pick_seed in range(6):
            out = tmp_path / f"run{pick_seed}"
            run("prune", "--corpus", pool_corpus, "--out", out,
                "--topk", "10", "--seed", "1", "--random-pick", str(pick_seed))
            picks.add(json.loads((out / "ensemble.json").read_text())["mask"])
        assert len(picks) > 1

    def test_ga_method(self, tmp_path, pool_corpus):
        out = tmp_path / "ga"
        assert run("prune", "--corpus", pool_corpus, "--out", out,
                   "--method", "ga", "--ga-population", "30",
                   "--ga-plateau", "25", "--seed", "2") == 0
        assert json.loads((out / "ensemble.json").read_text())["method"] == "ga"

    def test_summarize_prep(self, tmp_path):
        corpus_path = tmp_path / "oeq.jsonl"
        save_corpus(oeq_pool(3, 25, k=3, seed=2), corpus_path)
        out = tmp_path / "prep"
        assert run("summarize-prep", "--corpus", corpus_path, "--out", out) == 0
        lines = (out / "summary_inputs.jsonl").read_text().strip().splitlines()
        assert len(lines) == 25
        row = json.loads(lines[0])
        assert row["text"].startswith("<boq> ")
        lo, hi = row["question_span"]
        assert row["text"][lo:hi].startswith("synthetic arithmetic")


class TestErrors:
    def test_train_without_prune_names_missing_artifact(self, tmp_path, pool_corpus, capsys):
        out = tmp_path / "nope"
        out.mkdir()
        assert run("train-weighted", "--corpus", pool_corpus, "--out", out) == 2
        err = capsys.readouterr().err
        assert "ensemble.json" in err and "prune" in err

    def test_missing_corpus_file(self, tmp_path, capsys):
        assert run("prune", "--corpus", tmp_path / "ghost.jsonl",
                   "--out", tmp_path / "o") == 2
        assert "ghost.jsonl" in capsys.readouterr().err

    def test_schema_violation_reported(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"id": "x", "task": "mcq", "choices": ["a"], "ground_truth": 0}\n')
        assert run("prune", "--corpus", bad, "--out", tmp_path / "o") == 2
        assert "line 1" in capsys.readouterr().err

    def test_unknown_flag_exits_nonzero(self, pool_corpus):
        with pytest.raises(SystemExit) as err:
            run("prune", "--corpus", pool_corpus, "--frobnicate")
        assert err.value.code == 2


class TestConfigFile:
    def test_config_supplies_defaults_flags_override(self, tmp_path, pool_corpus):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"topk": 3, "seed": 9, "w1": 0.5, "w2": 0.5}))
        out = tmp_path / "cfg"
        assert run("--config", config, "prune", "--corpus", pool_corpus,
                   "--out", out, "--seed", "1") == 0
        ensemble = json.loads((out / "ensemble.json").read_text())
        assert ensemble["seed"] == 1  # flag wins over config

    def test_bad_config_rejected(self, tmp_path, pool_corpus, capsys):
        config = tmp_path / "config.json"
        config.write_text("[1, 2, 3]")
        assert run("--config", config, "prune", "--corpus", pool_corpus,
                   "--out", tmp_path / "o") == 2
        assert "config" in capsys.readouterr().err


def test_harvested_corpus_round_trips_through_cli_artifacts(tmp_path):
    corpus = oeq_pool(2, 10, k=2, seed=4)
    path = tmp_path / "c.jsonl"
    save_corpus(corpus, path)
    assert load_corpus(path) == corpus


def test_task_flag_validates_corpus_kind(tmp_path, capsys):
    path = tmp_path / "pool.jsonl"
    save_corpus(correlated_pool(4, 20, seed=0), path)
    assert run("prune", "--corpus", path, "--out", tmp_path / "o", "--task", "oeq") == 2
    err = capsys.readouterr().err
    assert "mcq" in err and "oeq" in err
    assert run("prune", "--corpus", path, "--out", tmp_path / "o", "--task", "mcq") == 0
