import json
from pathlib import Path

import pytest

from corefread.cli import main
from corefread.config import ModelConfig, SupervisionAssignment, TrainConfig, save_config


def run(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture()
def corpus(tmp_path):
    path = tmp_path / "corpus.jsonl"
    assert run("synth", "--count", 12, "--seed", 3, "--out", path) == 0
    return path


def small_config_file(tmp_path, supervised=False, epochs=2):
    sup = [SupervisionAssignment("corefall", "early", 0, 0)] if supervised else []
    model_cfg = ModelConfig(
        variant="early", early_layers=2, heads=2, d_model=16, hidden=8,
        word_dim=8, char_dim=4, char_filters=8, dropout=0.1, supervision=sup,
    )
    train_cfg = TrainConfig(epochs=epochs, batch_size=8, eval_batch_size=8,
                            ema_decay=0.5)
    path = tmp_path / "config.json"
    save_config(path, model_cfg, train_cfg)
    return path


class TestSynth:
    def test_writes_valid_corpus(self, tmp_path, corpus):
        assert run("validate", "--data", corpus) == 0
        assert (tmp_path / "corpus.jsonl.manifest.json").exists()

    def test_same_seed_byte_identical(self, tmp_path):
        a = tmp_path / "a.jsonl"
        b = tmp_path / "b.jsonl"
        assert run("synth", "--count", 20, "--seed", 9, "--out", a) == 0
        assert run("synth", "--count", 20, "--seed", 9, "--out", b) == 0
        assert a.read_bytes() == b.read_bytes()


class TestValidate:
    def test_rejects_bad_lines_with_exit_2(self, tmp_path, corpus):
        bad = tmp_path / "bad.jsonl"
        bad.write_text(corpus.read_text() + "{nonsense\n")
        assert run("validate", "--data", bad) == 2

    def test_missing_file_exit_2(self, tmp_path):
        assert run("validate", "--data", tmp_path / "nope.jsonl") == 2


class TestBuildSupervision:
    def test_corefall_matrices_written(self, tmp_path, corpus, capsys):
        out = tmp_path / "sup.jsonl"
        assert run("build-supervision", "--data", corpus, "--type", "corefall",
                   "--out", out) == 0
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(lines) == 12
        assert all(l["kind"] == "corefall" for l in lines)
        assert "mean k" in capsys.readouterr().out

    def test_depparse_entries_sentence_local(self, tmp_path, corpus):
        from corefread.data import read_corpus
        out = tmp_path / "dep.jsonl"
        assert run("build-supervision", "--data", corpus, "--type", "depparse",
                   "--out", out) == 0
        instances, _ = read_corpus(corpus)
        by_id = {i.id: i for i in instances}
        for line in out.read_text().splitlines():
            rec = json.loads(line)
            ann = by_id[rec["id"]].annotation
            for i, cols in rec["rows"]:
                for j in cols:
                    assert ann.sentence_of(i) == ann.sentence_of(j)

    def test_unknown_type_usage_error(self, tmp_path, corpus):
        assert run("build-supervision", "--data", corpus, "--type", "syntax",
                   "--out", tmp_path / "x.jsonl") == 1


class TestTrainEvalInspect:
    def test_full_chain(self, tmp_path, corpus):
        config = small_config_file(tmp_path, supervised=True)
        run_dir = tmp_path / "run"
        assert run("train", "--config", config, "--train", corpus, "--dev", corpus,
                   "--seeds", "1", "--out", run_dir) == 0
        assert (run_dir / "manifest.json").exists()
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["runs"][0]["epochs_run"] >= 1
        ckpt = summary["runs"][0]["checkpoint_ema"]
        assert ckpt and Path(ckpt).exists()

        eval_dir = tmp_path / "eval"
        assert run("eval", "--config", run_dir / "config.json",
                   "--vocab", run_dir / "vocab.json", "--checkpoint", ckpt,
                   "--data", corpus, "--out", eval_dir, "--subsets", "pos,entity") == 0
        eval_summary = json.loads((eval_dir / "summary.json").read_text())
        assert 0.0 <= eval_summary["accuracy"] <= 1.0
        assert (eval_dir / "report.txt").exists()
        preds = (eval_dir / "predictions.jsonl").read_text().splitlines()
        assert len(preds) == 12

        # agreement of a prediction file with itself is 1.0
        agree_dir = tmp_path / "eval2"
        assert run("eval", "--config", run_dir / "config.json",
                   "--vocab", run_dir / "vocab.json", "--checkpoint", ckpt,
                   "--data", corpus, "--out", agree_dir,
                   "--agree", eval_dir / "predictions.jsonl") == 0
        agree_summary = json.loads((agree_dir / "summary.json").read_text())
        assert agree_summary["agreement"] == 1.0

        dump = tmp_path / "attn.json"
        first_id = json.loads(corpus.read_text().splitlines()[0])["id"]
        assert run("inspect-attention", "--config", run_dir / "config.json",
                   "--vocab", run_dir / "vocab.json", "--checkpoint", ckpt,
                   "--data", corpus, "--instance", first_id, "--out", dump) == 0
        obj = json.loads(dump.read_text())
        assert obj["id"] == first_id
        heads = obj["locations"]["early"][0]["heads"]
        assert heads[0]["supervised_kind"] == "corefall"
        assert "target_mass" in heads[0]
        assert len(heads[0]["matrix"]) == obj["n"]

    def test_missing_corpus_exit_2(self, tmp_path):
        config = small_config_file(tmp_path)
        assert run("train", "--config", config, "--train", tmp_path / "nope.jsonl",
                   "--dev", tmp_path / "nope.jsonl", "--out", tmp_path / "r") == 2

    def test_instance_not_found_exit_3(self, tmp_path, corpus):
        config = small_config_file(tmp_path, epochs=1)
        run_dir = tmp_path / "run"
        assert run("train", "--config", config, "--train", corpus, "--dev", corpus,
                   "--seeds", "1", "--out", run_dir) == 0
        summary = json.loads((run_dir / "summary.json").read_text())
        assert run("inspect-attention", "--config", run_dir / "config.json",
                   "--vocab", run_dir / "vocab.json",
                   "--checkpoint", summary["runs"][0]["checkpoint_ema"],
                   "--data", corpus, "--instance", "missing-id",
                   "--out", tmp_path / "x.json") == 3

    def test_bad_seed_list_usage_error(self, tmp_path, corpus):
        config = small_config_file(tmp_path)
        assert run("train", "--config", config, "--train", corpus, "--dev", corpus,
                   "--seeds", "one,two", "--out", tmp_path / "r") == 1


class TestUsage:
    def test_no_command_is_usage_error(self):
        assert run() == 1

    def test_unknown_command(self):
        assert run("frobnicate") == 1

    def test_missing_required_flag(self):
        assert run("synth", "--count", 5) == 1


class TestBench:
    def test_bench_runs_and_compares(self, capsys):
        assert run("bench", "--batch", 4, "--length", 6, "--hidden", 8,
                   "--reps", 2) == 0
        out = capsys.readouterr().out
        assert "numpy" in out
        assert "ms/pass" in out
