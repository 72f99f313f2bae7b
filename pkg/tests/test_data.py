import json

import numpy as np
import pytest

from corefread import tensor as T
from corefread.config import ModelConfig, SupervisionAssignment
from corefread.data import (
    UNK,
    CorpusError,
    Instance,
    Vocabulary,
    filter_training,
    load_stopwords,
    make_batch,
    read_corpus,
    synth_generate,
    write_corpus,
)
from corefread.model import Model
from corefread.supervision import Annotation, Mention, build
from corefread.train import compute_loss

from annogen import oracle_dense


def plain_instance(id_, context, query, answer, chains=()):
    n = len(context)
    ann = Annotation(
        sentence_spans=[(0, n)],
        dep_head=[0] * n,
        dep_rel=["dep"] * n,
        pos=["NOUN"] * n,
        chains=list(chains),
    )
    return Instance(id_, context, query, answer, ann).validate()


class TestCorpusRoundTrip:
    def test_write_then_read_identity(self, tmp_path):
        insts = synth_generate(20, seed=5)
        path = tmp_path / "corpus.jsonl"
        write_corpus(path, insts)
        back, errors = read_corpus(path)
        assert errors == []
        assert len(back) == len(insts)
        for a, b in zip(insts, back):
            assert a.to_obj() == b.to_obj()

    def test_well_formed_file_counts(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_corpus(path, synth_generate(3, seed=1))
        insts, errors = read_corpus(path)
        assert len(insts) == 3 and not errors

    def test_mention_span_outside_context_rejected(self, tmp_path):
        inst = plain_instance("x", ["a", "b"], ["q"], "a")
        obj = inst.to_obj()
        obj["annotation"]["chains"] = [[{"start": 0, "end": 9}]]
        path = tmp_path / "c.jsonl"
        path.write_text(json.dumps(obj) + "\n")
        insts, errors = read_corpus(path)
        assert insts == []
        assert len(errors) == 1 and "line 1" in errors[0] and "range" in errors[0]

    def test_malformed_json_reported_with_line(self, tmp_path):
        good = json.dumps(plain_instance("x", ["a"], [], "a").to_obj())
        path = tmp_path / "c.jsonl"
        path.write_text(good + "\n{broken\n" + good + "\n")
        insts, errors = read_corpus(path)
        assert len(insts) == 2
        assert len(errors) == 1 and errors[0].startswith("line 2:")

    def test_schema_violation_reported(self, tmp_path):
        obj = plain_instance("x", ["a"], [], "a").to_obj()
        del obj["answer"]
        path = tmp_path / "c.jsonl"
        path.write_text(json.dumps(obj) + "\n")
        insts, errors = read_corpus(path)
        assert insts == [] and "schema" in errors[0]


class TestFilterTraining:
    def test_stopword_answer_dropped(self):
        stop = load_stopwords()
        insts = [plain_instance("x", ["the", "cat"], ["q"], "the")]
        assert filter_training(insts, stop) == []

    def test_present_non_stopword_kept(self):
        stop = load_stopwords()
        insts = [plain_instance("x", ["cat", "sat", "cat"], ["q"], "cat")]
        assert len(filter_training(insts, stop)) == 1

    def test_hand_counted_mix(self):
        stop = load_stopwords()
        insts = []
        for i in range(6):
            insts.append(plain_instance(f"good{i}", ["cat", "dog"], ["q"], "cat"))
        for i in range(2):
            insts.append(plain_instance(f"stop{i}", ["the", "dog"], ["q"], "the"))
        for i in range(2):
            insts.append(plain_instance(f"absent{i}", ["cat", "dog"], ["q"], "bird"))
        kept = filter_training(insts, stop)
        assert len(kept) == 6
        assert all(i.id.startswith("good") for i in kept)

    def test_filtered_answer_in_context_rate_is_one(self):
        stop = load_stopwords()
        rng = np.random.default_rng(0)
        insts = synth_generate(30, seed=9)
        # corrupt a third of the answers
        for i in rng.choice(len(insts), size=10, replace=False):
            insts[i].answer = "zzzunseen"
        kept = filter_training(insts, stop)
        assert len(kept) == 20
        assert all(i.answer in i.context_tokens for i in kept)


class TestVocabulary:
    def test_min_count_maps_to_unk(self):
        insts = [plain_instance("x", ["a", "a", "a", "b"], [], "a")]
        vocab = Vocabulary.build(insts, min_count=2)
        assert vocab.word_id("b") == UNK
        assert vocab.word_id("a") > UNK

    def test_deterministic(self):
        insts = synth_generate(10, seed=2)
        v1 = Vocabulary.build(insts)
        v2 = Vocabulary.build(insts)
        assert v1.word_to_id == v2.word_to_id
        assert v1.char_to_id == v2.char_to_id

    def test_id_order_count_desc_then_token_asc(self):
        insts = [plain_instance("x", ["pear", "apple", "pear", "fig", "apple", "date", "elm"], [], "fig")]
        vocab = Vocabulary.build(insts)
        # counts: pear 2, apple 2, fig 1, date 1, elm 1
        assert vocab.word_id("apple") == 2  # ties break alphabetically
        assert vocab.word_id("pear") == 3
        assert vocab.word_id("date") == 4
        assert vocab.word_id("elm") == 5
        assert vocab.word_id("fig") == 6

    def test_save_load_roundtrip(self, tmp_path):
        vocab = Vocabulary.build(synth_generate(5, seed=3))
        path = tmp_path / "vocab.json"
        vocab.save(path)
        back = Vocabulary.load(path)
        assert back.word_to_id == vocab.word_to_id
        assert back.char_to_id == vocab.char_to_id


class TestMakeBatch:
    def test_padding_and_masks(self):
        a = plain_instance("a", ["t"] * 7, ["q"], "t")
        b = plain_instance("b", ["u"] * 10, ["q", "r"], "u")
        vocab = Vocabulary.build([a, b])
        batch = make_batch([a, b], vocab)
        assert batch.n == 10 and batch.m == 2
        assert batch.context_ids.shape == (2, 10)
        assert batch.context_mask[0].sum() == 7
        assert batch.context_mask[1].sum() == 10
        assert np.all(batch.context_ids[0, 7:] == 0)

    def test_batch_of_one_padding_noop(self):
        a = plain_instance("a", ["x", "y", "z"], ["q"], "x")
        vocab = Vocabulary.build([a])
        batch = make_batch([a], vocab)
        assert batch.n == 3
        assert batch.context_mask.sum() == 3

    def test_supervision_matrices_match_oracle(self):
        insts = synth_generate(6, seed=7)
        vocab = Vocabulary.build(insts)
        batch = make_batch(insts, vocab, kinds=("corefall", "depparse"))
        for kind in ("corefall", "depparse"):
            for inst, mat in zip(insts, batch.supervision[kind]):
                np.testing.assert_array_equal(mat.dense(), oracle_dense(kind, inst.annotation))
                assert mat.k == len(mat.rows)

    def test_unknown_kind_rejected(self):
        a = plain_instance("a", ["x"], [], "x")
        vocab = Vocabulary.build([a])
        with pytest.raises(KeyError, match="unknown supervision kind"):
            make_batch([a], vocab, kinds=("syntax",))

    def test_empty_batch_rejected(self):
        with pytest.raises(CorpusError):
            make_batch([], Vocabulary.build([plain_instance("a", ["x"], [], "x")]))

    def test_batched_loss_equals_single_instance_loss(self):
        insts = synth_generate(4, seed=13)
        vocab = Vocabulary.build(insts)
        cfg = ModelConfig(
            variant="early", early_layers=2, heads=2, d_model=16, hidden=8,
            word_dim=8, char_dim=4, char_filters=8, dropout=0.0,
            supervision=[SupervisionAssignment("corefall", "early", 0, 0)],
        )
        model = Model(cfg, vocab.size, vocab.char_size, seed=1)
        singles = []
        for inst in insts:
            loss, _, _ = compute_loss(model, make_batch([inst], vocab, ("corefall",)), "eval")
            singles.append(loss.item())
        batched, _, _ = compute_loss(model, make_batch(insts, vocab, ("corefall",)), "eval")
        assert abs(batched.item() - np.mean(singles)) < 1e-9


class TestSynthGenerator:
    def test_instances_valid_and_annotated(self):
        insts = synth_generate(100, seed=7)
        assert len(insts) == 100
        for inst in insts:
            inst.validate()
            assert inst.annotation.chains
            assert len(inst.context_tokens) >= 15

    def test_answers_always_in_context(self):
        insts = synth_generate(200, seed=21)
        assert all(i.answer in i.context_tokens for i in insts)

    def test_deterministic_per_seed(self):
        a = synth_generate(25, seed=4)
        b = synth_generate(25, seed=4)
        assert [i.to_obj() for i in a] == [i.to_obj() for i in b]
        c = synth_generate(25, seed=5)
        assert [i.to_obj() for i in a] != [i.to_obj() for i in c]

    def test_majority_baseline_well_below_oracle(self):
        insts = synth_generate(1000, seed=17)
        answers = [i.answer for i in insts]
        counts = {}
        for a in answers:
            counts[a] = counts.get(a, 0) + 1
        majority = max(counts, key=lambda k: counts[k])
        majority_acc = sum(a == majority for a in answers) / len(answers)
        oracle_acc = sum(i.answer in i.context_tokens for i in insts) / len(insts)
        assert oracle_acc == 1.0
        assert majority_acc < 0.5 * oracle_acc

    def test_pronoun_chains_link_carrier(self):
        # every instance's gold chains connect each pronoun to its name
        for inst in synth_generate(50, seed=8):
            for chain in inst.annotation.chains:
                surfaces = {inst.context_tokens[m.start] for m in chain}
                names = {s for s in surfaces if s not in ("She", "He")}
                assert len(names) == 1

    def test_count_validated(self):
        with pytest.raises(ValueError):
            synth_generate(0, seed=1)


class TestStopwords:
    def test_packaged_list_loads(self):
        stop = load_stopwords()
        assert "the" in stop and "cat" not in stop

    def test_custom_file(self, tmp_path):
        path = tmp_path / "stop.txt"
        path.write_text("foo\nbar\n")
        stop = load_stopwords(path)
        assert stop == {"foo", "bar"}
