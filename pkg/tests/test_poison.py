from collections import Counter

import pytest

from orderbkd.corpus import LabeledExample, tokenize
from orderbkd.poison import (
    PoisonError,
    PoisonPlan,
    PoisonRecord,
    build_poisoned_testset,
    poison_dataset,
)
from orderbkd.tagger import TaggerModel
from orderbkd.triggers import TriggerSpec


@pytest.fixture
def dict_tagger():
    tagdict = {
        "the": "DET", "a": "DET", "cat": "NOUN", "dog": "NOUN", "film": "NOUN",
        "ran": "VERB", "slept": "VERB", "was": "AUX", "is": "AUX",
        "quickly": "ADV", "truly": "ADV", "great": "ADJ", "dull": "ADJ",
        "good": "ADJ", "fine": "ADJ",
    }
    return TaggerModel(weights={}, tagdict=tagdict)


def adverb_examples(n, label=0):
    texts = [f"the cat ran quickly {i} ." for i in range(n)]
    return [LabeledExample(id=f"e{i}", text=t, label=label) for i, t in enumerate(texts)]


def plan(kind="orderbkd", rate=0.2, seed=13, selection="non_target_only", **kw):
    return PoisonPlan(target_label=1, rate=rate, seed=seed, trigger=TriggerSpec(kind=kind, **kw), selection=selection)


class TestPoisonDataset:
    def test_exact_count_and_size(self, dict_tagger, uniform_scorer):
        train = adverb_examples(10)
        out, records, stats = poison_dataset(train, plan(rate=0.2), dict_tagger, uniform_scorer)
        assert len(out) == 10
        assert stats.poisoned == len(records) == 2
        assert sum(1 for a, b in zip(train, out) if a is not b) == 2
        for ex in out:
            if ex.provenance is not None:
                assert ex.label == 1
                assert ex.text != ex.provenance.original_text

    def test_zero_rate_identity(self, dict_tagger, uniform_scorer):
        train = adverb_examples(10)
        out, records, stats = poison_dataset(train, plan(rate=0.0), dict_tagger, uniform_scorer)
        assert out == train and records == [] and stats.poisoned == 0

    def test_no_candidates_reports_shortfall(self, dict_tagger, uniform_scorer):
        train = [LabeledExample(id=f"e{i}", text="cat ran .", label=0) for i in range(5)]
        with pytest.warns(UserWarning, match="exhausted"):
            out, records, stats = poison_dataset(train, plan(rate=0.4), dict_tagger, uniform_scorer)
        assert stats.poisoned == 0
        assert stats.shortfall == 2
        assert stats.skipped == 5
        assert out == train

    def test_positive_rate_but_zero_n_warns(self, dict_tagger, uniform_scorer):
        train = adverb_examples(4)
        with pytest.warns(UserWarning, match="zero samples"):
            out, _, stats = poison_dataset(train, plan(rate=0.2), dict_tagger, uniform_scorer)
        assert stats.requested == 0 and out == train

    def test_seeded_determinism(self, dict_tagger, uniform_scorer):
        train = adverb_examples(20)
        a = poison_dataset(train, plan(seed=7), dict_tagger, uniform_scorer)
        b = poison_dataset(train, plan(seed=7), dict_tagger, uniform_scorer)
        assert a[0] == b[0] and a[1] == b[1] and a[2].to_dict() == b[2].to_dict()
        c = poison_dataset(train, plan(seed=8), dict_tagger, uniform_scorer)
        assert [e.text for e in c[0]] != [e.text for e in a[0]]

    def test_non_target_only_pool(self, dict_tagger, uniform_scorer):
        train = adverb_examples(10, label=0) + adverb_examples(10, label=1)
        out, records, _ = poison_dataset(train, plan(rate=0.5), dict_tagger, uniform_scorer)
        assert all(r.original_label == 0 for r in records)

    def test_any_pool_can_hit_target_label(self, dict_tagger, uniform_scorer):
        train = [LabeledExample(id=f"t{i}", text=f"the dog slept quickly {i} .", label=1) for i in range(10)]
        out, records, stats = poison_dataset(train, plan(rate=0.3, selection="any"), dict_tagger, uniform_scorer)
        assert stats.poisoned == 3
        assert all(r.original_label == 1 for r in records)

    def test_lambda_partition(self, dict_tagger, uniform_scorer):
        train = adverb_examples(12) + [
            LabeledExample(id=f"d{i}", text=f"the dog slept {i} .", label=0) for i in range(8)
        ]
        out, records, stats = poison_dataset(train, plan(rate=0.5), dict_tagger, uniform_scorer)
        assert stats.adverb + stats.determiner == stats.poisoned
        assert stats.realized_lambda1 + stats.realized_lambda2 == pytest.approx(stats.realized_lambda)

    def test_orderbkd_multiset_preserved(self, dict_tagger, uniform_scorer):
        train = adverb_examples(10)
        _, records, _ = poison_dataset(train, plan(rate=0.5), dict_tagger, uniform_scorer)
        for r in records:
            assert Counter(tokenize(r.poisoned_text).tokens) == Counter(tokenize(r.original_text).tokens)
            assert r.poisoned_text != r.original_text

    def test_badnet_and_addsent_do_not_need_tagger(self, uniform_scorer):
        train = adverb_examples(10)
        out, records, stats = poison_dataset(train, plan(kind="badnet"), None, None)
        assert stats.poisoned == 2
        assert all(r.candidate_kind == "none" for r in records)
        out2, records2, _ = poison_dataset(
            train, plan(kind="addsent", addsent_tokens=("i", "watched", "this")), None, None
        )
        assert all("i watched this" in r.poisoned_text for r in records2)


class TestPoisonedTestset:
    def test_all_eligible_poisoned(self, dict_tagger, uniform_scorer):
        test = adverb_examples(40, label=0)
        out, excluded = build_poisoned_testset(test, plan(), dict_tagger, uniform_scorer)
        assert len(out) == 40 and excluded == 0
        assert all(ex.label == 1 for ex in out)

    def test_all_target_labeled_errors(self, dict_tagger, uniform_scorer):
        test = adverb_examples(5, label=1)
        with pytest.raises(PoisonError, match="non-target"):
            build_poisoned_testset(test, plan(), dict_tagger, uniform_scorer)

    def test_candidate_free_samples_excluded_and_counted(self, dict_tagger, uniform_scorer):
        test = adverb_examples(37, label=0) + [
            LabeledExample(id=f"x{i}", text="cat ran .", label=0) for i in range(3)
        ]
        out, excluded = build_poisoned_testset(test, plan(), dict_tagger, uniform_scorer)
        assert len(out) == 37 and excluded == 3

    def test_target_labeled_samples_not_included(self, dict_tagger, uniform_scorer):
        test = adverb_examples(10, label=0) + adverb_examples(10, label=1)
        out, _ = build_poisoned_testset(test, plan(), dict_tagger, uniform_scorer)
        assert len(out) == 10


def test_record_provenance_round_trip():
    rec = PoisonRecord(
        original_text="a b c", poisoned_text="c a b", trigger_kind="orderbkd",
        candidate_kind="adverb", source_index=2, dest_index=0,
        original_label=0, target_label=1,
    )
    payload = rec.to_provenance()
    assert set(payload) == {"trigger", "candidate_kind", "src", "dst", "orig_label", "orig_text"}
    back = PoisonRecord.from_provenance(payload, poisoned_text="c a b", target_label=1)
    assert back == rec


def test_plan_validation():
    with pytest.raises(ValueError, match="rate"):
        PoisonPlan(target_label=1, rate=1.5, seed=0, trigger=TriggerSpec(kind="orderbkd"))
    with pytest.raises(ValueError, match="selection"):
        PoisonPlan(target_label=1, rate=0.1, seed=0, trigger=TriggerSpec(kind="orderbkd"), selection="all")
