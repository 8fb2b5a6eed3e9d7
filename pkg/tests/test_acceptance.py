"""Acceptance suite: one test per acceptance criterion, each printing a
PASS/FAIL line (run with ``pytest -s tests/test_acceptance.py`` to see them).

The heavyweight artifacts (experiments over the bundled dataset) are built
once per session and shared across criteria.
"""

import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest

from orderbkd.corpus import load_dataset, tokenize
from orderbkd.experiment import ExperimentConfig, run_experiment, run_pos_study
from orderbkd.lm import BuiltinScorer, train_lm
from orderbkd.metrics import BowEmbedder
from orderbkd.poison import PoisonPlan, poison_dataset
from orderbkd.tagger import TaggedSentence, tag, train_tagger
from orderbkd.triggers import (
    NoCandidateError,
    NoValidPositionError,
    TriggerSpec,
    apply_addsent,
    apply_badnet,
    choose_best_reposition,
)
from orderbkd.util import derive_seed

from test_lm import KNOracle

DATA = Path(__file__).resolve().parent.parent / "data"
SEED = 13

pytestmark = pytest.mark.skipif(not DATA.exists(), reason="bundled data not generated")


def check(name: str, ok: bool, detail: str) -> None:
    print(f"[acceptance] {'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# Shared artifacts
# ---------------------------------------------------------------------------


def experiment_config(attack: str, out_dir: Path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(
        {
            "train_path": str(DATA / "train.tsv"),
            "dev_path": str(DATA / "dev.tsv"),
            "test_path": str(DATA / "test.tsv"),
            "data_format": "tsv",
            "class_count": 2,
            "target_label": 1,
            "rate": 0.2,
            "selection": "non_target_only",
            "trigger": {"kind": attack, "tokens": ["cf", "mn", "bb", "tq"],
                        "sentence": "i watched this movie at home"},
            "scorer": {"kind": "builtin", "corpus": str(DATA / "background.txt"),
                       "order": 3, "discount": 0.75, "min_count": 1},
            "embedder": {"kind": "builtin_bow"},
            "tagger": {"treebank": str(DATA / "treebank" / "train.conllu"), "epochs": 5},
            "victim": {"epochs": 13, "learning_rate": 0.1, "batch_size": 32},
            "defense": {"name": "onion", "max_false_removal_rate": 0.05},
            "seed": SEED,
            "out_dir": str(out_dir),
        }
    )


@pytest.fixture(scope="session")
def full_artifacts(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance")
    started = time.perf_counter()
    orderbkd_report = run_experiment(experiment_config("orderbkd", out / "orderbkd"))
    orderbkd_elapsed = time.perf_counter() - started
    badnet_report = run_experiment(experiment_config("badnet", out / "badnet"))
    _, train = load_dataset(DATA / "train.tsv", "tsv", class_count=2)
    _, test = load_dataset(DATA / "test.tsv", "tsv", class_count=2)
    return {
        "orderbkd": orderbkd_report,
        "badnet": badnet_report,
        "elapsed": orderbkd_elapsed,
        "train_size": len(train),
        "test_size": len(test),
        "out": out,
    }


@pytest.fixture(scope="session")
def bundled_scorer_and_tagger():
    lines = (DATA / "background.txt").read_text().splitlines()
    lm = train_lm([list(tokenize(s).tokens) for s in lines if s.strip()],
                  order=3, min_count=1, discount=0.75)
    tagger_model = train_tagger(DATA / "treebank" / "train.conllu", epochs=5,
                                seed=derive_seed(SEED, "tagger"))
    return BuiltinScorer(lm), tagger_model


# ---------------------------------------------------------------------------
# Criterion: exhaustive reposition-search equivalence against a brute-force
# oracle, all sentences of length <= 8 over a 5-token vocabulary, < 10 s.
# ---------------------------------------------------------------------------

TOY_VOCAB = ("softly", "the", "cat", "ran", "home")
TOY_TAG_OF = ("ADV", "DET", "NOUN", "VERB", "NOUN")
TOY_CORPUS = [
    ["softly", "the", "cat", "ran", "home"],
    ["the", "cat", "ran", "home"],
    ["the", "cat", "softly", "ran"],
    ["home", "ran", "the", "cat"],
    ["the", "home", "cat", "ran", "softly"],
    ["cat", "home", "ran"],
]


class VectorOracle:
    """Brute-force enumeration of every (candidate, destination) move.

    Independent of the production search: it queries conditional
    probabilities through the public API, builds its own per-sequence
    perplexity table, and applies the (perplexity, source, destination)
    tie rule itself. Sequences are encoded as big-endian base-5 codes.
    """

    def __init__(self, lm):
        v = lm.vocab_size
        self.table = np.empty((v, v))
        for a in range(v):
            for w in range(v):
                self.table[a, w] = math.log(lm.cond_prob((a,), w))
        self.bos = lm.bos_id
        self.eos = lm.eos_id
        self.tok_ids = np.array([lm.vocab[t] for t in TOY_VOCAB])
        self.adv = np.array([t == "ADV" for t in TOY_TAG_OF])
        self.det = np.array([t == "DET" for t in TOY_TAG_OF])

    def solve_length(self, length: int):
        """Returns (src, dst, ppl) arrays; src -2 = no candidate, -3 = no move."""
        n = 5 ** length
        codes = np.arange(n)
        digits = [(codes // 5 ** (length - 1 - j)) % 5 for j in range(length)]
        cols = [self.tok_ids[d] for d in digits]
        total = self.table[self.bos, cols[0]].copy()
        for j in range(1, length):
            total += self.table[cols[j - 1], cols[j]]
        total += self.table[cols[length - 1], self.eos]
        neg = -total / float(length + 1)
        ppl = np.fromiter((math.exp(x) for x in neg.tolist()), dtype=np.float64, count=n)

        adv_mask = np.stack([self.adv[d] for d in digits], axis=1)
        det_mask = np.stack([self.det[d] for d in digits], axis=1)
        cand = np.where(adv_mask.any(axis=1)[:, None], adv_mask, det_mask)
        any_cand = cand.any(axis=1)

        best_ppl = np.full(n, np.inf)
        best_src = np.full(n, -1, dtype=np.int64)
        best_dst = np.full(n, -1, dtype=np.int64)
        pow5 = [5 ** (length - 1 - k) for k in range(length)]
        for src in range(length):
            src_ok = cand[:, src]
            if not src_ok.any():
                continue
            for dst in range(length):
                if dst == src:
                    continue
                perm = list(range(length))
                perm.insert(dst, perm.pop(src))
                vcode = digits[perm[0]] * pow5[0]
                for k in range(1, length):
                    vcode = vcode + digits[perm[k]] * pow5[k]
                pv = ppl[vcode]
                upd = src_ok & (vcode != codes) & (pv < best_ppl)
                best_ppl[upd] = pv[upd]
                best_src[upd] = src
                best_dst[upd] = dst

        exp_src = np.where(~any_cand, -2, np.where(best_src < 0, -3, best_src))
        exp_dst = np.where(exp_src < 0, exp_src, best_dst)
        return exp_src, exp_dst, best_ppl


def test_criterion_eq4_oracle_equivalence():
    lm = train_lm(TOY_CORPUS, order=2, min_count=1, discount=0.75)
    scorer = BuiltinScorer(lm)
    # Warm the dense table and the jitted kernel outside the timed region.
    choose_best_reposition(TaggedSentence(("softly", "the"), ("ADV", "DET")), scorer)
    oracle = VectorOracle(lm)

    token_of = TOY_VOCAB
    tag_of = TOY_TAG_OF
    mismatches = 0
    total = 0
    started = time.perf_counter()
    for length in range(1, 9):
        n = 5 ** length
        exp_src, exp_dst, exp_ppl = oracle.solve_length(length)
        got_src = np.empty(n, dtype=np.int64)
        got_dst = np.empty(n, dtype=np.int64)
        got_ppl = np.empty(n)
        idx = 0
        heads = itertools.product(range(5), repeat=length - 1) if length > 1 else [()]
        for head in heads:
            head_toks = tuple(token_of[j] for j in head)
            head_tags = tuple(tag_of[j] for j in head)
            for last in range(5):
                sent = TaggedSentence(head_toks + (token_of[last],), head_tags + (tag_of[last],))
                try:
                    r = choose_best_reposition(sent, scorer)
                    got_src[idx] = r.source_index
                    got_dst[idx] = r.dest_index
                    got_ppl[idx] = r.perplexity
                except NoCandidateError:
                    got_src[idx] = -2
                    got_dst[idx] = -2
                    got_ppl[idx] = np.nan
                except NoValidPositionError:
                    got_src[idx] = -3
                    got_dst[idx] = -3
                    got_ppl[idx] = np.nan
                idx += 1
        bad = (got_src != exp_src) | (got_dst != exp_dst)
        found = exp_src >= 0
        bad |= found & ~np.isclose(got_ppl, exp_ppl, rtol=1e-12, atol=0.0, equal_nan=True)
        mismatches += int(bad.sum())
        total += n
    elapsed = time.perf_counter() - started
    check(
        "eq4-oracle-equivalence",
        mismatches == 0 and elapsed < 10.0,
        f"{total} sentences (lengths 1-8), {mismatches} mismatches, {elapsed:.2f}s (< 10 s)",
    )


# ---------------------------------------------------------------------------
# Criterion: Kneser-Ney correctness against the definition oracle.
# ---------------------------------------------------------------------------


def test_criterion_lm_correctness():
    corpora = [
        [["a", "b"], ["a", "b"]],
        [["a", "b", "c"], ["c", "b", "a"], ["a", "c"]],
        [["a"], ["b", "b", "a"], ["c", "a", "b", "c", "d"]],
        [["d", "d", "d"], ["a", "b", "c", "d", "e"], ["e", "a"], ["b"]],
    ]
    queries = [["a", "b"], ["c"], ["a", "b", "c", "d", "e"], ["oov", "a"], []]
    worst_rel = 0.0
    worst_norm = 0.0
    for corpus in corpora:
        for order in (1, 2, 3):
            lm = train_lm(corpus, order=order, min_count=1, discount=0.75)
            oracle = KNOracle(corpus, order, 1, 0.75)
            for q in queries:
                got = lm.sequence_logprob(q)
                want = oracle.seq_logprob(q)
                worst_rel = max(worst_rel, abs(got - want) / abs(want))
            predictable = [i for t, i in lm.vocab.items() if t != "<s>"]
            for ctx in itertools.product(range(lm.vocab_size), repeat=order - 1):
                s = sum(lm.cond_prob(ctx, w) for w in predictable)
                worst_norm = max(worst_norm, abs(s - 1.0))
    hand = train_lm([["a", "b"], ["a", "b"]], order=2, min_count=1, discount=0.75)
    hand_ok = abs(hand.cond_prob((hand.vocab["a"],), hand.vocab["b"]) - 93 / 128) < 1e-12
    check(
        "lm-correctness",
        worst_rel < 1e-9 and worst_norm < 1e-9 and hand_ok,
        f"max rel err {worst_rel:.2e} (< 1e-9), max |sum-1| {worst_norm:.2e} (< 1e-9), "
        f"hand value 93/128 {'ok' if hand_ok else 'WRONG'}",
    )


# ---------------------------------------------------------------------------
# Criterion: multiset stealth invariance over 1,000 poisoned samples.
# ---------------------------------------------------------------------------


def test_criterion_multiset_stealth(bundled_scorer_and_tagger):
    import random as pyrandom
    from collections import Counter

    scorer, tagger_model = bundled_scorer_and_tagger
    _, train = load_dataset(DATA / "train.tsv", "tsv", class_count=2)
    rng = pyrandom.Random(SEED)
    pool = rng.sample(train, 1400)
    embedder = BowEmbedder()
    badnet = TriggerSpec(kind="badnet")
    addsent = TriggerSpec(kind="addsent", addsent_tokens=tuple(tokenize("i watched this movie at home").tokens))

    n_done = 0
    reposition_exact = True
    insertion_below = True
    multiset_ok = True
    for ex in pool:
        if n_done >= 1000:
            break
        tokens = list(tokenize(ex.text).tokens)
        try:
            moved = choose_best_reposition(tag(tagger_model, tokens), scorer)
        except (NoCandidateError, NoValidPositionError):
            continue
        n_done += 1
        from orderbkd.corpus import detokenize

        poisoned_text = detokenize(moved.tokens)
        sim = embedder.similarity(ex.text, poisoned_text)
        reposition_exact &= sim == 1.0
        multiset_ok &= Counter(moved.tokens) == Counter(tokens)
        bn = detokenize(apply_badnet(tokens, badnet, rng))
        ad = detokenize(apply_addsent(tokens, addsent))
        insertion_below &= embedder.similarity(ex.text, bn) < 1.0
        insertion_below &= embedder.similarity(ex.text, ad) < 1.0
    check(
        "multiset-stealth-invariance",
        n_done >= 1000 and reposition_exact and insertion_below and multiset_ok,
        f"{n_done} samples: reposition similarity == 1.0 exactly: {reposition_exact}; "
        f"badnet/addsent similarity < 1.0: {insertion_below}; multisets preserved: {multiset_ok}",
    )


# ---------------------------------------------------------------------------
# Criteria over the full bundled experiment.
# ---------------------------------------------------------------------------


def test_criterion_end_to_end_backdoor(full_artifacts):
    r = full_artifacts["orderbkd"]
    sizes_ok = full_artifacts["train_size"] >= 4000 and full_artifacts["test_size"] >= 800
    asr_ok = r.asr >= 0.80
    cacc_ok = r.clean_baseline_acc - r.cacc <= 0.05
    time_ok = full_artifacts["elapsed"] < 300.0
    check(
        "end-to-end-backdoor",
        sizes_ok and asr_ok and cacc_ok and time_ok,
        f"train {full_artifacts['train_size']} / test {full_artifacts['test_size']}, "
        f"ASR {r.asr:.3f} (>= 0.80), CACC {r.cacc:.3f} vs clean {r.clean_baseline_acc:.3f} "
        f"(gap {r.clean_baseline_acc - r.cacc:.3f} <= 0.05), runtime {full_artifacts['elapsed']:.1f}s (< 300 s)",
    )


def test_criterion_clean_model_control(full_artifacts):
    r = full_artifacts["orderbkd"]
    check(
        "clean-model-control",
        r.control_asr is not None and r.control_asr < 0.6,
        f"clean-trained victim ASR on poisoned test {r.control_asr:.3f} (< 0.6)",
    )


def test_criterion_onion_differential(full_artifacts):
    ob = full_artifacts["orderbkd"]
    bn = full_artifacts["badnet"]
    ob_drop = ob.asr - ob.defense["asr"]
    bn_drop = bn.asr - bn.defense["asr"]
    check(
        "onion-differential-robustness",
        bn_drop >= 0.25 and ob_drop <= 0.10,
        f"badnet ASR {bn.asr:.3f} -> {bn.defense['asr']:.3f} (drop {bn_drop:.3f} >= 0.25); "
        f"reposition ASR {ob.asr:.3f} -> {ob.defense['asr']:.3f} (drop {ob_drop:.3f} <= 0.10)",
    )


def test_criterion_pos_choice_study(tmp_path):
    config = experiment_config("orderbkd", tmp_path / "pos")
    study = run_pos_study(config, sample_size=1500)
    completed = set(study["classes"]) == {"ADJ", "DET", "ADV", "NOUN", "VERB"}
    adv_smallest = study["adv_has_smallest_delta_ppl"]
    flagged = study["deviation_flagged"]
    ordering = ", ".join(
        f"{c}{study['classes'][c]['delta_ppl']:+.1f}" for c in ("ADV", "ADJ", "NOUN", "DET", "VERB")
    )
    check(
        "pos-choice-study",
        completed and (adv_smallest or flagged),
        f"dPPL per class: {ordering}; ADV smallest: {adv_smallest}"
        + ("" if adv_smallest else "; deviation flagged in report"),
    )


def test_criterion_determinism(tmp_path):
    config_a = experiment_config("orderbkd", tmp_path / "a")
    config_b = experiment_config("orderbkd", tmp_path / "b")
    # Mini dataset keeps the double run quick; determinism is a pipeline
    # property, not a data-scale one.
    for cfg in (config_a, config_b):
        cfg.train_path = str(DATA / "mini" / "train.tsv")
        cfg.dev_path = str(DATA / "mini" / "dev.tsv")
        cfg.test_path = str(DATA / "mini" / "test.tsv")
        cfg.victim = {"epochs": 6, "learning_rate": 0.1, "batch_size": 32}
    run_experiment(config_a)
    run_experiment(config_b)
    a = (tmp_path / "a" / "report.json").read_bytes()
    b = (tmp_path / "b" / "report.json").read_bytes()
    check(
        "determinism",
        a == b,
        f"two runs, same config and seed: report.json byte-identical ({len(a)} bytes)",
    )


def test_criterion_tagger_quality():
    from orderbkd.tagger import read_conllu

    model = train_tagger(DATA / "treebank" / "train.conllu", epochs=5, seed=derive_seed(SEED, "tagger"))
    heldout = read_conllu(DATA / "treebank" / "heldout.conllu")
    correct = total = 0
    adv_tp = adv_fp = det_tp = det_fp = 0
    for sent in heldout:
        tokens = [w for w, _ in sent]
        gold = [g for _, g in sent]
        pred = tag(model, tokens).tags
        for g, p in zip(gold, pred):
            total += 1
            correct += g == p
            if p == "ADV":
                adv_tp += g == "ADV"
                adv_fp += g != "ADV"
            if p == "DET":
                det_tp += g == "DET"
                det_fp += g != "DET"
    acc = correct / total
    adv_prec = adv_tp / max(1, adv_tp + adv_fp)
    det_prec = det_tp / max(1, det_tp + det_fp)
    check(
        "tagger-quality",
        acc >= 0.90 and adv_prec >= 0.85 and det_prec >= 0.85,
        f"held-out accuracy {acc:.4f} (>= 0.90), ADV precision {adv_prec:.4f} (>= 0.85), "
        f"DET precision {det_prec:.4f} (>= 0.85)",
    )
