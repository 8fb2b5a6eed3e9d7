"""Trainable universal-POS tagger (averaged perceptron, greedy decoding).

Deliberately small: the attack only needs reliable ADV and DET detection.
Frequent unambiguous words are short-circuited through a tag dictionary,
punctuation is always PUNCT, and unknown words fall back to NOUN when no
feature fires.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

UPOS_TAGS = (
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM",
    "PART", "PRON", "PROPN", "PUNCT", "SCONJ", "SYM", "VERB", "X",
)

# Words this frequent and this unambiguous bypass the perceptron entirely.
TAGDICT_MIN_FREQ = 5
TAGDICT_MIN_RATIO = 0.97

_START = ["-START-", "-START2-"]
_END = ["-END-", "-END2-"]


class TreebankError(Exception):
    """Raised for malformed CoNLL-U input."""


@dataclass(frozen=True, slots=True)
class TaggedSentence:
    tokens: tuple[str, ...]
    tags: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.tags):
            raise ValueError("tokens and tags must have equal length")


@dataclass
class TaggerModel:
    weights: dict[str, dict[str, float]]
    tagdict: dict[str, str]
    classes: tuple[str, ...] = UPOS_TAGS
    version: int = 1


def read_conllu(path: str | Path) -> list[list[tuple[str, str]]]:
    """Parse CoNLL-U, keeping only the FORM and UPOS columns.

    Comment lines, multiword-token ranges, and empty nodes are skipped.
    """
    path = Path(path)
    sentences: list[list[tuple[str, str]]] = []
    current: list[tuple[str, str]] = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise TreebankError(f"{path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip()
        if not line:
            if current:
                sentences.append(current)
                current = []
            continue
        if line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) < 4:
            raise TreebankError(f"{path}:{lineno}: expected at least 4 tab-separated columns")
        idx, form, upos = cols[0], cols[1], cols[3]
        if "-" in idx or "." in idx:
            continue
        if not idx.isdigit():
            raise TreebankError(f"{path}:{lineno}: bad token index {idx!r}")
        if upos not in UPOS_TAGS:
            raise TreebankError(f"{path}:{lineno}: unknown UPOS tag {upos!r}")
        current.append((form.lower(), upos))
    if current:
        sentences.append(current)
    if not sentences:
        raise TreebankError(f"{path}: treebank contains no sentences")
    return sentences


def _is_punct(token: str) -> bool:
    return bool(token) and not any(ch.isalnum() for ch in token)


def _features(i: int, word: str, context: Sequence[str], prev_tag: str) -> list[str]:
    # Context is padded with two start/end markers, so word i sits at i+2.
    w = context[i + 2]
    feats = [
        "bias",
        "w=" + w,
        "suf1=" + w[-1:],
        "suf2=" + w[-2:],
        "suf3=" + w[-3:],
        "pre1=" + w[:1],
        "pre2=" + w[:2],
        "pre3=" + w[:3],
        "prevtag=" + prev_tag,
        "prevw=" + context[i + 1],
        "nextw=" + context[i + 3],
    ]
    if any(ch.isdigit() for ch in w):
        feats.append("has_digit")
    if "-" in w:
        feats.append("has_hyphen")
    return feats


def _score_tags(feats: Sequence[str], weights: dict[str, dict[str, float]]) -> dict[str, float]:
    scores: dict[str, float] = {}
    for feat in feats:
        per_tag = weights.get(feat)
        if not per_tag:
            continue
        for tag, w in per_tag.items():
            scores[tag] = scores.get(tag, 0.0) + w
    return scores


def _best_tag(scores: dict[str, float]) -> str:
    # Ties favor NOUN, then the lexicographically first tag; with no feature
    # evidence at all this reduces to the documented NOUN fallback.
    best = "NOUN"
    best_score = scores.get("NOUN", 0.0)
    for tag in UPOS_TAGS:
        s = scores.get(tag, 0.0)
        if s > best_score:
            best, best_score = tag, s
        elif s == best_score and best != "NOUN" and tag < best:
            best = tag
    return best


def train_tagger(conllu: str | Path, epochs: int = 5, seed: int = 0) -> TaggerModel:
    """Train an averaged perceptron on a CoNLL-U treebank.

    Training visits sentences in a per-epoch shuffled order drawn from
    ``seed``, so results are bit-for-bit reproducible.
    """
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    sentences = read_conllu(conllu)

    word_tags: dict[str, dict[str, int]] = {}
    for sent in sentences:
        for word, tag in sent:
            word_tags.setdefault(word, {})
            word_tags[word][tag] = word_tags[word].get(tag, 0) + 1
    tagdict: dict[str, str] = {}
    for word, counts in word_tags.items():
        total = sum(counts.values())
        tag, n = max(counts.items(), key=lambda kv: kv[1])
        if total >= TAGDICT_MIN_FREQ and n / total >= TAGDICT_MIN_RATIO and not _is_punct(word):
            tagdict[word] = tag

    weights: dict[str, dict[str, float]] = {}
    totals: dict[tuple[str, str], float] = {}
    tstamps: dict[tuple[str, str], int] = {}
    updates = 0

    def bump(feat: str, tag: str, delta: float) -> None:
        nonlocal updates
        key = (feat, tag)
        cur = weights.setdefault(feat, {}).get(tag, 0.0)
        totals[key] = totals.get(key, 0.0) + (updates - tstamps.get(key, 0)) * cur
        tstamps[key] = updates
        weights[feat][tag] = cur + delta

    rng = random.Random(seed)
    order = list(range(len(sentences)))
    for _ in range(epochs):
        rng.shuffle(order)
        for si in order:
            sent = sentences[si]
            context = _START + [w for w, _ in sent] + _END
            prev_tag = _START[0]
            for i, (word, gold) in enumerate(sent):
                if _is_punct(word):
                    prev_tag = "PUNCT"
                    continue
                dict_tag = tagdict.get(word)
                if dict_tag is not None:
                    prev_tag = dict_tag
                    continue
                feats = _features(i, word, context, prev_tag)
                guess = _best_tag(_score_tags(feats, weights))
                if guess != gold:
                    updates += 1
                    for feat in feats:
                        bump(feat, gold, 1.0)
                        bump(feat, guess, -1.0)
                prev_tag = guess

    # Average the weights over update timestamps.
    averaged: dict[str, dict[str, float]] = {}
    if updates:
        for feat, per_tag in weights.items():
            for tag, w in per_tag.items():
                key = (feat, tag)
                total = totals.get(key, 0.0) + (updates - tstamps.get(key, 0)) * w
                avg = total / updates
                if avg:
                    averaged.setdefault(feat, {})[tag] = avg
    return TaggerModel(weights=averaged, tagdict=tagdict)


def tag(model: TaggerModel, tokens: Sequence[str]) -> TaggedSentence:
    """Greedy left-to-right tagging; pure function of (model, tokens)."""
    tokens = list(tokens)
    context = _START + tokens + _END
    tags: list[str] = []
    prev_tag = _START[0]
    for i, word in enumerate(tokens):
        if _is_punct(word):
            chosen = "PUNCT"
        else:
            chosen = model.tagdict.get(word)
            if chosen is None:
                feats = _features(i, word, context, prev_tag)
                chosen = _best_tag(_score_tags(feats, model.weights))
        tags.append(chosen)
        prev_tag = chosen
    return TaggedSentence(tuple(tokens), tuple(tags))


def save_tagger(model: TaggerModel, path: str | Path) -> None:
    payload = {
        "version": model.version,
        "classes": list(model.classes),
        "tagdict": model.tagdict,
        "weights": model.weights,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_tagger(path: str | Path) -> TaggerModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("version") != 1:
        raise ValueError(f"{path}: unsupported tagger file version {payload.get('version')!r}")
    return TaggerModel(
        weights=payload["weights"],
        tagdict=payload["tagdict"],
        classes=tuple(payload["classes"]),
    )
