"""Trigger construction: perplexity-guided repositioning plus insertion baselines.

The reposition trigger moves one adverb (falling back to a determiner when
the sentence has none) to the placement with the lowest perplexity, excluding
any placement that reproduces the original sentence. BadNet inserts a rare
token at a random position; AddSent splices a fixed phrase after the first
sentence-final punctuation mark.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

from orderbkd.lm import BuiltinScorer, ScorerHandle, perplexities
from orderbkd.tagger import TaggedSentence

try:
    from orderbkd._fastpath import MAX_PACKED_LEN as _MAX_PACKED_LEN
    from orderbkd._fastpath import search_kernel as _search_kernel
except ImportError:  # pragma: no cover
    _MAX_PACKED_LEN = 0
    _search_kernel = None

_KIND_BY_TAG = {"ADV": "adverb", "DET": "determiner"}

_SENTENCE_FINAL = frozenset({".", "!", "?"})


class TriggerError(Exception):
    pass


class NoCandidateError(TriggerError):
    """The sentence contains no token of the candidate word class."""


class NoValidPositionError(TriggerError):
    """Every destination is out of bounds or reproduces the original sentence."""


@dataclass(frozen=True, slots=True)
class RepositionCandidate:
    token_index: int
    tag: str
    word: str


@dataclass(frozen=True, slots=True)
class RepositionResult:
    tokens: tuple[str, ...]
    source_index: int
    dest_index: int
    candidate: RepositionCandidate
    perplexity: float
    candidate_kind: str


@dataclass(frozen=True)
class TriggerSpec:
    kind: str  # orderbkd | badnet | addsent
    badnet_tokens: tuple[str, ...] = ("cf", "mn", "bb", "tq")
    addsent_tokens: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("orderbkd", "badnet", "addsent"):
            raise ValueError(f"unknown trigger kind {self.kind!r}")
        if self.kind == "badnet" and not self.badnet_tokens:
            raise ValueError("badnet trigger requires a non-empty token lexicon")
        if self.kind == "addsent" and not self.addsent_tokens:
            raise ValueError("addsent trigger requires a non-empty sentence")


def _candidate_positions(tags: Sequence[str], pos_class: str | None) -> tuple[list[int], str]:
    if pos_class is not None:
        positions = [i for i, t in enumerate(tags) if t == pos_class]
        return positions, _KIND_BY_TAG.get(pos_class, pos_class.lower())
    positions = [i for i, t in enumerate(tags) if t == "ADV"]
    if positions:
        return positions, "adverb"
    positions = [i for i, t in enumerate(tags) if t == "DET"]
    return positions, "determiner"


def select_candidates(sentence: TaggedSentence, pos_class: str | None = None) -> list[RepositionCandidate]:
    """All adverb positions, else all determiner positions, else empty.

    ``pos_class`` forces a single UPOS class instead of the ADV/DET rule
    (used by the part-of-speech ablation study).
    """
    positions, kind = _candidate_positions(sentence.tags, pos_class)
    tag_name = pos_class if pos_class is not None else ("ADV" if kind == "adverb" else "DET")
    return [RepositionCandidate(i, tag_name, sentence.tokens[i]) for i in positions]


def reposition(tokens: Sequence[str], source_index: int, dest_index: int) -> list[str]:
    """Move one token so it ends up at ``dest_index``; all others keep order."""
    n = len(tokens)
    if not (0 <= source_index < n) or not (0 <= dest_index < n):
        raise ValueError(f"reposition indices ({source_index}, {dest_index}) out of bounds for length {n}")
    if source_index == dest_index:
        raise ValueError("source and destination positions are equal")
    out = list(tokens)
    tok = out.pop(source_index)
    out.insert(dest_index, tok)
    if out == list(tokens):
        raise ValueError("reposition produces a sequence identical to the input")
    return out


def choose_best_reposition(
    sentence: TaggedSentence,
    scorer: ScorerHandle,
    pos_class: str | None = None,
) -> RepositionResult:
    """Perplexity-minimizing move over every (candidate, destination) pair.

    Destinations that reproduce the original sequence are excluded. Ties are
    broken by lower perplexity, then lower source index, then lower
    destination index.
    """
    tokens = list(sentence.tokens)
    positions, kind = _candidate_positions(sentence.tags, pos_class)
    if not positions:
        raise NoCandidateError(f"no {pos_class or 'ADV/DET'} candidate in sentence")
    n = len(tokens)
    if n < 2:
        raise NoValidPositionError("sentence too short to reposition")

    fast = _fast_search(tokens, positions, scorer, n)
    if fast is not None:
        best_ppl, best_src, best_dst = fast
    else:
        moves: list[tuple[int, int]] = []
        variants: list[list[str]] = []
        for src in positions:
            for dst in range(n):
                if dst == src:
                    continue
                out = list(tokens)
                out.insert(dst, out.pop(src))
                if out == tokens:
                    continue
                moves.append((src, dst))
                variants.append(out)
        if not moves:
            raise NoValidPositionError("every reposition reproduces the original sentence")
        ppls = perplexities(scorer, variants)
        best_ppl, best_src, best_dst = min(
            (ppl, src, dst) for ppl, (src, dst) in zip(ppls, moves)
        )

    if best_src < 0:
        raise NoValidPositionError("every reposition reproduces the original sentence")
    tag_name = pos_class if pos_class is not None else ("ADV" if kind == "adverb" else "DET")
    candidate = RepositionCandidate(best_src, tag_name, tokens[best_src])
    moved = list(tokens)
    moved.insert(best_dst, moved.pop(best_src))
    return RepositionResult(
        tokens=tuple(moved),
        source_index=best_src,
        dest_index=best_dst,
        candidate=candidate,
        perplexity=best_ppl,
        candidate_kind=kind,
    )


def _fast_search(tokens, positions, scorer, n):
    """Dense-table numba search; returns None when not applicable."""
    if _search_kernel is None or not isinstance(scorer, BuiltinScorer):
        return None
    state = scorer.fast_state()
    if state is None:
        return None
    table, vocab_get, unk, v, order, bos, eos, max_len = state
    if n > max_len:
        return None
    ids_code = 0
    sig_code = 0
    mul = 1
    shift = 0
    seen: dict[str, int] = {}
    setdefault = seen.setdefault
    for i, tok in enumerate(tokens):
        ids_code += vocab_get(tok, unk) * mul
        mul *= v
        sig_code += setdefault(tok, i) << shift
        shift += 4
    bits = 0
    for i in positions:
        bits |= 1 << i
    return _search_kernel(ids_code, sig_code, bits, n, table, v, order, bos, eos)


def apply_badnet(tokens: Sequence[str], spec: TriggerSpec, rng: random.Random) -> list[str]:
    """Insert one lexicon token at a uniformly random position."""
    out = list(tokens)
    tok = rng.choice(spec.badnet_tokens)
    pos = rng.randint(0, len(out))
    out.insert(pos, tok)
    return out


def apply_addsent(tokens: Sequence[str], spec: TriggerSpec) -> list[str]:
    """Insert the configured phrase after the first sentence-final punctuation."""
    out = list(tokens)
    at = len(out)
    for i, tok in enumerate(out):
        if tok in _SENTENCE_FINAL:
            at = i + 1
            break
    return out[:at] + list(spec.addsent_tokens) + out[at:]
