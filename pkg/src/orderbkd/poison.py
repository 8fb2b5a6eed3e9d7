"""Dataset poisoning: select samples, apply a trigger, relabel, merge back.

Training-set poisoning replaces ``floor(rate * |D|)`` seeded-random samples
from the eligible pool with triggered, target-labeled versions; samples the
reposition trigger cannot touch (no adverb or determiner) are skipped and
replacements drawn until the quota is met or the pool runs dry, in which case
the shortfall is reported rather than silently absorbed. Test-set poisoning
converts every eligible sample whose label differs from the target.
"""

from __future__ import annotations

import math
import random
import warnings
from dataclasses import dataclass
from typing import Sequence

from orderbkd.corpus import LabeledExample, detokenize, tokenize
from orderbkd.lm import ScorerHandle
from orderbkd.tagger import TaggerModel, tag
from orderbkd.triggers import (
    NoCandidateError,
    NoValidPositionError,
    TriggerSpec,
    apply_addsent,
    apply_badnet,
    choose_best_reposition,
)
from orderbkd.util import derive_seed

SELECTION_MODES = ("non_target_only", "any")


class PoisonError(Exception):
    pass


@dataclass(frozen=True)
class PoisonRecord:
    """Full audit trail of one poisoned sample."""

    original_text: str
    poisoned_text: str
    trigger_kind: str
    candidate_kind: str  # adverb | determiner | none (insertion triggers)
    source_index: int | None
    dest_index: int | None
    original_label: int
    target_label: int

    def to_provenance(self) -> dict:
        return {
            "trigger": self.trigger_kind,
            "candidate_kind": self.candidate_kind,
            "src": self.source_index,
            "dst": self.dest_index,
            "orig_label": self.original_label,
            "orig_text": self.original_text,
        }

    @classmethod
    def from_provenance(cls, payload: dict, poisoned_text: str, target_label: int) -> "PoisonRecord":
        return cls(
            original_text=payload["orig_text"],
            poisoned_text=poisoned_text,
            trigger_kind=payload["trigger"],
            candidate_kind=payload["candidate_kind"],
            source_index=payload["src"],
            dest_index=payload["dst"],
            original_label=int(payload["orig_label"]),
            target_label=target_label,
        )


@dataclass(frozen=True)
class PoisonPlan:
    target_label: int
    rate: float
    seed: int
    trigger: TriggerSpec
    selection: str = "non_target_only"

    def __post_init__(self) -> None:
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"poisoning rate must be in [0, 1], got {self.rate}")
        if self.selection not in SELECTION_MODES:
            raise ValueError(f"selection must be one of {SELECTION_MODES}, got {self.selection!r}")


@dataclass
class PoisonStats:
    dataset_size: int
    requested: int
    poisoned: int
    adverb: int
    determiner: int
    skipped: int
    shortfall: int

    @property
    def realized_lambda(self) -> float:
        return self.poisoned / self.dataset_size if self.dataset_size else 0.0

    @property
    def realized_lambda1(self) -> float:
        return self.adverb / self.dataset_size if self.dataset_size else 0.0

    @property
    def realized_lambda2(self) -> float:
        return self.determiner / self.dataset_size if self.dataset_size else 0.0

    def to_dict(self) -> dict:
        return {
            "dataset_size": self.dataset_size,
            "requested": self.requested,
            "poisoned": self.poisoned,
            "adverb": self.adverb,
            "determiner": self.determiner,
            "skipped": self.skipped,
            "shortfall": self.shortfall,
            "realized_lambda": self.realized_lambda,
            "realized_lambda1": self.realized_lambda1,
            "realized_lambda2": self.realized_lambda2,
        }


def _apply_trigger(
    text: str,
    trigger: TriggerSpec,
    tagger: TaggerModel | None,
    scorer: ScorerHandle | None,
    rng: random.Random,
    pos_class: str | None = None,
) -> tuple[list[str], str, int | None, int | None]:
    """Returns (poisoned tokens, candidate kind, src, dst).

    Raises NoCandidateError / NoValidPositionError for untriggerable inputs
    under the reposition trigger.
    """
    tokens = list(tokenize(text).tokens)
    if trigger.kind == "orderbkd":
        if tagger is None or scorer is None:
            raise PoisonError("reposition trigger needs a tagger and a scorer")
        tagged = tag(tagger, tokens)
        result = choose_best_reposition(tagged, scorer, pos_class=pos_class)
        return list(result.tokens), result.candidate_kind, result.source_index, result.dest_index
    if trigger.kind == "badnet":
        return apply_badnet(tokens, trigger, rng), "none", None, None
    return apply_addsent(tokens, trigger), "none", None, None


def poison_dataset(
    train: Sequence[LabeledExample],
    plan: PoisonPlan,
    tagger: TaggerModel | None,
    scorer: ScorerHandle | None,
) -> tuple[list[LabeledExample], list[PoisonRecord], PoisonStats]:
    """Poison ``floor(rate * |train|)`` samples in place (replace, never append)."""
    if not train:
        raise PoisonError("training set is empty")
    requested = math.floor(plan.rate * len(train))
    if plan.selection == "any":
        eligible = list(range(len(train)))
    else:
        eligible = [i for i, ex in enumerate(train) if ex.label != plan.target_label]
    select_rng = random.Random(derive_seed(plan.seed, "poison.select"))
    order = select_rng.sample(eligible, len(eligible))
    trigger_rng = random.Random(derive_seed(plan.seed, "poison.trigger"))

    out = list(train)
    records: list[PoisonRecord] = []
    stats = PoisonStats(
        dataset_size=len(train), requested=requested, poisoned=0,
        adverb=0, determiner=0, skipped=0, shortfall=0,
    )
    if plan.rate > 0 and requested == 0:
        warnings.warn("poisoning rate > 0 selects zero samples at this dataset size; dataset unchanged")
        return out, records, stats

    for idx in order:
        if stats.poisoned == requested:
            break
        ex = train[idx]
        try:
            tokens, kind, src, dst = _apply_trigger(ex.text, plan.trigger, tagger, scorer, trigger_rng)
        except (NoCandidateError, NoValidPositionError):
            stats.skipped += 1
            continue
        poisoned_text = detokenize(tokens)
        if poisoned_text == ex.text:
            stats.skipped += 1
            continue
        record = PoisonRecord(
            original_text=ex.text,
            poisoned_text=poisoned_text,
            trigger_kind=plan.trigger.kind,
            candidate_kind=kind,
            source_index=src,
            dest_index=dst,
            original_label=ex.label,
            target_label=plan.target_label,
        )
        out[idx] = LabeledExample(id=ex.id, text=poisoned_text, label=plan.target_label, provenance=record)
        records.append(record)
        stats.poisoned += 1
        if kind == "adverb":
            stats.adverb += 1
        elif kind == "determiner":
            stats.determiner += 1

    stats.shortfall = requested - stats.poisoned
    if stats.shortfall:
        warnings.warn(
            f"poisoning pool exhausted: {stats.poisoned}/{requested} samples poisoned "
            f"({stats.skipped} skipped without candidates)"
        )
    return out, records, stats


def build_poisoned_testset(
    test: Sequence[LabeledExample],
    plan: PoisonPlan,
    tagger: TaggerModel | None,
    scorer: ScorerHandle | None,
) -> tuple[list[LabeledExample], int]:
    """Trigger-poison every test sample not already labeled with the target.

    Returns the poisoned list and the count of samples excluded for lack of a
    reposition candidate.
    """
    eligible = [ex for ex in test if ex.label != plan.target_label]
    if not eligible:
        raise PoisonError("no test samples with a non-target label to poison")
    trigger_rng = random.Random(derive_seed(plan.seed, "poison.test"))
    out: list[LabeledExample] = []
    excluded = 0
    for ex in eligible:
        try:
            tokens, kind, src, dst = _apply_trigger(ex.text, plan.trigger, tagger, scorer, trigger_rng)
        except (NoCandidateError, NoValidPositionError):
            excluded += 1
            continue
        poisoned_text = detokenize(tokens)
        record = PoisonRecord(
            original_text=ex.text,
            poisoned_text=poisoned_text,
            trigger_kind=plan.trigger.kind,
            candidate_kind=kind,
            source_index=src,
            dest_index=dst,
            original_label=ex.label,
            target_label=plan.target_label,
        )
        out.append(LabeledExample(id=ex.id, text=poisoned_text, label=plan.target_label, provenance=record))
    return out, excluded
