"""Evaluation metrics and report assembly.

The builtin embedder represents a text by its token-count vector, so cosine
similarity equals exactly 1.0 whenever token multisets match; a reposition
never changes the multiset while the insertion baselines always do, which
turns the attack's stealth claim into an arithmetic identity at desk scale.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

from orderbkd.corpus import LabeledExample, tokenize
from orderbkd.lm import ExternalScorer, ScorerHandle
from orderbkd.victim import VictimModel, predict_example


class MetricError(Exception):
    pass


def attack_success_rate(
    model: VictimModel, poisoned_test: Sequence[LabeledExample], target_label: int
) -> float:
    """Fraction of poisoned samples classified as the target label."""
    if not poisoned_test:
        raise MetricError("attack_success_rate: empty poisoned test set")
    hits = sum(1 for ex in poisoned_test if predict_example(model, ex) == target_label)
    return hits / len(poisoned_test)


def clean_accuracy(model: VictimModel, clean_test: Sequence[LabeledExample]) -> float:
    if not clean_test:
        raise MetricError("clean_accuracy: empty test set")
    hits = sum(1 for ex in clean_test if predict_example(model, ex) == ex.label)
    return hits / len(clean_test)


def delta_perplexity(
    clean: Sequence[Sequence[str]], poisoned: Sequence[Sequence[str]], scorer: ScorerHandle
) -> float:
    """mean(PPL(poisoned)) - mean(PPL(clean)) over aligned pairs."""
    if not clean or not poisoned:
        raise MetricError("delta_perplexity: empty input")
    if len(clean) != len(poisoned):
        raise MetricError(f"delta_perplexity: length mismatch ({len(clean)} vs {len(poisoned)})")
    clean_lps = scorer.sequence_logprobs(clean)
    poisoned_lps = scorer.sequence_logprobs(poisoned)
    clean_mean = sum(math.exp(-lp / (len(t) + 1)) for t, lp in zip(clean, clean_lps)) / len(clean)
    poisoned_mean = sum(math.exp(-lp / (len(t) + 1)) for t, lp in zip(poisoned, poisoned_lps)) / len(poisoned)
    return poisoned_mean - clean_mean


class BowEmbedder:
    """Token-count-vector cosine; exact 1.0 iff the count vectors are parallel."""

    kind = "builtin_bow"

    def similarity(self, text_a: str, text_b: str) -> float:
        a = Counter(tokenize(text_a).tokens)
        b = Counter(tokenize(text_b).tokens)
        if not a and not b:
            return 1.0
        dot = sum(c * b[t] for t, c in a.items())
        sa = sum(c * c for c in a.values())
        sb = sum(c * c for c in b.values())
        if sa == 0 or sb == 0:
            return 0.0
        if dot * dot == sa * sb:  # exact integer test for parallel vectors
            return 1.0
        return dot / math.sqrt(sa * sb)

    def describe(self) -> dict:
        return {"kind": self.kind}


class ExternalEmbedder:
    """Embeds through the scorer protocol's ``embed`` op; cosine of unit vectors."""

    kind = "external"

    def __init__(self, scorer: ExternalScorer):
        self._scorer = scorer

    def similarity(self, text_a: str, text_b: str) -> float:
        va = self._scorer.embed(text_a)
        vb = self._scorer.embed(text_b)
        dot = sum(x * y for x, y in zip(va, vb))
        na = math.sqrt(sum(x * x for x in va))
        nb = math.sqrt(sum(y * y for y in vb))
        if na == 0 or nb == 0:
            return 0.0
        return dot / (na * nb)

    def describe(self) -> dict:
        return {"kind": self.kind, **self._scorer.describe()}


EmbedderHandle = BowEmbedder | ExternalEmbedder


def similarity(original: LabeledExample, poisoned: LabeledExample, embedder: EmbedderHandle) -> float:
    return embedder.similarity(original.text, poisoned.text)


@dataclass
class EvaluationReport:
    """One attack/defense configuration's results (the summary-table row)."""

    attack: str
    asr: float
    cacc: float
    clean_baseline_acc: float
    delta_ppl: float
    similarity_mean: float
    realized_lambda1: float
    realized_lambda2: float
    config_fingerprint: str
    control_asr: float | None = None
    defense: dict | None = None
    scorer: dict = field(default_factory=dict)
    embedder_kind: str = "builtin_bow"
    poison_stats: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("asr", "cacc", "clean_baseline_acc"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise MetricError(f"{name} out of range: {value}")
        if not math.isfinite(self.delta_ppl):
            raise MetricError("delta_ppl must be finite")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, payload: dict) -> "EvaluationReport":
        return cls(**payload)

    @classmethod
    def from_json(cls, text: str) -> "EvaluationReport":
        return cls.from_dict(json.loads(text))


_REQUIRED_REPORT_FIELDS = (
    "attack",
    "asr",
    "cacc",
    "clean_baseline_acc",
    "delta_ppl",
    "similarity_mean",
    "realized_lambda1",
    "realized_lambda2",
    "config_fingerprint",
)


def assemble_report(**parts) -> EvaluationReport:
    """Build a report, failing loudly on any missing constituent metric."""
    missing = [name for name in _REQUIRED_REPORT_FIELDS if parts.get(name) is None]
    if missing:
        raise MetricError(f"missing report constituents: {', '.join(missing)}")
    return EvaluationReport(**parts)


def render_report_table(reports: Sequence[EvaluationReport]) -> str:
    """Aligned text table, one row per attack, in the order given."""
    headers = ["attack", "ASR", "CACC", "clean-acc", "dPPL", "sim", "l1", "l2", "def-ASR", "def-CACC"]
    rows = []
    for r in reports:
        rows.append([
            r.attack,
            f"{r.asr:.3f}",
            f"{r.cacc:.3f}",
            f"{r.clean_baseline_acc:.3f}",
            f"{r.delta_ppl:+.2f}",
            f"{r.similarity_mean:.3f}",
            f"{r.realized_lambda1:.3f}",
            f"{r.realized_lambda2:.3f}",
            f"{r.defense['asr']:.3f}" if r.defense else "-",
            f"{r.defense['cacc']:.3f}" if r.defense else "-",
        ])
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    return "\n".join(lines) + "\n"
