"""ONION defense: delete words whose removal drops sentence perplexity most.

Suspicion of token i is PPL(s) - PPL(s without i), computed against the
original sentence for every position at once; removal is simultaneous, not
iterative. The decision threshold is calibrated so that at most a configured
fraction of clean development tokens would be removed.
"""

from __future__ import annotations

import logging
import math
from typing import Sequence

from orderbkd.corpus import LabeledExample, tokenize
from orderbkd.lm import ScorerHandle

logger = logging.getLogger(__name__)

DEFAULT_FALSE_REMOVAL_RATE = 0.05


def suspicion_scores(tokens: Sequence[str], scorer: ScorerHandle) -> list[float]:
    """Per-token perplexity drops; requires at least two tokens."""
    tokens = list(tokens)
    n = len(tokens)
    if n < 2:
        raise ValueError("suspicion scores need at least two tokens")
    variants = [tokens] + [tokens[:i] + tokens[i + 1 :] for i in range(n)]
    logprobs = scorer.sequence_logprobs(variants)
    base = math.exp(-logprobs[0] / (n + 1))
    return [base - math.exp(-lp / n) for lp in logprobs[1:]]


def onion_filter(tokens: Sequence[str], scorer: ScorerHandle, threshold: float) -> list[str]:
    """Drop every token with suspicion above ``threshold`` in a single pass.

    At least one token is always retained: if all exceed the threshold, only
    the single most suspicious one is removed.
    """
    tokens = list(tokens)
    scores = suspicion_scores(tokens, scorer)
    flagged = [i for i, s in enumerate(scores) if s > threshold]
    if len(flagged) == len(tokens):
        worst = max(range(len(tokens)), key=lambda i: (scores[i], -i))
        logger.info("onion: all %d tokens exceed threshold %.4g; removing only the worst", len(tokens), threshold)
        flagged = [worst]
    drop = set(flagged)
    return [t for i, t in enumerate(tokens) if i not in drop]


def calibrate_threshold(
    clean_dev: Sequence[LabeledExample],
    scorer: ScorerHandle,
    max_false_removal_rate: float = DEFAULT_FALSE_REMOVAL_RATE,
) -> float:
    """Smallest threshold removing at most the given fraction of clean tokens."""
    if not clean_dev:
        raise ValueError("calibration needs a non-empty clean dev set")
    if not 0.0 <= max_false_removal_rate <= 1.0:
        raise ValueError("max_false_removal_rate must be in [0, 1]")
    scores: list[float] = []
    for ex in clean_dev:
        tokens = list(tokenize(ex.text).tokens)
        if len(tokens) >= 2:
            scores.extend(suspicion_scores(tokens, scorer))
    if not scores:
        raise ValueError("no dev sentence long enough to score")
    return threshold_from_scores(scores, max_false_removal_rate)


def threshold_from_scores(scores: Sequence[float], max_false_removal_rate: float) -> float:
    """Smallest t such that the fraction of ``scores`` strictly above t is allowed.

    With k = floor(rate * n) removals allowed, that is the (k+1)-th largest
    score; rate 0 therefore returns the maximum score.
    """
    allowed = math.floor(max_false_removal_rate * len(scores))
    ordered = sorted(scores, reverse=True)
    if allowed >= len(ordered):
        return ordered[-1] - 1.0
    return ordered[allowed]
