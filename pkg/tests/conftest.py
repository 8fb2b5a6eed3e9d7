import pytest

from orderbkd.lm import BuiltinScorer, train_lm


@pytest.fixture
def uniform_scorer():
    """Scorer whose next-token distribution is exactly uniform over 4 outcomes.

    Corpus counts: a=2, b=2, <unk>=2 (x and y fall under min_count), </s>=2,
    so every predictable token gets probability (2-d)/8 + d*(4/8)/4 = 1/4
    regardless of the discount. Any sentence then has perplexity exactly 4.
    """
    lm = train_lm([["a", "b", "x"], ["b", "a", "y"]], order=1, min_count=2)
    return BuiltinScorer(lm)
