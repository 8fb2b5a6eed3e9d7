"""Toolkit for studying word-reposition backdoor attacks on text classifiers.

The attack moves a single adverb (or determiner, when no adverb exists) to
the position that minimizes sentence perplexity under a language model.
The package bundles everything needed to run it end to end at desk scale:
tokenization and dataset handling, a trainable universal-POS tagger, a
Kneser-Ney n-gram language model (with a protocol client for external
transformer scorers), trigger construction including BadNet / AddSent
baselines, dataset poisoning, an order-sensitive victim classifier, the
ONION perplexity defense, and evaluation metrics with report assembly.
"""

from orderbkd.corpus import (
    DatasetMeta,
    LabeledExample,
    TokenSequence,
    detokenize,
    load_dataset,
    save_dataset,
    tokenize,
)
from orderbkd.lm import BuiltinScorer, ExternalScorer, LanguageModel, perplexity, sequence_logprob, train_lm
from orderbkd.tagger import TaggedSentence, TaggerModel, tag, train_tagger

__all__ = [
    "BuiltinScorer",
    "DatasetMeta",
    "ExternalScorer",
    "LabeledExample",
    "LanguageModel",
    "TaggedSentence",
    "TaggerModel",
    "TokenSequence",
    "detokenize",
    "load_dataset",
    "perplexity",
    "save_dataset",
    "sequence_logprob",
    "tag",
    "tokenize",
    "train_lm",
]

__version__ = "0.1.0"
