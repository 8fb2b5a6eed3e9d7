"""Deterministic generator for the bundled corpora.

Three artifacts share one movie-review grammar:

* a labeled sentiment dataset (train/dev/test TSV splits),
* a background corpus for language-model training, and
* a universal-POS treebank for tagger training.

The background corpus is a superset of the review grammar: it additionally
places adverbs sentence-initially, before determiners, before verbs, and in
second conjuncts, which the labeled reviews never do. A language model
trained on it therefore recognizes several natural adverb placements beyond
the ones the classifier sees in clean training text.

Everything is drawn from ``random.Random`` with a fixed seed, so regenerated
files are byte-identical.
"""

from __future__ import annotations

import random
from pathlib import Path

from orderbkd.corpus import LabeledExample, detokenize

DEFAULT_SEED = 20240613

DETS = ("the", "this", "that", "its", "his", "her", "another", "every")

SUBJECT_NOUNS = (
    "film", "movie", "story", "plot", "script", "cast", "acting", "direction",
    "dialogue", "ending", "pacing", "comedy", "drama", "thriller", "documentary",
    "performance", "sequel", "premise", "humor", "soundtrack", "screenplay",
    "feature", "picture", "narrative", "adaptation", "production", "finale",
    "montage", "cinematography", "score",
)

OBJECT_NOUNS = (
    "performance", "story", "premise", "finale", "picture", "tale", "ride",
    "journey", "experience", "portrait", "mystery", "romance", "adventure",
)

POS_ADJS = (
    "great", "wonderful", "brilliant", "moving", "funny", "charming", "smart",
    "gorgeous", "touching", "delightful", "inventive", "gripping", "fresh",
    "warm", "thrilling", "clever", "engaging", "satisfying", "memorable", "powerful",
)

NEG_ADJS = (
    "dull", "boring", "tedious", "clumsy", "bland", "shallow", "lifeless",
    "messy", "stale", "annoying", "hollow", "forgettable", "sloppy", "grim",
    "lazy", "flat", "tiresome", "cheap", "muddled", "pointless",
)

POS_NOUNS = ("masterpiece", "gem", "triumph", "delight", "treasure", "marvel", "winner", "joy", "treat", "charmer")
NEG_NOUNS = ("mess", "bore", "disaster", "failure", "chore", "slog", "dud", "misfire", "letdown", "snooze")

ADVS = (
    "truly", "really", "simply", "quite", "surprisingly", "utterly", "genuinely",
    "thoroughly", "somewhat", "rather", "absolutely", "remarkably", "oddly",
    "strangely", "completely", "nearly", "brilliantly", "frankly", "certainly", "deeply",
)

# Large pool of label-neutral attributive adjectives. Each type is therefore
# individually improbable under the language model, which anchors the upper
# tail of clean-text suspicion scores during defense calibration.
RARE_ADJS = (
    "animated", "musical", "historical", "dystopian", "minimalist", "nautical",
    "operatic", "gothic", "pastoral", "silent", "subtitled", "futuristic",
    "nostalgic", "surreal", "whimsical", "melancholic", "atmospheric",
    "experimental", "biographical", "satirical", "episodic", "allegorical",
    "meditative", "monochrome", "baroque", "victorian", "medieval", "tropical",
    "arctic", "suburban", "rural", "urban", "coastal", "alpine", "oceanic",
    "lunar", "cosmic", "digital", "vintage", "retro", "postwar", "wartime",
    "colonial", "industrial", "agrarian", "nomadic", "maritime", "culinary",
    "botanical", "geological", "astronomical", "mythological", "interstellar",
    "subterranean", "amphibious", "orchestral", "choral", "acoustic",
    "panoramic", "widescreen", "handheld", "improvised", "scripted", "dubbed",
    "restored", "remastered", "abridged", "serialized", "bilingual",
    "multilingual", "regional", "provincial", "metropolitan", "continental",
    "nordic", "mediterranean", "insular", "equatorial", "polar",
    "french", "italian", "japanese", "korean", "brazilian", "canadian",
    "mexican", "spanish", "german", "swedish", "danish", "polish", "turkish",
    "indian", "egyptian", "moroccan", "peruvian", "chilean", "icelandic",
    "norwegian", "finnish", "austrian", "belgian", "dutch", "portuguese",
    "greek", "hungarian", "czech", "romanian", "thai", "vietnamese",
    "malaysian", "indonesian", "filipino", "australian", "argentine",
    "colombian", "cuban", "jamaican", "kenyan", "nigerian", "ghanaian",
    "ethiopian", "tunisian", "israeli", "lebanese", "iranian", "mongolian",
    "tibetan", "nepalese", "bengali", "punjabi", "tamil", "persian",
    "balkan", "baltic", "slavic", "celtic", "gaelic", "flemish", "bavarian",
    "venetian", "sicilian", "tuscan", "parisian", "andalusian", "catalan",
)

COPULAS = ("is", "was")
LINKING_VERBS = ("feels", "seems", "looks", "remains")
TRANS_VERBS = ("delivers", "offers", "builds", "crafts", "weaves", "tells", "paints", "captures")
PAST_PARTICIPLES = ("updated", "improved", "crafted", "directed", "written", "composed", "reworked", "assembled")
PROPNS = ("parker", "bergman", "kurosawa", "varda", "hitchcock", "almodovar", "fellini", "tarkovsky")

FILLER_VERBS = ("watched", "enjoyed", "saw", "revisited", "remembered", "discussed")


def _an(word: str) -> str:
    return "an" if word[0] in "aeiou" else "a"


class _Grammar:
    """Builds (tokens, tags, label) triples; label is None for unlabeled text."""

    def __init__(self, rng: random.Random):
        self.rng = rng

    # -- shared pieces ------------------------------------------------------

    def _subject(self, rare_p: float = 0.55) -> tuple[list[str], list[str]]:
        rng = self.rng
        det = rng.choice(DETS)
        tokens, tags = [det], ["DET"]
        if rng.random() < rare_p:
            tokens.append(rng.choice(RARE_ADJS))
            tags.append("ADJ")
        tokens.append(rng.choice(SUBJECT_NOUNS))
        tags.append("NOUN")
        return tokens, tags

    def _polar_adj(self, label: int) -> str:
        return self.rng.choice(POS_ADJS if label else NEG_ADJS)

    def _polar_noun(self, label: int) -> str:
        return self.rng.choice(POS_NOUNS if label else NEG_NOUNS)

    def _end(self, label: int | None) -> tuple[str, str]:
        if label == 1 and self.rng.random() < 0.15:
            return "!", "PUNCT"
        return ".", "PUNCT"

    # -- review-domain templates (adverbs only directly before an adjective) --

    def review(self, with_adverb: bool = True) -> tuple[list[str], list[str], int]:
        label = self.rng.randint(0, 1)
        if not with_adverb:
            return self._review_no_adverb(label)
        kind = self.rng.choice(("copula", "linking", "it_is", "this_is", "transitive"))
        if kind == "copula":
            return self._predicate(label, self.rng.choice(COPULAS), "AUX")
        if kind == "linking":
            return self._predicate(label, self.rng.choice(LINKING_VERBS), "VERB")
        if kind == "it_is":
            return self._pronoun_object(label, "it")
        if kind == "this_is":
            return self._pronoun_object(label, "this")
        return self._transitive(label)

    def _predicate(self, label, verb, verb_tag):
        tokens, tags = self._subject()
        tokens += [verb, self.rng.choice(ADVS), self._polar_adj(label)]
        tags += [verb_tag, "ADV", "ADJ"]
        if self.rng.random() < 0.5:
            tokens += ["and", self._polar_adj(label)]
            tags += ["CCONJ", "ADJ"]
        p, pt = self._end(label)
        return tokens + [p], tags + [pt], label

    def _pronoun_object(self, label, pron):
        adj = self._polar_adj(label)
        tokens = [pron, self.rng.choice(COPULAS)]
        tags = ["PRON", "AUX"]
        rest = [self.rng.choice(ADVS), adj]
        rest_tags = ["ADV", "ADJ"]
        if self.rng.random() < 0.4:
            rest.append(self.rng.choice(RARE_ADJS))
            rest_tags.append("ADJ")
        noun = self.rng.choice(OBJECT_NOUNS)
        art = _an(rest[0])
        tokens += [art] + rest + [noun]
        tags += ["DET"] + rest_tags + ["NOUN"]
        p, pt = self._end(label)
        return tokens + [p], tags + [pt], label

    def _transitive(self, label):
        tokens, tags = self._subject(rare_p=0.35)
        adj = self._polar_adj(label)
        adv = self.rng.choice(ADVS)
        noun = self.rng.choice(OBJECT_NOUNS)
        tokens += [self.rng.choice(TRANS_VERBS), _an(adv), adv, adj, noun]
        tags += ["VERB", "DET", "ADV", "ADJ", "NOUN"]
        p, pt = self._end(label)
        return tokens + [p], tags + [pt], label

    def _review_no_adverb(self, label):
        if self.rng.random() < 0.6:
            noun = self._polar_noun(label)
            tokens, tags = self._subject()
            tokens += [self.rng.choice(COPULAS), _an(noun), noun]
            tags += ["AUX", "DET", "NOUN"]
        else:
            tokens, tags = self._subject()
            tokens += [self.rng.choice(COPULAS), self._polar_adj(label)]
            tags += ["AUX", "ADJ"]
        p, pt = self._end(label)
        return tokens + [p], tags + [pt], label

    # -- background-only templates (extra natural adverb placements) ---------

    def background(self) -> tuple[list[str], list[str]]:
        rng = self.rng
        roll = rng.random()
        if roll < 0.52:
            tokens, tags, _ = self.review(with_adverb=rng.random() >= 0.06)
            return tokens, tags
        if roll < 0.64:
            return self._front_adverb(comma=False)
        if roll < 0.68:
            return self._front_adverb(comma=True)
        if roll < 0.77:
            return self._adv_before_article()
        if roll < 0.86:
            return self._adv_before_verb()
        if roll < 0.92:
            return self._conjunct_adverb()
        if roll < 0.96:
            return self._filler()
        return self._proper_noun()

    def _front_adverb(self, comma: bool):
        label = self.rng.randint(0, 1)
        tokens = [self.rng.choice(ADVS)]
        tags = ["ADV"]
        if comma:
            tokens.append(",")
            tags.append("PUNCT")
        subj_t, subj_g = self._subject(rare_p=0.4)
        tokens += subj_t + [self.rng.choice(COPULAS), self._polar_adj(label), "."]
        tags += subj_g + ["AUX", "ADJ", "PUNCT"]
        return tokens, tags

    def _adv_before_article(self):
        label = self.rng.randint(0, 1)
        adj = self._polar_adj(label)
        adv = self.rng.choice(ADVS)
        pron = self.rng.choice(("it", "this"))
        tokens = [pron, self.rng.choice(COPULAS), adv, _an(adj), adj, self.rng.choice(OBJECT_NOUNS), "."]
        tags = ["PRON", "AUX", "ADV", "DET", "ADJ", "NOUN", "PUNCT"]
        return tokens, tags

    def _adv_before_verb(self):
        label = self.rng.randint(0, 1)
        tokens, tags = self._subject(rare_p=0.35)
        adj = self._polar_adj(label)
        tokens += [self.rng.choice(ADVS), self.rng.choice(TRANS_VERBS), _an(adj), adj, self.rng.choice(OBJECT_NOUNS), "."]
        tags += ["ADV", "VERB", "DET", "ADJ", "NOUN", "PUNCT"]
        return tokens, tags

    def _conjunct_adverb(self):
        label = self.rng.randint(0, 1)
        tokens, tags = self._subject(rare_p=0.4)
        tokens += [self.rng.choice(COPULAS), self._polar_adj(label), "and",
                   self.rng.choice(ADVS), self._polar_adj(label), "."]
        tags += ["AUX", "ADJ", "CCONJ", "ADV", "ADJ", "PUNCT"]
        return tokens, tags

    def _filler(self):
        rng = self.rng
        pron = rng.choice(("i", "we"))
        variant = rng.random()
        if variant < 0.4:
            tokens = [pron, rng.choice(FILLER_VERBS), "this", rng.choice(("movie", "film")), "at", "home", "."]
            tags = ["PRON", "VERB", "DET", "NOUN", "ADP", "NOUN", "PUNCT"]
        elif variant < 0.7:
            tokens = [pron, rng.choice(FILLER_VERBS), "this", rng.choice(("movie", "film")), "."]
            tags = ["PRON", "VERB", "DET", "NOUN", "PUNCT"]
        else:
            tokens = ["everyone", "talked", "about", "the", rng.choice(("ending", "finale", "soundtrack")), "."]
            tags = ["PRON", "VERB", "ADP", "DET", "NOUN", "PUNCT"]
        return tokens, tags

    def _proper_noun(self):
        rng = self.rng
        name = rng.choice(PROPNS)
        tokens = ["mr", ".", name] if rng.random() < 0.4 else [name]
        tags = ["PROPN", "PUNCT", "PROPN"] if len(tokens) == 3 else ["PROPN"]
        tokens += ["has", rng.choice(ADVS), rng.choice(PAST_PARTICIPLES), "his", rng.choice(SUBJECT_NOUNS), "."]
        tags += ["AUX", "ADV", "VERB", "DET", "NOUN", "PUNCT"]
        return tokens, tags


ADVERB_COVERAGE = 0.94  # share of labeled reviews containing an adverb


def generate_dataset(
    n_train: int = 4400,
    n_dev: int = 560,
    n_test: int = 920,
    seed: int = DEFAULT_SEED,
) -> dict[str, list[LabeledExample]]:
    """Labeled review splits with unique texts across all splits."""
    rng = random.Random(seed)
    grammar = _Grammar(rng)
    seen: set[str] = set()
    splits: dict[str, list[LabeledExample]] = {"train": [], "dev": [], "test": []}
    quotas = (("train", n_train), ("dev", n_dev), ("test", n_test))
    for split, quota in quotas:
        rows = splits[split]
        while len(rows) < quota:
            with_adverb = rng.random() < ADVERB_COVERAGE
            tokens, _, label = grammar.review(with_adverb=with_adverb)
            text = detokenize(tokens)
            if text in seen:
                continue
            seen.add(text)
            rows.append(LabeledExample(id=f"{split}-{len(rows):06d}", text=text, label=label))
    return splits

def generate_background_corpus(n_sentences: int = 10000, seed: int = DEFAULT_SEED) -> list[str]:
    rng = random.Random(seed + 1)
    grammar = _Grammar(rng)
    return [detokenize(grammar.background()[0]) for _ in range(n_sentences)]


def generate_treebank(n_sentences: int = 900, seed: int = DEFAULT_SEED) -> list[list[tuple[str, str]]]:
    rng = random.Random(seed + 2)
    grammar = _Grammar(rng)
    out = []
    for _ in range(n_sentences):
        tokens, tags = grammar.background()
        out.append(list(zip(tokens, tags)))
    return out


def format_conllu(sentences: list[list[tuple[str, str]]]) -> str:
    lines: list[str] = []
    for n, sent in enumerate(sentences, start=1):
        lines.append(f"# sent_id = {n}")
        lines.append("# text = " + detokenize(tok for tok, _ in sent))
        for i, (form, upos) in enumerate(sent, start=1):
            lines.append(f"{i}\t{form}\t_\t{upos}\t_\t_\t0\t_\t_\t_")
        lines.append("")
    return "\n".join(lines) + "\n"


def write_all(
    out_dir: str | Path,
    seed: int = DEFAULT_SEED,
    n_train: int = 4400,
    n_dev: int = 560,
    n_test: int = 920,
    n_background: int = 10000,
    n_treebank: int = 900,
    treebank_holdout: float = 0.15,
) -> dict[str, Path]:
    """Write every bundled artifact; returns the path of each file."""
    from orderbkd.corpus import save_dataset

    out_dir = Path(out_dir)
    (out_dir / "treebank").mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    splits = generate_dataset(n_train=n_train, n_dev=n_dev, n_test=n_test, seed=seed)
    for split, examples in splits.items():
        paths[split] = out_dir / f"{split}.tsv"
        save_dataset(examples, paths[split])

    background = generate_background_corpus(n_sentences=n_background, seed=seed)
    paths["background"] = out_dir / "background.txt"
    paths["background"].write_text("\n".join(background) + "\n", encoding="utf-8")

    treebank = generate_treebank(n_sentences=n_treebank, seed=seed)
    cut = int(len(treebank) * (1.0 - treebank_holdout))
    paths["treebank_train"] = out_dir / "treebank" / "train.conllu"
    paths["treebank_heldout"] = out_dir / "treebank" / "heldout.conllu"
    paths["treebank_train"].write_text(format_conllu(treebank[:cut]), encoding="utf-8")
    paths["treebank_heldout"].write_text(format_conllu(treebank[cut:]), encoding="utf-8")

    # Small splits for quick smoke runs; same grammar, offset seed.
    (out_dir / "mini").mkdir(exist_ok=True)
    mini = generate_dataset(n_train=120, n_dev=60, n_test=80, seed=seed + 7)
    for split, examples in mini.items():
        paths[f"mini_{split}"] = out_dir / "mini" / f"{split}.tsv"
        save_dataset(examples, paths[f"mini_{split}"])
    return paths
