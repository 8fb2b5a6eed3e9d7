"""End-to-end experiment pipeline driven by a declarative JSON config.

A run executes: load data -> build tagger and scorer -> poison the training
split -> train poisoned and clean victims -> build the poisoned test set ->
compute metrics -> optionally apply the ONION defense -> write the report
and all poisoned artifacts to the output directory. With the builtin scorer
the whole run is a pure function of (config, seed): report JSON is
byte-identical across repeats.

Every stage failure is wrapped in :class:`StageError` naming the stage, and a
``FAILED`` marker file is flushed next to any partial outputs.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from orderbkd.corpus import DatasetError, LabeledExample, load_dataset, save_dataset, tokenize
from orderbkd.defense import calibrate_threshold, onion_filter
from orderbkd.lm import BuiltinScorer, ExternalScorer, load_lm, train_lm
from orderbkd.metrics import (
    BowEmbedder,
    EvaluationReport,
    ExternalEmbedder,
    assemble_report,
    attack_success_rate,
    clean_accuracy,
    delta_perplexity,
    render_report_table,
    similarity,
)
from orderbkd.poison import PoisonPlan, build_poisoned_testset, poison_dataset
from orderbkd.tagger import load_tagger, tag, train_tagger
from orderbkd.triggers import NoCandidateError, NoValidPositionError, TriggerSpec, choose_best_reposition
from orderbkd.util import derive_seed, fingerprint
from orderbkd.victim import predict, train_victim

DEFAULT_VICTIM = {"epochs": 13, "learning_rate": 0.1, "batch_size": 32}
DEFAULT_SCORER = {"kind": "builtin", "order": 3, "discount": 0.75, "min_count": 1}


class ConfigError(Exception):
    """Invalid or incomplete experiment configuration."""


class StageError(Exception):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ExperimentConfig:
    train_path: str
    dev_path: str
    test_path: str
    target_label: int
    rate: float
    seed: int
    out_dir: str
    data_format: str = "tsv"
    class_count: int | None = None
    selection: str = "non_target_only"
    trigger: dict = field(default_factory=lambda: {"kind": "orderbkd"})
    scorer: dict = field(default_factory=lambda: dict(DEFAULT_SCORER))
    embedder: dict = field(default_factory=lambda: {"kind": "builtin_bow"})
    tagger: dict = field(default_factory=dict)
    victim: dict = field(default_factory=lambda: dict(DEFAULT_VICTIM))
    defense: dict | None = None

    @classmethod
    def from_dict(cls, payload: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = [k for k in ("train_path", "dev_path", "test_path", "target_label", "rate", "seed", "out_dir") if k not in payload]
        if missing:
            raise ConfigError(f"missing config keys: {missing}")
        cfg = cls(**payload)
        if base_dir is not None:
            for attr in ("train_path", "dev_path", "test_path", "out_dir"):
                setattr(cfg, attr, str((base_dir / getattr(cfg, attr)).resolve()))
            for section in (cfg.scorer, cfg.tagger):
                for key in ("corpus", "model", "treebank"):
                    if isinstance(section.get(key), str):
                        section[key] = str((base_dir / section[key]).resolve())
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from exc
        return cls.from_dict(payload, base_dir=path.parent)

    def validate(self) -> None:
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError(f"rate must be in [0, 1], got {self.rate}")
        if self.target_label < 0:
            raise ConfigError("target_label must be non-negative")
        if self.data_format not in ("tsv", "jsonl"):
            raise ConfigError(f"unknown data_format {self.data_format!r}")
        for name in ("train_path", "dev_path", "test_path"):
            p = getattr(self, name)
            if not Path(p).exists():
                raise ConfigError(f"{name} does not exist: {p}")
        kind = self.scorer.get("kind")
        if kind == "builtin":
            if "model" in self.scorer:
                if not Path(self.scorer["model"]).exists():
                    raise ConfigError(f"scorer model does not exist: {self.scorer['model']}")
            elif "corpus" in self.scorer:
                if not Path(self.scorer["corpus"]).exists():
                    raise ConfigError(f"scorer corpus does not exist: {self.scorer['corpus']}")
            else:
                raise ConfigError("builtin scorer needs 'corpus' or 'model'")
        elif kind == "external":
            if "command" not in self.scorer and "host" not in self.scorer:
                raise ConfigError("external scorer needs 'command' or 'host'/'port'")
        else:
            raise ConfigError(f"unknown scorer kind {kind!r}")
        if "model" in self.tagger:
            if not Path(self.tagger["model"]).exists():
                raise ConfigError(f"tagger model does not exist: {self.tagger['model']}")
        elif "treebank" in self.tagger:
            if not Path(self.tagger["treebank"]).exists():
                raise ConfigError(f"tagger treebank does not exist: {self.tagger['treebank']}")
        else:
            raise ConfigError("tagger needs 'model' or 'treebank'")
        if self.trigger.get("kind") not in ("orderbkd", "badnet", "addsent"):
            raise ConfigError(f"unknown trigger kind {self.trigger.get('kind')!r}")
        if self.defense is not None and self.defense.get("name") != "onion":
            raise ConfigError(f"unknown defense {self.defense.get('name')!r}")

    def fingerprint_payload(self) -> dict:
        payload = {
            "train_path": self.train_path,
            "dev_path": self.dev_path,
            "test_path": self.test_path,
            "data_format": self.data_format,
            "class_count": self.class_count,
            "target_label": self.target_label,
            "rate": self.rate,
            "selection": self.selection,
            "trigger": self.trigger,
            "scorer": self.scorer,
            "embedder": self.embedder,
            "tagger": self.tagger,
            "victim": self.victim,
            "defense": self.defense,
            "seed": self.seed,
        }
        return payload

    def build_trigger_spec(self) -> TriggerSpec:
        kind = self.trigger["kind"]
        kwargs: dict = {"kind": kind, "seed": derive_seed(self.seed, "trigger")}
        if kind == "badnet" and "tokens" in self.trigger:
            kwargs["badnet_tokens"] = tuple(self.trigger["tokens"])
        if kind == "addsent":
            sentence = self.trigger.get("sentence")
            if not sentence:
                raise ConfigError("addsent trigger requires a 'sentence' in the config")
            kwargs["addsent_tokens"] = tuple(tokenize(sentence).tokens)
        return TriggerSpec(**kwargs)


def build_tagger(config: ExperimentConfig):
    if "model" in config.tagger:
        return load_tagger(config.tagger["model"])
    return train_tagger(
        config.tagger["treebank"],
        epochs=int(config.tagger.get("epochs", 5)),
        seed=derive_seed(config.seed, "tagger"),
    )


def build_scorer(config: ExperimentConfig):
    spec = config.scorer
    if spec["kind"] == "builtin":
        if "model" in spec:
            return BuiltinScorer(load_lm(spec["model"]))
        corpus_lines = Path(spec["corpus"]).read_text(encoding="utf-8").splitlines()
        sentences = [list(tokenize(line).tokens) for line in corpus_lines if line.strip()]
        lm = train_lm(
            sentences,
            order=int(spec.get("order", 3)),
            min_count=int(spec.get("min_count", 1)),
            discount=float(spec.get("discount", 0.75)),
        )
        return BuiltinScorer(lm)
    if "command" in spec:
        return ExternalScorer.spawn(spec["command"])
    return ExternalScorer.connect(spec["host"], int(spec["port"]))


def build_embedder(config: ExperimentConfig, scorer):
    spec = config.embedder
    if spec.get("kind") == "builtin_bow":
        return BowEmbedder()
    if spec.get("kind") == "external":
        if spec.get("share_scorer"):
            if not isinstance(scorer, ExternalScorer):
                raise ConfigError("embedder.share_scorer requires an external scorer")
            return ExternalEmbedder(scorer)
        if "command" in spec:
            return ExternalEmbedder(ExternalScorer.spawn(spec["command"]))
        return ExternalEmbedder(ExternalScorer.connect(spec["host"], int(spec["port"])))
    raise ConfigError(f"unknown embedder kind {spec.get('kind')!r}")


def _defended_predictions(model, examples, scorer, threshold):
    out = []
    for ex in examples:
        tokens = list(tokenize(ex.text).tokens)
        if len(tokens) >= 2:
            tokens = onion_filter(tokens, scorer, threshold)
        out.append(predict(model, tokens)[0])
    return out


def run_experiment(config: ExperimentConfig) -> EvaluationReport:
    out_dir = Path(config.out_dir)
    stage = "validate"
    try:
        config.validate()
        out_dir.mkdir(parents=True, exist_ok=True)

        stage = "load-data"
        _, train = load_dataset(config.train_path, config.data_format, class_count=config.class_count)
        _, dev = load_dataset(config.dev_path, config.data_format, class_count=config.class_count)
        meta, test = load_dataset(config.test_path, config.data_format, class_count=config.class_count)
        if config.target_label >= meta.class_count:
            raise ConfigError(f"target_label {config.target_label} out of range for {meta.class_count} classes")

        stage = "build-tagger"
        tagger_model = build_tagger(config)

        stage = "build-scorer"
        scorer = build_scorer(config)

        try:
            stage = "poison-train"
            plan = PoisonPlan(
                target_label=config.target_label,
                rate=config.rate,
                seed=config.seed,
                trigger=config.build_trigger_spec(),
                selection=config.selection,
            )
            poisoned_train, records, stats = poison_dataset(train, plan, tagger_model, scorer)
            save_dataset(poisoned_train, out_dir / "poisoned_train.jsonl")
            with (out_dir / "poison_records.jsonl").open("w", encoding="utf-8") as fh:
                for rec in records:
                    fh.write(json.dumps(rec.to_provenance(), sort_keys=True, ensure_ascii=False) + "\n")

            stage = "train-victim"
            victim_seed = derive_seed(config.seed, "victim")
            vkw = {**DEFAULT_VICTIM, **config.victim}
            poisoned_model = train_victim(
                poisoned_train, epochs=int(vkw["epochs"]), learning_rate=float(vkw["learning_rate"]),
                seed=victim_seed, batch_size=int(vkw["batch_size"]), class_count=meta.class_count,
            )
            clean_model = train_victim(
                train, epochs=int(vkw["epochs"]), learning_rate=float(vkw["learning_rate"]),
                seed=victim_seed, batch_size=int(vkw["batch_size"]), class_count=meta.class_count,
            )

            stage = "poison-test"
            poisoned_test, excluded = build_poisoned_testset(test, plan, tagger_model, scorer)
            save_dataset(poisoned_test, out_dir / "poisoned_test.jsonl")

            stage = "evaluate"
            embedder = build_embedder(config, scorer)
            asr = attack_success_rate(poisoned_model, poisoned_test, config.target_label)
            cacc = clean_accuracy(poisoned_model, test)
            baseline = clean_accuracy(clean_model, test)
            control = attack_success_rate(clean_model, poisoned_test, config.target_label)
            pairs = [(ex.provenance.original_text, ex.text) for ex in poisoned_test]
            dppl = delta_perplexity(
                [list(tokenize(a).tokens) for a, _ in pairs],
                [list(tokenize(b).tokens) for _, b in pairs],
                scorer,
            )
            sims = [
                similarity(LabeledExample(id="", text=a, label=0), LabeledExample(id="", text=b, label=0), embedder)
                for a, b in pairs
            ]
            sim_mean = sum(sims) / len(sims)

            defense_block = None
            if config.defense is not None:
                stage = "defend"
                rate_cap = float(config.defense.get("max_false_removal_rate", 0.05))
                threshold = calibrate_threshold(dev, scorer, rate_cap)
                defended_poisoned = _defended_predictions(poisoned_model, poisoned_test, scorer, threshold)
                defended_clean = _defended_predictions(poisoned_model, test, scorer, threshold)
                defense_block = {
                    "name": "onion",
                    "max_false_removal_rate": rate_cap,
                    "threshold": threshold,
                    "asr": sum(1 for p in defended_poisoned if p == config.target_label) / len(defended_poisoned),
                    "cacc": sum(1 for p, ex in zip(defended_clean, test) if p == ex.label) / len(defended_clean),
                }

            stage = "report"
            report = assemble_report(
                attack=config.trigger["kind"],
                asr=asr,
                cacc=cacc,
                clean_baseline_acc=baseline,
                delta_ppl=dppl,
                similarity_mean=sim_mean,
                realized_lambda1=stats.realized_lambda1,
                realized_lambda2=stats.realized_lambda2,
                config_fingerprint=fingerprint(config.fingerprint_payload()),
                control_asr=control,
                defense=defense_block,
                scorer=scorer.describe(),
                embedder_kind=embedder.kind,
                poison_stats=stats.to_dict(),
                extras={"poisoned_test_size": len(poisoned_test), "test_excluded_no_candidate": excluded},
            )
            (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
            (out_dir / "report.txt").write_text(render_report_table([report]), encoding="utf-8")
            return report
        finally:
            if isinstance(scorer, ExternalScorer):
                scorer.close()
    except Exception as exc:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "FAILED").write_text(f"stage: {stage}\nerror: {exc}\n", encoding="utf-8")
        except OSError:
            pass
        if isinstance(exc, StageError):
            raise
        raise StageError(stage, exc) from exc


POS_STUDY_CLASSES = ("ADJ", "DET", "ADV", "NOUN", "VERB")


def run_pos_study(
    config: ExperimentConfig,
    classes: Sequence[str] = POS_STUDY_CLASSES,
    sample_size: int = 1500,
) -> dict:
    """Reposition each word class in turn and measure ΔPPL and similarity.

    Uses a seeded sample of the training split. Sentences lacking a token of
    the forced class are skipped (and counted). The summary flags a deviation
    when ADV does not achieve the smallest ΔPPL.
    """
    _, train = load_dataset(config.train_path, config.data_format, class_count=config.class_count)
    tagger_model = build_tagger(config)
    scorer = build_scorer(config)
    embedder = build_embedder(config, scorer)
    rng = random.Random(derive_seed(config.seed, "pos_study"))
    sample = rng.sample(train, min(sample_size, len(train)))

    tagged = [tag(tagger_model, list(tokenize(ex.text).tokens)) for ex in sample]
    results: dict[str, dict] = {}
    for cls in classes:
        clean_tokens: list[list[str]] = []
        poisoned_tokens: list[list[str]] = []
        sims: list[float] = []
        occurrences = 0
        skipped = 0
        for ts in tagged:
            occurrences += sum(1 for t in ts.tags if t == cls)
            try:
                moved = choose_best_reposition(ts, scorer, pos_class=cls)
            except (NoCandidateError, NoValidPositionError):
                skipped += 1
                continue
            clean_tokens.append(list(ts.tokens))
            poisoned_tokens.append(list(moved.tokens))
            a = LabeledExample(id="", text=" ".join(ts.tokens), label=0)
            b = LabeledExample(id="", text=" ".join(moved.tokens), label=0)
            sims.append(similarity(a, b, embedder))
        if clean_tokens:
            dppl = delta_perplexity(clean_tokens, poisoned_tokens, scorer)
            sim_mean = sum(sims) / len(sims)
        else:
            dppl = float("nan")
            sim_mean = float("nan")
        results[cls] = {
            "delta_ppl": dppl,
            "similarity_mean": sim_mean,
            "poisoned": len(clean_tokens),
            "skipped_no_candidate": skipped,
            "occurrences": occurrences,
        }
    if isinstance(scorer, ExternalScorer):
        scorer.close()

    evaluated = {c: r for c, r in results.items() if r["poisoned"] > 0}
    adv_smallest = (
        "ADV" in evaluated
        and all(evaluated["ADV"]["delta_ppl"] < r["delta_ppl"] for c, r in evaluated.items() if c != "ADV")
    )
    return {
        "sample_size": len(sample),
        "classes": results,
        "adv_has_smallest_delta_ppl": adv_smallest,
        "deviation_flagged": not adv_smallest,
        "scorer": config.scorer.get("kind", "builtin"),
    }


def render_pos_study(study: dict) -> str:
    lines = [f"{'class':<6} {'dPPL':>10} {'similarity':>11} {'poisoned':>9} {'occurrences':>12}"]
    for cls, row in study["classes"].items():
        lines.append(
            f"{cls:<6} {row['delta_ppl']:>+10.2f} {row['similarity_mean']:>11.4f} "
            f"{row['poisoned']:>9d} {row['occurrences']:>12d}"
        )
    if study["deviation_flagged"]:
        lines.append("deviation: ADV does not have the smallest delta-PPL under this scorer")
    return "\n".join(lines) + "\n"
