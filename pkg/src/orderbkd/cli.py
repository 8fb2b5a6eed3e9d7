"""Command-line entry point.

Sub-commands are independently runnable and exchange only documented file
formats (TSV/JSONL datasets, JSON models, npz victim checkpoints, JSON
reports), so pipelines are resumable. Exit codes: 0 success, 1 validation
error, 2 runtime error, 3 completed with a poisoning shortfall.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from orderbkd.corpus import DatasetError, load_dataset, save_dataset, tokenize
from orderbkd.defense import calibrate_threshold
from orderbkd.experiment import (
    ConfigError,
    ExperimentConfig,
    StageError,
    build_scorer,
    build_tagger,
    render_pos_study,
    run_experiment,
    run_pos_study,
    _defended_predictions,
)
from orderbkd.lm import save_lm, train_lm
from orderbkd.metrics import attack_success_rate, clean_accuracy, render_report_table
from orderbkd.poison import PoisonPlan, build_poisoned_testset, poison_dataset
from orderbkd.tagger import save_tagger, train_tagger
from orderbkd.victim import load_victim, predict_example, save_victim, train_victim

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_SHORTFALL = 3


def _load_config(args) -> ExperimentConfig:
    path = Path(args.config)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from exc
    _apply_overrides(payload, args)
    return ExperimentConfig.from_dict(payload, base_dir=path.parent)


def _apply_overrides(payload: dict, args) -> None:
    if getattr(args, "seed", None) is not None:
        payload["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        payload["out_dir"] = str(Path(args.out).resolve())
    if getattr(args, "rate", None) is not None:
        payload["rate"] = args.rate
    if getattr(args, "target_label", None) is not None:
        payload["target_label"] = args.target_label
    if getattr(args, "attack", None) is not None:
        payload.setdefault("trigger", {})["kind"] = args.attack
    if getattr(args, "scorer", None) is not None:
        payload.setdefault("scorer", {})["kind"] = args.scorer
    if getattr(args, "defense", None) is not None:
        if args.defense == "none":
            payload["defense"] = None
        else:
            payload["defense"] = payload.get("defense") or {"name": "onion"}
            payload["defense"]["name"] = args.defense


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (overrides config out_dir)")
    p.add_argument("--scorer", choices=["builtin", "external"])
    p.add_argument("--attack", choices=["orderbkd", "badnet", "addsent"])
    p.add_argument("--defense", choices=["onion", "none"])
    p.add_argument("--rate", type=float)
    p.add_argument("--target-label", type=int, dest="target_label")


def cmd_run(args) -> int:
    config = _load_config(args)
    report = run_experiment(config)
    print(render_report_table([report]), end="")
    print(f"report written to {Path(config.out_dir) / 'report.json'}")
    if report.poison_stats.get("shortfall", 0) > 0:
        print(f"warning: poisoning shortfall of {report.poison_stats['shortfall']} samples", file=sys.stderr)
        return EXIT_SHORTFALL
    return EXIT_OK


def cmd_compare(args) -> int:
    config = _load_config(args)
    attacks = [a.strip() for a in args.attacks.split(",") if a.strip()]
    reports = []
    shortfall = False
    base_out = Path(config.out_dir)
    for attack in attacks:
        sub = dict(config.__dict__)
        sub["trigger"] = dict(config.trigger, kind=attack)
        sub["out_dir"] = str(base_out / attack)
        sub_config = ExperimentConfig(**sub)
        report = run_experiment(sub_config)
        reports.append(report)
        shortfall = shortfall or report.poison_stats.get("shortfall", 0) > 0
    table = render_report_table(reports)
    base_out.mkdir(parents=True, exist_ok=True)
    (base_out / "compare.txt").write_text(table, encoding="utf-8")
    (base_out / "compare.json").write_text(
        json.dumps([r.to_dict() for r in reports], sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(table, end="")
    return EXIT_SHORTFALL if shortfall else EXIT_OK


def cmd_pos_study(args) -> int:
    config = _load_config(args)
    classes = tuple(c.strip().upper() for c in args.classes.split(",") if c.strip())
    study = run_pos_study(config, classes=classes, sample_size=args.samples)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "pos_study.json").write_text(json.dumps(study, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    table = render_pos_study(study)
    (out_dir / "pos_study.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


def cmd_poison(args) -> int:
    config = _load_config(args)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _, train = load_dataset(config.train_path, config.data_format, class_count=config.class_count)
    tagger_model = build_tagger(config)
    scorer = build_scorer(config)
    plan = PoisonPlan(
        target_label=config.target_label, rate=config.rate, seed=config.seed,
        trigger=config.build_trigger_spec(), selection=config.selection,
    )
    poisoned, records, stats = poison_dataset(train, plan, tagger_model, scorer)
    save_dataset(poisoned, out_dir / "poisoned_train.jsonl")
    with (out_dir / "poison_records.jsonl").open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_provenance(), sort_keys=True, ensure_ascii=False) + "\n")
    (out_dir / "poison_stats.json").write_text(json.dumps(stats.to_dict(), sort_keys=True, indent=2) + "\n")
    print(json.dumps(stats.to_dict(), sort_keys=True, indent=2))
    return EXIT_SHORTFALL if stats.shortfall else EXIT_OK


def cmd_train_tagger(args) -> int:
    model = train_tagger(args.treebank, epochs=args.epochs, seed=args.seed)
    save_tagger(model, args.out)
    print(f"tagger written to {args.out} ({len(model.weights)} features, {len(model.tagdict)} dictionary words)")
    return EXIT_OK


def cmd_train_lm(args) -> int:
    lines = Path(args.corpus).read_text(encoding="utf-8").splitlines()
    sentences = [list(tokenize(line).tokens) for line in lines if line.strip()]
    lm = train_lm(sentences, order=args.order, min_count=args.min_count, discount=args.discount)
    save_lm(lm, args.out)
    print(f"language model written to {args.out} (order {lm.order}, vocab {lm.vocab_size})")
    return EXIT_OK


def cmd_train_victim(args) -> int:
    _, data = load_dataset(args.data, class_count=args.class_count)
    model = train_victim(
        data, epochs=args.epochs, learning_rate=args.learning_rate,
        seed=args.seed, batch_size=args.batch_size, class_count=args.class_count,
    )
    save_victim(model, args.out)
    print(f"victim written to {args.out} (classes {model.class_count}, final loss {model.meta['loss_curve'][-1] if model.meta['loss_curve'] else float('nan'):.4f})")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _load_config(args)
    model = load_victim(args.victim)
    _, test = load_dataset(config.test_path, config.data_format, class_count=config.class_count)
    tagger_model = build_tagger(config)
    scorer = build_scorer(config)
    plan = PoisonPlan(
        target_label=config.target_label, rate=config.rate, seed=config.seed,
        trigger=config.build_trigger_spec(), selection=config.selection,
    )
    poisoned_test, excluded = build_poisoned_testset(test, plan, tagger_model, scorer)
    result = {
        "asr": attack_success_rate(model, poisoned_test, config.target_label),
        "cacc": clean_accuracy(model, test),
        "poisoned_test_size": len(poisoned_test),
        "test_excluded_no_candidate": excluded,
    }
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "eval.json").write_text(json.dumps(result, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(result, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_defend(args) -> int:
    config = _load_config(args)
    model = load_victim(args.victim)
    _, dev = load_dataset(config.dev_path, config.data_format, class_count=config.class_count)
    _, test = load_dataset(config.test_path, config.data_format, class_count=config.class_count)
    tagger_model = build_tagger(config)
    scorer = build_scorer(config)
    plan = PoisonPlan(
        target_label=config.target_label, rate=config.rate, seed=config.seed,
        trigger=config.build_trigger_spec(), selection=config.selection,
    )
    poisoned_test, _ = build_poisoned_testset(test, plan, tagger_model, scorer)
    rate_cap = float((config.defense or {}).get("max_false_removal_rate", 0.05))
    threshold = calibrate_threshold(dev, scorer, rate_cap)
    defended_poisoned = _defended_predictions(model, poisoned_test, scorer, threshold)
    defended_clean = _defended_predictions(model, test, scorer, threshold)
    result = {
        "defense": "onion",
        "threshold": threshold,
        "max_false_removal_rate": rate_cap,
        "asr": sum(1 for p in defended_poisoned if p == config.target_label) / len(defended_poisoned),
        "cacc": sum(1 for p, ex in zip(defended_clean, test) if p == ex.label) / len(defended_clean),
        "undefended_asr": attack_success_rate(model, poisoned_test, config.target_label),
        "undefended_cacc": clean_accuracy(model, test),
    }
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "defend.json").write_text(json.dumps(result, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(result, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_gen_data(args) -> int:
    from orderbkd.synthdata import write_all

    paths = write_all(args.out, seed=args.seed)
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orderbkd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full pipeline: poison, train, evaluate, defend, report")
    _add_run_flags(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("compare", help="run several attacks under one config and tabulate")
    _add_run_flags(p)
    p.add_argument("--attacks", default="orderbkd,badnet,addsent")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("pos-study", help="delta-PPL / similarity per forced word class")
    _add_run_flags(p)
    p.add_argument("--samples", type=int, default=1500)
    p.add_argument("--classes", default="ADJ,DET,ADV,NOUN,VERB")
    p.set_defaults(fn=cmd_pos_study)

    p = sub.add_parser("poison", help="poison the training split only")
    _add_run_flags(p)
    p.set_defaults(fn=cmd_poison)

    p = sub.add_parser("train-tagger", help="train the averaged-perceptron tagger")
    p.add_argument("--treebank", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_train_tagger)

    p = sub.add_parser("train-lm", help="train the Kneser-Ney language model")
    p.add_argument("--corpus", required=True, help="plain text, one sentence per line")
    p.add_argument("--out", required=True)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--discount", type=float, default=0.75)
    p.add_argument("--min-count", type=int, default=1, dest="min_count")
    p.set_defaults(fn=cmd_train_lm)

    p = sub.add_parser("train-victim", help="train the hashed n-gram classifier")
    p.add_argument("--data", required=True, help="TSV or JSONL dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=13)
    p.add_argument("--learning-rate", type=float, default=0.1, dest="learning_rate")
    p.add_argument("--batch-size", type=int, default=32, dest="batch_size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--class-count", type=int, default=None, dest="class_count")
    p.set_defaults(fn=cmd_train_victim)

    p = sub.add_parser("eval", help="evaluate a victim checkpoint (ASR / CACC)")
    _add_run_flags(p)
    p.add_argument("--victim", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("defend", help="apply ONION at test time and re-evaluate")
    _add_run_flags(p)
    p.add_argument("--victim", required=True)
    p.set_defaults(fn=cmd_defend)

    p = sub.add_parser("gen-data", help="regenerate the bundled corpora")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_gen_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "gen-data" and args.seed is None:
        from orderbkd.synthdata import DEFAULT_SEED

        args.seed = DEFAULT_SEED
    try:
        return args.fn(args)
    except (ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StageError as exc:
        if isinstance(exc.cause, (ConfigError, DatasetError)) and exc.stage in ("validate", "load-data"):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
