"""Command-line entry points: train, eval, inspect."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import embeddings as emb_mod
from . import ingest, model, patterns, training
from .embeddings import Vocab

ENV_PREFIX = "DEPCONV_"

# TrainConfig fields settable from config file, environment, or flags
_CONFIG_FIELDS = {
    "batch_size": int,
    "max_epochs": int,
    "patience": int,
    "dropout": float,
    "rho": float,
    "eps": float,
    "seed": int,
    "precision": int,
    "templates": str,
    "filters_per_template": int,
    "embed_dim": int,
    "activation": str,
    "dev_fraction": float,
}


class CliError(ValueError):
    pass


def resolve_config(args) -> training.TrainConfig:
    """Merge defaults < config file < DEPCONV_* env vars < explicit flags."""
    values: dict = {}
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        with open(cfg_path, encoding="utf-8") as f:
            file_cfg = json.load(f)
        for key, val in file_cfg.items():
            if key in _CONFIG_FIELDS:
                values[key] = _CONFIG_FIELDS[key](val)
    for key, cast in _CONFIG_FIELDS.items():
        env = os.environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            values[key] = cast(env)
    for key in _CONFIG_FIELDS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return training.TrainConfig(**values)


def _load_embeddings(args, vocab: Vocab, config: training.TrainConfig):
    if getattr(args, "random_embeddings", False):
        return emb_mod.random_embeddings(vocab, config.embed_dim, config.seed)
    path = getattr(args, "embeddings", None)
    if not path:
        raise CliError(
            "no embedding source: pass --embeddings FILE or --random-embeddings"
        )
    if not os.path.exists(path):
        raise CliError(f"embedding file not found: {path}")
    return emb_mod.load_pretrained(path, vocab, seed=config.seed,
                                   d=config.embed_dim)


def _write_run_config(out_dir: Path, config: training.TrainConfig, args) -> None:
    echo = {k: getattr(config, k) for k in _CONFIG_FIELDS}
    echo.update({
        "data": args.data,
        "labels": args.labels,
        "embeddings": getattr(args, "embeddings", None),
        "random_embeddings": getattr(args, "random_embeddings", False),
        "mode": getattr(args, "mode", "single"),
        "folds": getattr(args, "folds", None),
    })
    with open(out_dir / "config.json", "w", encoding="utf-8") as f:
        json.dump(echo, f, indent=2)


def cmd_train(args) -> int:
    config = resolve_config(args)
    dataset = ingest.load_corpus(args.data, args.labels)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_run_config(out_dir, config, args)
    ingest.write_label_map(out_dir / "label_map.json", dataset.label_names)
    vocab = Vocab.build(dataset.vocab_counts)
    embeddings = _load_embeddings(args, vocab, config)

    if args.mode == "mr-cv":
        folds = args.folds or 10
        mean_acc, reports = training.cross_validate(dataset, folds, config,
                                                    embeddings=embeddings)
        for i, report in enumerate(reports):
            training.write_report_json(out_dir / f"fold{i}.json", report)
            print(f"fold{i}_accuracy={report.accuracy}")
        print(f"mean_accuracy={mean_acc}")
        return 0

    all_idx = np.arange(len(dataset.sentences))
    if args.dev_data:
        dev_set = ingest.load_corpus(args.dev_data, args.dev_labels,
                                     label_names=dataset.label_names)
        n_train = len(dataset.sentences)
        dataset.sentences.extend(dev_set.sentences)
        dataset.vocab_counts.update(dev_set.vocab_counts)
        vocab = Vocab.build(dataset.vocab_counts)
        embeddings = _load_embeddings(args, vocab, config)
        train_idx = all_idx
        dev_idx = np.arange(n_train, len(dataset.sentences))
    else:
        train_idx, dev_idx = ingest.dev_split(all_idx, config.dev_fraction,
                                              config.seed)
    params, history = training.fit(dataset, train_idx, dev_idx, config,
                                   embeddings=embeddings, vocab=vocab)
    model.save(params, out_dir / "checkpoint.bin")
    training.write_history_csv(out_dir / "history.csv", history)
    print(f"checkpoint={out_dir / 'checkpoint.bin'}")
    print(f"epochs_run={len(history)}")
    if history:
        print(f"best_dev_acc={max(h['dev_acc'] for h in history)}")
    return 0


def cmd_eval(args) -> int:
    params = model.load(args.checkpoint)
    if args.templates:
        model.ensure_template_compat(params, args.templates)
    dataset = ingest.load_corpus(args.data, args.labels,
                                 label_names=params.label_names)
    report = training.evaluate(params, dataset)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    training.write_report_json(out_dir / "report.json", report)
    forms = {s.source_id: " ".join(s.forms) for s in dataset.sentences}
    with open(out_dir / "misclassified.txt", "w", encoding="utf-8") as f:
        for source_id, gold, pred in report.misclassified:
            f.write(f"{forms.get(source_id, source_id)}\t"
                    f"gold={gold}\tpredicted={pred}\n")
    print(f"classes={','.join(report.label_names)}")
    print(f"accuracy={report.accuracy}")
    return 0


def _dump_windows(dataset, templates, out) -> None:
    for sent in dataset.sentences:
        out.write(f"# {sent.source_id}: {' '.join(sent.forms)}\n")
        for tpl in templates:
            windows = patterns.extract_windows(sent, tpl)
            for i, win in enumerate(windows, start=1):
                slots = []
                for code in win:
                    if code == patterns.ROOT_SLOT:
                        slots.append("ROOT")
                    elif code == patterns.ZERO_SLOT:
                        slots.append("_")
                    else:
                        slots.append(sent.tokens[code - 1].form)
                out.write(f"{tpl.name} m={sent.tokens[i - 1].form} "
                          f"slots=[{', '.join(slots)}]\n")


def cmd_inspect(args) -> int:
    labels = args.labels
    if labels:
        dataset = ingest.load_corpus(args.data, labels)
    else:
        # windows need no labels; synthesize a dummy class
        with open(args.data, encoding="utf-8") as f:
            text = f.read()
        n_blocks = sum(1 for b in text.split("\n\n") if b.strip())
        dataset = ingest.parse_conllu(text, ["_"] * n_blocks)

    if args.checkpoint_a and args.checkpoint_b:
        params_a = model.load(args.checkpoint_a)
        params_b = model.load(args.checkpoint_b)
        out_dir = Path(args.out or ".")
        out_dir.mkdir(parents=True, exist_ok=True)
        buckets = {"a_right_b_wrong": [], "b_right_a_wrong": [], "both_wrong": []}
        for sent in dataset.sentences:
            pred_a, _ = model.predict(params_a, sent)
            pred_b, _ = model.predict(params_b, sent)
            a_ok, b_ok = pred_a == sent.label, pred_b == sent.label
            if a_ok and b_ok:
                continue
            line = (f"{' '.join(sent.forms)}\t"
                    f"gold={dataset.label_names[sent.label]}\t"
                    f"a={params_a.label_names[pred_a]}\t"
                    f"b={params_b.label_names[pred_b]}")
            if a_ok:
                buckets["a_right_b_wrong"].append(line)
            elif b_ok:
                buckets["b_right_a_wrong"].append(line)
            else:
                buckets["both_wrong"].append(line)
        for name, lines in buckets.items():
            path = out_dir / f"{name}.txt"
            path.write_text("\n".join(lines) + ("\n" if lines else ""),
                            encoding="utf-8")
            print(f"{name}={len(lines)}")
        return 0

    templates = patterns.parse_template_dsl(args.templates or patterns.DEFAULT_DSL)
    _dump_windows(dataset, templates, sys.stdout)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depconv",
        description="Dependency-tree convolutional sentence classification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model")
    p_train.add_argument("--data", required=True, help="CoNLL training file")
    p_train.add_argument("--labels", help="label sidecar file (one class per line)")
    p_train.add_argument("--dev-data", dest="dev_data", help="CoNLL dev file")
    p_train.add_argument("--dev-labels", dest="dev_labels")
    p_train.add_argument("--dev-frac", dest="dev_fraction", type=float)
    p_train.add_argument("--mode", choices=["single", "mr-cv"], default="single")
    p_train.add_argument("--folds", type=int)
    p_train.add_argument("--config", help="JSON config file")
    p_train.add_argument("--templates")
    p_train.add_argument("--embeddings", help="word2vec text file")
    p_train.add_argument("--random-embeddings", dest="random_embeddings",
                         action="store_true")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--precision", type=int, choices=[32, 64])
    p_train.add_argument("--batch-size", dest="batch_size", type=int)
    p_train.add_argument("--max-epochs", dest="max_epochs", type=int)
    p_train.add_argument("--patience", type=int)
    p_train.add_argument("--dropout", type=float)
    p_train.add_argument("--filters", dest="filters_per_template", type=int)
    p_train.add_argument("--embed-dim", dest="embed_dim", type=int)
    p_train.add_argument("--activation", choices=["relu", "sigmoid"])
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--labels", required=True)
    p_eval.add_argument("--templates", help="assert the checkpoint's template set")
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_inspect = sub.add_parser("inspect", help="dump windows or model disagreements")
    p_inspect.add_argument("--data", required=True)
    p_inspect.add_argument("--labels")
    p_inspect.add_argument("--templates")
    p_inspect.add_argument("--checkpoint-a", dest="checkpoint_a")
    p_inspect.add_argument("--checkpoint-b", dest="checkpoint_b")
    p_inspect.add_argument("--out")
    p_inspect.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
