"""Adadelta training, early stopping, cross validation, and evaluation."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import patterns
from .embeddings import PAD, Vocab
from .ingest import Dataset, dev_split, kfold_split
from .model import ModelParams, backward, forward, init_params, predict


class TrainingError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 50
    max_epochs: int = 100
    patience: int = 10
    dropout: float = 0.5
    rho: float = 0.95          # Adadelta decay
    eps: float = 1e-6          # Adadelta smoothing
    seed: int = 1
    precision: int = 64
    templates: str = patterns.DEFAULT_DSL
    filters_per_template: int = 100
    embed_dim: int = 300
    activation: str = "relu"
    dev_fraction: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise TrainingError("batch_size, max_epochs, patience must be positive")
        if not (0.0 <= self.dropout < 1.0):
            raise TrainingError(f"dropout must be in [0, 1), got {self.dropout}")
        if not (0.0 < self.rho < 1.0) or self.eps <= 0:
            raise TrainingError("need 0 < rho < 1 and eps > 0")


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray  # (classes, classes), rows = gold
    misclassified: list    # (source_id, gold name, predicted name)
    label_names: list

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "label_names": self.label_names,
            "confusion": self.confusion.tolist(),
            "misclassified": [
                {"source_id": s, "gold": g, "predicted": p}
                for s, g, p in self.misclassified
            ],
        }


def init_adadelta(params: ModelParams) -> dict:
    """Zeroed E[g^2] / E[dx^2] accumulators, one pair per parameter group."""
    return {
        name: (np.zeros_like(arr), np.zeros_like(arr))
        for name, arr in params.named_arrays()
        if name != "embeddings" or params.embeddings.trainable
    }


def adadelta_step(params: ModelParams, grads: dict, state: dict,
                  rho: float = 0.95, eps: float = 1e-6) -> None:
    """One Adadelta update in place (Zeiler's accumulate / update recurrences)."""
    for name, arr in params.named_arrays():
        if name not in grads:
            continue
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in group {name!r}")
        if name == "embeddings":
            g = g.copy()
            g[PAD] = 0.0
        eg, ed = state[name]
        eg *= rho
        eg += (1.0 - rho) * g * g
        delta = -np.sqrt((ed + eps) / (eg + eps)) * g
        arr += delta
        ed *= rho
        ed += (1.0 - rho) * delta * delta


def train_epoch(params: ModelParams, state: dict, dataset: Dataset,
                indices, config: TrainConfig, rng) -> float:
    """One pass over shuffled mini-batches; returns mean per-example loss."""
    idx = np.asarray(indices)
    if idx.size == 0:
        raise TrainingError("empty training set")
    order = rng.permutation(idx.size)
    total_loss = 0.0
    for start in range(0, idx.size, config.batch_size):
        batch = idx[order[start:start + config.batch_size]]
        summed: dict = {}
        for i in batch:
            sent = dataset.sentences[int(i)]
            trace = forward(params, sent, mode="train", rng=rng)
            total_loss += trace.loss
            for name, g in backward(params, trace, sent).items():
                if name in summed:
                    summed[name] += g
                else:
                    summed[name] = g
        adadelta_step(params, summed, state, rho=config.rho, eps=config.eps)
    return total_loss / idx.size


def evaluate(params: ModelParams, dataset: Dataset, indices=None) -> EvalReport:
    """Accuracy, confusion matrix, and misclassified list on a held-out set."""
    if indices is None:
        indices = np.arange(len(dataset.sentences))
    n_classes = params.n_classes
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    wrong = []
    for i in indices:
        sent = dataset.sentences[int(i)]
        if not (0 <= sent.label < n_classes):
            raise TrainingError(
                f"sentence {sent.source_id}: label {sent.label} outside "
                f"the checkpoint's {n_classes}-class space"
            )
        pred, _ = predict(params, sent)
        confusion[sent.label, pred] += 1
        if pred != sent.label:
            wrong.append((sent.source_id,
                          params.label_names[sent.label],
                          params.label_names[pred]))
    total = confusion.sum()
    accuracy = float(np.trace(confusion)) / total if total else 0.0
    wrong.sort(key=lambda rec: rec[0])
    return EvalReport(accuracy=accuracy, confusion=confusion,
                      misclassified=wrong, label_names=list(params.label_names))


def fit(dataset: Dataset, train_indices, dev_indices, config: TrainConfig,
        *, embeddings=None, vocab: Vocab | None = None):
    """Train with early stopping on dev accuracy; returns (best params, history).

    History is one dict per epoch run: epoch, train_loss, dev_acc. The best
    dev snapshot is kept (ties resolve to the earliest epoch).
    """
    dev_indices = np.asarray(dev_indices)
    if dev_indices.size == 0:
        raise TrainingError("empty dev set")
    if vocab is None:
        vocab = Vocab.build(dataset.vocab_counts)
    templates = patterns.parse_template_dsl(config.templates)
    params = init_params(
        templates, vocab, len(dataset.label_names),
        d=config.embed_dim,
        filters_per_template=config.filters_per_template,
        activation=config.activation,
        dropout=config.dropout,
        seed=config.seed,
        precision=config.precision,
        embeddings=embeddings,
        label_names=dataset.label_names,
        template_dsl=config.templates,
    )
    state = init_adadelta(params)
    rng = np.random.default_rng(config.seed)
    best = params.copy()
    best_acc = -1.0
    stale = 0
    history = []
    for epoch in range(1, config.max_epochs + 1):
        loss = train_epoch(params, state, dataset, train_indices, config, rng)
        dev_acc = evaluate(params, dataset, dev_indices).accuracy
        history.append({"epoch": epoch, "train_loss": loss, "dev_acc": dev_acc})
        if dev_acc > best_acc:
            best_acc = dev_acc
            best = params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best, history


def cross_validate(dataset: Dataset, k: int, config: TrainConfig,
                   *, embeddings=None):
    """k-fold protocol: dev-split each train side, fit, test on the held fold."""
    vocab = Vocab.build(dataset.vocab_counts)
    reports = []
    for fold, (train_idx, test_idx) in enumerate(kfold_split(dataset, k, config.seed)):
        tr, dev = dev_split(train_idx, config.dev_fraction, config.seed + fold)
        params, _ = fit(dataset, tr, dev, config,
                        embeddings=embeddings, vocab=vocab)
        reports.append(evaluate(params, dataset, test_idx))
    mean_acc = float(np.mean([r.accuracy for r in reports]))
    return mean_acc, reports


def write_history_csv(path, history) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=["epoch", "train_loss", "dev_acc"])
        writer.writeheader()
        writer.writerows(history)


def write_report_json(path, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2)
