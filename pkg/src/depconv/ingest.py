"""CoNLL corpus ingestion: parsing, tree validation, and dataset splits."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np


class CorpusError(ValueError):
    """Malformed CoNLL input, bad tree structure, or label mismatch."""


@dataclass(frozen=True)
class Token:
    """One word of a dependency-parsed sentence.

    ``index`` is 1-based; ``head`` is the 1-based index of the parent
    word, with 0 meaning the virtual ROOT.
    """

    index: int
    form: str
    head: int
    deprel: str = "_"

    def __post_init__(self):
        if self.index < 1:
            raise CorpusError(f"token index must be >= 1, got {self.index}")
        if self.head < 0:
            raise CorpusError(f"token head must be >= 0, got {self.head}")
        if self.head == self.index:
            raise CorpusError(f"token {self.index} is its own head")
        if not self.form.strip():
            raise CorpusError(f"token {self.index} has an empty form")


@dataclass(frozen=True)
class DepSentence:
    """A labeled sentence with its dependency tree (head array)."""

    tokens: tuple[Token, ...]
    label: int
    source_id: str = ""

    def __len__(self):
        return len(self.tokens)

    @property
    def heads(self) -> list[int]:
        return [t.head for t in self.tokens]

    @property
    def forms(self) -> list[str]:
        return [t.form for t in self.tokens]


@dataclass
class Dataset:
    sentences: list[DepSentence]
    label_names: list[str]
    vocab_counts: Counter = field(default_factory=Counter)

    def __len__(self):
        return len(self.sentences)


@dataclass(frozen=True)
class TreeIssue:
    """Structured description of an invalid head structure."""

    kind: str  # "out-of-range" | "cycle" | "multiple-roots" | "no-root"
    indices: tuple[int, ...]
    message: str

    def __str__(self):
        return self.message


def validate_tree(sentence: DepSentence, strict_single_root: bool = False) -> TreeIssue | None:
    """Check head range, acyclicity, and the root policy; returns None if ok.

    Pure check: reports the first problem found as a TreeIssue instead of
    raising, so a caller can collect issues across a whole corpus.
    """
    n = len(sentence.tokens)
    heads = sentence.heads
    for tok in sentence.tokens:
        if tok.head > n:
            return TreeIssue(
                "out-of-range", (tok.index,),
                f"token {tok.index} has head {tok.head} beyond sentence length {n}",
            )
    roots = [t.index for t in sentence.tokens if t.head == 0]
    if not roots:
        # with no token attached to ROOT there must be a cycle; fall through
        pass
    elif strict_single_root and len(roots) > 1:
        return TreeIssue(
            "multiple-roots", tuple(roots),
            f"multiple roots at tokens {roots} (strict single-root mode)",
        )
    for start in range(1, n + 1):
        cur = start
        for _ in range(n):
            cur = heads[cur - 1]
            if cur == 0:
                break
        else:
            # walk the chain once more to collect the cycle members
            seen: list[int] = []
            cur = start
            while cur not in seen:
                seen.append(cur)
                cur = heads[cur - 1]
            members = tuple(seen[seen.index(cur):])
            return TreeIssue(
                "cycle", members,
                f"head cycle through tokens {list(members)}",
            )
    return None


def _parse_token_line(line: str, lineno: int) -> Token | None:
    cols = line.split("\t")
    if len(cols) < 8:
        raise CorpusError(
            f"line {lineno}: expected >= 8 tab-separated columns, got {len(cols)}"
        )
    tok_id = cols[0]
    if "-" in tok_id or "." in tok_id:
        # multiword-token ranges and empty nodes carry no tree structure
        return None
    try:
        index = int(tok_id)
    except ValueError:
        raise CorpusError(f"line {lineno}: non-integer token ID {tok_id!r}") from None
    try:
        head = int(cols[6])
    except ValueError:
        raise CorpusError(f"line {lineno}: non-integer HEAD {cols[6]!r}") from None
    try:
        return Token(index=index, form=cols[1], head=head, deprel=cols[7])
    except CorpusError as e:
        raise CorpusError(f"line {lineno}: {e}") from None


def parse_conllu(
    text: str,
    label_stream=None,
    *,
    label_names: list[str] | None = None,
    lowercase: bool = True,
    strict_single_root: bool = False,
) -> Dataset:
    """Parse CoNLL-X/U text into a validated Dataset.

    Labels come either from ``label_stream`` (one class name per sentence
    block, e.g. a sidecar file) or from inline ``# label = X`` comments.
    Passing ``label_names`` pins the class-id mapping (e.g. the one stored
    in a checkpoint); otherwise ids follow first appearance order.
    """
    blocks: list[tuple[int, list[str]]] = []
    current: list[str] = []
    start_line = 1
    for lineno, line in enumerate(text.split("\n"), start=1):
        if line.strip() == "":
            if current:
                blocks.append((start_line, current))
                current = []
            start_line = lineno + 1
        else:
            current.append(line)
    if current:
        blocks.append((start_line, current))

    if label_stream is not None:
        labels = list(label_stream)
        if len(labels) != len(blocks):
            raise CorpusError(
                f"label count mismatch: {len(labels)} labels for {len(blocks)} sentences"
            )
    else:
        labels = [None] * len(blocks)

    names: list[str] = list(label_names) if label_names is not None else []
    frozen_names = label_names is not None
    sentences: list[DepSentence] = []
    counts: Counter = Counter()

    for block_idx, (block_start, lines) in enumerate(blocks):
        label_name = labels[block_idx]
        source_id = f"s{block_idx + 1}"
        tokens: list[Token] = []
        for off, line in enumerate(lines):
            lineno = block_start + off
            if line.startswith("#"):
                body = line[1:].strip()
                if body.lower().startswith("label") and "=" in body:
                    inline = body.split("=", 1)[1].strip()
                    if label_name is None:
                        label_name = inline
                elif body.startswith("sent_id") and "=" in body:
                    source_id = body.split("=", 1)[1].strip()
                continue
            tok = _parse_token_line(line, lineno)
            if tok is not None:
                tokens.append(tok)
        if not tokens:
            raise CorpusError(f"sentence {source_id}: no token lines")
        if label_name is None:
            raise CorpusError(f"sentence {source_id}: no label (sidecar or inline)")
        if label_name not in names:
            if frozen_names:
                raise CorpusError(
                    f"sentence {source_id}: unknown label {label_name!r}"
                )
            names.append(label_name)
        sent = DepSentence(
            tokens=tuple(tokens),
            label=names.index(label_name),
            source_id=source_id,
        )
        issue = validate_tree(sent, strict_single_root=strict_single_root)
        if issue is not None:
            raise CorpusError(f"sentence {source_id}: {issue}")
        sentences.append(sent)
        for tok in tokens:
            counts[tok.form.lower() if lowercase else tok.form] += 1

    return Dataset(sentences=sentences, label_names=names, vocab_counts=counts)


def to_conllu(dataset: Dataset) -> str:
    """Serialize back to CoNLL core columns (round-trips with parse_conllu)."""
    out = []
    for sent in dataset.sentences:
        out.append(f"# sent_id = {sent.source_id}")
        out.append(f"# label = {dataset.label_names[sent.label]}")
        for t in sent.tokens:
            out.append(
                f"{t.index}\t{t.form}\t_\t_\t_\t_\t{t.head}\t{t.deprel}\t_\t_"
            )
        out.append("")
    return "\n".join(out) + "\n"


def read_labels(path) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [line.strip() for line in f if line.strip()]


def load_corpus(conllu_path, labels_path=None, **kwargs) -> Dataset:
    with open(conllu_path, encoding="utf-8") as f:
        text = f.read()
    labels = read_labels(labels_path) if labels_path else None
    return parse_conllu(text, labels, **kwargs)


def write_label_map(path, label_names):
    with open(path, "w", encoding="utf-8") as f:
        json.dump({name: i for i, name in enumerate(label_names)}, f, indent=2)


def kfold_split(dataset, k: int, seed: int):
    """Disjoint shuffled folds covering every sentence exactly once.

    Accepts a Dataset or a plain sentence count. Fold sizes differ by at
    most one; deterministic for a fixed seed.
    """
    n = dataset if isinstance(dataset, int) else len(dataset.sentences)
    if k < 2:
        raise ValueError(f"need k >= 2 folds, got {k}")
    if k > n:
        raise ValueError(f"cannot make {k} folds from {n} sentences")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    folds = []
    for test in np.array_split(perm, k):
        test = np.sort(test)
        mask = np.ones(n, dtype=bool)
        mask[test] = False
        folds.append((np.flatnonzero(mask), test))
    return folds


def dev_split(train_indices, fraction: float, seed: int):
    """Carve a dev set out of a train index set.

    Dev size is round-half-up of fraction * len(train), minimum 1.
    """
    if not (0.0 < fraction < 1.0):
        raise ValueError(f"dev fraction must be in (0, 1), got {fraction}")
    idx = np.asarray(train_indices)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(idx))
    n_dev = max(1, int(np.floor(fraction * len(idx) + 0.5)))
    if n_dev >= len(idx):
        raise ValueError("dev split would consume the whole training set")
    dev = np.sort(idx[perm[:n_dev]])
    train = np.sort(idx[perm[n_dev:]])
    return train, dev
