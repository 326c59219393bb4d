"""Vocabulary and word-vector handling: pretrained loading, OOV init, lookup."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PAD = 0
ROOT = 1
UNK = 2
PAD_WORD = "<pad>"
ROOT_WORD = "<root>"
UNK_WORD = "<unk>"
RESERVED = (PAD_WORD, ROOT_WORD, UNK_WORD)


class EmbeddingError(ValueError):
    pass


@dataclass
class Vocab:
    """Word-to-row map with reserved PAD/ROOT/UNK rows."""

    index: dict[str, int]
    lowercase: bool = True

    @classmethod
    def build(cls, vocab_counts, lowercase: bool = True) -> "Vocab":
        """Rows 0-2 are reserved; words follow by descending count, then alpha."""
        index = {w: i for i, w in enumerate(RESERVED)}
        words = sorted(vocab_counts, key=lambda w: (-vocab_counts[w], w))
        for w in words:
            if w not in index:
                index[w] = len(index)
        return cls(index=index, lowercase=lowercase)

    @classmethod
    def from_words(cls, words, lowercase: bool = True) -> "Vocab":
        """Rebuild from an explicit row-ordered word list (checkpoint path)."""
        index = {w: i for i, w in enumerate(words)}
        for i, w in enumerate(RESERVED):
            if index.get(w) != i:
                raise EmbeddingError(f"reserved word {w!r} missing from row {i}")
        return cls(index=index, lowercase=lowercase)

    @property
    def size(self) -> int:
        return len(self.index)

    @property
    def words(self) -> list[str]:
        out = [""] * len(self.index)
        for w, i in self.index.items():
            out[i] = w
        return out

    def lookup(self, word: str) -> int:
        if self.lowercase:
            word = word.lower()
        return self.index.get(word, UNK)


@dataclass
class EmbeddingMatrix:
    matrix: np.ndarray  # (vocab size, d)
    trainable: bool = True

    @property
    def d(self) -> int:
        return self.matrix.shape[1]


def init_oov(matrix: np.ndarray, rows, rng) -> None:
    """Fill the given rows i.i.d. uniform on [-0.25, 0.25], in place."""
    for r in rows:
        matrix[r] = rng.uniform(-0.25, 0.25, size=matrix.shape[1])


def random_embeddings(vocab: Vocab, d: int, seed: int, *, dtype=np.float64,
                      trainable: bool = True) -> EmbeddingMatrix:
    """All-random matrix for runs without a pretrained vector file."""
    rng = np.random.default_rng(seed)
    matrix = np.zeros((vocab.size, d), dtype=np.float64)
    init_oov(matrix, range(1, vocab.size), rng)  # PAD row 0 stays zero
    return EmbeddingMatrix(matrix=matrix.astype(dtype), trainable=trainable)


def load_pretrained(path, vocab: Vocab, *, seed: int = 0, d: int | None = None,
                    dtype=np.float64, trainable: bool = True) -> EmbeddingMatrix:
    """Load word2vec text format ("V d" header then "word v1 .. vd" lines).

    In-vocabulary rows come from the file; everything else (including UNK
    and ROOT) gets the OOV init. PAD stays zero.
    """
    with open(path, encoding="utf-8", errors="replace") as f:
        header = f.readline().split()
        if len(header) != 2:
            raise EmbeddingError(f"{path}: unreadable word2vec header {header!r}")
        try:
            file_count, file_d = int(header[0]), int(header[1])
        except ValueError:
            raise EmbeddingError(f"{path}: unreadable word2vec header {header!r}") from None
        if d is not None and d != file_d:
            raise EmbeddingError(
                f"{path}: file dimension {file_d} does not match requested {d}"
            )
        matrix = np.zeros((vocab.size, file_d), dtype=np.float64)
        filled = np.zeros(vocab.size, dtype=bool)
        filled[PAD] = True
        for lineno, line in enumerate(f, start=2):
            parts = line.rstrip("\n").split(" ")
            if len(parts) <= 1:
                continue
            word, values = parts[0], parts[1:]
            if values and values[-1] == "":
                values = values[:-1]
            if len(values) != file_d:
                raise EmbeddingError(
                    f"{path}:{lineno}: {len(values)} components, expected {file_d}"
                )
            if vocab.lowercase:
                word = word.lower()
            row = vocab.index.get(word)
            if row is not None and not filled[row]:
                matrix[row] = np.asarray(values, dtype=np.float64)
                filled[row] = True
    rng = np.random.default_rng(seed)
    init_oov(matrix, np.flatnonzero(~filled), rng)
    return EmbeddingMatrix(matrix=matrix.astype(dtype), trainable=trainable)


def lookup(vocab: Vocab, emb: EmbeddingMatrix, word: str) -> np.ndarray:
    """Row for the word; UNK if absent, ROOT/PAD for their reserved symbols."""
    return emb.matrix[vocab.lookup(word)]
