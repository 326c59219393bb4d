import numpy as np
import pytest

from depconv.ingest import DepSentence, Token, parse_conllu


def make_sentence(heads, forms=None, label=0, source_id="s"):
    """Build a DepSentence straight from a head array (1-based, 0 = ROOT)."""
    n = len(heads)
    if forms is None:
        forms = [f"w{i}" for i in range(1, n + 1)]
    tokens = tuple(
        Token(index=i, form=forms[i - 1], head=heads[i - 1])
        for i in range(1, n + 1)
    )
    return DepSentence(tokens=tokens, label=label, source_id=source_id)


def random_tree_heads(n, rng):
    """Random valid head array: every node's head precedes it in a random
    topological order, so the structure is always acyclic."""
    order = rng.permutation(n) + 1  # order[0] is the root
    heads = [0] * n
    for pos in range(1, n):
        parent_pos = int(rng.integers(0, pos))
        heads[order[pos] - 1] = int(order[parent_pos])
    return heads


def random_sentence(rng, max_tokens=15, n_words=30, label=0, source_id="s"):
    n = int(rng.integers(1, max_tokens + 1))
    heads = random_tree_heads(n, rng)
    forms = [f"word{int(rng.integers(n_words))}" for _ in range(n)]
    return make_sentence(heads, forms=forms, label=label, source_id=source_id)


def conllu_block(forms, heads):
    return "\n".join(
        f"{i}\t{forms[i - 1]}\t_\t_\t_\t_\t{heads[i - 1]}\tdep\t_\t_"
        for i in range(1, len(forms) + 1)
    )


@pytest.fixture
def toy_dataset():
    text = "\n\n".join([
        conllu_block(["the", "movie", "rocks", "truly"], [2, 3, 0, 3]),
        conllu_block(["bad", "film"], [0, 1]),
        conllu_block(["great"], [0]),
        conllu_block(["not", "good", "at", "all"], [2, 0, 2, 3]),
    ])
    return parse_conllu(text, ["pos", "neg", "pos", "neg"])


def synthetic_corpus(n_sentences=32, seed=0):
    """Learnable 2-class corpus: the first word decides the class."""
    markers = (["alpha", "amber", "apex"], ["beta", "bravo", "blunt"])
    filler = ["the", "x", "y", "z", "q"]
    rng = np.random.default_rng(seed)
    blocks, labels = [], []
    for i in range(n_sentences):
        cls = i % 2
        forms = [markers[cls][i % 3]] + [filler[(i + j) % 5] for j in range(3)]
        heads = random_tree_heads(len(forms), rng)
        blocks.append(conllu_block(forms, heads))
        labels.append("A" if cls == 0 else "B")
    return parse_conllu("\n\n".join(blocks), labels)
