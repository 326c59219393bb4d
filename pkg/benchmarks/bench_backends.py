"""Compare the numba and numpy kernel backends on synthetic training data.

Run: python3 benchmarks/bench_backends.py [--sentences N] [--epochs N]
"""

import argparse
import time

import numpy as np

from depconv import kernels, model, patterns, training
from depconv.embeddings import Vocab
from depconv.ingest import DepSentence, Token, Dataset


def random_tree_heads(n, rng):
    order = rng.permutation(n) + 1
    heads = [0] * n
    for pos in range(1, n):
        heads[order[pos] - 1] = int(order[int(rng.integers(0, pos))])
    return heads


def build_dataset(n_sentences, rng):
    sentences = []
    counts = {}
    for i in range(n_sentences):
        n = int(rng.integers(5, 25))
        heads = random_tree_heads(n, rng)
        forms = [f"w{int(rng.integers(500))}" for _ in range(n)]
        for f in forms:
            counts[f] = counts.get(f, 0) + 1
        tokens = tuple(Token(index=j + 1, form=forms[j], head=heads[j])
                       for j in range(n))
        sentences.append(DepSentence(tokens=tokens, label=i % 2,
                                     source_id=f"s{i}"))
    return Dataset(sentences=sentences, label_names=["a", "b"],
                   vocab_counts=counts)


def run_backend(gather, conv, scatter, dataset, epochs, seed):
    kernels.gather_windows = gather
    kernels.conv_forward = conv
    kernels.scatter_window_grads = scatter
    cfg = training.TrainConfig(batch_size=16, max_epochs=epochs,
                               patience=epochs, embed_dim=64,
                               filters_per_template=100, seed=seed)
    vocab = Vocab.build(dataset.vocab_counts)
    tpls = patterns.parse_template_dsl(cfg.templates)
    params = model.init_params(tpls, vocab, 2, d=cfg.embed_dim,
                               filters_per_template=cfg.filters_per_template,
                               seed=cfg.seed)
    state = training.init_adadelta(params)
    rng = np.random.default_rng(cfg.seed)
    idx = np.arange(len(dataset.sentences))
    start = time.time()
    for _ in range(epochs):
        loss = training.train_epoch(params, state, dataset, idx, cfg, rng)
    return time.time() - start, loss


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sentences", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=3)
    args = ap.parse_args()

    dataset = build_dataset(args.sentences, np.random.default_rng(0))
    backends = [("numpy", kernels.gather_windows_numpy,
                 kernels.conv_forward_numpy,
                 kernels.scatter_window_grads_numpy)]
    try:
        gather_nb, conv_nb, scatter_nb = kernels._make_numba_kernels()
        # warm up the JIT outside the timed region
        emb = np.zeros((4, 3))
        codes = np.zeros((2, 2), dtype=np.int64)
        x = gather_nb(emb, codes)
        conv_nb(x, np.zeros((3, 6)), np.zeros(3))
        scatter_nb(emb.copy(), codes, np.zeros((2, 6)))
        backends.append(("numba", gather_nb, conv_nb, scatter_nb))
    except ImportError:
        print("numba not available; benchmarking numpy only")

    results = {}
    for name, gather, conv, scatter in backends:
        elapsed, loss = run_backend(gather, conv, scatter, dataset,
                                    args.epochs, seed=1)
        results[name] = elapsed
        print(f"{name:>6}: {elapsed:.2f}s "
              f"({args.epochs} epochs x {args.sentences} sentences, "
              f"final loss {loss:.4f})")
    if len(results) == 2:
        print(f"speedup numba vs numpy: {results['numpy'] / results['numba']:.2f}x")


if __name__ == "__main__":
    main()
