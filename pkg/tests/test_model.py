import math

import numpy as np
import pytest

from depconv import model as M
from depconv import patterns
from depconv.embeddings import PAD, Vocab
from depconv.numerics import grad_check

from conftest import make_sentence, random_sentence


def build_params(dataset, *, dsl=patterns.DEFAULT_DSL, d=8, filters=3,
                 seed=0, n_classes=None, **kwargs):
    vocab = Vocab.build(dataset.vocab_counts)
    tpls = patterns.parse_template_dsl(dsl)
    return M.init_params(tpls, vocab, n_classes or len(dataset.label_names),
                         d=d, filters_per_template=filters, seed=seed,
                         template_dsl=dsl, **kwargs)


def randomize(params, rng, scale=0.1):
    """Break the zero-softmax symmetry so every gradient path is live."""
    for _, arr in params.named_arrays():
        arr += rng.uniform(-scale, scale, size=arr.shape)
    params.embeddings.matrix[PAD] = 0.0


def vocab_for(sentences):
    counts = {}
    for s in sentences:
        for t in s.tokens:
            counts[t.form.lower()] = counts.get(t.form.lower(), 0) + 1
    return Vocab.build(counts)


# --- init ---

def test_init_default_shapes(toy_dataset):
    params = build_params(toy_dataset, filters=100)
    assert len(params.banks) == 11
    assert params.pooled_dim == 1100
    assert params.softmax_w.shape == (2, 1100)


def test_init_deterministic(toy_dataset):
    a = build_params(toy_dataset, seed=7)
    b = build_params(toy_dataset, seed=7)
    for (na, xa), (nb, xb) in zip(a.named_arrays(), b.named_arrays()):
        assert na == nb
        assert xa.tobytes() == xb.tobytes()


def test_init_sequential_only_shapes(toy_dataset):
    params = build_params(toy_dataset, dsl="seq:3,seq:4,seq:5", filters=100,
                          n_classes=6)
    assert params.softmax_w.shape == (6, 300)


def test_init_filter_range(toy_dataset):
    params = build_params(toy_dataset)
    for bank in params.banks:
        assert np.all(np.abs(bank.weights) <= 0.01)
        assert np.all(bank.biases == 0)
    assert np.all(params.softmax_w == 0)


def test_init_rejects_bad_config(toy_dataset):
    with pytest.raises(M.ModelError):
        build_params(toy_dataset, n_classes=1)
    with pytest.raises(M.ModelError):
        build_params(toy_dataset, d=0)
    with pytest.raises(M.ModelError):
        build_params(toy_dataset, activation="tanh")


# --- forward ---

def test_forward_zero_params_uniform(toy_dataset):
    params = build_params(toy_dataset, n_classes=4)
    for bank in params.banks:
        bank.weights[:] = 0
    params.embeddings.matrix[:] = 0
    sent = toy_dataset.sentences[0]
    trace = M.forward(params, sent, mode="eval")
    assert np.allclose(trace.probs, 0.25)
    assert trace.loss == pytest.approx(math.log(4))
    assert np.all(trace.c_hat == 0)  # relu(0)


def test_forward_single_token(toy_dataset):
    params = build_params(toy_dataset)
    sent = toy_dataset.sentences[2]  # "great"
    assert len(sent.tokens) == 1
    trace = M.forward(params, sent, mode="eval")
    assert trace.c_hat.shape == (params.pooled_dim,)
    assert np.all(np.isfinite(trace.probs))


def test_forward_feature_map_length(toy_dataset):
    params = build_params(toy_dataset)
    for sent in toy_dataset.sentences:
        trace = M.forward(params, sent, mode="eval")
        for a in trace.preacts:
            assert a.shape[0] == len(sent.tokens)


def test_forward_empty_and_bad_mode(toy_dataset):
    params = build_params(toy_dataset)
    sent = toy_dataset.sentences[0]
    with pytest.raises(M.ModelError):
        M.forward(params, sent, mode="banana")
    with pytest.raises(M.ModelError):
        M.forward(params, sent, mode="train")  # no rng


def test_logit_shift_invariance(toy_dataset):
    params = build_params(toy_dataset)
    randomize(params, np.random.default_rng(0))
    sent = toy_dataset.sentences[0]
    base = M.forward(params, sent, mode="eval").probs
    params.softmax_b += 13.5
    shifted = M.forward(params, sent, mode="eval").probs
    assert np.allclose(base, shifted)


def permute_sentence(sent, rng):
    n = len(sent.tokens)
    perm = rng.permutation(n) + 1
    remap = {0: 0, **{old: int(perm[old - 1]) for old in range(1, n + 1)}}
    heads = [0] * n
    forms = [""] * n
    for old in range(1, n + 1):
        heads[remap[old] - 1] = remap[sent.tokens[old - 1].head]
        forms[remap[old] - 1] = sent.tokens[old - 1].form
    return make_sentence(heads, forms=forms, label=sent.label)


def test_ancestor_only_permutation_invariance():
    rng = np.random.default_rng(4)
    sents = [random_sentence(rng, max_tokens=10) for _ in range(10)]
    vocab = vocab_for(sents)
    tpls = patterns.parse_template_dsl("anc:3,anc:4,anc:5")
    params = M.init_params(tpls, vocab, 2, d=8, filters_per_template=4, seed=1)
    randomize(params, rng)
    for sent in sents:
        permuted = permute_sentence(sent, rng)
        a = M.forward(params, sent, mode="eval").c_hat
        b = M.forward(params, permuted, mode="eval").c_hat
        assert np.array_equal(a, b)


# --- backward ---

def loss_and_grads(params, sent, mask_seed=7):
    rng = np.random.default_rng(mask_seed)
    trace = M.forward(params, sent, mode="train", rng=rng)
    return trace.loss, M.backward(params, trace, sent)


def test_backward_grad_check_small():
    rng = np.random.default_rng(0)
    sent = random_sentence(rng, max_tokens=6)
    vocab = vocab_for([sent])
    tpls = patterns.default_templates()
    params = M.init_params(tpls, vocab, 3, d=4, filters_per_template=2, seed=2)
    randomize(params, rng)

    _, grads = loss_and_grads(params, sent)
    names = [n for n, _ in params.named_arrays()]
    arrays = [a for _, a in params.named_arrays()]

    def f(_):
        return loss_and_grads(params, sent)[0]

    err = grad_check(f, arrays, [grads[n] for n in names],
                     rng=np.random.default_rng(1), samples_per_array=6)
    assert err < 1e-6


def test_backward_requires_train_trace(toy_dataset):
    params = build_params(toy_dataset)
    sent = toy_dataset.sentences[0]
    trace = M.forward(params, sent, mode="eval")
    with pytest.raises(M.ModelError):
        M.backward(params, trace, sent)


def test_backward_pad_row_masked(toy_dataset):
    params = build_params(toy_dataset)
    randomize(params, np.random.default_rng(3))
    sent = toy_dataset.sentences[0]
    _, grads = loss_and_grads(params, sent)
    assert np.all(grads["embeddings"][PAD] == 0)


def test_backward_pool_gradient_mass(toy_dataset):
    # with identity activation paths (relu, positive preacts), each filter's
    # bias gradient equals the gradient flowing through its single argmax
    params = build_params(toy_dataset)
    randomize(params, np.random.default_rng(5))
    sent = toy_dataset.sentences[0]
    rng = np.random.default_rng(7)
    trace = M.forward(params, sent, mode="train", rng=rng)
    grads = M.backward(params, trace, sent)
    dc_hat = (params.softmax_w.T @ (trace.probs - np.eye(2)[sent.label])) * trace.mask
    offset = 0
    for t, bank in enumerate(params.banks):
        dpool = dc_hat[offset:offset + bank.count]
        offset += bank.count
        a_star = trace.preacts[t][trace.argmax[t], np.arange(bank.count)]
        expected = dpool * (a_star > 0)
        assert np.allclose(grads[f"bank{t}.biases"], expected)


def test_untouched_embedding_row_has_zero_gradient():
    # a row in no window of the sentence must not receive gradient, and
    # perturbing it must not change the loss
    sent = make_sentence([0, 1], forms=["good", "stuff"])
    other = make_sentence([0], forms=["unrelated"])
    vocab = vocab_for([sent, other])
    tpls = patterns.default_templates()
    params = M.init_params(tpls, vocab, 2, d=4, filters_per_template=2, seed=0)
    randomize(params, np.random.default_rng(2))
    _, grads = loss_and_grads(params, sent)
    row = vocab.lookup("unrelated")
    assert np.all(grads["embeddings"][row] == 0)

    base = loss_and_grads(params, sent)[0]
    params.embeddings.matrix[row] += 17.0
    assert abs(loss_and_grads(params, sent)[0] - base) < 1e-12


def test_backward_near_zero_at_optimum(toy_dataset):
    # drive the gold logit far above the rest: probs ~ onehot, grads ~ 0
    params = build_params(toy_dataset)
    sent = toy_dataset.sentences[0]
    params.softmax_b[sent.label] = 200.0
    _, grads = loss_and_grads(params, sent)
    for g in grads.values():
        assert np.max(np.abs(g)) < 1e-12


# --- predict ---

def test_predict_zero_params_tie_breaks_low(toy_dataset):
    params = build_params(toy_dataset, n_classes=4)
    cls, probs = M.predict(params, toy_dataset.sentences[0])
    assert cls == 0
    assert np.allclose(probs, 0.25)


def test_predict_eval_deterministic(toy_dataset):
    params = build_params(toy_dataset, dropout=0.5)
    randomize(params, np.random.default_rng(1))
    sent = toy_dataset.sentences[0]
    _, p1 = M.predict(params, sent)
    _, p2 = M.predict(params, sent)
    assert np.array_equal(p1, p2)


# --- checkpoints ---

def test_save_load_roundtrip(tmp_path, toy_dataset):
    params = build_params(toy_dataset)
    randomize(params, np.random.default_rng(0))
    path = tmp_path / "ckpt.bin"
    M.save(params, path)
    loaded = M.load(path)
    for (na, xa), (nb, xb) in zip(params.named_arrays(), loaded.named_arrays()):
        assert na == nb
        assert xa.tobytes() == xb.tobytes()
    assert loaded.label_names == params.label_names
    assert loaded.vocab.index == params.vocab.index
    assert loaded.template_dsl == params.template_dsl


def test_load_truncated(tmp_path, toy_dataset):
    params = build_params(toy_dataset)
    path = tmp_path / "ckpt.bin"
    M.save(params, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) - 100])
    with pytest.raises(M.CheckpointError, match="truncated"):
        M.load(path)


def test_load_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
    with pytest.raises(M.CheckpointError, match="magic"):
        M.load(path)


def test_template_mismatch_detected(tmp_path, toy_dataset):
    params = build_params(toy_dataset, dsl="seq:3,seq:4,seq:5")
    path = tmp_path / "ckpt.bin"
    M.save(params, path)
    loaded = M.load(path)
    with pytest.raises(M.CheckpointError, match="template"):
        M.ensure_template_compat(loaded, "anc:3,anc:4,anc:5")
    M.ensure_template_compat(loaded, "seq:3,seq:4,seq:5")


def test_checkpoint_predicts_without_dataset(tmp_path, toy_dataset):
    params = build_params(toy_dataset)
    randomize(params, np.random.default_rng(6))
    sent = toy_dataset.sentences[1]
    before = M.predict(params, sent)
    path = tmp_path / "ckpt.bin"
    M.save(params, path)
    loaded = M.load(path)
    after = M.predict(loaded, sent)
    assert before[0] == after[0]
    assert np.array_equal(before[1], after[1])
