"""The dependency-convolution model: forward, backward, predict, checkpoints."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import embeddings as emb_mod
from . import kernels
from . import patterns
from .embeddings import EmbeddingMatrix, Vocab
from .numerics import ACTIVATIONS, dtype_for, dropout_mask, softmax_xent
from .patterns import ROOT_SLOT, WindowTemplate

CHECKPOINT_MAGIC = b"DCNNCKPT"
CHECKPOINT_VERSION = 1


class ModelError(ValueError):
    pass


class CheckpointError(ModelError):
    pass


@dataclass
class FilterBank:
    template: WindowTemplate
    weights: np.ndarray  # (filter count, n * d)
    biases: np.ndarray   # (filter count,)

    @property
    def count(self) -> int:
        return self.weights.shape[0]


@dataclass
class ModelParams:
    vocab: Vocab
    embeddings: EmbeddingMatrix
    banks: list[FilterBank]
    softmax_w: np.ndarray  # (classes, total pooled dim)
    softmax_b: np.ndarray  # (classes,)
    label_names: list[str]
    activation: str = "relu"
    dropout: float = 0.5
    template_dsl: str = patterns.DEFAULT_DSL
    precision: int = 64

    @property
    def d(self) -> int:
        return self.embeddings.d

    @property
    def n_classes(self) -> int:
        return self.softmax_w.shape[0]

    @property
    def pooled_dim(self) -> int:
        return sum(b.count for b in self.banks)

    @property
    def dtype(self):
        return dtype_for(self.precision)

    def named_arrays(self):
        """Trainable arrays in a fixed, deterministic order."""
        out = [("embeddings", self.embeddings.matrix)]
        for t, bank in enumerate(self.banks):
            out.append((f"bank{t}.weights", bank.weights))
            out.append((f"bank{t}.biases", bank.biases))
        out.append(("softmax_w", self.softmax_w))
        out.append(("softmax_b", self.softmax_b))
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            vocab=self.vocab,
            embeddings=EmbeddingMatrix(self.embeddings.matrix.copy(),
                                       self.embeddings.trainable),
            banks=[FilterBank(b.template, b.weights.copy(), b.biases.copy())
                   for b in self.banks],
            softmax_w=self.softmax_w.copy(),
            softmax_b=self.softmax_b.copy(),
            label_names=list(self.label_names),
            activation=self.activation,
            dropout=self.dropout,
            template_dsl=self.template_dsl,
            precision=self.precision,
        )

    def config_echo(self) -> dict:
        return {
            "d": self.d,
            "filters": [b.count for b in self.banks],
            "templates": self.template_dsl,
            "activation": self.activation,
            "dropout": self.dropout,
            "precision": self.precision,
            "emb_trainable": self.embeddings.trainable,
        }


@dataclass
class ForwardTrace:
    """Everything backward needs from one forward pass."""

    row_codes: list[np.ndarray]   # per template: (l, n) embedding-row codes
    windows: list[np.ndarray]     # per template: (l, n*d) gathered vectors
    preacts: list[np.ndarray]     # per template: (l, count) pre-activations
    argmax: list[np.ndarray]      # per template: (count,) pooled word index
    c_hat: np.ndarray             # (pooled dim,)
    mask: np.ndarray              # dropout mask over c_hat
    logits: np.ndarray
    probs: np.ndarray
    loss: float | None
    train: bool


def init_params(templates, vocab: Vocab, n_classes: int, *, d: int,
                filters_per_template: int = 100, activation: str = "relu",
                dropout: float = 0.5, seed: int = 0, precision: int = 64,
                embeddings: EmbeddingMatrix | None = None,
                label_names=None, template_dsl: str | None = None) -> ModelParams:
    """Fresh parameters: filters uniform on [-0.01, 0.01], softmax zeroed."""
    if d < 1 or filters_per_template < 1 or n_classes < 2:
        raise ModelError("need d >= 1, filters >= 1, and >= 2 classes")
    if activation not in ACTIVATIONS:
        raise ModelError(f"unknown activation {activation!r}")
    dtype = dtype_for(precision)
    if embeddings is None:
        embeddings = emb_mod.random_embeddings(vocab, d, seed, dtype=dtype)
    if embeddings.d != d:
        raise ModelError(f"embedding dim {embeddings.d} does not match d={d}")
    # private copy: the caller's matrix must survive training mutation
    embeddings = EmbeddingMatrix(embeddings.matrix.astype(dtype, copy=True),
                                 embeddings.trainable)
    rng = np.random.default_rng(seed)
    banks = []
    for tpl in templates:
        w = rng.uniform(-0.01, 0.01, size=(filters_per_template, tpl.n * d))
        banks.append(FilterBank(tpl, w.astype(dtype),
                                np.zeros(filters_per_template, dtype=dtype)))
    total = filters_per_template * len(templates)
    if label_names is None:
        label_names = [str(i) for i in range(n_classes)]
    return ModelParams(
        vocab=vocab,
        embeddings=embeddings,
        banks=banks,
        softmax_w=np.zeros((n_classes, total), dtype=dtype),
        softmax_b=np.zeros(n_classes, dtype=dtype),
        label_names=list(label_names),
        activation=activation,
        dropout=dropout,
        template_dsl=template_dsl or ",".join(t.name for t in templates),
        precision=precision,
    )


def _row_codes(params: ModelParams, sentence, slot_codes: np.ndarray) -> np.ndarray:
    """Map pattern slot codes (token index / ROOT / zero) to embedding rows."""
    token_rows = np.array([params.vocab.lookup(t.form) for t in sentence.tokens],
                          dtype=np.int64)
    out = np.full_like(slot_codes, -1)
    word = slot_codes > 0
    out[word] = token_rows[slot_codes[word] - 1]
    out[slot_codes == ROOT_SLOT] = emb_mod.ROOT
    return out


def forward(params: ModelParams, sentence, mode: str = "eval",
            rng=None) -> ForwardTrace:
    """Windows -> convolution -> max-over-tree pool -> dropout -> softmax."""
    if len(sentence.tokens) == 0:
        raise ModelError("cannot run on an empty sentence")
    if mode not in ("train", "eval"):
        raise ModelError(f"mode must be train or eval, got {mode!r}")
    train = mode == "train"
    if train and rng is None:
        raise ModelError("train mode needs an rng for dropout")
    act, _ = ACTIVATIONS[params.activation]

    row_codes, windows, preacts, argmax = [], [], [], []
    pooled_parts = []
    for bank in params.banks:
        slots = patterns.extract_windows(sentence, bank.template)
        codes = _row_codes(params, sentence, slots)
        x = kernels.gather_windows(params.embeddings.matrix, codes)
        a = kernels.conv_forward(x, bank.weights, bank.biases)  # (l, count)
        c = act(a)
        am = np.argmax(c, axis=0)
        pooled_parts.append(c[am, np.arange(bank.count)])
        row_codes.append(codes)
        windows.append(x)
        preacts.append(a)
        argmax.append(am)
    c_hat = np.concatenate(pooled_parts)

    mask = dropout_mask(c_hat.size, params.dropout, rng, train=train)
    mask = mask.astype(params.dtype)
    dropped = c_hat * mask
    logits = params.softmax_w @ dropped + params.softmax_b

    label = getattr(sentence, "label", None)
    if label is not None and 0 <= label < params.n_classes:
        loss, probs, _ = softmax_xent(logits.astype(np.float64), int(label))
    else:
        from .numerics import softmax
        probs = softmax(logits.astype(np.float64))
        loss = None
    return ForwardTrace(row_codes=row_codes, windows=windows, preacts=preacts,
                        argmax=argmax, c_hat=c_hat, mask=mask, logits=logits,
                        probs=probs, loss=loss, train=train)


def backward(params: ModelParams, trace: ForwardTrace, sentence) -> dict:
    """Exact gradients of the sentence loss for every parameter group."""
    if not trace.train:
        raise ModelError("backward needs a train-mode trace")
    if trace.loss is None:
        raise ModelError("backward needs a labeled sentence (loss present)")
    dtype = params.dtype
    _, act_grad = ACTIVATIONS[params.activation]

    dlogits = (trace.probs.copy()).astype(dtype)
    dlogits[sentence.label] -= 1.0
    dropped = trace.c_hat * trace.mask
    grads = {
        "softmax_w": np.outer(dlogits, dropped),
        "softmax_b": dlogits,
    }
    dc_hat = (params.softmax_w.T @ dlogits) * trace.mask

    demb = np.zeros_like(params.embeddings.matrix)
    offset = 0
    for t, bank in enumerate(params.banks):
        dpool = dc_hat[offset:offset + bank.count]
        offset += bank.count
        am = trace.argmax[t]
        a_star = trace.preacts[t][am, np.arange(bank.count)]
        g = dpool * act_grad(a_star)  # (count,) gradient at each pooled preact
        x_star = trace.windows[t][am]  # (count, n*d)
        grads[f"bank{t}.weights"] = g[:, None] * x_star
        grads[f"bank{t}.biases"] = g
        if params.embeddings.trainable:
            # route window gradients back through the argmax rows only
            l = trace.windows[t].shape[0]
            dx = np.zeros_like(trace.windows[t])
            np.add.at(dx, am, g[:, None] * bank.weights)
            kernels.scatter_window_grads(demb, trace.row_codes[t], dx)
    if params.embeddings.trainable:
        demb[emb_mod.PAD] = 0.0  # PAD row never learns
        grads["embeddings"] = demb
    return grads


def predict(params: ModelParams, sentence):
    """Eval-mode class and probabilities; ties break to the lowest index."""
    trace = forward(params, sentence, mode="eval")
    return int(np.argmax(trace.probs)), trace.probs


def ensure_template_compat(params: ModelParams, template_dsl: str) -> None:
    """Reject running a checkpoint with a different template set."""
    want = [t.name for t in patterns.parse_template_dsl(template_dsl)]
    have = [b.template.name for b in params.banks]
    if want != have:
        raise CheckpointError(
            f"template mismatch: checkpoint has {have}, requested {want}"
        )


def save(params: ModelParams, path, optimizer_state: dict | None = None) -> None:
    """Binary checkpoint: magic, version, JSON header, little-endian arrays."""
    arrays = list(params.named_arrays())
    if optimizer_state is not None:
        for name in sorted(optimizer_state):
            eg, ed = optimizer_state[name]
            arrays.append((f"opt.{name}.eg", eg))
            arrays.append((f"opt.{name}.ed", ed))
    manifest = [
        {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)}
        for name, arr in arrays
    ]
    header = {
        "config": params.config_echo(),
        "label_names": params.label_names,
        "vocab": params.vocab.words,
        "lowercase": params.vocab.lowercase,
        "has_optimizer_state": optimizer_state is not None,
        "arrays": manifest,
    }
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for _, arr in arrays:
            f.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"),
                                                     copy=False).tobytes())


def load(path, with_optimizer_state: bool = False):
    """Load a checkpoint; returns ModelParams (and optimizer state if asked)."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        version_bytes = f.read(4)
        if len(version_bytes) < 4:
            raise CheckpointError(f"{path}: truncated header")
        (version,) = struct.unpack("<I", version_bytes)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: version {version}, expected {CHECKPOINT_VERSION}"
            )
        len_bytes = f.read(8)
        if len(len_bytes) < 8:
            raise CheckpointError(f"{path}: truncated header")
        (header_len,) = struct.unpack("<Q", len_bytes)
        header_bytes = f.read(header_len)
        if len(header_bytes) < header_len:
            raise CheckpointError(f"{path}: truncated header")
        try:
            header = json.loads(header_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{path}: corrupt header ({e})") from None
        arrays = {}
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
            raw = f.read(nbytes)
            if len(raw) < nbytes:
                raise CheckpointError(
                    f"{path}: truncated array {entry['name']!r}"
                )
            arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after arrays")

    cfg = header["config"]
    vocab = Vocab.from_words(header["vocab"], lowercase=header.get("lowercase", True))
    templates = patterns.parse_template_dsl(cfg["templates"])
    banks = []
    for t, tpl in enumerate(templates):
        try:
            w = arrays[f"bank{t}.weights"]
            b = arrays[f"bank{t}.biases"]
        except KeyError:
            raise CheckpointError(f"{path}: missing arrays for bank {t}") from None
        if w.shape[1] != tpl.n * cfg["d"]:
            raise CheckpointError(
                f"{path}: bank {t} filter width {w.shape[1]} inconsistent with "
                f"template arity {tpl.n} and d={cfg['d']}"
            )
        banks.append(FilterBank(tpl, w, b))
    params = ModelParams(
        vocab=vocab,
        embeddings=EmbeddingMatrix(arrays["embeddings"],
                                   trainable=cfg.get("emb_trainable", True)),
        banks=banks,
        softmax_w=arrays["softmax_w"],
        softmax_b=arrays["softmax_b"],
        label_names=header["label_names"],
        activation=cfg["activation"],
        dropout=cfg["dropout"],
        template_dsl=cfg["templates"],
        precision=cfg["precision"],
    )
    if params.softmax_w.shape[1] != params.pooled_dim:
        raise CheckpointError(f"{path}: softmax width does not match pooled dim")
    if not with_optimizer_state:
        return params
    state = None
    if header.get("has_optimizer_state"):
        state = {}
        for name, _ in params.named_arrays():
            if f"opt.{name}.eg" in arrays:
                state[name] = (arrays[f"opt.{name}.eg"], arrays[f"opt.{name}.ed"])
    return params, state
