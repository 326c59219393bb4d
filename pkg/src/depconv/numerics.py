"""Dense numeric primitives for the fixed model graph, with exact gradients.

No general autodiff: each operation's backward rule is written out by hand
and verified against central finite differences (see grad_check).
"""

from __future__ import annotations

import numpy as np


class NumericsError(ValueError):
    pass


def dtype_for(precision: int):
    if precision == 32:
        return np.float32
    if precision == 64:
        return np.float64
    raise NumericsError(f"precision must be 32 or 64, got {precision}")


def affine(w: np.ndarray, x: np.ndarray, b: float) -> float:
    """dot(w, x) + b, the pre-activation of one filter on one window."""
    w = np.asarray(w)
    x = np.asarray(x)
    if w.shape != x.shape:
        raise NumericsError(f"length mismatch: {w.shape} vs {x.shape}")
    return float(np.dot(w, x) + b)


def relu(v: np.ndarray) -> np.ndarray:
    return np.maximum(v, 0)


def relu_grad(v: np.ndarray) -> np.ndarray:
    """Derivative w.r.t. the pre-activation (0 at v == 0)."""
    return (v > 0).astype(v.dtype)


def sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(np.asarray(v, dtype=np.result_type(v, np.float32)))
    v = np.asarray(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid_grad(v: np.ndarray) -> np.ndarray:
    s = sigmoid(v)
    return s * (1.0 - s)


ACTIVATIONS = {
    "relu": (relu, relu_grad),
    "sigmoid": (sigmoid, sigmoid_grad),
}


def max_pool(c: np.ndarray) -> tuple[float, int]:
    """Maximum activation and its first-occurrence index."""
    c = np.asarray(c)
    if c.size == 0:
        raise NumericsError("max_pool on an empty feature map")
    idx = int(np.argmax(c))
    return float(c[idx]), idx


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits)
    shifted = z - z.max()
    e = np.exp(shifted)
    return e / e.sum()


def softmax_xent(logits: np.ndarray, gold: int):
    """(loss, probs, dlogits) for cross entropy against the gold class."""
    logits = np.asarray(logits)
    if logits.size < 2:
        raise NumericsError("need at least 2 classes")
    if not (0 <= gold < logits.size):
        raise NumericsError(f"gold class {gold} out of range for {logits.size} classes")
    probs = softmax(logits)
    loss = -float(np.log(probs[gold]))
    dlogits = probs.copy()
    dlogits[gold] -= 1.0
    return loss, probs, dlogits


def dropout_mask(length: int, rate: float, rng, train: bool = True) -> np.ndarray:
    """Inverted dropout mask: zeros with probability rate, else 1/(1-rate).

    Eval mode (train=False) returns all ones so inference needs no rescale.
    """
    if not (0.0 <= rate < 1.0):
        raise NumericsError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return np.ones(length)
    keep = rng.random(length) >= rate
    return keep / (1.0 - rate)


def grad_check(f, params, grads, *, h: float = 1e-5, rng=None,
               samples_per_array: int = 10) -> float:
    """Max relative error of analytic gradients vs central differences.

    ``f(params) -> scalar`` must be deterministic; ``grads`` holds the
    analytic gradient array for each params array. Coordinates are sampled
    (all of them for small arrays). 64-bit arrays expected.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for theta, g in zip(params, grads):
        flat = theta.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        size = flat.size
        if size <= samples_per_array:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=samples_per_array, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            f_plus = f(params)
            flat[c] = orig - h
            f_minus = f(params)
            flat[c] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericsError("non-finite loss during grad check")
            numeric = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(numeric), abs(gflat[c]), 1e-8)
            worst = max(worst, abs(numeric - gflat[c]) / denom)
    return worst
