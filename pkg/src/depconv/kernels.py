"""Hot inner loops: window embedding gather and gradient scatter.

Two interchangeable backends: numba @njit kernels (default when numba is
importable) and pure numpy. Select with DEPCONV_BACKEND=numba|numpy; any
other value (or unset) means auto.

Row codes here index embedding rows directly: values >= 0 are rows, -1 is
a zero-vector slot.
"""

from __future__ import annotations

import os

import numpy as np


def gather_windows_numpy(emb: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """(l, n) row codes -> (l, n*d) concatenated window vectors."""
    l, n = codes.shape
    d = emb.shape[1]
    flat = codes.ravel()
    valid = flat >= 0
    out = emb[np.where(valid, flat, 0)]
    out = out * valid[:, None]
    return np.ascontiguousarray(out.reshape(l, n * d))


def scatter_window_grads_numpy(grad_emb: np.ndarray, codes: np.ndarray,
                               dwin: np.ndarray) -> None:
    """Accumulate (l, n*d) window gradients back onto embedding rows."""
    l, n = codes.shape
    d = grad_emb.shape[1]
    flat = codes.ravel()
    valid = flat >= 0
    np.add.at(grad_emb, flat[valid], dwin.reshape(l * n, d)[valid])


def conv_forward_numpy(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-window filter pre-activations: (l, n*d) x (F, n*d) -> (l, F).

    Computed one window at a time so the result for a window is bitwise
    independent of how many other windows there are and where it sits
    (blocked gemm does not guarantee that, and the tree representation
    must be exactly invariant to token reordering).
    """
    l = x.shape[0]
    out = np.empty((l, w.shape[0]), dtype=x.dtype)
    for i in range(l):
        out[i] = w @ x[i]
    out += b
    return out


def _make_numba_kernels():
    import numba

    @numba.njit(cache=True)
    def gather(emb, codes):
        l, n = codes.shape
        d = emb.shape[1]
        out = np.zeros((l, n * d), dtype=emb.dtype)
        for w in range(l):
            for s in range(n):
                r = codes[w, s]
                if r >= 0:
                    out[w, s * d:(s + 1) * d] = emb[r]
        return out

    # fastmath only reassociates the fixed-length reduction over t; the
    # result is still a pure function of one window and one filter, so
    # row-order independence and run-to-run determinism both hold
    @numba.njit(cache=True, fastmath=True)
    def conv(x, w, b):
        l, k = x.shape
        f = w.shape[0]
        out = np.empty((l, f), dtype=x.dtype)
        for i in range(l):
            for j in range(f):
                acc = x[i, 0] * 0.0  # accumulate in the input dtype
                for t in range(k):
                    acc += x[i, t] * w[j, t]
                out[i, j] = acc + b[j]
        return out

    @numba.njit(cache=True)
    def scatter(grad_emb, codes, dwin):
        l, n = codes.shape
        d = grad_emb.shape[1]
        for w in range(l):
            for s in range(n):
                r = codes[w, s]
                if r >= 0:
                    for j in range(d):
                        grad_emb[r, j] += dwin[w, s * d + j]

    return gather, conv, scatter


def _resolve_backend():
    numpy_impls = ("numpy", gather_windows_numpy, conv_forward_numpy,
                   scatter_window_grads_numpy)
    choice = os.environ.get("DEPCONV_BACKEND", "auto").lower()
    if choice == "numpy":
        return numpy_impls
    try:
        gather, conv, scatter = _make_numba_kernels()
        return "numba", gather, conv, scatter
    except ImportError:
        if choice == "numba":
            raise
        return numpy_impls


BACKEND, gather_windows, conv_forward, scatter_window_grads = _resolve_backend()
