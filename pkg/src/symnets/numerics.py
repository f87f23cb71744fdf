"""Dense matrix primitives.

A "matrix" here is a 2-D ``numpy.ndarray`` of ``float64``; batches are rows.
"""

from __future__ import annotations

import numpy as np


def as_matrix(a, name: str = "input") -> np.ndarray:
    """Coerce ``a`` to a 2-D float64 array, rejecting anything else."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def logsumexp_rows(v) -> np.ndarray:
    """Row-wise log-sum-exp, returned as a column (B x 1)."""
    v = as_matrix(v, "v")
    m = v.max(axis=1, keepdims=True)
    return m + np.log(np.exp(v - m).sum(axis=1, keepdims=True))


def softmax_rows(v) -> np.ndarray:
    v = as_matrix(v, "v")
    e = np.exp(v - v.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(v) -> np.ndarray:
    v = as_matrix(v, "v")
    return v - logsumexp_rows(v)


def sigmoid(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(z) -> np.ndarray:
    """log(1 + exp(z)) without overflow."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
